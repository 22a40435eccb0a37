"""Tokenizer, forward pass, sequence log-probabilities, sampling, checkpoints."""

import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from alignforge.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from alignforge.tinylm import (
    BOS,
    EOS,
    LMConfig,
    LMParams,
    TokenBatch,
    VOCAB_SIZE,
    completion_logprobs,
    decode,
    encode,
    fit_prompt,
    forward,
    init_params,
    make_token_batch,
    sample,
    sequence_logprob,
)

CFG = LMConfig()


@pytest.fixture(scope="module")
def params():
    return init_params(CFG)


def zeroed(params: LMParams) -> LMParams:
    z = params.clone()
    with torch.no_grad():
        for t in z.tensors.values():
            t.zero_()
    return z


class TestTokenizer:
    def test_round_trip(self):
        assert decode(encode("chest pain")) == "chest pain"

    def test_empty(self):
        assert encode("") == []

    def test_multibyte_utf8(self):
        assert len(encode("é")) == 2

    def test_decode_strips_specials(self):
        assert decode([BOS, *encode("ok"), EOS]) == "ok"

    def test_decode_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            decode([0, VOCAB_SIZE])

    @given(st.text(max_size=80))
    @settings(max_examples=80, deadline=None)
    def test_round_trip_property(self, text):
        assert decode(encode(text)) == text


class TestForward:
    def test_causality_is_bitwise(self, params):
        tokens = encode("abcdefghij")
        base = forward(params, tokens)
        perturbed = list(tokens)
        perturbed[6] = (perturbed[6] + 1) % 256
        after = forward(params, perturbed)
        assert torch.equal(base[:6], after[:6])
        assert not torch.equal(base[6:], after[6:])

    def test_determinism(self, params):
        tokens = encode("hello world")
        assert torch.equal(forward(params, tokens), forward(params, tokens))

    def test_over_length_rejected(self, params):
        with pytest.raises(ValueError):
            forward(params, [0] * (CFG.context_len + 1))

    def test_zero_layer_reduction(self):
        """With no blocks, logits are a per-position function of (token, position)."""
        cfg = LMConfig(n_layers=0, context_len=8)
        p = init_params(cfg)
        two = forward(p, [5, 9])
        other = forward(p, [200, 9])
        # position 1 sees a different token at position 0 yet its logits are unchanged
        assert torch.equal(two[1], other[1])
        assert not torch.equal(two[0], other[0])

    def test_softmax_normalizes(self, params):
        logits = forward(params, encode("normalize me"))
        probs = torch.log_softmax(logits, dim=-1).exp().sum(dim=-1)
        assert torch.allclose(probs, torch.ones_like(probs), atol=1e-6)


class TestSequenceLogprob:
    def test_empty_completion_is_zero(self, params):
        assert sequence_logprob(params, encode("hi"), []).item() == 0.0

    def test_uniform_model_known_value(self, params):
        lp = sequence_logprob(zeroed(params), encode("hi"), encode("ab"))
        assert abs(lp.item() - 2 * math.log(1 / VOCAB_SIZE)) < 1e-9

    def test_matches_chain_rule_oracle(self):
        """Brute force: one forward per position, summing log-softmax entries."""
        cfg = LMConfig(n_layers=3, init_seed=5)
        p = init_params(cfg)
        prompt, completion = encode("ab"), encode("wxyz")
        ids = [BOS, *prompt]
        total = 0.0
        for target in completion:
            row = forward(p, ids)[-1]
            total += torch.log_softmax(row, dim=-1)[target].item()
            ids.append(target)
        assert abs(total - sequence_logprob(p, prompt, completion).item()) < 1e-9

    def test_additivity(self, params):
        prompt = encode("question")
        a, b = encode("first"), encode("second")
        lhs = sequence_logprob(params, prompt, a + b).item()
        rhs = (
            sequence_logprob(params, prompt, a).item()
            + sequence_logprob(params, prompt + a, b).item()
        )
        assert abs(lhs - rhs) < 1e-9

    def test_empty_prompt_allowed(self, params):
        lp = sequence_logprob(params, [], encode("solo"))
        assert lp.item() < 0.0

    def test_over_length_rejected(self, params):
        with pytest.raises(ValueError):
            sequence_logprob(params, [0] * 200, [1] * 200)

    def test_batched_matches_single(self, params):
        batch = [
            TokenBatch(tuple(encode("alpha")), tuple(encode("one"))),
            TokenBatch(tuple(encode("much longer prompt here")), tuple(encode("two!"))),
            TokenBatch((), tuple(encode("c"))),
        ]
        batched = completion_logprobs(params, batch)
        for got, tb in zip(batched.tolist(), batch):
            want = sequence_logprob(params, tb.prompt_tokens, tb.completion_tokens).item()
            assert abs(got - want) <= 1e-10 * max(1.0, abs(want))


class TestSample:
    def test_temperature_zero_deterministic(self, params):
        a = sample(params, encode("hello"), max_new=8, temperature=0.0, seed=1)
        b = sample(params, encode("hello"), max_new=8, temperature=0.0, seed=99)
        assert a == b

    def test_max_new_zero(self, params):
        assert sample(params, encode("hi"), max_new=0) == []

    def test_seeded_sampling_reproducible(self, params):
        a = sample(params, encode("hi"), max_new=8, temperature=1.0, seed=7)
        b = sample(params, encode("hi"), max_new=8, temperature=1.0, seed=7)
        assert a == b

    def test_eos_forcing_stops_immediately(self, params):
        forced = params.clone()
        with torch.no_grad():
            forced.tensors["head.bias"][EOS] = 1000.0
        assert sample(forced, encode("hi"), max_new=10, temperature=0.0, seed=0) == []

    def test_negative_temperature_rejected(self, params):
        with pytest.raises(ValueError):
            sample(params, encode("hi"), max_new=1, temperature=-0.1)


class TestTokenBatchHelpers:
    def test_completion_must_be_non_empty(self):
        with pytest.raises(ValueError):
            TokenBatch((1, 2), ())

    def test_make_token_batch_fits_context(self):
        tb = make_token_batch("q" * 500, "a" * 100, context_len=256)
        assert len(tb.prompt_tokens) + len(tb.completion_tokens) + 2 <= 256
        assert decode(list(tb.completion_tokens)) == "a" * 100

    def test_long_completion_truncated_right(self):
        tb = make_token_batch("q", "a" * 500, context_len=64)
        assert len(tb.completion_tokens) == 62

    def test_fit_prompt_truncates_left(self):
        tokens = list(range(100, 200))
        fitted, truncated = fit_prompt(tokens, context_len=64, max_new=30)
        assert truncated
        assert fitted == tokens[-32:]
        same, untruncated = fit_prompt([1, 2, 3], context_len=64, max_new=30)
        assert not untruncated and same == [1, 2, 3]


class TestCheckpoint:
    def test_round_trip_bit_exact(self, params, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.config == params.config
        assert set(loaded.tensors) == set(params.tensors)
        for name in params.tensors:
            assert torch.equal(loaded.tensors[name], params.tensors[name])

    def test_forward_identical_after_round_trip(self, params, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        tokens = encode("same logits?")
        assert torch.equal(forward(params, tokens), forward(loaded, tokens))

    def test_save_is_deterministic(self, params, tmp_path):
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(params, p1)
        save_checkpoint(params, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file_is_corrupt(self, params, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError, match="corrupt checkpoint"):
            load_checkpoint(path)

    def test_flipped_byte_is_corrupt(self, params, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        data = bytearray(path.read_bytes())
        data[len(data) // 2] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="corrupt checkpoint"):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "nope.ckpt"
        path.write_bytes(b"definitely not a checkpoint, far too short or wrong")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
