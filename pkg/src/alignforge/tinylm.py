"""Desk-scale byte-level causal transformer with exact sequence log-probabilities.

Everything runs in float64 on CPU so gradient checks are tight and training is
bit-reproducible. Sequences are laid out as ``BOS + prompt + completion + EOS``
(no separator token, so conditioning on prompt+A then scoring B composes
exactly); losses and log-probabilities cover only the completion tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

BOS, EOS, PAD, SEP = 256, 257, 258, 259
VOCAB_SIZE = 260
FORMAT_OVERHEAD = 2  # BOS and EOS around prompt + completion


def special_ids(config: "LMConfig") -> tuple[int, int, int, int]:
    """(BOS, EOS, PAD, SEP) for a config: always the top four vocabulary ids.

    For the standard 260-token byte vocabulary these are 256-259; reduced-vocab
    probe configs get proportionally lower ids.
    """
    base = config.vocab_size - 4
    return base, base + 1, base + 2, base + 3


class ByteTokenizer:
    """UTF-8 byte vocabulary (0-255) plus the four special tokens."""

    vocab_size = VOCAB_SIZE

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, tokens: Sequence[int]) -> str:
        for t in tokens:
            if not 0 <= t < VOCAB_SIZE:
                raise ValueError(f"token id {t} outside vocabulary of size {VOCAB_SIZE}")
        return bytes(t for t in tokens if t < 256).decode("utf-8", errors="replace")


TOKENIZER = ByteTokenizer()
encode = TOKENIZER.encode
decode = TOKENIZER.decode


@dataclass(frozen=True)
class LMConfig:
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    context_len: int = 256
    vocab_size: int = VOCAB_SIZE
    init_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        for name in ("n_heads", "d_model", "d_ff", "vocab_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.context_len < 2:
            raise ValueError("context_len must be >= 2")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must be >= 4 (four special tokens)")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")


@dataclass
class LMParams:
    """All learnable tensors, keyed by stable names, plus the shaping config."""

    config: LMConfig
    tensors: dict[str, torch.Tensor]

    def clone(self, requires_grad: bool = True) -> "LMParams":
        return LMParams(
            config=self.config,
            tensors={
                name: t.detach().clone().requires_grad_(requires_grad)
                for name, t in self.tensors.items()
            },
        )

    def assert_finite(self) -> None:
        for name, t in self.tensors.items():
            if not torch.isfinite(t).all():
                raise ValueError(f"non-finite values in parameter {name!r}")


def init_params(config: LMConfig) -> LMParams:
    """Seeded Gaussian weights (scale 0.02), zero biases, unit layer-norm gains."""
    gen = torch.Generator().manual_seed(config.init_seed)

    def gauss(*shape: int) -> torch.Tensor:
        return (torch.randn(*shape, generator=gen, dtype=torch.float64) * 0.02).requires_grad_(True)

    def zeros(*shape: int) -> torch.Tensor:
        return torch.zeros(*shape, dtype=torch.float64, requires_grad=True)

    def ones(*shape: int) -> torch.Tensor:
        return torch.ones(*shape, dtype=torch.float64, requires_grad=True)

    d, ff, v, ctx = config.d_model, config.d_ff, config.vocab_size, config.context_len
    tensors: dict[str, torch.Tensor] = {
        "wte": gauss(v, d),
        "wpe": gauss(ctx, d),
    }
    for i in range(config.n_layers):
        tensors[f"h{i}.ln1.weight"] = ones(d)
        tensors[f"h{i}.ln1.bias"] = zeros(d)
        for proj in ("wq", "wk", "wv", "wo"):
            tensors[f"h{i}.attn.{proj}"] = gauss(d, d)
        for bias in ("bq", "bk", "bv", "bo"):
            tensors[f"h{i}.attn.{bias}"] = zeros(d)
        tensors[f"h{i}.ln2.weight"] = ones(d)
        tensors[f"h{i}.ln2.bias"] = zeros(d)
        tensors[f"h{i}.mlp.w1"] = gauss(d, ff)
        tensors[f"h{i}.mlp.b1"] = zeros(ff)
        tensors[f"h{i}.mlp.w2"] = gauss(ff, d)
        tensors[f"h{i}.mlp.b2"] = zeros(d)
    tensors["lnf.weight"] = ones(d)
    tensors["lnf.bias"] = zeros(d)
    tensors["head.weight"] = gauss(d, v)
    tensors["head.bias"] = zeros(v)
    return LMParams(config=config, tensors=tensors)


def _layer_norm(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + 1e-5) * weight + bias


def _forward_ids(params: LMParams, ids: torch.Tensor) -> torch.Tensor:
    """Batched core: ids [B, L] -> logits [B, L, V]. Position t sees tokens <= t."""
    cfg = params.config
    t = params.tensors
    _, length = ids.shape
    head_dim = cfg.d_model // cfg.n_heads
    x = t["wte"][ids] + t["wpe"][:length]
    mask = torch.ones(length, length, dtype=torch.bool).tril()
    for i in range(cfg.n_layers):
        h = _layer_norm(x, t[f"h{i}.ln1.weight"], t[f"h{i}.ln1.bias"])
        q = h @ t[f"h{i}.attn.wq"] + t[f"h{i}.attn.bq"]
        k = h @ t[f"h{i}.attn.wk"] + t[f"h{i}.attn.bk"]
        v = h @ t[f"h{i}.attn.wv"] + t[f"h{i}.attn.bv"]
        q = q.view(-1, length, cfg.n_heads, head_dim).transpose(1, 2)
        k = k.view(-1, length, cfg.n_heads, head_dim).transpose(1, 2)
        v = v.view(-1, length, cfg.n_heads, head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(head_dim)
        scores = scores.masked_fill(~mask, float("-inf"))
        context = torch.softmax(scores, dim=-1) @ v
        context = context.transpose(1, 2).reshape(-1, length, cfg.d_model)
        x = x + context @ t[f"h{i}.attn.wo"] + t[f"h{i}.attn.bo"]
        h = _layer_norm(x, t[f"h{i}.ln2.weight"], t[f"h{i}.ln2.bias"])
        x = x + torch.nn.functional.gelu(h @ t[f"h{i}.mlp.w1"] + t[f"h{i}.mlp.b1"]) @ t[f"h{i}.mlp.w2"] + t[f"h{i}.mlp.b2"]
    x = _layer_norm(x, t["lnf.weight"], t["lnf.bias"])
    return x @ t["head.weight"] + t["head.bias"]


def _check_tokens(params: LMParams, tokens: Sequence[int]) -> None:
    cfg = params.config
    if len(tokens) > cfg.context_len:
        raise ValueError(f"sequence of length {len(tokens)} exceeds context_len {cfg.context_len}")
    for tok in tokens:
        if not 0 <= tok < cfg.vocab_size:
            raise ValueError(f"token id {tok} outside vocabulary of size {cfg.vocab_size}")


def forward(params: LMParams, tokens: Sequence[int]) -> torch.Tensor:
    """Per-position next-token logits, shape [len(tokens), vocab_size]."""
    _check_tokens(params, tokens)
    if not tokens:
        return torch.zeros(0, params.config.vocab_size, dtype=torch.float64)
    ids = torch.tensor([list(tokens)], dtype=torch.long)
    return _forward_ids(params, ids)[0]


def _compose(config: LMConfig, prompt: Sequence[int], completion: Sequence[int]) -> list[int]:
    bos = special_ids(config)[0]
    return [bos, *prompt, *completion]


def sequence_logprob(
    params: LMParams, prompt: Sequence[int], completion: Sequence[int]
) -> torch.Tensor:
    """log P(completion | prompt) as a differentiable 0-dim tensor (<= 0)."""
    if not completion:
        return torch.zeros((), dtype=torch.float64)
    ids = _compose(params.config, prompt, completion)
    if len(ids) + 1 > params.config.context_len:  # +1 for the trailing EOS of the layout
        raise ValueError(
            f"prompt+completion needs {len(ids) + 1} positions, "
            f"context_len is {params.config.context_len}"
        )
    logits = forward(params, ids[:-1])
    logprobs = torch.log_softmax(logits, dim=-1)
    start = len(prompt)  # row of the last prompt token (or BOS), predicting completion[0]
    targets = torch.tensor(list(completion), dtype=torch.long)
    rows = torch.arange(start, start + len(completion))
    return logprobs[rows, targets].sum()


@dataclass(frozen=True)
class TokenBatch:
    """One training record in token form; the boundary separates prompt from completion."""

    prompt_tokens: tuple[int, ...]
    completion_tokens: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.completion_tokens:
            raise ValueError("completion_tokens must be non-empty")

    @property
    def boundary(self) -> int:
        return len(self.prompt_tokens)


def make_token_batch(prompt_text: str, completion_text: str, context_len: int) -> TokenBatch:
    """Tokenize one record, left-truncating the prompt to fit the context window."""
    prompt = encode(prompt_text)
    completion = encode(completion_text)
    budget = context_len - FORMAT_OVERHEAD
    if budget < 1:
        raise ValueError(f"context_len {context_len} leaves no room for a completion")
    if len(completion) > budget:
        completion = completion[:budget]
    room = budget - len(completion)
    if len(prompt) > room:
        prompt = prompt[len(prompt) - room :]
    return TokenBatch(tuple(prompt), tuple(completion))


def completion_logprobs(params: LMParams, batch: Sequence[TokenBatch]) -> torch.Tensor:
    """log P(completion | prompt) for every record, via one padded batched forward.

    Padding sits after each sequence's last scored position, so causal masking
    makes the padded results agree with per-sequence evaluation.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    cfg = params.config
    pad = special_ids(cfg)[2]
    rows_list, seqs = [], []
    for tb in batch:
        ids = _compose(cfg, tb.prompt_tokens, tb.completion_tokens)
        if len(ids) + 1 > cfg.context_len:
            raise ValueError(
                f"prompt+completion needs {len(ids) + 1} positions, "
                f"context_len is {cfg.context_len}"
            )
        seqs.append(ids[:-1])
        start = len(tb.prompt_tokens)
        rows_list.append((start, list(tb.completion_tokens)))
    max_len = max(len(s) for s in seqs)
    padded = torch.full((len(seqs), max_len), pad, dtype=torch.long)
    for b, s in enumerate(seqs):
        padded[b, : len(s)] = torch.tensor(s, dtype=torch.long)
    logprobs = torch.log_softmax(_forward_ids(params, padded), dim=-1)
    out = []
    for b, (start, targets) in enumerate(rows_list):
        rows = torch.arange(start, start + len(targets))
        out.append(logprobs[b, rows, torch.tensor(targets, dtype=torch.long)].sum())
    return torch.stack(out)


def sample(
    params: LMParams,
    prompt: Sequence[int],
    max_new: int,
    temperature: float = 0.0,
    seed: int = 0,
) -> list[int]:
    """Autoregressive sampling; temperature 0 is argmax with lowest-id tie-break."""
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    bos, eos, _, _ = special_ids(params.config)
    ids = [bos, *prompt]
    if len(ids) + 1 > params.config.context_len:
        raise ValueError("prompt leaves no room for generation within context_len")
    rng = np.random.default_rng(seed)
    out: list[int] = []
    with torch.no_grad():
        for _ in range(max_new):
            if len(ids) > params.config.context_len:
                break
            logits = forward(params, ids)[-1]
            if temperature == 0:
                next_id = int(np.argmax(logits.numpy()))
            else:
                probs = torch.softmax(logits / temperature, dim=-1).numpy()
                probs = probs / probs.sum()
                next_id = int(rng.choice(len(probs), p=probs))
            if next_id == eos:
                break
            out.append(next_id)
            ids.append(next_id)
    return out


def fit_prompt(tokens: Sequence[int], context_len: int, max_new: int) -> tuple[list[int], bool]:
    """Left-truncate a generation prompt so prompt + max_new fits the context."""
    room = context_len - FORMAT_OVERHEAD - max_new
    if room < 1:
        raise ValueError("max_new leaves no room for any prompt token")
    tokens = list(tokens)
    if len(tokens) <= room:
        return tokens, False
    return tokens[len(tokens) - room :], True
