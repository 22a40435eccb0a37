"""Alignment objectives over tiny-LM log-probabilities: SFT, DPO, and KTO.

Every loss returns its scalar value, exact reverse-mode gradients for all
model tensors, and a diagnostics map. A finite-difference harness verifies
the gradients against central differences.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import torch

from .tinylm import LMParams, TokenBatch, completion_logprobs


@dataclass(frozen=True)
class DPOConfig:
    beta: float = 0.1

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class KTOConfig:
    beta: float = 0.1
    lambda_d: float = 1.0
    lambda_u: float = 1.0

    def __post_init__(self) -> None:
        for name in ("beta", "lambda_d", "lambda_u"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class LossOutput:
    value: float
    gradients: dict[str, torch.Tensor]
    diagnostics: dict[str, float]


@dataclass(frozen=True)
class TokenizedPair:
    """A preference pair in token form: shared prompt, chosen and rejected completions."""

    prompt: tuple[int, ...]
    chosen: tuple[int, ...]
    rejected: tuple[int, ...]


@dataclass(frozen=True)
class LabeledCompletion:
    """An unpaired completion with its binary desirability label, in token form."""

    prompt: tuple[int, ...]
    completion: tuple[int, ...]
    desirable: bool


def _collect_gradients(
    value: torch.Tensor, params: LMParams, enabled: bool
) -> dict[str, torch.Tensor]:
    if not enabled:
        return {}
    names = list(params.tensors)
    grads = torch.autograd.grad(
        value, [params.tensors[n] for n in names], allow_unused=True
    )
    return {
        name: (g.detach() if g is not None else torch.zeros_like(params.tensors[name]))
        for name, g in zip(names, grads)
    }


def sft_loss(
    params: LMParams, batch: Sequence[TokenBatch], with_gradients: bool = True
) -> LossOutput:
    """Mean negative log-likelihood per completion token.

    The raw summed negative log-likelihood over the whole batch is exposed in
    diagnostics as ``sum_neg_logprob``; the reported value divides it by the
    total completion-token count so learning rates transfer across batch sizes.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    logprobs = completion_logprobs(params, batch)
    total_tokens = sum(len(tb.completion_tokens) for tb in batch)
    total_neg = -logprobs.sum()
    value = total_neg / total_tokens
    gradients = _collect_gradients(value, params, with_gradients)
    return LossOutput(
        value=value.item(),
        gradients=gradients,
        diagnostics={
            "sum_neg_logprob": total_neg.item(),
            "token_count": float(total_tokens),
            "mean_seq_neg_logprob": total_neg.item() / len(batch),
        },
    )


def _pair_losses(
    delta_chosen: torch.Tensor, delta_rejected: torch.Tensor, beta: float
) -> torch.Tensor:
    """Per-pair -log sigmoid(beta * (delta_chosen - delta_rejected))."""
    return -torch.nn.functional.logsigmoid(beta * (delta_chosen - delta_rejected))


def dpo_loss(
    params: LMParams,
    ref_params: LMParams,
    pairs: Sequence[TokenizedPair],
    config: DPOConfig = DPOConfig(),
    with_gradients: bool = True,
    ref_logprobs: Optional[tuple[torch.Tensor, torch.Tensor]] = None,
) -> LossOutput:
    """Preference loss on policy-to-reference log-ratios, averaged over pairs.

    At params == ref_params every log-ratio vanishes and the value is ln 2.
    ``ref_logprobs`` (chosen, rejected) may carry precomputed reference values
    aligned with ``pairs``; the reference model is frozen, so callers that
    sweep many batches can compute them once.
    """
    if not pairs:
        raise ValueError("pairs must be non-empty")
    chosen = [TokenBatch(p.prompt, p.chosen) for p in pairs]
    rejected = [TokenBatch(p.prompt, p.rejected) for p in pairs]
    policy_chosen = completion_logprobs(params, chosen)
    policy_rejected = completion_logprobs(params, rejected)
    if ref_logprobs is not None:
        ref_chosen, ref_rejected = ref_logprobs
    else:
        with torch.no_grad():
            ref_chosen = completion_logprobs(ref_params, chosen)
            ref_rejected = completion_logprobs(ref_params, rejected)
    delta_chosen = policy_chosen - ref_chosen
    delta_rejected = policy_rejected - ref_rejected
    value = _pair_losses(delta_chosen, delta_rejected, config.beta).mean()
    gradients = _collect_gradients(value, params, with_gradients)
    margin = delta_chosen - delta_rejected
    return LossOutput(
        value=value.item(),
        gradients=gradients,
        diagnostics={
            "mean_margin": margin.mean().item(),
            "mean_chosen_delta": delta_chosen.mean().item(),
            "mean_rejected_delta": delta_rejected.mean().item(),
        },
    )


def kto_reward(
    params: LMParams,
    ref_params: LMParams,
    prompt: Sequence[int],
    completion: Sequence[int],
) -> torch.Tensor:
    """Policy-to-reference log-probability ratio of one completion."""
    if not completion:
        raise ValueError("completion must be non-empty")
    tb = TokenBatch(tuple(prompt), tuple(completion))
    policy = completion_logprobs(params, [tb])[0]
    with torch.no_grad():
        ref = completion_logprobs(ref_params, [tb])[0]
    return policy - ref


def estimate_z0(
    params: LMParams, ref_params: LMParams, batch: Sequence[LabeledCompletion]
) -> float:
    """KL reference point: mean reward over mismatched prompt/completion pairs.

    Each prompt is paired with the next record's completion (cyclic shift), the
    rewards are averaged and clamped below at zero. Treated as a constant: no
    gradients flow through the estimate.
    """
    if len(batch) < 2:
        raise ValueError("z0 estimation needs a batch of at least 2")
    context = params.config.context_len
    with torch.no_grad():
        mismatched = []
        for i, item in enumerate(batch):
            completion = batch[(i + 1) % len(batch)].completion
            prompt = item.prompt
            overflow = len(prompt) + len(completion) + 4 - context
            if overflow > 0:  # mismatched texts may not fit together; trim prompt left
                prompt = prompt[overflow:]
            mismatched.append(TokenBatch(tuple(prompt), completion))
        rewards = completion_logprobs(params, mismatched) - completion_logprobs(
            ref_params, mismatched
        )
        return max(0.0, float(rewards.mean()))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def kto_value(reward, z0: float, desirable: bool, config: KTOConfig = KTOConfig()):
    """Prospect-theoretic value of one completion relative to the reference point.

    Desirable completions score lambda_d * sigmoid(beta * (reward - z0)),
    undesirable ones lambda_u * sigmoid(beta * (z0 - reward)). Accepts plain
    floats or differentiable tensors and returns the matching kind.
    """
    arg = config.beta * ((reward - z0) if desirable else (z0 - reward))
    scale = config.lambda_d if desirable else config.lambda_u
    if isinstance(arg, torch.Tensor):
        return scale * torch.sigmoid(arg)
    return scale * _sigmoid(arg)


def kto_loss(
    params: LMParams,
    ref_params: LMParams,
    batch: Sequence[LabeledCompletion],
    config: KTOConfig = KTOConfig(),
    z0: Optional[float] = None,
    with_gradients: bool = True,
    ref_logprobs: Optional[torch.Tensor] = None,
) -> LossOutput:
    """Mean of (lambda_y - value) over the batch; z0 is estimated once per batch.

    Pass ``z0`` explicitly to hold the reference point fixed (it is always a
    constant with respect to gradients). ``ref_logprobs`` may carry precomputed
    frozen-reference values aligned with ``batch``.
    """
    if len(batch) < 2:
        raise ValueError("kto batch must have at least 2 records")
    if z0 is None:
        z0 = estimate_z0(params, ref_params, batch)
    token_batches = [TokenBatch(item.prompt, item.completion) for item in batch]
    policy = completion_logprobs(params, token_batches)
    if ref_logprobs is not None:
        ref = ref_logprobs
    else:
        with torch.no_grad():
            ref = completion_logprobs(ref_params, token_batches)
    rewards = policy - ref
    terms = []
    reward_sums = {True: 0.0, False: 0.0}
    counts = {True: 0, False: 0}
    for i, item in enumerate(batch):
        value_i = kto_value(rewards[i], z0, item.desirable, config)
        scale = config.lambda_d if item.desirable else config.lambda_u
        terms.append(scale - value_i)
        reward_sums[item.desirable] += rewards[i].item()
        counts[item.desirable] += 1
    value = torch.stack(terms).mean()
    gradients = _collect_gradients(value, params, with_gradients)
    diagnostics = {
        "z0": z0,
        "n_desirable": float(counts[True]),
        "n_undesirable": float(counts[False]),
    }
    if counts[True]:
        diagnostics["mean_reward_desirable"] = reward_sums[True] / counts[True]
    if counts[False]:
        diagnostics["mean_reward_undesirable"] = reward_sums[False] / counts[False]
    return LossOutput(value=value.item(), gradients=gradients, diagnostics=diagnostics)


@dataclass
class GradCheckReport:
    max_rel_error: float
    mean_rel_error: float
    checked: int
    worst: tuple[str, int, float, float] = ("", -1, 0.0, 0.0)  # name, index, analytic, numeric


def check_gradients(
    loss_fn: Callable[[LMParams], LossOutput],
    params: LMParams,
    epsilon: float = 1e-5,
    sample_count: int = 200,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``sample_count`` scalar coordinates are drawn uniformly over all tensors.
    Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    analytic = loss_fn(params).gradients
    names = list(params.tensors)
    sizes = [params.tensors[n].numel() for n in names]
    total = sum(sizes)
    rng = random.Random(seed)
    coords = []
    for _ in range(min(sample_count, total)):
        flat = rng.randrange(total)
        for name, size in zip(names, sizes):
            if flat < size:
                coords.append((name, flat))
                break
            flat -= size
    errors = []
    worst = ("", -1, 0.0, 0.0)
    worst_rel = -1.0
    for name, idx in coords:
        tensor = params.tensors[name]
        flat_view = tensor.detach().view(-1)
        original = float(flat_view[idx])
        with torch.no_grad():
            flat_view[idx] = original + epsilon
        f_plus = loss_fn(params).value
        with torch.no_grad():
            flat_view[idx] = original - epsilon
        f_minus = loss_fn(params).value
        with torch.no_grad():
            flat_view[idx] = original
        numeric = (f_plus - f_minus) / (2 * epsilon)
        a = float(analytic[name].view(-1)[idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        errors.append(rel)
        if rel > worst_rel:
            worst_rel = rel
            worst = (name, idx, a, numeric)
    max_err = max(errors) if errors else 0.0
    mean_err = sum(errors) / len(errors) if errors else 0.0
    return GradCheckReport(
        max_rel_error=max_err, mean_rel_error=mean_err, checked=len(errors), worst=worst
    )
