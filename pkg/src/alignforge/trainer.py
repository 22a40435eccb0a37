"""Optimization loop and staged fine-tuning plans."""

from __future__ import annotations

import hashlib
import json
import math
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import torch

from .checkpoint import save_checkpoint
from .objectives import (
    DPOConfig,
    KTOConfig,
    LabeledCompletion,
    LossOutput,
    TokenizedPair,
    dpo_loss,
    kto_loss,
    sft_loss,
)
from .tinylm import LMParams, TokenBatch, completion_logprobs, decode, encode, fit_prompt, sample

METHODS = ("sft", "dpo", "kto")


class TrainError(RuntimeError):
    """Raised when a training stage cannot proceed."""


@dataclass(frozen=True)
class TrainConfig:
    method: str
    epochs: int = 1
    batch_size: int = 8
    learning_rate: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float = 1.0
    seed: int = 0
    dpo: DPOConfig = field(default_factory=DPOConfig)
    kto: KTOConfig = field(default_factory=KTOConfig)
    eval_every: int = 25

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive")


@dataclass(frozen=True)
class PlanStage:
    dataset_id: str
    config: TrainConfig


@dataclass(frozen=True)
class StagePlan:
    """Ordered fine-tuning stages; each stage starts from the previous one's output."""

    name: str
    stages: tuple[PlanStage, ...]
    init_checkpoint: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.stages:
            raise ValueError("a StagePlan needs at least one stage")


@dataclass
class RunRecord:
    stage_index: int
    step: int
    loss: float
    diagnostics: dict[str, float]
    timestamp: float
    checkpoint_path: Optional[str] = None


class Adam:
    """Plain Adam with bias correction, in float64 like everything else."""

    def __init__(self, params: LMParams, lr: float, beta1: float, beta2: float, eps: float):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: torch.zeros_like(p) for n, p in params.tensors.items()}
        self.v = {n: torch.zeros_like(p) for n, p in params.tensors.items()}

    def step(self, params: LMParams, grads: Mapping[str, torch.Tensor]) -> None:
        self.t += 1
        bc1 = 1 - self.beta1**self.t
        bc2 = 1 - self.beta2**self.t
        with torch.no_grad():
            for name, p in params.tensors.items():
                g = grads[name]
                m = self.m[name]
                v = self.v[name]
                m.mul_(self.beta1).add_(g, alpha=1 - self.beta1)
                v.mul_(self.beta2).addcmul_(g, g, value=1 - self.beta2)
                p.sub_(self.lr * (m / bc1) / ((v / bc2).sqrt() + self.eps))


def clip_gradients(
    grads: Mapping[str, torch.Tensor], max_norm: float
) -> tuple[dict[str, torch.Tensor], float]:
    """Scale gradients so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return dict(grads), total
    scale = max_norm / total
    return {name: g * scale for name, g in grads.items()}, total


def _chunked_ref_logprobs(
    ref_params: LMParams, batches: list[TokenBatch], chunk: int = 16
) -> torch.Tensor:
    with torch.no_grad():
        parts = [
            completion_logprobs(ref_params, batches[i : i + chunk])
            for i in range(0, len(batches), chunk)
        ]
    return torch.cat(parts)


def _ref_cache(method: str, ref_params: Optional[LMParams], dataset: Sequence):
    """The reference model is frozen, so its log-probs are computed once per stage."""
    if method == "dpo":
        chosen = [TokenBatch(p.prompt, p.chosen) for p in dataset]
        rejected = [TokenBatch(p.prompt, p.rejected) for p in dataset]
        return (
            _chunked_ref_logprobs(ref_params, chosen),
            _chunked_ref_logprobs(ref_params, rejected),
        )
    if method == "kto":
        matched = [TokenBatch(item.prompt, item.completion) for item in dataset]
        return _chunked_ref_logprobs(ref_params, matched)
    return None


def _batch_loss(
    method: str,
    params: LMParams,
    ref_params: Optional[LMParams],
    dataset: Sequence,
    indices: Sequence[int],
    config: TrainConfig,
    with_gradients: bool,
    ref_cache,
) -> LossOutput:
    batch = [dataset[i] for i in indices]
    if method == "sft":
        return sft_loss(params, batch, with_gradients=with_gradients)
    idx = torch.tensor(list(indices), dtype=torch.long)
    if method == "dpo":
        return dpo_loss(
            params,
            ref_params,
            batch,
            config.dpo,
            with_gradients=with_gradients,
            ref_logprobs=(ref_cache[0][idx], ref_cache[1][idx]),
        )
    return kto_loss(
        params,
        ref_params,
        batch,
        config.kto,
        with_gradients=with_gradients,
        ref_logprobs=ref_cache[idx],
    )


def _dataset_eval(
    method: str,
    params: LMParams,
    ref_params: Optional[LMParams],
    dataset: Sequence,
    config: TrainConfig,
    ref_cache,
) -> tuple[float, dict[str, float]]:
    """Loss and diagnostics over the whole dataset, weighted by batch size."""
    total_value = 0.0
    sums: dict[str, float] = {}
    n = 0
    for start in range(0, len(dataset), config.batch_size):
        indices = range(start, min(start + config.batch_size, len(dataset)))
        if method == "kto" and len(indices) < 2:
            continue
        out = _batch_loss(method, params, ref_params, dataset, indices, config, False, ref_cache)
        total_value += out.value * len(indices)
        for key, val in out.diagnostics.items():
            sums[key] = sums.get(key, 0.0) + val * len(indices)
        n += len(indices)
    if n == 0:
        raise TrainError("dataset produced no evaluable batches")
    return total_value / n, {k: v / n for k, v in sums.items()}


def train_stage(
    start_params: LMParams, dataset: Sequence, config: TrainConfig
) -> tuple[LMParams, list[RunRecord]]:
    """Run seeded epochs of Adam updates; returns final params and eval records.

    Fully deterministic given (start_params, dataset, config). For dpo/kto the
    reference model is a frozen copy of ``start_params``. KTO batches need at
    least 2 records, so a trailing singleton batch is skipped.
    """
    if not dataset:
        raise TrainError("dataset must be non-empty")
    params = start_params.clone(requires_grad=True)
    ref_params = start_params.clone(requires_grad=False) if config.method != "sft" else None
    ref_cache = _ref_cache(config.method, ref_params, dataset)
    optimizer = Adam(
        params, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps
    )

    records: list[RunRecord] = []

    def record_eval(step: int) -> None:
        value, diags = _dataset_eval(config.method, params, ref_params, dataset, config, ref_cache)
        records.append(
            RunRecord(
                stage_index=0,
                step=step,
                loss=value,
                diagnostics=diags,
                timestamp=time.time(),
            )
        )

    record_eval(0)
    step = 0
    for epoch in range(config.epochs):
        order = list(range(len(dataset)))
        random.Random(config.seed + epoch).shuffle(order)
        for start in range(0, len(order), config.batch_size):
            indices = order[start : start + config.batch_size]
            if config.method == "kto" and len(indices) < 2:
                continue
            out = _batch_loss(config.method, params, ref_params, dataset, indices, config, True, ref_cache)
            if not math.isfinite(out.value):
                raise TrainError(f"non-finite loss at step {step + 1}")
            grads, _ = clip_gradients(out.gradients, config.grad_clip_norm)
            optimizer.step(params, grads)
            step += 1
            if config.eval_every and step % config.eval_every == 0:
                record_eval(step)
    if not records or records[-1].step != step:
        record_eval(step)
    return params, records


def dataset_fingerprint(dataset: Sequence) -> str:
    """Stable content hash of a tokenized dataset, for run manifests."""
    items = []
    for item in dataset:
        if isinstance(item, TokenBatch):
            items.append(["sft", list(item.prompt_tokens), list(item.completion_tokens)])
        elif isinstance(item, TokenizedPair):
            items.append(["pair", list(item.prompt), list(item.chosen), list(item.rejected)])
        elif isinstance(item, LabeledCompletion):
            items.append(["kto", list(item.prompt), list(item.completion), item.desirable])
        else:
            raise TypeError(f"unhashable dataset item type {type(item)!r}")
    blob = json.dumps(items, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def run_plan(
    plan: StagePlan,
    start_params: LMParams,
    datasets: Mapping[str, Sequence],
    out_dir: str | Path,
) -> tuple[LMParams, dict, list[RunRecord]]:
    """Execute a plan's stages sequentially, checkpointing after each stage.

    For dpo/kto stages the frozen reference model (the stage's start params)
    is persisted alongside the stage checkpoint. Re-running an identical plan
    reproduces identical checkpoint bytes.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for stage in plan.stages:
        if stage.dataset_id not in datasets:
            raise TrainError(f"plan references unknown dataset {stage.dataset_id!r}")
    params = start_params
    manifest: dict = {"plan": plan.name, "stages": []}
    all_records: list[RunRecord] = []
    for index, stage in enumerate(plan.stages):
        dataset = datasets[stage.dataset_id]
        stage_entry = {
            "index": index,
            "dataset_id": stage.dataset_id,
            "method": stage.config.method,
            "config": asdict(stage.config),
            "dataset_hash": dataset_fingerprint(dataset),
        }
        if stage.config.method in ("dpo", "kto"):
            ref_path = out_dir / f"stage_{index:02d}_reference.ckpt"
            save_checkpoint(params, ref_path)
            stage_entry["reference_checkpoint"] = ref_path.name
        params, records = train_stage(params, dataset, stage.config)
        ckpt_path = out_dir / f"stage_{index:02d}.ckpt"
        save_checkpoint(params, ckpt_path)
        for record in records:
            record.stage_index = index
        records[-1].checkpoint_path = ckpt_path.name
        all_records.extend(records)
        stage_entry["checkpoint"] = ckpt_path.name
        stage_entry["final_loss"] = records[-1].loss
        stage_entry["steps"] = records[-1].step
        manifest["stages"].append(stage_entry)
    final_path = out_dir / "final.ckpt"
    save_checkpoint(params, final_path)
    manifest["final_checkpoint"] = final_path.name
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    with (out_dir / "run_log.jsonl").open("w", encoding="utf-8") as fp:
        for record in all_records:
            fp.write(json.dumps(asdict(record)) + "\n")
    return params, manifest, all_records


def format_query(instruction: str, question: str) -> str:
    """Instruction-then-question rendering; an empty instruction is the identity."""
    if not instruction:
        return question
    return f"{instruction}\n\n{question}"


def generate_response(
    params: LMParams,
    question: str,
    instruction: str = "",
    max_new: int = 128,
    temperature: float = 0.0,
    seed: int = 0,
) -> tuple[str, bool]:
    """Sample a response to a rendered question; returns (text, prompt_was_truncated)."""
    tokens = encode(format_query(instruction, question))
    tokens, truncated = fit_prompt(tokens, params.config.context_len, max_new)
    out = sample(params, tokens, max_new=max_new, temperature=temperature, seed=seed)
    return decode(out), truncated


def prompt_baseline(
    params: LMParams,
    question: str,
    instruction: str,
    max_new: int = 128,
    temperature: float = 0.0,
    seed: int = 0,
) -> str:
    """Sample from the unmodified model with a fixed instruction prepended."""
    text, _ = generate_response(
        params, question, instruction, max_new=max_new, temperature=temperature, seed=seed
    )
    return text
