"""Command implementations: ingest, rewrite, train, generate, score, report.

Each function takes the parsed PipelineConfig, works under its work_dir, and
returns a process exit code (0 success, 1 usage error, 2 data error, 3 backend
error). The thin argparse layer lives in cli.py.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from . import corpus, judge, rewriter
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PLAN_TABLE, STAGE_TABLE, PipelineConfig
from .objectives import LabeledCompletion, TokenizedPair
from .report import MetricReport, build_report, report_from_csv, report_to_text, write_report
from .tinylm import TokenBatch, encode, init_params, make_token_batch
from .trainer import PlanStage, StagePlan, format_query, generate_response, run_plan

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3


class DataError(RuntimeError):
    """A required input file is missing or inconsistent."""


def _require_file(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DataError(f"{path} not found; {hint}")
    return path


def cmd_ingest(config: PipelineConfig) -> int:
    """Normalize the raw dataset into the work directory."""
    raw = _require_file(Path(config.raw_data), "check the raw_data path in the config")
    dialogues = corpus.load_dataset(raw, split="train")
    out = config.work_path("dialogues.jsonl")
    corpus.save_dialogues(out, dialogues)
    n_train = sum(1 for d in dialogues if d.split == "train")
    print(f"ingested {len(dialogues)} dialogues ({n_train} train, {len(dialogues) - n_train} test) -> {out}")
    return EXIT_OK


def _load_work_dialogues(config: PipelineConfig) -> list[corpus.Dialogue]:
    path = _require_file(config.work_path("dialogues.jsonl"), "run the ingest command first")
    return corpus.load_dataset(path, split="train")


def _rewrite_client(config: PipelineConfig) -> rewriter.ChatClient:
    if config.rewrite.backend == "mock":
        return rewriter.MockChatClient(seed=config.rewrite.seed)
    return rewriter.HttpChatClient.from_env(config.rewrite.model)


def cmd_rewrite(config: PipelineConfig, subset: str) -> int:
    """Rewrite the chosen subset; eqsr also adapts the test split the same way."""
    if subset not in ("er", "eqsr"):
        raise ValueError(f"subset must be 'er' or 'eqsr', got {subset!r}")
    dialogues = _load_work_dialogues(config)
    train = [d for d in dialogues if d.split == "train"]
    er_part, eqsr_part = corpus.split_for_rewriting(
        train, config.rewrite.er_fraction, seed=config.seed
    )
    client = _rewrite_client(config)
    params = rewriter.GenerationParams(temperature=config.rewrite.temperature)
    jobs: list[tuple[str, list[corpus.Dialogue], Optional[list[corpus.EmotionTag]], Path]]
    if subset == "er":
        jobs = [("er", er_part, None, config.work_path("er_train.jsonl"))]
    else:
        test = [d for d in dialogues if d.split == "test"]
        jobs = [
            (
                "eqsr",
                eqsr_part,
                rewriter.assign_emotions(len(eqsr_part), seed=config.seed),
                config.work_path("eqsr_train.jsonl"),
            ),
            (
                "eqsr",
                test,
                rewriter.assign_emotions(len(test), seed=config.seed + 1),
                config.work_path("eqsr_test.jsonl"),
            ),
        ]
    all_failures: list[tuple[str, str]] = []
    attempted = 0
    for kind, part, emotions, out_path in jobs:
        successes, failures = rewriter.rewrite_batch(
            part,
            emotions,
            kind,
            client,
            concurrency=config.rewrite.concurrency,
            max_retries=config.rewrite.max_retries,
            params=params,
        )
        if kind == "er":
            corpus.save_er_examples(out_path, successes)  # type: ignore[arg-type]
        else:
            corpus.save_eqsr_examples(out_path, successes)  # type: ignore[arg-type]
        all_failures.extend(failures)
        attempted += len(part)
        print(f"rewrote {len(successes)}/{len(part)} -> {out_path}")
    failure_path = config.work_path(f"rewrite_failures_{subset}.jsonl")
    with failure_path.open("w", encoding="utf-8") as fp:
        for dialogue_id, reason in all_failures:
            fp.write(json.dumps({"id": dialogue_id, "reason": reason}) + "\n")
    rate = len(all_failures) / attempted if attempted else 0.0
    print(f"failures: {len(all_failures)} (rate {rate:.3f}, threshold {config.rewrite.failure_threshold})")
    return EXIT_OK if rate <= config.rewrite.failure_threshold else EXIT_DATA


def _tokenize_pair(prompt: str, chosen: str, rejected: str, context_len: int) -> TokenizedPair:
    p, c, r = encode(prompt), encode(chosen), encode(rejected)
    budget = context_len - 3
    c, r = c[:budget], r[:budget]
    room = budget - max(len(c), len(r))
    if len(p) > room:
        p = p[len(p) - room :] if room > 0 else []
    return TokenizedPair(tuple(p), tuple(c), tuple(r))


def _build_stage_dataset(config: PipelineConfig, stage_name: str) -> list:
    source, method = STAGE_TABLE[stage_name]
    instruction = config.task_instruction
    context = config.model.context_len
    if source == "er":
        path = _require_file(config.work_path("er_train.jsonl"), "run `rewrite er` first")
        examples = corpus.load_er_examples(path)
        return [
            make_token_batch(format_query(instruction, e.patient_query), e.empathetic_response, context)
            for e in examples
        ]
    path = _require_file(config.work_path("eqsr_train.jsonl"), "run `rewrite eqsr` first")
    examples = corpus.load_eqsr_examples(path)
    if method == "sft":
        return [
            make_token_batch(format_query(instruction, e.emotional_query), e.soothing_response, context)
            for e in examples
        ]
    if method == "dpo":
        pairs, dropped = corpus.to_preference_pairs(examples)
        if dropped:
            print(f"warning: dropped {dropped} degenerate preference pairs")
        return [
            _tokenize_pair(format_query(instruction, p.prompt), p.chosen, p.rejected, context)
            for p in pairs
        ]
    kto_examples = corpus.to_kto_examples(examples)
    out = []
    for item in kto_examples:
        tb = make_token_batch(format_query(instruction, item.prompt), item.completion, context)
        out.append(LabeledCompletion(tb.prompt_tokens, tb.completion_tokens, item.desirable))
    return out


def cmd_train(config: PipelineConfig, plan_name: str) -> int:
    """Execute one named fine-tuning plan, checkpointing under plans/<name>/."""
    if plan_name not in PLAN_TABLE:
        print(f"unknown plan {plan_name!r}; valid plans: {', '.join(PLAN_TABLE)}")
        return EXIT_USAGE
    params = init_params(config.model)
    save_checkpoint(params, config.work_path("init.ckpt"))
    plan_dir = config.work_path("plans", plan_name)
    stage_names = PLAN_TABLE[plan_name]
    if not stage_names:
        plan_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(params, plan_dir / "final.ckpt")
        manifest = {"plan": plan_name, "stages": [], "final_checkpoint": "final.ckpt"}
        (plan_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(f"plan {plan_name}: no training stages, checkpoint copied")
        return EXIT_OK
    datasets = {name: _build_stage_dataset(config, name) for name in stage_names}
    plan = StagePlan(
        name=plan_name,
        stages=tuple(PlanStage(name, config.stage_config(name)) for name in stage_names),
    )
    _, manifest, _ = run_plan(plan, params, datasets, plan_dir)
    for entry in manifest["stages"]:
        print(
            f"plan {plan_name} stage {entry['index']} [{entry['method']} on {entry['dataset_id']}]: "
            f"{entry['steps']} steps, final loss {entry['final_loss']:.4f}"
        )
    return EXIT_OK


def _load_test_questions(config: PipelineConfig) -> list[corpus.EQSRExample]:
    path = _require_file(config.work_path("eqsr_test.jsonl"), "run `rewrite eqsr` first")
    examples = corpus.load_eqsr_examples(path)
    limit = config.eval.max_questions
    return examples[:limit] if limit is not None else examples


def cmd_generate(config: PipelineConfig, plan_name: str) -> int:
    """Sample one response per test question from a plan's final checkpoint."""
    if plan_name not in PLAN_TABLE:
        print(f"unknown plan {plan_name!r}; valid plans: {', '.join(PLAN_TABLE)}")
        return EXIT_USAGE
    ckpt = _require_file(
        config.work_path("plans", plan_name, "final.ckpt"), f"run `train {plan_name}` first"
    )
    params = load_checkpoint(ckpt)
    questions = _load_test_questions(config)
    instruction = (
        config.baseline_instruction if plan_name == "prompt" else config.task_instruction
    )
    out_path = config.work_path("responses", f"{plan_name}.jsonl")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    truncated_count = 0
    with out_path.open("w", encoding="utf-8") as fp:
        for i, example in enumerate(questions):
            text, truncated = generate_response(
                params,
                example.emotional_query,
                instruction,
                max_new=config.eval.max_new_tokens,
                temperature=config.eval.temperature,
                seed=config.eval.sample_seed + i,
            )
            truncated_count += truncated
            fp.write(
                json.dumps(
                    {"id": example.dialogue_id, "question": example.emotional_query, "response": text},
                    ensure_ascii=False,
                )
                + "\n"
            )
    if truncated_count:
        print(f"warning: {truncated_count} prompts were left-truncated to fit the context")
    print(f"generated {len(questions)} responses -> {out_path}")
    return EXIT_OK


def _judge_client(config: PipelineConfig) -> rewriter.ChatClient:
    if config.eval.judge_backend == "mock":
        return judge.MockJudgeClient(seed=config.eval.judge_seed)
    return rewriter.HttpChatClient.from_env(config.eval.judge_model)


def _ballot_seed(judge_seed: int, question_id: str, dimension: str) -> int:
    digest = hashlib.sha256(f"{judge_seed}|{question_id}|{dimension}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def _load_responses(config: PipelineConfig, plan_name: str) -> Optional[list[tuple[str, str]]]:
    path = config.work_path("responses", f"{plan_name}.jsonl")
    if not path.exists():
        return None
    out = []
    with path.open("r", encoding="utf-8") as fp:
        for line in fp:
            if line.strip():
                record = json.loads(line)
                out.append((record["id"], record["response"]))
    return out


def cmd_score(config: PipelineConfig, plans: Optional[Sequence[str]] = None) -> int:
    """Run the evaluation battery over generated responses and emit reports."""
    plan_names = list(plans) if plans else list(config.plans)
    for name in plan_names:
        if name not in PLAN_TABLE:
            print(f"unknown plan {name!r}; valid plans: {', '.join(PLAN_TABLE)}")
            return EXIT_USAGE
    questions = _load_test_questions(config)
    expected_ids = [e.dialogue_id for e in questions]
    doctor_refs = {e.dialogue_id: e.original_response for e in questions}
    modified_refs = {e.dialogue_id: e.soothing_response for e in questions}
    question_text = {e.dialogue_id: e.emotional_query for e in questions}

    runs: dict[str, list[tuple[str, str]]] = {}
    for name in plan_names:
        responses = _load_responses(config, name)
        if responses is None:
            print(f"note: no responses for plan {name!r}; its row will be marked absent")
            continue
        ids = [qid for qid, _ in responses]
        if ids != expected_ids:
            mismatch = next((a for a, b in zip(ids, expected_ids) if a != b), None)
            if mismatch is None:
                longer = ids if len(ids) > len(expected_ids) else expected_ids
                mismatch = longer[min(len(ids), len(expected_ids))]
            raise DataError(f"plan {name!r} responses misaligned with test set at id {mismatch!r}")
        runs[name] = responses

    client = _judge_client(config)
    stats = judge.JudgeStats()
    intensity: dict[str, list[judge.EmotionScores]] = {}
    intensity_path = config.work_path("intensity.jsonl")
    with intensity_path.open("w", encoding="utf-8") as fp:
        for name in plan_names:
            if name not in runs:
                continue
            intensity[name] = []
            for qid, response in runs[name]:
                scores = (
                    judge.judge_intensity(client, response, stats=stats)
                    if response.strip()
                    else judge.EmotionScores.from_dimensions(0.0, 0.0, 0.0)
                )
                intensity[name].append(scores)
                fp.write(json.dumps({"method": name, "id": qid, **asdict(scores)}) + "\n")

    ballots: list[judge.PreferenceBallot] = []
    scored = [name for name in plan_names if name in runs]
    ballots_path = config.work_path("ballots.jsonl")
    with ballots_path.open("w", encoding="utf-8") as fp:
        if len(scored) >= 2:
            response_by_plan = {name: dict(runs[name]) for name in scored}
            for qid in expected_ids:
                for dimension in judge.PREFERENCE_DIMENSIONS:
                    ballot = judge.judge_preference(
                        client,
                        qid,
                        question_text[qid],
                        [(name, response_by_plan[name][qid]) for name in scored],
                        dimension,
                        seed=_ballot_seed(config.eval.judge_seed, qid, dimension),
                        stats=stats,
                    )
                    ballots.append(ballot)
                    fp.write(json.dumps(asdict(ballot)) + "\n")

    report = build_report(
        runs,
        doctor_refs,
        modified_refs,
        intensity,
        ballots,
        methods=plan_names,
        bleu_max_n=config.eval.bleu_max_n,
    )
    write_report(report, config.work_path("report.csv"), config.work_path("report.txt"))
    if stats.parse_failures or stats.abstentions:
        print(f"judge stats: {stats.parse_failures} parse failures, {stats.abstentions} abstentions")
    print(report_to_text(report))
    return EXIT_OK


def cmd_report(config: PipelineConfig) -> int:
    """Re-render the persisted report."""
    path = _require_file(config.work_path("report.csv"), "run the score command first")
    report = report_from_csv(path.read_text(encoding="utf-8"))
    print(report_to_text(report))
    return EXIT_OK
