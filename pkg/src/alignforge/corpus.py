"""Dialogue corpus: record types, JSONL persistence, and training-format conversion."""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

SPLITS = ("train", "test")


class DatasetError(ValueError):
    """Raised for malformed dataset files or invalid records."""


class EmotionTag(str, Enum):
    """The five negative-emotion categories used for query rewriting."""

    FEAR = "fear"
    ANXIETY = "anxiety"
    EMBARRASSMENT = "embarrassment"
    FRUSTRATION = "frustration"
    DISTRUST = "distrust"

    def __str__(self) -> str:  # serialize as the bare lowercase name
        return self.value


EMOTIONS: tuple[EmotionTag, ...] = tuple(EmotionTag)


def _require_text(value: object, field_name: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise DatasetError(f"{field_name} must be non-empty text")
    return value


@dataclass(frozen=True)
class Dialogue:
    """A single-turn patient query and doctor response."""

    id: str
    patient_query: str
    doctor_response: str
    split: str = "train"
    source: str = ""

    def __post_init__(self) -> None:
        _require_text(self.id, "id")
        _require_text(self.patient_query, "patient_query")
        _require_text(self.doctor_response, "doctor_response")
        if self.split not in SPLITS:
            raise DatasetError(f"split must be one of {SPLITS}, got {self.split!r}")


@dataclass(frozen=True)
class ERExample:
    """A doctor response rewritten for empathy, paired with its original."""

    dialogue_id: str
    patient_query: str
    empathetic_response: str
    original_response: str

    def __post_init__(self) -> None:
        _require_text(self.dialogue_id, "dialogue_id")
        _require_text(self.patient_query, "patient_query")
        _require_text(self.empathetic_response, "empathetic_response")
        _require_text(self.original_response, "original_response")
        if self.empathetic_response == self.original_response:
            raise DatasetError("empathetic_response must differ from original_response")


@dataclass(frozen=True)
class EQSRExample:
    """An emotionally rewritten query plus a soothing rewritten response."""

    dialogue_id: str
    emotion: EmotionTag
    emotional_query: str
    soothing_response: str
    original_query: str
    original_response: str

    def __post_init__(self) -> None:
        _require_text(self.dialogue_id, "dialogue_id")
        if not isinstance(self.emotion, EmotionTag):
            raise DatasetError(f"emotion must be an EmotionTag, got {self.emotion!r}")
        _require_text(self.emotional_query, "emotional_query")
        _require_text(self.soothing_response, "soothing_response")
        _require_text(self.original_query, "original_query")
        _require_text(self.original_response, "original_response")
        if self.emotional_query == self.original_query:
            raise DatasetError("emotional_query must differ from original_query")
        if self.soothing_response == self.original_response:
            raise DatasetError("soothing_response must differ from original_response")


@dataclass(frozen=True)
class PreferencePair:
    """A prompt with a preferred and a rejected completion."""

    prompt: str
    chosen: str
    rejected: str

    def __post_init__(self) -> None:
        _require_text(self.prompt, "prompt")
        _require_text(self.chosen, "chosen")
        _require_text(self.rejected, "rejected")
        if self.chosen == self.rejected:
            raise DatasetError("chosen must differ from rejected")


@dataclass(frozen=True)
class KTOExample:
    """A prompt with one completion and a binary desirability label."""

    prompt: str
    completion: str
    desirable: bool

    def __post_init__(self) -> None:
        _require_text(self.prompt, "prompt")
        _require_text(self.completion, "completion")


def load_dataset(path: str | Path, split: str, source: str | None = None) -> list[Dialogue]:
    """Read line-delimited dialogue records from ``path``.

    Records missing an ``id`` get a synthesized ``<source>-<split>-<index>``
    id so rewrites can be joined back to originals. Records missing a
    ``split`` or ``source`` field inherit the arguments. Blank lines are
    skipped; any malformed line raises a DatasetError naming it.
    """
    path = Path(path)
    if split not in SPLITS:
        raise DatasetError(f"split must be one of {SPLITS}, got {split!r}")
    default_source = source if source is not None else path.stem
    dialogues: list[Dialogue] = []
    seen_ids: set[str] = set()
    with path.open("r", encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise DatasetError(f"line {lineno}: record is not an object")
            for field_name in ("patient_query", "doctor_response"):
                if not record.get(field_name) or not str(record[field_name]).strip():
                    raise DatasetError(f"line {lineno}: missing field {field_name}")
            record_source = record.get("source") or default_source
            record_split = record.get("split") or split
            record_id = record.get("id") or f"{record_source}-{record_split}-{len(dialogues):06d}"
            try:
                dialogue = Dialogue(
                    id=str(record_id),
                    patient_query=record["patient_query"],
                    doctor_response=record["doctor_response"],
                    split=record_split,
                    source=record_source,
                )
            except DatasetError as exc:
                raise DatasetError(f"line {lineno}: {exc}") from exc
            if dialogue.id in seen_ids:
                raise DatasetError(f"line {lineno}: duplicate id {dialogue.id!r}")
            seen_ids.add(dialogue.id)
            dialogues.append(dialogue)
    return dialogues


def _write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fp:
        for record in records:
            fp.write(json.dumps(record, ensure_ascii=False) + "\n")


def save_dialogues(path: str | Path, dialogues: Sequence[Dialogue]) -> None:
    _write_jsonl(path, (asdict(d) for d in dialogues))


def save_er_examples(path: str | Path, examples: Sequence[ERExample]) -> None:
    _write_jsonl(path, (asdict(e) for e in examples))


def load_er_examples(path: str | Path) -> list[ERExample]:
    examples = []
    for lineno, record in _read_jsonl(path):
        try:
            examples.append(ERExample(**record))
        except (TypeError, DatasetError) as exc:
            raise DatasetError(f"line {lineno}: {exc}") from exc
    return examples


def save_eqsr_examples(path: str | Path, examples: Sequence[EQSRExample]) -> None:
    records = []
    for e in examples:
        record = asdict(e)
        record["emotion"] = e.emotion.value
        records.append(record)
    _write_jsonl(path, records)


def load_eqsr_examples(path: str | Path) -> list[EQSRExample]:
    examples = []
    for lineno, record in _read_jsonl(path):
        try:
            record["emotion"] = EmotionTag(record["emotion"])
            examples.append(EQSRExample(**record))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"line {lineno}: {exc}") from exc
    return examples


def _read_jsonl(path: str | Path) -> list[tuple[int, dict]]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            out.append((lineno, record))
    return out


def split_for_rewriting(
    dialogues: Sequence[Dialogue], er_fraction: float, seed: int
) -> tuple[list[Dialogue], list[Dialogue]]:
    """Partition dialogues into an empathy-rewrite part and an emotional-rewrite part.

    Deterministic under ``seed``: shuffle, then cut at round(er_fraction * N).
    The two parts are disjoint and together cover the input exactly.
    """
    if not 0.0 < er_fraction < 1.0:
        raise ValueError(f"er_fraction must be in (0, 1), got {er_fraction}")
    order = list(dialogues)
    random.Random(seed).shuffle(order)
    cut = round(er_fraction * len(order))
    return order[:cut], order[cut:]


def to_preference_pairs(
    examples: Sequence[EQSRExample],
) -> tuple[list[PreferencePair], int]:
    """Map rewritten examples to preference pairs: soothing chosen, original rejected.

    Returns the pairs in input order plus the count of examples dropped
    because their soothing and original responses were identical.
    """
    pairs: list[PreferencePair] = []
    dropped = 0
    for example in examples:
        if example.soothing_response == example.original_response:
            dropped += 1
            continue
        pairs.append(
            PreferencePair(
                prompt=example.emotional_query,
                chosen=example.soothing_response,
                rejected=example.original_response,
            )
        )
    return pairs, dropped


def to_kto_examples(examples: Sequence[EQSRExample]) -> list[KTOExample]:
    """Expand each rewritten example into one desirable and one undesirable record."""
    out: list[KTOExample] = []
    for example in examples:
        out.append(KTOExample(example.emotional_query, example.soothing_response, True))
        out.append(KTOExample(example.emotional_query, example.original_response, False))
    return out
