"""Assembling and serializing the evaluation report."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .judge import EmotionScores, PreferenceBallot, PREFERENCE_DIMENSIONS, aggregate_intensity
from .metrics import bleu, bleu1, rouge_l, rouge_n

REFERENCE_CONDITIONS = ("doctor", "modified")
_METRIC_KEYS = ("bleu", "bleu1", "rouge1", "rouge2", "rougeL")


@dataclass
class NgramScores:
    bleu: float
    bleu1: float
    rouge1: float
    rouge2: float
    rougeL: float


@dataclass
class MethodRow:
    method: str
    present: bool
    doctor: Optional[NgramScores] = None
    modified: Optional[NgramScores] = None
    intensity: Optional[EmotionScores] = None
    preference_share: Optional[dict[str, float]] = None  # dimension -> share in [0, 1]


@dataclass
class MetricReport:
    rows: list[MethodRow]
    n_questions: int
    ballots_counted: dict[str, int]  # dimension -> ballots with a winner


class ReportError(ValueError):
    """Raised for inconsistent evaluation inputs."""


def _ngram_scores(
    candidates: Sequence[str], references: Sequence[str], bleu_max_n: int
) -> NgramScores:
    r1 = sum(rouge_n(c, r, 1) for c, r in zip(candidates, references)) / len(candidates)
    r2 = sum(rouge_n(c, r, 2) for c, r in zip(candidates, references)) / len(candidates)
    rl = sum(rouge_l(c, r) for c, r in zip(candidates, references)) / len(candidates)
    return NgramScores(
        bleu=bleu(candidates, references, bleu_max_n),
        bleu1=bleu1(candidates, references),
        rouge1=r1,
        rouge2=r2,
        rougeL=rl,
    )


def build_report(
    runs: Mapping[str, Sequence[tuple[str, str]]],
    doctor_refs: Mapping[str, str],
    modified_refs: Mapping[str, str],
    intensity: Mapping[str, Sequence[EmotionScores]],
    ballots: Sequence[PreferenceBallot],
    methods: Optional[Sequence[str]] = None,
    bleu_max_n: int = 4,
) -> MetricReport:
    """One row per method: n-gram scores under both reference conditions,
    aggregated emotion intensity, and preference shares from the ballots.

    ``runs`` maps method -> [(question_id, response)]. Methods listed in
    ``methods`` but missing from ``runs`` produce an absent row. All present
    methods must cover the same question ids as the references.
    """
    method_names = list(methods) if methods is not None else sorted(runs)
    expected_ids = sorted(doctor_refs)
    if sorted(modified_refs) != expected_ids:
        raise ReportError("doctor and modified references cover different question ids")

    wins: dict[str, dict[str, int]] = {dim: {} for dim in PREFERENCE_DIMENSIONS}
    counted: dict[str, int] = {dim: 0 for dim in PREFERENCE_DIMENSIONS}
    for ballot in ballots:
        if ballot.winner is None:
            continue
        counted[ballot.dimension] += 1
        wins[ballot.dimension][ballot.winner] = wins[ballot.dimension].get(ballot.winner, 0) + 1

    rows = []
    for method in method_names:
        if method not in runs:
            rows.append(MethodRow(method=method, present=False))
            continue
        responses = dict(runs[method])
        if sorted(responses) != expected_ids:
            missing = set(expected_ids) ^ set(responses)
            raise ReportError(f"method {method!r} does not cover the reference ids: {sorted(missing)[0]}")
        ordered = [responses[qid] for qid in expected_ids]
        doctor = _ngram_scores(ordered, [doctor_refs[q] for q in expected_ids], bleu_max_n)
        modified = _ngram_scores(ordered, [modified_refs[q] for q in expected_ids], bleu_max_n)
        agg = aggregate_intensity(list(intensity[method])) if intensity.get(method) else None
        share = {
            dim: wins[dim].get(method, 0) / counted[dim] for dim in PREFERENCE_DIMENSIONS if counted[dim]
        }
        rows.append(
            MethodRow(
                method=method,
                present=True,
                doctor=doctor,
                modified=modified,
                intensity=agg,
                preference_share=share or None,
            )
        )
    return MetricReport(rows=rows, n_questions=len(expected_ids), ballots_counted=counted)


_CSV_COLUMNS = (
    ["method", "present"]
    + [f"{cond}_{key}" for cond in REFERENCE_CONDITIONS for key in _METRIC_KEYS]
    + ["empathetic", "comforting", "reassuring", "intensity_mean", "intensity_max"]
    + [f"share_{dim}" for dim in PREFERENCE_DIMENSIONS]
)


def report_to_csv(report: MetricReport) -> str:
    """Lossless CSV: floats are written with repr so parsing them back is exact."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n_questions", report.n_questions]
                    + [f"ballots_{d}={report.ballots_counted.get(d, 0)}" for d in PREFERENCE_DIMENSIONS])
    writer.writerow(_CSV_COLUMNS)
    for row in report.rows:
        record: list[str] = [row.method, str(row.present)]
        for scores in (row.doctor, row.modified):
            if scores is None:
                record.extend([""] * len(_METRIC_KEYS))
            else:
                record.extend(repr(getattr(scores, key)) for key in _METRIC_KEYS)
        if row.intensity is None:
            record.extend([""] * 5)
        else:
            s = row.intensity
            record.extend(repr(v) for v in (s.empathetic, s.comforting, s.reassuring, s.mean, s.max))
        for dim in PREFERENCE_DIMENSIONS:
            share = (row.preference_share or {}).get(dim)
            record.append("" if share is None else repr(share))
        writer.writerow(record)
    return buf.getvalue()


def report_from_csv(text: str) -> MetricReport:
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if len(rows) < 2:
        raise ReportError("report CSV is missing its header rows")
    meta = rows[0]
    n_questions = int(meta[1])
    ballots_counted = {}
    for cell in meta[2:]:
        key, _, value = cell.partition("=")
        ballots_counted[key.removeprefix("ballots_")] = int(value)
    header = rows[1]
    if list(header) != list(_CSV_COLUMNS):
        raise ReportError("report CSV has an unexpected column layout")
    out_rows = []
    for record in rows[2:]:
        cells = dict(zip(_CSV_COLUMNS, record))
        present = cells["present"] == "True"
        scores = {}
        for cond in REFERENCE_CONDITIONS:
            if cells[f"{cond}_bleu"] == "":
                scores[cond] = None
            else:
                scores[cond] = NgramScores(
                    **{key: float(cells[f"{cond}_{key}"]) for key in _METRIC_KEYS}
                )
        intensity = None
        if cells["empathetic"] != "":
            intensity = EmotionScores(
                empathetic=float(cells["empathetic"]),
                comforting=float(cells["comforting"]),
                reassuring=float(cells["reassuring"]),
                mean=float(cells["intensity_mean"]),
                max=float(cells["intensity_max"]),
            )
        share = {
            dim: float(cells[f"share_{dim}"])
            for dim in PREFERENCE_DIMENSIONS
            if cells[f"share_{dim}"] != ""
        }
        out_rows.append(
            MethodRow(
                method=cells["method"],
                present=present,
                doctor=scores["doctor"],
                modified=scores["modified"],
                intensity=intensity,
                preference_share=share or None,
            )
        )
    return MetricReport(rows=out_rows, n_questions=n_questions, ballots_counted=ballots_counted)


def report_to_text(report: MetricReport) -> str:
    """Human-readable aligned table, one line per method."""
    headers = (
        ["method"]
        + [f"{c[:3]}.{k}" for c in REFERENCE_CONDITIONS for k in _METRIC_KEYS]
        + ["empath", "comfort", "reassur", "mean", "max", "know%", "emo%"]
    )
    lines = [f"questions: {report.n_questions}   "
             + "  ".join(f"{d} ballots: {report.ballots_counted.get(d, 0)}" for d in PREFERENCE_DIMENSIONS)]
    table = [headers]
    for row in report.rows:
        if not row.present:
            table.append([row.method, "(absent)"] + [""] * (len(headers) - 2))
            continue
        cells = [row.method]
        for scores in (row.doctor, row.modified):
            cells += [
                f"{scores.bleu:.2f}", f"{scores.bleu1:.2f}",
                f"{scores.rouge1:.4f}", f"{scores.rouge2:.4f}", f"{scores.rougeL:.4f}",
            ]
        s = row.intensity
        if s is None:
            cells += [""] * 5
        else:
            cells += [f"{v:.4f}" for v in (s.empathetic, s.comforting, s.reassuring, s.mean, s.max)]
        for dim in PREFERENCE_DIMENSIONS:
            share = (row.preference_share or {}).get(dim)
            cells.append("" if share is None else f"{100 * share:.1f}")
        table.append(cells)
    widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
    for r in table:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def write_report(report: MetricReport, csv_path: str | Path, text_path: str | Path) -> None:
    Path(csv_path).write_text(report_to_csv(report), encoding="utf-8")
    Path(text_path).write_text(report_to_text(report), encoding="utf-8")
