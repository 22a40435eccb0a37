"""Report assembly, serialization round trip, and preference tallies."""

import pytest

from alignforge.judge import EmotionScores, PreferenceBallot
from alignforge.report import (
    MetricReport,
    ReportError,
    build_report,
    report_from_csv,
    report_to_csv,
    report_to_text,
)


def scores(e, c, r):
    return EmotionScores.from_dimensions(e, c, r)


REFS_DOCTOR = {"q1": "rest and fluids help", "q2": "see a specialist soon"}
REFS_MODIFIED = {"q1": "don't worry, rest and fluids help", "q2": "you're safe, see a specialist soon"}


def make_runs():
    return {
        "base": [("q1", "zq zq zq"), ("q2", "xk xk")],
        "eqsr_sft": [
            ("q1", "don't worry, rest and fluids help"),
            ("q2", "you're safe, see a specialist soon"),
        ],
    }


def make_ballots(n_sft_wins=7, n_base_wins=3):
    ballots = []
    for i in range(n_sft_wins + n_base_wins):
        winner = "eqsr_sft" if i < n_sft_wins else "base"
        ballots.append(
            PreferenceBallot(
                question_id=f"q{i}",
                candidates=("base", "eqsr_sft"),
                dimension="emotional",
                winner=winner,
                seed=i,
            )
        )
    return ballots


def make_intensity():
    return {
        "base": [scores(0.0, 0.0, 0.0), scores(0.0, 0.0, 0.0)],
        "eqsr_sft": [scores(0.2, 0.4, 0.2), scores(0.2, 0.2, 0.0)],
    }


class TestBuildReport:
    def test_identical_candidates_score_perfect_on_modified_half(self):
        report = build_report(
            make_runs(), REFS_DOCTOR, REFS_MODIFIED, make_intensity(), []
        )
        row = {r.method: r for r in report.rows}["eqsr_sft"]
        assert row.modified.bleu == pytest.approx(100.0, abs=1e-9)
        assert row.modified.rouge1 == pytest.approx(1.0, abs=1e-12)
        assert row.doctor.bleu1 < 100.0

    def test_preference_shares_split_seventy_thirty(self):
        report = build_report(
            make_runs(), REFS_DOCTOR, REFS_MODIFIED, make_intensity(), make_ballots()
        )
        shares = {r.method: r.preference_share for r in report.rows}
        assert shares["eqsr_sft"]["emotional"] == pytest.approx(0.7)
        assert shares["base"]["emotional"] == pytest.approx(0.3)
        assert report.ballots_counted["emotional"] == 10

    def test_abstentions_excluded_from_tallies(self):
        ballots = make_ballots(2, 1) + [
            PreferenceBallot("qx", ("base", "eqsr_sft"), "emotional", winner=None, seed=0)
        ]
        report = build_report(make_runs(), REFS_DOCTOR, REFS_MODIFIED, make_intensity(), ballots)
        assert report.ballots_counted["emotional"] == 3

    def test_missing_method_marked_absent(self):
        report = build_report(
            make_runs(), REFS_DOCTOR, REFS_MODIFIED, make_intensity(), [],
            methods=["base", "eqsr_sft", "eqsr_kto"],
        )
        row = {r.method: r for r in report.rows}["eqsr_kto"]
        assert not row.present
        assert row.doctor is None

    def test_id_mismatch_rejected(self):
        runs = make_runs()
        runs["base"] = [("q1", "text"), ("zzz", "text")]
        with pytest.raises(ReportError, match="does not cover"):
            build_report(runs, REFS_DOCTOR, REFS_MODIFIED, make_intensity(), [])

    def test_reference_halves_must_align(self):
        with pytest.raises(ReportError):
            build_report(make_runs(), REFS_DOCTOR, {"q1": "only one"}, make_intensity(), [])


class TestSerialization:
    def round_trip(self, report: MetricReport) -> MetricReport:
        return report_from_csv(report_to_csv(report))

    def test_csv_round_trip_is_lossless(self):
        report = build_report(
            make_runs(), REFS_DOCTOR, REFS_MODIFIED, make_intensity(), make_ballots(),
            methods=["base", "eqsr_sft", "eqsr_kto"],
        )
        parsed = self.round_trip(report)
        assert parsed.n_questions == report.n_questions
        assert parsed.ballots_counted == report.ballots_counted
        assert parsed.rows == report.rows

    def test_text_table_mentions_every_method(self):
        report = build_report(
            make_runs(), REFS_DOCTOR, REFS_MODIFIED, make_intensity(), [],
            methods=["base", "eqsr_sft", "missing_one"],
        )
        text = report_to_text(report)
        for method in ("base", "eqsr_sft", "missing_one"):
            assert method in text
        assert "(absent)" in text

    def test_corrupt_csv_rejected(self):
        with pytest.raises(ReportError):
            report_from_csv("not,a,report\n")
