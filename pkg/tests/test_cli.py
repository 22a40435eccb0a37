"""End-to-end command-line pipeline on a miniature offline config."""

import json
from pathlib import Path

import pytest

from alignforge.cli import main
from alignforge.config import config_from_dict, save_config
from alignforge.corpus import save_dialogues
from alignforge.synthetic import synth_dialogues


def mini_config_dict(root: Path) -> dict:
    return {
        "raw_data": str(root / "raw.jsonl"),
        "work_dir": str(root / "work"),
        "seed": 0,
        "task_instruction": "Answer the patient.",
        "plans": ["base", "prompt", "eqsr_sft"],
        "model": {
            "n_layers": 1,
            "n_heads": 2,
            "d_model": 16,
            "d_ff": 32,
            "context_len": 288,
            "init_seed": 0,
        },
        "rewrite": {"backend": "mock", "seed": 0},
        "train": {
            "sft": {"method": "sft", "epochs": 2, "batch_size": 4, "learning_rate": 1e-3},
            "dpo": {"method": "dpo", "epochs": 1, "batch_size": 4},
            "kto": {"method": "kto", "epochs": 1, "batch_size": 4},
        },
        "eval": {"max_new_tokens": 16, "max_questions": 4},
    }


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("mini")
    save_dialogues(root / "raw.jsonl", synth_dialogues(30, seed=5))
    save_config(config_from_dict(mini_config_dict(root)), root / "config.json")
    return root


def run(root: Path, *args: str) -> int:
    return main(["--config", str(root / "config.json"), *args])


@pytest.fixture(scope="module")
def completed_pipeline(pipeline_dir) -> Path:
    assert run(pipeline_dir, "ingest") == 0
    assert run(pipeline_dir, "rewrite", "er") == 0
    assert run(pipeline_dir, "rewrite", "eqsr") == 0
    for plan in ("base", "prompt", "eqsr_sft"):
        assert run(pipeline_dir, "train", plan) == 0
        assert run(pipeline_dir, "generate", plan) == 0
    assert run(pipeline_dir, "score") == 0
    return pipeline_dir


class TestPipelineCommands:
    def test_work_dir_artifacts_exist(self, completed_pipeline):
        work = completed_pipeline / "work"
        for name in (
            "dialogues.jsonl",
            "er_train.jsonl",
            "eqsr_train.jsonl",
            "eqsr_test.jsonl",
            "init.ckpt",
            "report.csv",
            "report.txt",
            "ballots.jsonl",
            "intensity.jsonl",
        ):
            assert (work / name).exists(), name

    def test_eqsr_rows_carry_the_five_emotions(self, completed_pipeline):
        tags = set()
        with (completed_pipeline / "work" / "eqsr_train.jsonl").open() as fp:
            for line in fp:
                tags.add(json.loads(line)["emotion"])
        assert tags <= {"fear", "anxiety", "embarrassment", "frustration", "distrust"}
        assert len(tags) >= 4  # balanced assignment over a small sample covers most tags

    def test_response_count_matches_question_count(self, completed_pipeline):
        work = completed_pipeline / "work"
        questions = [l for l in (work / "eqsr_test.jsonl").read_text().splitlines() if l][:4]
        responses = [
            l for l in (work / "responses" / "eqsr_sft.jsonl").read_text().splitlines() if l
        ]
        assert len(responses) == len(questions)

    def test_manifest_for_stageless_plan(self, completed_pipeline):
        manifest = json.loads(
            (completed_pipeline / "work" / "plans" / "base" / "manifest.json").read_text()
        )
        assert manifest["plan"] == "base"
        assert manifest["stages"] == []

    def test_manifest_for_training_plan(self, completed_pipeline):
        manifest = json.loads(
            (completed_pipeline / "work" / "plans" / "eqsr_sft" / "manifest.json").read_text()
        )
        assert [s["method"] for s in manifest["stages"]] == ["sft"]
        assert manifest["stages"][0]["dataset_id"] == "eqsr_sft"

    def test_rerun_rewrite_is_byte_identical(self, completed_pipeline):
        target = completed_pipeline / "work" / "eqsr_train.jsonl"
        before = target.read_bytes()
        assert run(completed_pipeline, "rewrite", "eqsr") == 0
        assert target.read_bytes() == before

    def test_rerun_generate_is_byte_identical(self, completed_pipeline):
        target = completed_pipeline / "work" / "responses" / "base.jsonl"
        before = target.read_bytes()
        assert run(completed_pipeline, "generate", "base") == 0
        assert target.read_bytes() == before

    def test_report_command_rerenders(self, completed_pipeline, capsys):
        assert run(completed_pipeline, "report") == 0
        out = capsys.readouterr().out
        assert "eqsr_sft" in out

    def test_report_csv_round_trips(self, completed_pipeline):
        from alignforge.report import report_from_csv, report_to_csv

        text = (completed_pipeline / "work" / "report.csv").read_text()
        assert report_to_csv(report_from_csv(text)) == text


class TestCliErrors:
    def test_unknown_plan_exits_one_and_lists_valid(self, pipeline_dir, capsys):
        assert run(pipeline_dir, "train", "warp_drive") == 1
        out = capsys.readouterr().out
        assert "er_sft+eqsr_kto" in out

    def test_missing_config_is_usage_error(self, tmp_path):
        assert main(["--config", str(tmp_path / "none.json"), "ingest"]) == 1

    def test_generate_before_train_is_data_error(self, tmp_path):
        root = tmp_path
        save_dialogues(root / "raw.jsonl", synth_dialogues(10, seed=1))
        save_config(config_from_dict(mini_config_dict(root)), root / "config.json")
        assert run(root, "generate", "eqsr_kto") == 2

    def test_network_backend_without_credentials_is_backend_error(
        self, tmp_path, monkeypatch, completed_pipeline
    ):
        monkeypatch.delenv("ALIGNFORGE_API_URL", raising=False)
        monkeypatch.delenv("ALIGNFORGE_API_KEY", raising=False)
        data = mini_config_dict(completed_pipeline)
        data["rewrite"]["backend"] = "network"
        save_config(config_from_dict(data), completed_pipeline / "net.json")
        assert main(["--config", str(completed_pipeline / "net.json"), "rewrite", "er"]) == 3

    def test_score_with_misaligned_ids_is_data_error(self, completed_pipeline):
        responses = completed_pipeline / "work" / "responses" / "base.jsonl"
        lines = [json.loads(l) for l in responses.read_text().splitlines() if l]
        lines[0]["id"] = "wrong-id"
        responses.write_text("\n".join(json.dumps(l) for l in lines) + "\n")
        try:
            assert run(completed_pipeline, "score") == 2
        finally:
            run(completed_pipeline, "generate", "base")  # restore for later tests
