"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from . import pipeline
from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .corpus import DatasetError
from .rewriter import ChatAuthError, ChatClientError
from .trainer import TrainError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alignforge",
        description="Emotion-aware medical dialogue alignment pipeline.",
    )
    parser.add_argument("--config", required=True, help="path to the pipeline JSON config")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", help="normalize the raw dataset into the work directory")

    rewrite = sub.add_parser("rewrite", help="rewrite dialogues with the chat backend")
    rewrite.add_argument("subset", choices=("er", "eqsr"))

    train = sub.add_parser("train", help="run a named fine-tuning plan")
    train.add_argument("plan")

    generate = sub.add_parser("generate", help="sample test-set responses from a plan checkpoint")
    generate.add_argument("plan")

    score = sub.add_parser("score", help="run the evaluation battery and emit reports")
    score.add_argument(
        "--plans",
        default=None,
        help="comma-separated plan names to score (default: every plan in the config)",
    )

    sub.add_parser("report", help="re-render the persisted report")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if args.command == "ingest":
            return pipeline.cmd_ingest(config)
        if args.command == "rewrite":
            return pipeline.cmd_rewrite(config, args.subset)
        if args.command == "train":
            return pipeline.cmd_train(config, args.plan)
        if args.command == "generate":
            return pipeline.cmd_generate(config, args.plan)
        if args.command == "score":
            plans = args.plans.split(",") if args.plans else None
            return pipeline.cmd_score(config, plans)
        return pipeline.cmd_report(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return pipeline.EXIT_USAGE
    except ChatAuthError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return pipeline.EXIT_BACKEND
    except ChatClientError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return pipeline.EXIT_BACKEND
    except (DatasetError, pipeline.DataError, TrainError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return pipeline.EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
