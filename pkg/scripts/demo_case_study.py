"""Evaluate the shipped case-study fixture against the in-process mock providers.

    python scripts/demo_case_study.py --out runs/demo

The first run fills the cache under ``--cache-dir``; pass ``--offline`` to
repeat it without any provider traffic.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources

from ragdiag.cli import main as cli_main
from ragdiag.dataset import load_eval_set
from ragdiag.mock import FixtureScorer, MockProvider


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs", help="output directory for reports")
    parser.add_argument("--cache-dir", default=".ragdiag_cache")
    parser.add_argument("--offline", action="store_true")
    args = parser.parse_args(argv)

    data = resources.files("ragdiag.data") / "case_study"
    records = str(data / "records.jsonl")
    scores = json.loads((data / "judge_scores.json").read_text("utf-8"))
    eval_set = load_eval_set(records)

    with MockProvider(FixtureScorer(eval_set.records, scores)) as mock:
        cli_args = ["evaluate", records,
                    "--embed-url", mock.embed_url, "--embed-model", "hashing-256",
                    "--judge-url", mock.chat_url, "--judge-model", "fixture", "--judge", "all",
                    "--output-dir", args.out, "--cache-dir", args.cache_dir]
        if args.offline:
            cli_args.append("--offline")
        code = cli_main(cli_args)
        print(f"provider requests: {dict(mock.counts)}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
