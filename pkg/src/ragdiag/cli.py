"""Command-line entry point: ``ragdiag {evaluate,retrieve,validate}``.

Exit codes: 0 success, 1 invalid input or configuration, 2 provider failure
(including offline cache misses).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import yaml

from . import __version__
from ._client import CacheMissError, ProviderError
from .dataset import DatasetError, EvalSet, dump_eval_set, load_eval_set, record_to_dict, validate_eval_set
from .embeddings import EmbeddingClient, EmbeddingProviderConfig
from .harness import ChunkingConfig, FusionConfig, chunk_documents, load_documents, load_queries, retrieve_records
from .normalize import RulesError, load_rules
from .pipeline import JUDGED_METRICS, RunConfig, run_evaluation
from .report import RuleError, write_report

log = logging.getLogger("ragdiag")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_PROVIDER = 2

DEFAULT_CACHE_DIR = ".ragdiag_cache"


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _report_cache_miss(exc: CacheMissError) -> None:
    _err(f"offline run needs {len(exc.missing)} uncached {exc.kind} value(s):")
    for key in exc.missing:
        print(f"  {key}", file=sys.stderr)


def make_run_id(cfg: RunConfig) -> str:
    digest = hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()[:8]
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    return f"{stamp}-{digest}"


def cmd_evaluate(config: RunConfig) -> int:
    """Run the full evaluation and write report.json, report.md and per_query.csv."""
    try:
        report = run_evaluation(config)
    except DatasetError as exc:
        _err(str(exc))
        return EXIT_INPUT
    except (RulesError, RuleError, FileNotFoundError, ValueError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    except CacheMissError as exc:
        _report_cache_miss(exc)
        return EXIT_PROVIDER
    except ProviderError as exc:
        _err(f"provider failure: {exc}")
        return EXIT_PROVIDER

    run_id = config.run_id or make_run_id(config)
    out_dir = Path(config.output_dir) / run_id
    suffix = 1
    while config.run_id is None and out_dir.exists():
        out_dir = Path(config.output_dir) / f"{run_id}-{suffix}"
        suffix += 1
    paths = write_report(report, out_dir)
    for row in report.ledger:
        print(f"{row.label:<36} {row.display_value:>8}  [{row.severity}] {row.actionable_insight}")
    for note in report.annotations:
        log.info("note: %s", note)
    print(f"report written to {paths['json'].parent}")
    return EXIT_OK


def cmd_retrieve(corpus_dir: str | Path, queries_file: str | Path, fusion: FusionConfig,
                 chunking: ChunkingConfig = ChunkingConfig(), embedding: EmbeddingProviderConfig | None = None,
                 out_path: str | Path | None = None, rules_path: str | None = None) -> int:
    """Retrieve contexts for each query and write an eval file with empty answers."""
    try:
        docs = load_documents(corpus_dir)
        queries = load_queries(queries_file)
        rules = load_rules(rules_path)
    except (FileNotFoundError, ValueError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    if fusion.alpha > 0 and embedding is None:
        _err("alpha > 0 needs an embedding provider (--embed-url and --embed-model)")
        return EXIT_INPUT

    corpus = chunk_documents(docs, chunking, rules)
    client = EmbeddingClient(embedding) if embedding is not None else None
    try:
        records = retrieve_records(queries, corpus, fusion, client, rules)
    except CacheMissError as exc:
        _report_cache_miss(exc)
        return EXIT_PROVIDER
    except ProviderError as exc:
        _err(f"provider failure: {exc}")
        return EXIT_PROVIDER
    finally:
        if client is not None:
            client.close()

    eval_set = EvalSet(tuple(records))
    if out_path is None:
        for rec in eval_set.records:
            print(json.dumps(record_to_dict(rec), ensure_ascii=False))
    else:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        dump_eval_set(eval_set, out_path)
        print(f"{len(records)} record(s) written to {out_path}", file=sys.stderr)
    return EXIT_OK


def cmd_validate(dataset: str | Path) -> int:
    """Print the validation report; exit 0 iff there are no errors."""
    try:
        eval_set = load_eval_set(dataset)
    except DatasetError as exc:
        _err(str(exc))
        return EXIT_INPUT
    report = validate_eval_set(eval_set)
    print(report.format())
    return EXIT_OK if report.valid else EXIT_INPUT


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="YAML or JSON file mirroring RunConfig")
    parser.add_argument("--output-dir", default=default, help="directory for run reports")
    parser.add_argument("--offline", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="serve judge and embedding calls from cache only")
    parser.add_argument("--parallelism", type=int, default=default, help="max concurrent provider calls")
    parser.add_argument("--cache-dir", default=default,
                        help=f"provider cache directory (default {DEFAULT_CACHE_DIR})")
    parser.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0)


def _provider_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embed-url", help="embedding endpoint URL")
    parser.add_argument("--embed-model", help="embedding model id")
    parser.add_argument("--rules", dest="rules_path", help="normalization rules JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ragdiag", description="Diagnose retrieval-augmented generation runs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("evaluate", help="score an eval file and write a diagnostic report")
    _global_flags(ev, suppress=True)
    ev.add_argument("dataset", nargs="?", help="JSONL eval file (or set 'dataset' in --config)")
    _provider_flags(ev)
    ev.add_argument("--ledger-rules", dest="ledger_rules_path", help="ledger rule JSON")
    ev.add_argument("--token-overlap-min", type=float)
    ev.add_argument("--semantic-min", type=float)
    ev.add_argument("--adherence-threshold", type=float)
    ev.add_argument("--judge-url", help="chat-completions endpoint URL")
    ev.add_argument("--judge-model", help="judge model id")
    ev.add_argument("--judge", action="append", dest="judged_metrics", metavar="METRIC",
                    choices=[*JUDGED_METRICS, "all"], help="enable a judged metric (repeatable, or 'all')")
    ev.add_argument("--text-redundancy", action="store_true", default=None,
                    help="also report token-overlap redundancy between ranks")
    ev.add_argument("--run-id", help="fixed run directory name")

    rt = sub.add_parser("retrieve", help="retrieve contexts for queries from a corpus")
    _global_flags(rt, suppress=True)
    rt.add_argument("corpus", help="directory of .txt files or JSONL of {doc_id, text}")
    rt.add_argument("queries", help="JSONL with query_id, question and optional ground_truth")
    rt.add_argument("-o", "--out", help="output JSONL (default stdout)")
    _provider_flags(rt)
    rt.add_argument("--alpha", type=float, default=None, help="dense weight in [0, 1]")
    rt.add_argument("--top-k", type=int, default=None)
    rt.add_argument("--rrf-k", type=int, default=None)
    rt.add_argument("--chunk-size", type=int, default=None)
    rt.add_argument("--overlap", type=int, default=None)

    va = sub.add_parser("validate", help="check an eval file")
    _global_flags(va, suppress=True)
    va.add_argument("dataset")
    return parser


def _load_config_file(path: str) -> dict[str, Any]:
    text = Path(path).read_text(encoding="utf-8")
    doc = yaml.safe_load(text) or {}
    if not isinstance(doc, dict):
        raise ValueError(f"config {path} must be a mapping")
    return doc


def _set(d: dict, section: str, key: str, value: Any) -> None:
    if value is not None:
        d.setdefault(section, {})
        if d[section] is None:
            d[section] = {}
        d[section][key] = value


def _merge_cli(doc: dict[str, Any], args: argparse.Namespace) -> dict[str, Any]:
    """Overlay command-line values on the config file contents."""
    d = dict(doc)
    for key in ("dataset", "rules_path", "ledger_rules_path", "output_dir", "parallelism", "run_id"):
        value = getattr(args, key, None)
        if value is not None:
            d[key] = value
    if getattr(args, "offline", False):
        d["offline"] = True
    if getattr(args, "adherence_threshold", None) is not None:
        d["adherence_threshold"] = args.adherence_threshold
    if getattr(args, "text_redundancy", None):
        d["text_redundancy"] = True
    if getattr(args, "judged_metrics", None):
        metrics = args.judged_metrics
        d["judged_metrics"] = list(JUDGED_METRICS) if "all" in metrics else metrics
    _set(d, "relevance", "token_overlap_min", getattr(args, "token_overlap_min", None))
    _set(d, "relevance", "semantic_min", getattr(args, "semantic_min", None))
    _set(d, "embedding", "endpoint_url", getattr(args, "embed_url", None))
    _set(d, "embedding", "model_id", getattr(args, "embed_model", None))
    _set(d, "judge", "endpoint_url", getattr(args, "judge_url", None))
    _set(d, "judge", "model_id", getattr(args, "judge_model", None))
    _set(d, "fusion", "alpha", getattr(args, "alpha", None))
    _set(d, "fusion", "top_k", getattr(args, "top_k", None))
    _set(d, "fusion", "rrf_k", getattr(args, "rrf_k", None))
    _set(d, "chunking", "chunk_size", getattr(args, "chunk_size", None))
    _set(d, "chunking", "overlap", getattr(args, "overlap", None))

    cache_dir = Path(getattr(args, "cache_dir", None) or d.pop("cache_dir", None) or DEFAULT_CACHE_DIR)
    for section, name in (("embedding", "embeddings.sqlite"), ("judge", "judge.sqlite")):
        if d.get(section):
            d[section].setdefault("cache_path", str(cache_dir / name))
    if d.get("judge") and "adherence_threshold" in d:
        d["judge"]["adherence_threshold"] = d["adherence_threshold"]
    return d


def build_run_config(args: argparse.Namespace) -> RunConfig:
    doc = _load_config_file(args.config) if getattr(args, "config", None) else {}
    return RunConfig.from_dict(_merge_cli(doc, args))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(getattr(args, "verbose", 0) or 0, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "validate":
        return cmd_validate(args.dataset)
    try:
        cfg = build_run_config(args)
    except (OSError, ValueError, TypeError, yaml.YAMLError) as exc:
        _err(f"bad configuration: {exc}")
        return EXIT_INPUT

    if args.command == "evaluate":
        if cfg.dataset is None:
            _err("no dataset given")
            return EXIT_INPUT
        return cmd_evaluate(cfg)

    embedding = cfg.embedding
    if embedding is not None and cfg.offline:
        embedding = replace(embedding, offline=True)
    return cmd_retrieve(args.corpus, args.queries, cfg.fusion, cfg.chunking, embedding, args.out, cfg.rules_path)


if __name__ == "__main__":
    sys.exit(main())
