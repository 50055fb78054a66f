"""Sweep the dense weight of hybrid retrieval over a corpus and report
retrieval metrics per alpha.

    python scripts/alpha_sweep.py CORPUS QUERIES --alphas 0 0.25 0.5 0.75 1

QUERIES is JSONL with ``query_id``, ``question`` and ``ground_truth``. Dense
ranking uses the deterministic hashing embedder, so the sweep runs offline.
"""

from __future__ import annotations

import argparse
import sys

from ragdiag.dataset import EvalSet
from ragdiag.embeddings import EmbeddingVector, hashing_embedding
from ragdiag.harness import ChunkingConfig, FusionConfig, chunk_documents, load_documents, load_queries, sweep
from ragdiag.relevance import build_hit_matrix
from ragdiag.retrieval_metrics import retrieval_report


class HashingEmbedder:
    def __init__(self, dim: int = 256):
        self.dim = dim

    def embed(self, texts):
        return [EmbeddingVector(hashing_embedding(t, self.dim)) for t in texts]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="alpha sweep over hybrid retrieval")
    parser.add_argument("corpus")
    parser.add_argument("queries")
    parser.add_argument("--alphas", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75, 1.0])
    parser.add_argument("--top-k", type=int, default=3)
    parser.add_argument("--chunk-size", type=int, default=1024)
    parser.add_argument("--overlap", type=int, default=100)
    args = parser.parse_args(argv)

    corpus = chunk_documents(load_documents(args.corpus), ChunkingConfig(args.chunk_size, args.overlap))
    queries = load_queries(args.queries)
    embedder = HashingEmbedder()
    runs = sweep(queries, corpus, args.alphas, FusionConfig(top_k=args.top_k), embedder)

    print(f"{'alpha':>6} {'recall':>7} {'mrr':>6} {'map':>6} {'ndcg':>6} {'no-hit':>7}")
    for alpha, records in runs.items():
        hits = build_hit_matrix(EvalSet(tuple(records)), embedder=embedder)
        r = retrieval_report(hits)
        print(f"{alpha:>6.2f} {r.recall_at_k:>7.3f} {r.mrr:>6.3f} {r.map:>6.3f} {r.ndcg:>6.3f} {r.no_hit_rate:>7.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
