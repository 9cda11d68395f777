#!/usr/bin/env python3
"""Encoder efficiency comparison on a synthetic timing corpus.

Measures one training epoch and one dev evaluation per encoder, plus exact
forward multiply-accumulate counts and trainable-parameter totals, at the
reference scale (200-token documents, ngram orders up to 7, 300-d
embeddings, 100-d hidden states).
"""
import argparse

from multigram.synthetic import make_planted_corpus
from multigram.training import TrainConfig, bench_tsv, benchmark, prepare_bundle


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--docs", type=int, default=1000)
    parser.add_argument("--doc-len", type=int, default=200)
    parser.add_argument("--max-order", type=int, default=7)
    parser.add_argument("--encoders", default="leftforest,pyramid,cnn,bilstm")
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    corpus = make_planted_corpus(
        num_docs=args.docs, length_range=(args.doc_len, args.doc_len), seed=args.seed
    ).corpus
    bundle = prepare_bundle(corpus, None, embed_dim=300, seed=args.seed)
    config = TrainConfig(
        embed_dim=300, hidden_dim=100, attention_dim=100,
        max_order=args.max_order, batch_size=50, epochs=1,
        seed=args.seed, threads=args.threads,
    )
    encoders = [e.strip() for e in args.encoders.split(",") if e.strip()]
    rows = benchmark(config, bundle, encoders)
    print(bench_tsv(rows), end="")


if __name__ == "__main__":
    main()
