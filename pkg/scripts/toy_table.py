"""Clustering table on a synthetic replica: every model, train/test/all splits.

    python3 scripts/toy_table.py --preset toy --seed 0 --epochs 15 --out runs/table
"""
import argparse
import json
from dataclasses import replace
from pathlib import Path

from keygen2vec import pipeline as pl
from keygen2vec.cli import format_table
from keygen2vec.corpus import PRESETS, synth_corpus

MODELS = ("keygen2vec", "s2s-ae", "mlp-multiclass", "mlp-sigmoid", "mlp-softmax",
          "tfidf", "mean-skipgram", "mean-pmi", "cov-skipgram")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", choices=sorted(PRESETS), default="toy")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--models", default=",".join(MODELS))
    ap.add_argument("--epochs", type=int, help="epochs for the seq2seq models (default 50)")
    ap.add_argument("--repetitions", type=int, default=10)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    train, test = synth_corpus(replace(PRESETS[args.preset], seed=args.seed))
    everything = train.with_documents(train.documents + test.documents)
    reports = []
    for model in args.models.split(","):
        epochs = args.epochs if model in ("keygen2vec", "s2s-ae") else None
        embed = pl.fit_embedder(model, train, args.seed, epochs)
        for split, corpus in (("all", everything), ("test", test)):
            reports.append(pl.report(embed(corpus), model, split, args.seed, args.repetitions))
        print(format_table(reports), flush=True)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "metrics.json").write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n")
        (args.out / "table.txt").write_text(format_table(reports))


if __name__ == "__main__":
    main()
