"""Chi-square vocabulary sweep over several seeds: test-split F1 per (model, N).

    python3 scripts/noise_sweep.py --seeds 0,1,2,3,4 --epochs 15 --out runs/sweep.csv
"""
import argparse
import csv
import sys
from dataclasses import replace

from keygen2vec import pipeline as pl
from keygen2vec.corpus import PRESETS, synth_corpus


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", choices=sorted(PRESETS), default="toy")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--sizes", default="20,50,100,250")
    ap.add_argument("--models", default="mean-skipgram,keygen2vec")
    ap.add_argument("--epochs", type=int, default=15, help="KeyGen2Vec epochs")
    ap.add_argument("--out", help="CSV path (default stdout)")
    args = ap.parse_args()

    sizes = [int(n) for n in args.sizes.split(",")]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.writer(out)
    writer.writerow(["seed", "model", "N", "n_features", "f1_mean", "f1_std", "relative_drop_at_max_N"])
    for seed in (int(s) for s in args.seeds.split(",")):
        train, test = synth_corpus(replace(PRESETS[args.preset], seed=seed))
        for model in args.models.split(","):
            epochs = args.epochs if model in ("keygen2vec", "s2s-ae") else None
            reps = [pl.run_sweep_cell(pl.SweepCell(model, n, seed, epochs), train, test) for n in sizes]
            best = max(r["f1"]["mean"] for r in reps)
            drop = (best - reps[-1]["f1"]["mean"]) / best
            for r in reps:
                writer.writerow([seed, model, r["N"], r["n_features"], f"{r['f1']['mean']:.4f}",
                                 f"{r['f1']['std']:.4f}", f"{drop:.4f}"])
            out.flush()


if __name__ == "__main__":
    main()
