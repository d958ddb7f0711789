"""keygen2vec command line: synth, train, embed, evaluate, chi2-sweep, project.

Every command writes into an output directory together with a manifest.json
holding the resolved flags, input/output checksums and the package version.
Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import classifiers as cl
from . import clustereval as ce
from . import embedders as em
from . import pipeline as pl
from . import seq2seq as s2s
from .corpus import PRESETS, Corpus, load_corpus, save_corpus, synth_corpus

EMBED_METHODS = ("tfidf", "mean", "covariance")


class UsageError(Exception):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, args: argparse.Namespace, inputs, outputs) -> None:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    manifest = {
        "command": command,
        "version": __version__,
        "flags": flags,
        "seed": flags.get("seed"),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {Path(p).name: sha256_file(p) for p in sorted(outputs, key=str)},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_pair(train_path, test_path) -> tuple[Corpus, Corpus | None]:
    train = load_corpus(train_path)
    test = load_corpus(test_path, vocab=train.vocab) if test_path else None
    if test is not None:
        test = replace(test, keyword_vocab=train.keyword_vocab, topic_vocab=train.topic_vocab)
    return train, test


# --- synth ------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = replace(PRESETS[args.preset], seed=args.seed)
    if args.topics is not None:
        cfg = replace(cfg, n_topics=args.topics)
    try:
        cfg.validate()
    except ValueError as e:
        raise UsageError(str(e)) from None
    train, test = synth_corpus(cfg)
    out = _out_dir(args.out)
    paths = [out / "train.jsonl", out / "test.jsonl"]
    save_corpus(train, paths[0])
    save_corpus(test, paths[1])
    write_manifest(out, "synth", args, [], paths)
    print(f"train: {len(train)} docs, test: {len(test)} docs, topics: {len(train.topic_vocab)}, "
          f"keywords: {len(train.keyword_vocab)}")
    return 0


# --- train ------------------------------------------------------------------

def cmd_train(args) -> int:
    train, _ = _load_pair(args.train, None)
    out = _out_dir(args.out or f"runs/{args.model}-seed{args.seed}")
    model, log = pl.train_model(args.model, train, args.seed, args.epochs)
    outputs = []
    if args.model == "skipgram":
        path = out / "vectors.txt"
        em.write_word_vectors(model, train.vocab, path)
        outputs.append(path)
        log_path = out / "train_log.csv"
        with open(log_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "mean_loss"])
            w.writerows([i + 1, repr(v)] for i, v in enumerate(log))
    else:
        path = out / "model.ckpt"
        model.save(path)
        outputs += [path, Path(str(path) + ".meta"), Path(str(path) + ".vocab")]
        if isinstance(model, cl.MlpModel):
            outputs.append(Path(str(path) + ".labels"))
        log_path = out / "train_log.csv"
        if isinstance(model, s2s.Seq2SeqModel):
            s2s.write_log(log, log_path)
        else:
            with open(log_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["epoch", "mean_loss"])
                w.writerows([i + 1, repr(v)] for i, v in enumerate(log))
    outputs.append(log_path)
    write_manifest(out, "train", args, [args.train], outputs)
    print(f"wrote {path}")
    return 0


# --- embed ------------------------------------------------------------------

def load_model(path):
    meta = s2s.read_meta(path)
    if meta.get("kind") == "mlp":
        return cl.MlpModel.load(path)
    return s2s.Seq2SeqModel.load(path)


def _split_corpora(args, vocab=None) -> list[tuple[str, Corpus]]:
    paths = []
    if args.corpus:
        paths.append(("corpus", args.corpus))
    if args.split in ("train", "all") and args.train:
        paths.append(("train", args.train))
    if args.split in ("test", "all") and args.test:
        paths.append(("test", args.test))
    if not paths:
        raise UsageError("nothing to embed: pass --corpus, or --train/--test matching --split")
    base = None
    out = []
    for name, p in paths:
        c = load_corpus(p, vocab=vocab if vocab is not None else (base.vocab if base else None))
        base = base or c
        out.append((name, c))
    return out


def _concat(corpora: list[Corpus]) -> Corpus:
    docs = [d for c in corpora for d in c.documents]
    return corpora[0].with_documents(docs)


def cmd_embed(args) -> int:
    if (args.model is None) == (args.method is None):
        raise UsageError("pass exactly one of --model or --method")
    if args.method in ("mean", "covariance") and not args.vectors:
        raise UsageError(f"--method {args.method} needs --vectors")
    inputs = [p for p in (args.corpus, args.train, args.test) if p]
    if args.model:
        model = load_model(args.model)
        corpora = _split_corpora(args, vocab=model.vocab)
        es = pl.model_embedding(model, _concat([c for _, c in corpora]))
        inputs.append(args.model)
    else:
        corpus = _concat([c for _, c in _split_corpora(args)])
        if args.method == "tfidf":
            es = em.tfidf_embed(corpus)
        else:
            wv = em.load_word_vectors(args.vectors, corpus.vocab)
            print(f"word-vector coverage: {wv.coverage:.4f}")
            es = (em.mean_embed if args.method == "mean" else em.covariance_embed)(corpus, wv)
            inputs.append(args.vectors)
    out = _out_dir(args.out)
    path = out / "embeddings.tsv"
    em.write_embeddings(es, path)
    write_manifest(out, "embed", args, inputs, [path])
    print(f"wrote {len(es)} rows of dim {es.dim} to {path}")
    return 0


# --- evaluate ---------------------------------------------------------------

def format_table(reports: list[dict]) -> str:
    """Rows = models, columns = Purity/NMI/F1 x All/Test."""
    cols = [(m, s) for m in ("purity", "nmi", "f1") for s in ("all", "test")]
    by = {(r["model"], r["split"]): r for r in reports}
    models = list(dict.fromkeys(r["model"] for r in reports))
    head = ["model"] + [f"{m.upper() if m != 'purity' else 'Purity'} {s.capitalize()}" for m, s in cols]
    rows = [head]
    for model in models:
        row = [model]
        for m, s in cols:
            r = by.get((model, s))
            row.append("-" if r is None else f"{r[m]['mean']:.3f}±{r[m]['std']:.3f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def _parse_named(values: list[str]) -> list[tuple[str, str]]:
    out = []
    for v in values:
        name, sep, path = v.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"--embeddings expects MODEL=PATH, got {v!r}")
        out.append((name, path))
    return out


def cmd_evaluate(args) -> int:
    named = _parse_named(args.embeddings)
    test_ids = [d.id for d in load_corpus(args.test).documents] if args.test else None
    reports = []
    for name, path in named:
        es = em.read_embeddings(path, name)
        reports.append(pl.report(es, name, "all", args.seed, args.repetitions))
        if test_ids is not None:
            reports.append(pl.report(es.subset(test_ids), name, "test", args.seed, args.repetitions))
    out = _out_dir(args.out)
    jpath, tpath = out / "metrics.json", out / "table.txt"
    jpath.write_text(json.dumps(reports, indent=2) + "\n", encoding="utf-8")
    table = format_table(reports)
    tpath.write_text(table, encoding="utf-8")
    write_manifest(out, "evaluate", args, [p for _, p in named] + ([args.test] if args.test else []),
                   [jpath, tpath])
    sys.stdout.write(table)
    return 0


# --- chi2-sweep -------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("sizes must be positive")
    return vals


def cmd_chi2_sweep(args) -> int:
    if not args.sizes:
        raise UsageError("--sizes must list at least one size")
    models = [m for m in args.models.split(",") if m]
    bad = [m for m in models if m not in pl.SWEEP_MODELS]
    if bad or not models:
        raise UsageError(f"unknown sweep model(s) {', '.join(bad) or '(none)'}; "
                         f"valid: {', '.join(pl.SWEEP_MODELS)}")
    train, test = _load_pair(args.train, args.test)
    reports = pl.sweep(models, args.sizes, train, test, args.seed, args.epochs, args.repetitions, args.jobs)
    out = _out_dir(args.out)
    jpath, cpath = out / "sweep.json", out / "sweep.csv"
    jpath.write_text(json.dumps(reports, indent=2) + "\n", encoding="utf-8")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "N", "f1_mean", "f1_std"])
    for r in sorted(reports, key=lambda r: (r["model"], r["N"])):
        w.writerow([r["model"], r["N"], repr(r["f1"]["mean"]), repr(r["f1"]["std"])])
    cpath.write_text(buf.getvalue(), encoding="utf-8")
    write_manifest(out, "chi2-sweep", args, [args.train, args.test], [jpath, cpath])
    sys.stdout.write(buf.getvalue())
    return 0


# --- project ----------------------------------------------------------------

def cmd_project(args) -> int:
    es = em.read_embeddings(args.embeddings)
    classes = ce.Partition.from_labels(es.topics)
    k = args.k or classes.k
    res = ce.kmeans(es.matrix, k, seed=args.seed)
    xy = ce.pca2d(es.matrix, seed=args.seed)
    align = ce.hungarian_align(res.partition, classes)
    out = _out_dir(args.out)
    path = out / "projection.tsv"
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("id\ttopic\tcluster\tx\ty\n")
        for doc_id, topic, c, (x, y) in zip(es.ids, es.topics, res.partition.assignment, xy):
            f.write(f"{doc_id}\t{topic}\t{int(c)}\t{x:.9g}\t{y:.9g}\n")
    summary = {"aligned_accuracy": align.accuracy, "mapping": {str(k_): v for k_, v in sorted(align.mapping.items())},
               "inertia": res.inertia, "k": k, "n": len(es)}
    spath = out / "alignment.json"
    spath.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(out, "project", args, [args.embeddings], [path, spath])
    print(f"aligned accuracy {align.accuracy:.4f}; wrote {path}")
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="keygen2vec", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic train/test corpus")
    s.add_argument("--preset", choices=sorted(PRESETS), default="toy")
    s.add_argument("--topics", type=int, help="override the preset's topic count")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model on a corpus file")
    t.add_argument("--model", required=True, choices=pl.TRAINABLE)
    t.add_argument("--train", required=True, help="training corpus (JSON Lines)")
    t.add_argument("--epochs", type=int, help="defaults: 50 for networks, 20 for skip-gram")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", help="run directory (default runs/<model>-seed<seed>)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="write document embeddings as TSV")
    e.add_argument("--model", help="checkpoint written by `train`")
    e.add_argument("--method", choices=EMBED_METHODS)
    e.add_argument("--vectors", help="word-vector text file (mean/covariance)")
    e.add_argument("--corpus", help="a single corpus to embed")
    e.add_argument("--train", help="training corpus")
    e.add_argument("--test", help="test corpus")
    e.add_argument("--split", choices=("train", "test", "all"), default="all")
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_embed)

    v = sub.add_parser("evaluate", help="cluster embeddings and report Purity/NMI/F1/silhouette")
    v.add_argument("--embeddings", action="append", required=True, metavar="MODEL=PATH")
    v.add_argument("--test", help="test corpus; its ids define the 'test' split")
    v.add_argument("--repetitions", type=int, default=10)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", required=True, help="output directory")
    v.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("chi2-sweep", help="retrain and evaluate on chi2-filtered corpora")
    c.add_argument("--train", required=True)
    c.add_argument("--test", required=True)
    c.add_argument("--sizes", type=_int_list, default=[20, 50, 100, 250], help="comma-separated N values")
    c.add_argument("--models", default="keygen2vec,mean-skipgram",
                   help=f"comma-separated subset of {','.join(pl.SWEEP_MODELS)}")
    c.add_argument("--epochs", type=int, help="override every model's epoch count")
    c.add_argument("--repetitions", type=int, default=10)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_chi2_sweep)

    j = sub.add_parser("project", help="2-D PCA projection with k-means clusters")
    j.add_argument("--embeddings", required=True)
    j.add_argument("--k", type=int, help="cluster count (default: number of topics)")
    j.add_argument("--seed", type=int, default=0)
    j.add_argument("--out", required=True)
    j.set_defaults(func=cmd_project)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
