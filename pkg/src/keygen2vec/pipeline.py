"""Shared train -> embed -> evaluate plumbing used by the CLI, the experiment
scripts and the acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import classifiers as cl
from . import clustereval as ce
from . import embedders as em
from . import seq2seq as s2s
from .corpus import Corpus, chi2_select, filter_to_features, reindex

TRAINABLE = ("keygen2vec", "s2s-ae", "mlp-multiclass", "mlp-sigmoid", "mlp-softmax", "skipgram")
MLP_HEADS = {"mlp-multiclass": "softmax-topic", "mlp-sigmoid": "sigmoid-keyword", "mlp-softmax": "softmax-keyword"}
# everything the noise sweep can retrain and embed
SWEEP_MODELS = ("keygen2vec", "s2s-ae", "mlp-multiclass", "mlp-sigmoid", "mlp-softmax",
                "tfidf", "mean-skipgram", "mean-pmi", "cov-skipgram")
DEFAULT_EPOCHS = {"keygen2vec": 50, "s2s-ae": 50, "mlp-multiclass": 50, "mlp-sigmoid": 50,
                  "mlp-softmax": 50, "skipgram": 20}


def train_model(name: str, train: Corpus, seed: int = 0, epochs: int | None = None):
    """Train one of ``TRAINABLE``; returns the model object and its log."""
    epochs = DEFAULT_EPOCHS[name] if epochs is None else epochs
    if name == "keygen2vec":
        return s2s.train_keygen2vec(train, epochs=epochs, seed=seed)
    if name == "s2s-ae":
        return s2s.train_autoencoder(train, epochs=epochs, seed=seed)
    if name in MLP_HEADS:
        return cl.train_mlp(train, MLP_HEADS[name], epochs=epochs, seed=seed)
    if name == "skipgram":
        return em.skipgram_train(train, epochs=epochs, seed=seed)
    raise ValueError(f"unknown model {name!r}; expected one of {', '.join(TRAINABLE)}")


def seq2seq_embedding(model: s2s.Seq2SeqModel, corpus: Corpus) -> em.EmbeddingSet:
    if model.vocab is not None and model.vocab is not corpus.vocab:
        corpus = reindex(corpus, model.vocab)
    docs = corpus.documents
    return em.EmbeddingSet([d.id for d in docs], s2s.embed_corpus(model, corpus), corpus.topics,
                           np.array([d.flagged for d in docs], dtype=bool), model.config.kind)


def model_embedding(model, corpus: Corpus) -> em.EmbeddingSet:
    if isinstance(model, s2s.Seq2SeqModel):
        return seq2seq_embedding(model, corpus)
    if isinstance(model, cl.MlpModel):
        if model.vocab is not None and model.vocab is not corpus.vocab:
            corpus = reindex(corpus, model.vocab)
        return cl.classifier_embedding(model, corpus)
    raise TypeError(f"cannot embed with {type(model).__name__}")


def fit_embedder(name: str, train: Corpus, seed: int = 0,
                 epochs: int | None = None) -> Callable[[Corpus], em.EmbeddingSet]:
    """Fit ``name`` on ``train``; the returned function embeds any corpus encoded with train's vocab."""
    if name == "tfidf":
        return em.tfidf_embed
    if name in ("mean-skipgram", "cov-skipgram"):
        wv, _ = em.skipgram_train(train, epochs=DEFAULT_EPOCHS["skipgram"] if epochs is None else epochs,
                                  seed=seed)
        fn = em.mean_embed if name == "mean-skipgram" else em.covariance_embed
        return lambda c: fn(c, wv)
    if name == "mean-pmi":
        wv = em.pmi_vectors(train, seed=seed)
        return lambda c: em.mean_embed(c, wv)
    if name in TRAINABLE and name != "skipgram":
        model, _ = train_model(name, train, seed, epochs)
        return lambda c: model_embedding(model, c)
    raise ValueError(f"unknown model {name!r}; expected one of {', '.join(SWEEP_MODELS)}")


def report(es: em.EmbeddingSet, model: str, split: str, seed: int = 0, repetitions: int = 10) -> dict:
    """Metrics report in the JSON layout of the evaluation harness."""
    res = ce.evaluate_clustering(es.matrix, es.topics, repetitions=repetitions, seed=seed)
    out = {"model": model, "split": split}
    out.update({m: res[m] for m in ce.METRICS})
    out.update(k=res["k"], n=res["n"], seed=res["seed"])
    return out


def selected_words(train: Corpus, n: int) -> set[str]:
    return {w for words in chi2_select(train, n).values() for w in words}


@dataclass(frozen=True)
class SweepCell:
    model: str
    n: int
    seed: int
    epochs: int | None = None


def run_sweep_cell(cell: SweepCell, train: Corpus, test: Corpus, repetitions: int = 10) -> dict:
    """chi2-select on train, filter both splits, retrain, report on the test split."""
    words = selected_words(train, cell.n)
    ftrain, ftest = filter_to_features(train, words), filter_to_features(test, words)
    embed = fit_embedder(cell.model, ftrain, cell.seed, cell.epochs)
    rep = report(embed(ftest), cell.model, "test", cell.seed, repetitions)
    rep["N"] = cell.n
    rep["n_features"] = len(words)
    return rep


def sweep(models: Sequence[str], sizes: Sequence[int], train: Corpus, test: Corpus, seed: int = 0,
          epochs: int | None = None, repetitions: int = 10, jobs: int = 1) -> list[dict]:
    """All (model, N) cells, sorted by (model, N) regardless of completion order."""
    cells = [SweepCell(m, n, seed, epochs) for m in sorted(set(models)) for n in sorted(set(sizes))]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_sweep_cell, c, train, test, repetitions) for c in cells]
            return [f.result() for f in futures]
    return [run_sweep_cell(c, train, test, repetitions) for c in cells]
