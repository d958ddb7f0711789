"""Supervised MLP feature extractors.

Mean-pooled token embeddings -> dropout -> FC(100, tanh) -> FC(n_out).
Three heads: softmax over topics (the upper-bound model), independent
sigmoids over keywords, and softmax over keywords trained on the one pair
per (document, keyword) expansion shared with the seq2seq trainer.
The post-tanh activations of the first FC layer are the document embedding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .corpus import Corpus, Vocab
from .embedders import EmbeddingSet
from .seq2seq import _pad, expand_multilabel, read_meta, read_vocab, vocab_hash

HEADS = ("softmax-topic", "sigmoid-keyword", "softmax-keyword")


@dataclass(frozen=True)
class MlpConfig:
    vocab_size: int
    n_out: int
    head: str
    emb_dim: int = 100
    hidden: int = 100
    dropout: float = 0.5

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}; expected one of {', '.join(HEADS)}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")


class MlpModel:
    def __init__(self, config: MlpConfig, vocab: Vocab | None = None, labels: Sequence[str] = (),
                 seed: int | None = 0):
        self.config = config
        self.vocab = vocab
        self.labels = tuple(labels)
        rng = None if seed is None else np.random.default_rng(seed)
        V, E, H, O = config.vocab_size, config.emb_dim, config.hidden, config.n_out
        self.params: dict[str, Tensor] = {
            "embed": ad.init_uniform((V, E), E, rng),
            "fc1.W": ad.init_uniform((E, H), E, rng),
            "fc1.b": Tensor(np.zeros(H), requires_grad=True),
            "fc2.W": ad.init_uniform((H, O), H, rng),
            "fc2.b": Tensor(np.zeros(O), requires_grad=True),
        }
        for name, p in self.params.items():
            p.name = name

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def save(self, path) -> None:
        ad.save_checkpoint(path, self.params)
        c = self.config
        lines = [f"kind=mlp", f"head={c.head}", f"vocab_size={c.vocab_size}", f"n_out={c.n_out}",
                 f"emb_dim={c.emb_dim}", f"hidden={c.hidden}", f"dropout={c.dropout!r}"]
        if self.vocab is not None:
            lines.append(f"vocab_sha256={vocab_hash(self.vocab)}")
            Path(str(path) + ".vocab").write_text("\n".join(self.vocab.itos) + "\n", encoding="utf-8")
        Path(str(path) + ".labels").write_text("".join(l + "\n" for l in self.labels), encoding="utf-8")
        Path(str(path) + ".meta").write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MlpModel":
        meta = read_meta(path)
        if meta.get("kind") != "mlp":
            raise ValueError(f"{path}: not an MLP checkpoint (kind={meta.get('kind')!r})")
        cfg = MlpConfig(int(meta["vocab_size"]), int(meta["n_out"]), meta["head"], int(meta["emb_dim"]),
                        int(meta["hidden"]), float(meta["dropout"]))
        lpath = Path(str(path) + ".labels")
        labels = lpath.read_text(encoding="utf-8").splitlines() if lpath.exists() else ()
        model = cls(cfg, read_vocab(path), labels, seed=None)
        arrays = ad.load_checkpoint(path)
        if set(arrays) != set(model.params):
            raise ValueError(f"{path}: parameter set does not match an MLP model")
        for name, arr in arrays.items():
            if arr.shape != model.params[name].shape:
                raise ValueError(f"{path}: shape mismatch for {name}: {arr.shape}")
            model.params[name].data[...] = arr
        return model


def _hidden(model: MlpModel, ids: np.ndarray, mask: np.ndarray, drop_rng=None) -> Tensor:
    emb = ad.embedding(model["embed"], ids)
    weights = mask / np.maximum(mask.sum(1, keepdims=True), 1.0)
    pooled = ad.sum_(ad.mul(emb, weights[:, :, None]), axis=1)
    p = model.config.dropout
    if drop_rng is not None and p > 0:
        keep = (drop_rng.random(pooled.shape) >= p) / (1.0 - p)
        pooled = ad.mul(pooled, keep)
    return ad.tanh(ad.add(ad.matmul(pooled, model["fc1.W"]), model["fc1.b"]))


def forward(model: MlpModel, token_seqs: Sequence[Sequence[int]], drop_rng=None) -> tuple[Tensor, Tensor]:
    """(hidden activations, logits) for a batch; dropout only when ``drop_rng`` is given."""
    ids, mask = _pad(token_seqs)
    h = _hidden(model, ids, mask, drop_rng)
    return h, ad.add(ad.matmul(h, model["fc2.W"]), model["fc2.b"])


def head_loss(model: MlpModel, logits: Tensor, targets: np.ndarray) -> Tensor:
    if model.config.head == "sigmoid-keyword":
        return ad.bce_with_logits(logits, targets)
    return ad.nll(ad.log_softmax(logits), targets)


def probabilities(model: MlpModel, token_seqs: Sequence[Sequence[int]]) -> np.ndarray:
    _, logits = forward(model, token_seqs)
    if model.config.head == "sigmoid-keyword":
        return ad.sigmoid(logits).data
    return ad.softmax(logits).data


def multi_hot(corpus: Corpus) -> np.ndarray:
    y = np.zeros((len(corpus), len(corpus.keyword_vocab)))
    for i, d in enumerate(corpus.documents):
        for k in d.keywords:
            if k in corpus.keyword_vocab:
                y[i, corpus.keyword_vocab[k]] = 1.0
    return y


@dataclass
class Examples:
    sources: list[tuple[int, ...]]
    targets: np.ndarray  # class ids, or multi-hot rows for the sigmoid head


def training_examples(corpus: Corpus, head: str) -> Examples:
    if head == "softmax-topic":
        return Examples([d.tokens for d in corpus.documents], corpus.topic_ids())
    if head == "sigmoid-keyword":
        return Examples([d.tokens for d in corpus.documents], multi_hot(corpus))
    pairs = expand_multilabel(corpus)
    return Examples([p.source for p in pairs],
                    np.array([corpus.keyword_vocab[p.keyword] for p in pairs], dtype=np.int64))


def corpus_loss(model: MlpModel, corpus: Corpus) -> float:
    ex = training_examples(corpus, model.config.head)
    _, logits = forward(model, ex.sources)
    return head_loss(model, logits, ex.targets).item()


def train_mlp(corpus: Corpus, head: str, epochs: int = 50, seed: int = 0, batch_size: int = 32,
              adam: ad.AdamState | None = None, clip: float = 5.0) -> tuple[MlpModel, list[float]]:
    """Adam mini-batch training; returns the model and the per-epoch mean loss."""
    if head == "softmax-topic" and len(corpus.topic_vocab) < 2:
        raise ValueError("multi-class training needs at least two topics")
    if head != "softmax-topic" and not corpus.keyword_vocab:
        raise ValueError("multi-label training needs keyword labels")
    labels = sorted(corpus.topic_vocab, key=corpus.topic_vocab.get) if head == "softmax-topic" \
        else sorted(corpus.keyword_vocab, key=corpus.keyword_vocab.get)
    cfg = MlpConfig(len(corpus.vocab), len(labels), head)
    model = MlpModel(cfg, corpus.vocab, labels, seed=seed)
    ex = training_examples(corpus, head)
    adam = adam or ad.AdamState()
    shuffle_rng = np.random.default_rng([seed, 0])
    drop_rng = np.random.default_rng([seed, 2])
    log = []
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(len(ex.sources))
        total = 0.0
        for lo in range(0, len(order), batch_size):
            idx = order[lo : lo + batch_size]
            ad.zero_grad(model.params.values())
            with Graph() as g:
                _, logits = forward(model, [ex.sources[i] for i in idx], drop_rng)
                loss = head_loss(model, logits, ex.targets[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss {value} at epoch {epoch}, batch {lo // batch_size}")
            ad.backward(g, loss)
            ad.clip_grad_norm(model.params.values(), clip)
            ad.adam_step(adam, model.params)
            total += value * len(idx)
        log.append(total / len(order))
    return model, log


def train_multiclass(corpus: Corpus, epochs: int = 50, seed: int = 0, **kw) -> tuple[MlpModel, list[float]]:
    return train_mlp(corpus, "softmax-topic", epochs, seed, **kw)


def train_multilabel_sigmoid(corpus: Corpus, epochs: int = 50, seed: int = 0, **kw) -> tuple[MlpModel, list[float]]:
    return train_mlp(corpus, "sigmoid-keyword", epochs, seed, **kw)


def train_multilabel_softmax(corpus: Corpus, epochs: int = 50, seed: int = 0, **kw) -> tuple[MlpModel, list[float]]:
    return train_mlp(corpus, "softmax-keyword", epochs, seed, **kw)


def classifier_embedding(model: MlpModel, corpus: Corpus, batch_size: int = 256) -> EmbeddingSet:
    rows = []
    docs = corpus.documents
    for lo in range(0, len(docs), batch_size):
        h, _ = forward(model, [d.tokens for d in docs[lo : lo + batch_size]])
        rows.append(h.data)
    matrix = np.concatenate(rows) if rows else np.zeros((0, model.config.hidden))
    return EmbeddingSet([d.id for d in docs], matrix, corpus.topics,
                        np.array([d.flagged for d in docs], dtype=bool), model.config.head)


def accuracy(model: MlpModel, corpus: Corpus) -> float:
    """Top-1 topic accuracy for the softmax-topic head."""
    probs = probabilities(model, [d.tokens for d in corpus.documents])
    return float((probs.argmax(1) == corpus.topic_ids()).mean())
