"""Classical document embedders: tf-idf, PPMI+SVD and skip-gram word vectors,
mean-of-vectors and covariance document embeddings, plus TSV and word-vector IO."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import RESERVED, Corpus, Vocab


@dataclass
class WordVectors:
    matrix: np.ndarray  # (|V|, d), rows aligned with vocab ids
    provenance: str  # pmi-svd | skipgram | external-file
    coverage: float = 1.0

    def __post_init__(self):
        if self.matrix.ndim != 2 or not np.all(np.isfinite(self.matrix)):
            raise ValueError("word vectors must be a finite 2-D matrix")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass
class EmbeddingSet:
    ids: list[str]
    matrix: np.ndarray
    topics: list[str]
    flagged: np.ndarray = field(default=None)
    name: str = ""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or len(self.matrix) != len(self.ids) or len(self.ids) != len(self.topics):
            raise ValueError("embedding set needs one row and one topic per document id")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("embedding set contains non-finite values")
        if self.flagged is None:
            self.flagged = np.zeros(len(self.ids), dtype=bool)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, ids: Sequence[str]) -> "EmbeddingSet":
        pos = {d: i for i, d in enumerate(self.ids)}
        missing = [d for d in ids if d not in pos]
        if missing:
            raise KeyError(f"unknown document ids, e.g. {missing[0]!r}")
        rows = np.array([pos[d] for d in ids], dtype=np.int64)
        return EmbeddingSet(list(ids), self.matrix[rows], [self.topics[i] for i in rows],
                            self.flagged[rows], self.name)


def write_embeddings(es: EmbeddingSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\t".join(["id", "topic"] + [f"v{i}" for i in range(es.dim)]) + "\n")
        for doc_id, topic, row in zip(es.ids, es.topics, es.matrix):
            f.write("\t".join([doc_id, topic] + ["%.9g" % x for x in row]) + "\n")


def read_embeddings(path, name: str = "") -> EmbeddingSet:
    ids, topics, rows = [], [], []
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split("\t")
        if header[:2] != ["id", "topic"]:
            raise ValueError(f"{path}:1: expected header starting with 'id<TAB>topic'")
        dim = len(header) - 2
        for lineno, line in enumerate(f, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != dim + 2:
                raise ValueError(f"{path}:{lineno}: expected {dim + 2} fields, got {len(parts)}")
            try:
                rows.append([float(x) for x in parts[2:]])
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
            ids.append(parts[0])
            topics.append(parts[1])
    return EmbeddingSet(ids, np.array(rows, dtype=np.float64).reshape(len(ids), dim), topics, name=name)


def _bag(corpus: Corpus) -> np.ndarray:
    """Raw term counts, (n_docs, |V|); reserved ids are left out."""
    n_res = len(RESERVED)
    counts = np.zeros((len(corpus), len(corpus.vocab)))
    for i, d in enumerate(corpus.documents):
        toks = np.asarray(d.tokens, dtype=np.int64)
        toks = toks[toks >= n_res]
        np.add.at(counts[i], toks, 1.0)
    return counts


def _es(corpus: Corpus, matrix, flagged, name) -> EmbeddingSet:
    return EmbeddingSet([d.id for d in corpus.documents], matrix, corpus.topics,
                        np.asarray(flagged, dtype=bool), name)


def tfidf_embed(corpus: Corpus) -> EmbeddingSet:
    """tf * ln(N/df), raw counts, rows L2-normalized; zero rows are flagged."""
    tf = _bag(corpus)
    df = (tf > 0).sum(0)
    idf = np.zeros(tf.shape[1])
    seen = df > 0
    idf[seen] = np.log(len(corpus) / df[seen])
    w = tf * idf
    norms = np.linalg.norm(w, axis=1)
    zero = norms == 0
    w[~zero] /= norms[~zero, None]
    flagged = zero | np.array([d.flagged for d in corpus.documents], dtype=bool)
    return _es(corpus, w, flagged, "tfidf")


# --- PPMI + truncated SVD ---------------------------------------------------

def cooccurrence(corpus: Corpus, window: int) -> np.ndarray:
    """Symmetric counts of token pairs at most ``window`` positions apart."""
    if window < 1:
        raise ValueError("window must be >= 1")
    V = len(corpus.vocab)
    n_res = len(RESERVED)
    M = np.zeros((V, V))
    for d in corpus.documents:
        toks = np.asarray(d.tokens, dtype=np.int64)
        for off in range(1, window + 1):
            a, b = toks[:-off], toks[off:]
            keep = (a >= n_res) & (b >= n_res)
            np.add.at(M, (a[keep], b[keep]), 1.0)
            np.add.at(M, (b[keep], a[keep]), 1.0)
    return M


def ppmi(M: np.ndarray) -> np.ndarray:
    """PPMI from a symmetric count matrix holding each unordered pair in both cells.

    p(w,c) = C(w,c) / N with N the number of unordered pairs, and
    p(w) = sum_c C(w,c) / 2N (each pair gives one occurrence to both words).
    """
    total = M.sum()
    out = np.zeros_like(M, dtype=np.float64)
    if total == 0:
        return out
    n_pairs = total / 2.0
    pw = M.sum(1) / total
    nz = M > 0
    rows, cols = np.nonzero(nz)
    pmi = np.log((M[nz] / n_pairs) / (pw[rows] * pw[cols]))
    out[rows, cols] = np.maximum(pmi, 0.0)
    return out


def truncated_svd(A: np.ndarray, k: int, n_iter: int = 200, seed: int = 0,
                  tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-k singular triplets by power iteration on A^T A with deflation.

    Returns (U, S, Vt); stops early (with fewer than k components) once the
    remaining singular values fall below ``tol`` times the largest.
    """
    rng = np.random.default_rng(seed)
    m, n = A.shape
    us, ss, vs = [], [], []
    for _ in range(min(k, m, n)):
        v = rng.standard_normal(n)
        for u_prev in vs:
            v -= (v @ u_prev) * u_prev
        v /= np.linalg.norm(v)
        exhausted = False
        for _ in range(n_iter):
            w = A.T @ (A @ v)
            # project twice: once the spectrum is used up, w is round-off that a
            # single pass would let drift back towards earlier components
            for _ in range(2):
                for u_prev in vs:
                    w -= (w @ u_prev) * u_prev
            norm = np.linalg.norm(w)
            if norm == 0 or (ss and norm <= (tol * ss[0]) ** 2):
                exhausted = True
                break
            v = w / norm
        av = A @ v
        s = float(np.linalg.norm(av))
        if exhausted or s == 0 or (ss and s <= tol * ss[0]):
            break
        us.append(av / s)
        ss.append(s)
        vs.append(v)
    if not ss:
        return np.zeros((m, 0)), np.zeros(0), np.zeros((0, n))
    return np.stack(us, 1), np.array(ss), np.stack(vs, 0)


def pmi_vectors(corpus: Corpus, dim: int = 50, window: int = 5, n_iter: int = 200,
                seed: int = 0) -> WordVectors:
    V = len(corpus.vocab)
    if dim > V:
        raise ValueError(f"dim={dim} exceeds the vocabulary size {V}")
    P = ppmi(cooccurrence(corpus, window))
    U, S, _ = truncated_svd(P, dim, n_iter=n_iter, seed=seed)
    if len(S) < dim:
        warnings.warn(f"PPMI matrix has rank {len(S)} < dim={dim}; returning {len(S)} components",
                      stacklevel=2)
    return WordVectors(U * np.sqrt(S)[None, :], "pmi-svd")


# --- skip-gram with negative sampling ---------------------------------------

@dataclass
class SkipgramConfig:
    dim: int = 50
    window: int = 5
    negatives: int = 5
    epochs: int = 20
    lr: float = 0.025
    batch_size: int = 64
    seed: int = 0


def _sg_pairs(corpus: Corpus, window: int) -> np.ndarray:
    n_res = len(RESERVED)
    centers, contexts = [], []
    for d in corpus.documents:
        toks = np.asarray(d.tokens, dtype=np.int64)
        toks = toks[toks >= n_res]
        for off in range(1, window + 1):
            a, b = toks[:-off], toks[off:]
            centers += [a, b]
            contexts += [b, a]
    if not centers:
        return np.zeros((0, 2), dtype=np.int64)
    return np.stack([np.concatenate(centers), np.concatenate(contexts)], 1)


def skipgram_train(corpus: Corpus, dim: int = 50, window: int = 5, negatives: int = 5,
                   epochs: int = 20, seed: int = 0, lr: float = 0.025,
                   batch_size: int = 64) -> tuple[WordVectors, list[float]]:
    """SGNS with unigram^0.75 negatives and a linearly decayed learning rate.

    Updates are applied per mini-batch of (center, context) pairs.
    Returns the input vectors and the mean loss of each epoch.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(corpus) == 0:
        raise ValueError("skip-gram needs a non-empty corpus")
    rng = np.random.default_rng(seed)
    V = len(corpus.vocab)
    pairs = _sg_pairs(corpus, window)
    if len(pairs) == 0:
        raise ValueError("corpus has no co-occurring tokens")
    freq = np.bincount(pairs[:, 0], minlength=V).astype(np.float64) ** 0.75
    noise_cdf = np.cumsum(freq / freq.sum())
    w_in = (rng.random((V, dim)) - 0.5) / dim
    w_out = np.zeros((V, dim))
    total = epochs * math.ceil(len(pairs) / batch_size)
    step = 0
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(pairs))
        ep_loss = 0.0
        for start in range(0, len(pairs), batch_size):
            batch = pairs[order[start:start + batch_size]]
            c, o = batch[:, 0], batch[:, 1]
            neg = np.searchsorted(noise_cdf, rng.random((len(batch), negatives)), side="right")
            neg = np.minimum(neg, V - 1)
            alpha = lr * max(1e-4, 1.0 - step / total)
            step += 1
            v = w_in[c]
            u_o, u_n = w_out[o], w_out[neg]
            s_pos = np.einsum("bd,bd->b", v, u_o)
            s_neg = np.einsum("bd,bkd->bk", v, u_n)
            ep_loss += float(np.logaddexp(0, -s_pos).sum() + np.logaddexp(0, s_neg).sum())
            g_pos = 1.0 / (1.0 + np.exp(-s_pos)) - 1.0
            g_neg = 1.0 / (1.0 + np.exp(-s_neg))
            dv = g_pos[:, None] * u_o + np.einsum("bk,bkd->bd", g_neg, u_n)
            np.add.at(w_out, o, -alpha * g_pos[:, None] * v)
            np.add.at(w_out, neg.ravel(), -alpha * (g_neg[:, :, None] * v[:, None, :]).reshape(-1, dim))
            np.add.at(w_in, c, -alpha * dv)
        losses.append(ep_loss / len(pairs))
    w_in[: len(RESERVED)] = 0.0
    return WordVectors(w_in, "skipgram"), losses


# --- bag-of-vectors document embeddings -------------------------------------

def _doc_vectors(doc, wv: WordVectors) -> np.ndarray:
    toks = np.asarray(doc.tokens, dtype=np.int64)
    return wv.matrix[toks[toks >= len(RESERVED)]]


def mean_embed(corpus: Corpus, wv: WordVectors) -> EmbeddingSet:
    """Mean of the document's (non-reserved) token vectors; UNK-only docs -> zero, flagged."""
    out = np.zeros((len(corpus), wv.dim))
    flagged = np.zeros(len(corpus), dtype=bool)
    for i, d in enumerate(corpus.documents):
        vecs = _doc_vectors(d, wv)
        if len(vecs):
            out[i] = vecs.mean(0)
        flagged[i] = len(vecs) == 0 or d.flagged
    return _es(corpus, out, flagged, "mean")


def covariance_embed(corpus: Corpus, wv: WordVectors) -> EmbeddingSet:
    """Population covariance of token vectors, upper triangle (with diagonal) row-major."""
    d = wv.dim
    if d < 2:
        raise ValueError("covariance embedding needs word vectors with dim >= 2")
    iu = np.triu_indices(d)
    out = np.zeros((len(corpus), len(iu[0])))
    flagged = np.zeros(len(corpus), dtype=bool)
    for i, doc in enumerate(corpus.documents):
        vecs = _doc_vectors(doc, wv)
        flagged[i] = len(vecs) < 2 or doc.flagged
        if len(vecs) >= 2:
            x = vecs - vecs.mean(0)
            out[i] = ((x.T @ x) / len(vecs))[iu]
    return _es(corpus, out, flagged, "covariance")


def unflatten_upper(vec: np.ndarray, d: int) -> np.ndarray:
    m = np.zeros((d, d))
    m[np.triu_indices(d)] = vec
    return m + np.triu(m, 1).T


# --- word-vector text files -------------------------------------------------

def write_word_vectors(wv: WordVectors, vocab: Vocab, path) -> None:
    """Text format: header "<count> <dim>", then "<token> v1 ... vd" per word."""
    words = vocab.words
    rows = wv.matrix[len(RESERVED):]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{len(words)} {wv.dim}\n")
        for w, row in zip(words, rows):
            f.write(w + " " + " ".join("%.9g" % x for x in row) + "\n")


def load_word_vectors(path, vocab: Vocab) -> WordVectors:
    """Read a word-vector text file and align it to ``vocab`` (case-insensitive).

    The first occurrence of a lowercased token wins. Vocabulary words missing
    from the file get zero vectors; ``coverage`` is the fraction found.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2 or not all(h.isdigit() for h in header):
            raise ValueError(f"{path}:1: header must be '<count> <dim>'")
        count, dim = int(header[0]), int(header[1])
        if dim < 1:
            raise ValueError(f"{path}:1: dim must be positive")
        table: dict[str, np.ndarray] = {}
        n = 0
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            try:
                vals = np.array([float(x) for x in parts[1:]])
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            table.setdefault(parts[0].lower(), vals)
            n += 1
    if n != count:
        raise ValueError(f"{path}:1: header announces {count} vectors but file has {n}")
    matrix = np.zeros((len(vocab), dim))
    found = 0
    for i, w in enumerate(vocab.itos):
        if i < len(RESERVED):
            continue
        vec = table.get(w.lower())
        if vec is not None:
            matrix[i] = vec
            found += 1
    n_words = len(vocab) - len(RESERVED)
    return WordVectors(matrix, "external-file", found / n_words if n_words else 0.0)
