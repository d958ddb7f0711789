"""Corpus ingestion, vocabulary, splitting, chi-square selection and a
synthetic corpus generator with a planted topic -> keyword -> word hierarchy.

Corpus files are JSON Lines with required fields ``id``, ``text``,
``keywords`` (list of 1+ strings) and ``topic``.
"""
from __future__ import annotations

import json
import unicodedata
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")
REQUIRED_FIELDS = ("id", "text", "keywords", "topic")


class CorpusFormatError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, whitespace split, strip edge punctuation, digits -> ``digit``."""
    out = []
    for raw in text.lower().split():
        tok = _strip_punct(raw)
        if not tok:
            continue
        out.append("digit" if tok.isdigit() else tok)
    return out


def _strip_punct(tok: str) -> str:
    start, end = 0, len(tok)
    while start < end and unicodedata.category(tok[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(tok[end - 1]).startswith("P"):
        end -= 1
    return tok[start:end]


@dataclass(frozen=True)
class Vocab:
    itos: tuple[str, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "_stoi", {t: i for i, t in enumerate(self.itos)})

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def id(self, token: str) -> int:
        return self._stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> tuple[int, ...]:
        return tuple(self._stoi.get(t, UNK) for t in tokens)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    @property
    def words(self) -> tuple[str, ...]:
        return self.itos[len(RESERVED):]


def build_vocab(docs: Iterable[Sequence[str]], min_count: int = 1) -> Vocab:
    """Ids by descending frequency, ties lexicographic; rare tokens fall to UNK."""
    if min_count < 1:
        raise ValueError("min_count must be positive")
    counts = Counter()
    for toks in docs:
        counts.update(toks)
    for r in RESERVED:
        counts.pop(r, None)
    kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    return Vocab(RESERVED + tuple(kept), (0,) * len(RESERVED) + tuple(counts[w] for w in kept))


@dataclass(frozen=True)
class Document:
    id: str
    words: tuple[str, ...]
    tokens: tuple[int, ...]
    keywords: tuple[str, ...]
    topic: str
    flagged: bool = False


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    vocab: Vocab
    keyword_vocab: Mapping[str, int]
    topic_vocab: Mapping[str, int]

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def topics(self) -> list[str]:
        return [d.topic for d in self.documents]

    def topic_ids(self) -> np.ndarray:
        return np.array([self.topic_vocab[d.topic] for d in self.documents], dtype=np.int64)

    def with_documents(self, docs: Sequence[Document]) -> "Corpus":
        return replace(self, documents=tuple(docs))


def label_maps(docs: Iterable[Document]) -> tuple[dict[str, int], dict[str, int]]:
    docs = list(docs)
    kws = sorted({k for d in docs for k in d.keywords})
    topics = sorted({d.topic for d in docs})
    return {k: i for i, k in enumerate(kws)}, {t: i for i, t in enumerate(topics)}


def make_corpus(
    records: Sequence[tuple[str, Sequence[str], Sequence[str], str]],
    vocab: Vocab | None = None,
    min_count: int = 1,
    label_source: Corpus | None = None,
) -> Corpus:
    """Build a corpus from ``(id, words, keywords, topic)`` records.

    Keyword phrase words join the vocabulary so decoders can emit them.
    Passing ``vocab``/``label_source`` reuses another corpus's mappings.
    """
    if vocab is None:
        kw_words = [tokenize(k) for _, _, kws, _ in records for k in kws]
        vocab = build_vocab([list(w) for _, w, _, _ in records] + kw_words, min_count)
    docs = tuple(
        Document(str(i), tuple(w), vocab.encode(w), tuple(sorted(set(kws))), str(t))
        for i, w, kws, t in records
    )
    if label_source is not None:
        kv, tv = dict(label_source.keyword_vocab), dict(label_source.topic_vocab)
    else:
        kv, tv = label_maps(docs)
    return Corpus(docs, vocab, kv, tv)


def reindex(corpus: Corpus, vocab: Vocab) -> Corpus:
    """Re-encode documents against another vocabulary (unknown words -> UNK)."""
    docs = [replace(d, tokens=vocab.encode(d.words)) for d in corpus.documents]
    return replace(corpus, documents=tuple(docs), vocab=vocab)


# --- file IO ----------------------------------------------------------------

def load_corpus(path, vocab: Vocab | None = None, min_count: int = 1) -> Corpus:
    records = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusFormatError(f"{path}:{lineno}: expected a JSON object")
            missing = [f for f in REQUIRED_FIELDS if f not in obj]
            if missing:
                raise CorpusFormatError(f"{path}:{lineno}: missing required field(s) {', '.join(missing)}")
            extra = sorted(set(obj) - set(REQUIRED_FIELDS))
            if extra:
                warnings.warn(f"{path}:{lineno}: ignoring unknown field(s) {', '.join(extra)}", stacklevel=2)
            doc_id, text, kws, topic = (obj[f] for f in REQUIRED_FIELDS)
            if not isinstance(doc_id, str) or not isinstance(text, str) or not isinstance(topic, str):
                raise CorpusFormatError(f"{path}:{lineno}: id, text and topic must be strings")
            if not isinstance(kws, list) or not kws or not all(isinstance(k, str) and k.strip() for k in kws):
                raise CorpusFormatError(f"{path}:{lineno}: keywords must be a non-empty list of strings")
            if doc_id in seen:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate document id {doc_id!r}")
            seen.add(doc_id)
            words = tokenize(text)
            if not words:
                raise CorpusFormatError(f"{path}:{lineno}: document {doc_id!r} has no tokens")
            records.append((doc_id, words, kws, topic))
    if not records:
        raise CorpusFormatError(f"{path}: empty corpus")
    return make_corpus(records, vocab=vocab, min_count=min_count)


def save_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in corpus.documents:
            obj = {"id": d.id, "text": " ".join(d.words), "keywords": list(d.keywords), "topic": d.topic}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


# --- splitting --------------------------------------------------------------

def _stratified_test_mask(topics: Sequence[str], test_fraction: float, rng: np.random.Generator) -> np.ndarray:
    topics = list(topics)
    mask = np.zeros(len(topics), dtype=bool)
    for t in sorted(set(topics)):
        idx = np.array([i for i, x in enumerate(topics) if x == t])
        n_test = int(round(test_fraction * len(idx)))
        if n_test:
            mask[rng.permutation(idx)[:n_test]] = True
    return mask


def split(corpus: Corpus, test_fraction: float = 0.2, seed: int = 0) -> tuple[Corpus, Corpus]:
    """Stratified by topic; both halves keep the parent's vocab and label maps."""
    if not 0 <= test_fraction < 1:
        raise ValueError("test_fraction must lie in [0, 1)")
    mask = _stratified_test_mask(corpus.topics, test_fraction, np.random.default_rng(seed))
    docs = corpus.documents
    return (
        corpus.with_documents([d for d, m in zip(docs, mask) if not m]),
        corpus.with_documents([d for d, m in zip(docs, mask) if m]),
    )


# --- chi-square feature selection --------------------------------------------

def chi2_scores(corpus: Corpus) -> tuple[np.ndarray, list[str], list[str]]:
    """Document-level chi-square for every (word, topic): returns
    (scores[n_words, n_topics], words, topics).  Degenerate margins score 0."""
    words = [w for w in corpus.vocab.words]
    offset = len(RESERVED)
    topics = sorted(corpus.topic_vocab, key=corpus.topic_vocab.get)
    n = len(corpus)
    present = np.zeros((n, len(words)), dtype=np.float64)
    for i, d in enumerate(corpus.documents):
        ids = [t - offset for t in d.tokens if t >= offset]
        present[i, ids] = 1.0
    member = np.zeros((n, len(topics)))
    member[np.arange(n), corpus.topic_ids()] = 1.0
    A = present.T @ member                      # word & topic
    B = present.sum(0)[:, None] - A              # word & not topic
    C = member.sum(0)[None, :] - A               # topic & not word
    D = n - A - B - C
    denom = (A + B) * (C + D) * (A + C) * (B + D)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(denom > 0, n * (A * D - B * C) ** 2 / denom, 0.0)
    return scores, words, topics


def chi2_select(corpus: Corpus, n_per_topic: int) -> dict[str, list[str]]:
    """Top ``n_per_topic`` words per topic by descending chi-square, ties lexicographic."""
    if len(corpus.topic_vocab) < 2:
        raise ValueError("chi2_select needs at least two topics")
    if n_per_topic < 1:
        raise ValueError("n_per_topic must be positive")
    scores, words, topics = chi2_scores(corpus)
    seen = {w for d in corpus.documents for w in d.words}
    scorable = [i for i, w in enumerate(words) if w in seen]
    out = {}
    for j, t in enumerate(topics):
        order = sorted(scorable, key=lambda i: (-scores[i, j], words[i]))
        out[t] = [words[i] for i in order[:n_per_topic]]
    return out


def filter_to_features(corpus: Corpus, selected: Iterable[str]) -> Corpus:
    selected = set(selected)
    if not selected:
        raise ValueError("selected feature set is empty")
    docs = []
    for d in corpus.documents:
        keep = [(w, t) for w, t in zip(d.words, d.tokens) if w in selected]
        if keep:
            words, toks = zip(*keep)
            docs.append(replace(d, words=tuple(words), tokens=tuple(toks)))
        else:
            docs.append(replace(d, words=(RESERVED[UNK],), tokens=(UNK,), flagged=True))
    return corpus.with_documents(docs)


# --- synthetic corpora ------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    n_topics: int = 12
    keywords_per_topic: int = 6
    docs_per_keyword_pair: int = 4
    topical_words_per_keyword: int = 6
    noise_vocab_size: int = 300
    noise_ratio: float = 0.5
    doc_length: tuple[int, int] = (9, 3)
    seed: int = 0
    test_fraction: float = 0.2
    # the noise vocabulary is cut into this many contiguous themes; each document
    # draws all of its noise from one theme picked independently of its topic
    noise_themes: int = 1

    def validate(self) -> None:
        if self.n_topics < 1 or self.docs_per_keyword_pair < 1 or self.topical_words_per_keyword < 1:
            raise ValueError("n_topics, docs_per_keyword_pair and topical_words_per_keyword must be positive")
        if self.keywords_per_topic < 2:
            raise ValueError("keywords_per_topic must be >= 2 to form two-keyword documents")
        if self.noise_vocab_size < 0 or not 0 <= self.noise_ratio < 1:
            raise ValueError("noise_vocab_size must be >= 0 and noise_ratio in [0, 1)")
        if self.noise_ratio > 0 and self.noise_vocab_size == 0:
            raise ValueError("noise_ratio > 0 requires a noise vocabulary")
        if self.noise_themes < 1 or (self.noise_vocab_size and self.noise_themes > self.noise_vocab_size):
            raise ValueError("noise_themes must be between 1 and noise_vocab_size")
        mean, spread = self.doc_length
        if mean < 1 or spread < 0:
            raise ValueError("doc_length must be (positive mean, non-negative spread)")


PRESETS: dict[str, SynthConfig] = {
    # 12 topics x 6 keywords x 30 ordered pairs x 4 docs = 1440 docs -> 1152 / 288
    "toy": SynthConfig(noise_themes=12),
    "5t": SynthConfig(n_topics=5, keywords_per_topic=8, docs_per_keyword_pair=3,
                      topical_words_per_keyword=8, noise_vocab_size=600, noise_ratio=0.6,
                      doc_length=(20, 8), noise_themes=10),
    "11t": SynthConfig(n_topics=11, keywords_per_topic=6, docs_per_keyword_pair=4,
                       topical_words_per_keyword=8, noise_vocab_size=600, noise_ratio=0.6,
                       doc_length=(20, 8), noise_themes=10),
}


def keyword_label(topic: int, keyword: int) -> str:
    return f"topic{topic} keyword{keyword}"


def synth_records(config: SynthConfig) -> list[tuple[str, list[str], list[str], str]]:
    config.validate()
    rng = np.random.default_rng(config.seed)
    T, K, W = config.n_topics, config.keywords_per_topic, config.topical_words_per_keyword
    topical = {(t, k): [f"t{t}k{k}w{i}" for i in range(W)] for t in range(T) for k in range(K)}
    noise = [f"n{i}" for i in range(config.noise_vocab_size)]
    themes = [list(chunk) for chunk in np.array_split(noise, config.noise_themes)] if noise else []
    mean, spread = config.doc_length
    records = []
    for t in range(T):
        for k1 in range(K):
            for k2 in range(K):
                if k1 == k2:
                    continue
                pool = topical[t, k1] + topical[t, k2]
                for _ in range(config.docs_per_keyword_pair):
                    length = max(2, int(round(rng.normal(mean, spread))))
                    n_noise = int(round(config.noise_ratio * length))
                    n_noise = min(n_noise, length - 1)
                    words = list(rng.choice(pool, size=length - n_noise))
                    if n_noise:
                        theme = themes[rng.integers(len(themes))] if len(themes) > 1 else noise
                        words += list(rng.choice(theme, size=n_noise))
                    words = [str(w) for w in rng.permutation(words)]
                    kws = [keyword_label(t, t * K + k1), keyword_label(t, t * K + k2)]
                    records.append((f"doc{len(records):05d}", words, kws, f"topic{t}"))
    return records


def synth_corpus(config: SynthConfig) -> tuple[Corpus, Corpus]:
    """Deterministic train/test corpora; vocab and label maps come from train."""
    records = synth_records(config)
    rng = np.random.default_rng([config.seed, 1])
    mask = _stratified_test_mask([r[3] for r in records], config.test_fraction, rng)
    train = make_corpus([r for r, m in zip(records, mask) if not m])
    test = make_corpus([r for r, m in zip(records, mask) if m], vocab=train.vocab, label_source=train)
    return train, test
