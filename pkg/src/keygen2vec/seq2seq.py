"""Attention Seq2Seq for keyword generation (KeyGen2Vec) and autoencoding.

Bidirectional GRU encoder, MLP (additive) attention, GRU decoder whose state
is initialised from the final encoder states.  The document embedding is the
attention context of the first decoding step.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GRUParams, Graph, Tensor
from .corpus import BOS, EOS, PAD, Corpus, Vocab, tokenize

KINDS = ("keygen2vec", "s2s-ae")
NEG_INF = -1e30


@dataclass(frozen=True)
class Seq2SeqConfig:
    vocab_size: int
    emb_dim: int = 100
    hidden: int = 100
    attn_dim: int = 100
    max_source_len: int = 256
    kind: str = "keygen2vec"

    @property
    def context_dim(self) -> int:
        return 2 * self.hidden


class Seq2SeqModel:
    def __init__(self, config: Seq2SeqConfig, vocab: Vocab | None = None, seed: int | None = 0):
        """``seed=None`` builds an all-zero model."""
        if config.kind not in KINDS:
            raise ValueError(f"unknown model kind {config.kind!r}")
        self.config = config
        self.vocab = vocab
        rng = None if seed is None else np.random.default_rng(seed)
        V, E, H, A = config.vocab_size, config.emb_dim, config.hidden, config.attn_dim
        D = 2 * H
        self.enc_f = GRUParams.create(E, H, rng)
        self.enc_b = GRUParams.create(E, H, rng)
        self.dec = GRUParams.create(E + D, D, rng)
        self.params: dict[str, Tensor] = {"embed": ad.init_uniform((V, E), E, rng)}
        self.params.update(self.enc_f.named("enc_f"))
        self.params.update(self.enc_b.named("enc_b"))
        self.params["init.W"] = ad.init_uniform((D, D), D, rng)
        self.params["init.b"] = Tensor(np.zeros(D), requires_grad=True)
        # rows [:D] act on the decoder state, rows [D:] on the encoder state
        self.params["attn.W"] = ad.init_uniform((2 * D, A), 2 * D, rng)
        self.params["attn.v"] = ad.init_uniform((A,), A, rng)
        self.params.update(self.dec.named("dec"))
        self.params["out.W"] = ad.init_uniform((2 * D + E, V), 2 * D + E, rng)
        self.params["out.b"] = Tensor(np.zeros(V), requires_grad=True)
        for name, p in self.params.items():
            p.name = name

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    # --- persistence --------------------------------------------------------

    def save(self, path) -> None:
        path = Path(path)
        ad.save_checkpoint(path, self.params)
        cfg = self.config
        lines = [
            f"kind={cfg.kind}",
            f"vocab_size={cfg.vocab_size}",
            f"emb_dim={cfg.emb_dim}",
            f"hidden={cfg.hidden}",
            f"attn_dim={cfg.attn_dim}",
            f"max_source_len={cfg.max_source_len}",
            f"context_dim={cfg.context_dim}",
        ]
        if self.vocab is not None:
            lines.append(f"vocab_sha256={vocab_hash(self.vocab)}")
            Path(str(path) + ".vocab").write_text("\n".join(self.vocab.itos) + "\n", encoding="utf-8")
        Path(str(path) + ".meta").write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Seq2SeqModel":
        meta = read_meta(path)
        cfg = Seq2SeqConfig(
            vocab_size=int(meta["vocab_size"]), emb_dim=int(meta["emb_dim"]), hidden=int(meta["hidden"]),
            attn_dim=int(meta["attn_dim"]), max_source_len=int(meta["max_source_len"]), kind=meta["kind"],
        )
        vocab = read_vocab(path)
        if vocab is not None and "vocab_sha256" in meta and vocab_hash(vocab) != meta["vocab_sha256"]:
            raise ValueError(f"{path}: vocabulary file does not match checkpoint metadata")
        model = cls(cfg, vocab, seed=None)
        arrays = ad.load_checkpoint(path)
        if set(arrays) != set(model.params):
            raise ValueError(f"{path}: parameter set does not match a {cfg.kind} model")
        for name, arr in arrays.items():
            if arr.shape != model.params[name].shape:
                raise ValueError(f"{path}: shape mismatch for {name}: {arr.shape}")
            model.params[name].data[...] = arr
        return model


def vocab_hash(vocab: Vocab) -> str:
    return hashlib.sha256("\n".join(vocab.itos).encode("utf-8")).hexdigest()


def read_meta(path) -> dict[str, str]:
    meta = {}
    for line in Path(str(path) + ".meta").read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    return meta


def read_vocab(path) -> Vocab | None:
    vpath = Path(str(path) + ".vocab")
    if not vpath.exists():
        return None
    itos = tuple(vpath.read_text(encoding="utf-8").splitlines())
    return Vocab(itos, (0,) * len(itos))


# --- training data ----------------------------------------------------------

@dataclass(frozen=True)
class TrainPair:
    source: tuple[int, ...]
    target: tuple[int, ...]
    doc_index: int
    keyword: str | None = None

    def __post_init__(self):
        if len(self.target) < 2 or self.target[-1] != EOS:
            raise ValueError("target must hold at least one word followed by EOS")


def expand_multilabel(corpus: Corpus, max_source_len: int = 256) -> list[TrainPair]:
    """One (document, keyword) pair per keyword; keywords in lexicographic order."""
    pairs = []
    for i, d in enumerate(corpus.documents):
        if not d.keywords:
            raise ValueError(f"document {d.id!r} has no keywords")
        src = d.tokens[:max_source_len]
        for kw in sorted(d.keywords):
            tgt = corpus.vocab.encode(tokenize(kw)) + (EOS,)
            pairs.append(TrainPair(src, tgt, i, kw))
    return pairs


def autoencoder_pairs(corpus: Corpus, max_len: int = 64) -> list[TrainPair]:
    return [
        TrainPair(d.tokens[:max_len], d.tokens[:max_len] + (EOS,), i)
        for i, d in enumerate(corpus.documents)
    ]


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    T = max(len(s) for s in seqs)
    ids = np.full((len(seqs), T), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), T))
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


# --- network pieces ---------------------------------------------------------

@dataclass
class Encoded:
    states: Tensor        # (B, T, 2H)
    init_state: Tensor    # (B, 2H)
    mask: np.ndarray      # (B, T)
    keys: Tensor          # states projected by the encoder half of attn.W, (B, T, A)


def _encode_batch(model: Seq2SeqModel, ids: np.ndarray, mask: np.ndarray) -> Encoded:
    emb = ad.embedding(model["embed"], ids)
    fwd = ad.gru_sequence(emb, model.enc_f, mask)
    bwd = ad.gru_sequence(emb, model.enc_b, mask, reverse=True)
    states = ad.concat([fwd, bwd], axis=-1)
    # masked steps freeze the state, so the last forward position holds each row's final state
    last_fwd = ad.slice_(fwd, (slice(None), -1))
    first_bwd = ad.slice_(bwd, (slice(None), 0))
    init = ad.tanh(ad.add(ad.matmul(ad.concat([last_fwd, first_bwd]), model["init.W"]), model["init.b"]))
    D = model.config.context_dim
    keys = ad.matmul(states, ad.slice_(model["attn.W"], (slice(D, None),)))
    return Encoded(states, init, mask, keys)


def _attend_batch(model: Seq2SeqModel, s: Tensor, enc: Encoded) -> tuple[Tensor, Tensor]:
    B, T = enc.mask.shape
    D = model.config.context_dim
    query = ad.matmul(s, ad.slice_(model["attn.W"], (slice(None, D),)))
    e = ad.tanh(ad.add(enc.keys, ad.reshape(query, (B, 1, -1))))
    scores = ad.matmul(e, model["attn.v"])
    if not enc.mask.all():
        scores = ad.add(scores, np.where(enc.mask > 0, 0.0, NEG_INF))
    alpha = ad.softmax(scores)
    ctx = ad.reshape(ad.matmul(ad.reshape(alpha, (B, 1, T)), enc.states), (B, D))
    return alpha, ctx


def _decode_features(model: Seq2SeqModel, y_prev: np.ndarray, s_prev: Tensor, ctx: Tensor,
                     cell: ad.PreparedGRU | None = None) -> tuple[Tensor, Tensor]:
    """New decoder state and the prediction-layer input ``[s_t; c_t; e(y_{t-1})]``."""
    e = ad.embedding(model["embed"], y_prev)
    cell = cell or ad.PreparedGRU(model.dec)
    s_next = cell.step_fused(ad.concat([e, ctx]), s_prev)
    return s_next, ad.concat([s_next, ctx, e])


def _decode_step_batch(model: Seq2SeqModel, y_prev: np.ndarray, s_prev: Tensor, ctx: Tensor,
                       cell: ad.PreparedGRU | None = None) -> tuple[Tensor, Tensor]:
    s_next, feats = _decode_features(model, y_prev, s_prev, ctx, cell)
    return s_next, ad.add(ad.matmul(feats, model["out.W"]), model["out.b"])


# --- single-example API -------------------------------------------------------

def encode(model: Seq2SeqModel, source: Sequence[int]) -> tuple[Tensor, Tensor]:
    """Encoder states (T_x, 2H) and the initial decoder state (2H,)."""
    if len(source) == 0:
        raise ValueError("cannot encode an empty source")
    ids, mask = _pad([source])
    enc = _encode_batch(model, ids, mask)
    return ad.reshape(enc.states, enc.states.shape[1:]), ad.reshape(enc.init_state, (-1,))


def attend(model: Seq2SeqModel, s: Tensor, states: Tensor) -> tuple[Tensor, Tensor]:
    """Attention weights (T_x,) and context (2H,) for decoder state ``s``."""
    states = ad._as_tensor(states)
    s = ad._as_tensor(s)
    T = states.shape[0]
    D = model.config.context_dim
    keys = ad.matmul(states, ad.slice_(model["attn.W"], (slice(D, None),)))
    enc = Encoded(ad.reshape(states, (1, T, -1)), None, np.ones((1, T)), ad.reshape(keys, (1, T, -1)))
    alpha, ctx = _attend_batch(model, ad.reshape(s, (1, -1)), enc)
    return ad.reshape(alpha, (T,)), ad.reshape(ctx, (D,))


def decode_step(model: Seq2SeqModel, y_prev: int, s_prev: Tensor, context: Tensor) -> tuple[Tensor, Tensor]:
    """New decoder state (2H,) and logits over the vocabulary (|V|,)."""
    if not 0 <= y_prev < model.config.vocab_size:
        raise ValueError(f"token id {y_prev} outside vocabulary")
    s_next, logits = _decode_step_batch(
        model, np.array([y_prev]), ad.reshape(s_prev, (1, -1)), ad.reshape(context, (1, -1))
    )
    return ad.reshape(s_next, (-1,)), ad.reshape(logits, (-1,))


def document_embedding(model: Seq2SeqModel, source: Sequence[int]) -> np.ndarray:
    states, s0 = encode(model, source[: model.config.max_source_len])
    _, ctx = attend(model, s0, states)
    return ctx.data.copy()


def embed_corpus(model: Seq2SeqModel, corpus: Corpus, batch_size: int = 64) -> np.ndarray:
    """First-step attention contexts for every document, shape (n, 2H)."""
    limit = model.config.max_source_len
    out = []
    docs = corpus.documents
    for lo in range(0, len(docs), batch_size):
        ids, mask = _pad([d.tokens[:limit] for d in docs[lo : lo + batch_size]])
        enc = _encode_batch(model, ids, mask)
        _, ctx = _attend_batch(model, enc.init_state, enc)
        out.append(ctx.data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.config.context_dim))


def sequence_logprob(model: Seq2SeqModel, source: Sequence[int], target: Sequence[int]) -> float:
    """Sum over steps of log-softmax(logits)[token] under gold feeding."""
    states, s = encode(model, source)
    total, y_prev = 0.0, BOS
    for tok in target:
        _, ctx = attend(model, s, states)
        s, logits = decode_step(model, y_prev, s, ctx)
        total += float(ad._p_log_softmax(logits.data)[0][tok])
        y_prev = tok
    return total


# --- training ---------------------------------------------------------------

@dataclass
class ScheduleState:
    k: float = 1000.0
    batches_seen: int = 0

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("schedule constant k must be positive")


def teacher_forcing_prob(schedule: ScheduleState) -> float:
    """Inverse-sigmoid decay k / (k + exp(i / k))."""
    if math.isinf(schedule.k):
        return 1.0
    x = schedule.batches_seen / schedule.k
    if x > 700:
        return 0.0
    return schedule.k / (schedule.k + math.exp(x))


@dataclass
class TrainLogEntry:
    epoch: int
    mean_loss: float
    epsilon: float


def _batch_loss(model, pairs, schedule, coin_rng, track_inputs=None):
    ids, mask = _pad([p.source for p in pairs])
    tgt, tmask = _pad([p.target for p in pairs])
    B, Ty = tgt.shape
    enc = _encode_batch(model, ids, mask)
    cell = ad.PreparedGRU(model.dec)
    W, b = model["out.W"], model["out.b"]
    s = enc.init_state
    y_prev = np.full(B, BOS, dtype=np.int64)
    eps = teacher_forcing_prob(schedule)
    feats = []
    for t in range(Ty):
        if track_inputs is not None:
            track_inputs.append(y_prev.copy())
        _, ctx = _attend_batch(model, s, enc)
        s, f = _decode_features(model, y_prev, s, ctx, cell)
        feats.append(f)
        if coin_rng.random() < eps:
            y_prev = tgt[:, t]
        else:
            y_prev = (f.data @ W.data + b.data).argmax(axis=-1)
    # one projection for all steps, rows ordered (step, batch)
    logits = ad.add(ad.matmul(ad.concat(feats, axis=0), W), b)
    logp = ad.log_softmax(logits)
    return ad.nll(logp, tgt.T.reshape(-1), weights=tmask.T.reshape(-1)), float(tmask.sum())


def train(
    model: Seq2SeqModel,
    pairs: Sequence[TrainPair],
    epochs: int = 50,
    batch_size: int = 32,
    seed: int = 0,
    schedule_k: float = 1000.0,
    adam: ad.AdamState | None = None,
    clip: float = 5.0,
    log_path=None,
    track_inputs: list | None = None,
    on_epoch=None,
) -> list[TrainLogEntry]:
    """Mini-batch NLL training with scheduled sampling; returns the epoch log.

    ``track_inputs`` (if given) receives every decoder input batch, for tests.
    ``on_epoch(entry)`` is called after each epoch.
    """
    if not pairs:
        raise ValueError("no training pairs")
    adam = adam or ad.AdamState()
    schedule = ScheduleState(schedule_k)
    shuffle_rng = np.random.default_rng([seed, 0])
    coin_rng = np.random.default_rng([seed, 1])
    params = model.params
    log: list[TrainLogEntry] = []
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(len(pairs))
        loss_sum, tok_sum = 0.0, 0.0
        for lo in range(0, len(order), batch_size):
            batch = [pairs[i] for i in order[lo : lo + batch_size]]
            ad.zero_grad(params.values())
            with Graph() as g:
                loss, n_tok = _batch_loss(model, batch, schedule, coin_rng, track_inputs)
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss {value} at epoch {epoch}, batch {lo // batch_size} "
                    f"(batches seen {schedule.batches_seen})"
                )
            ad.backward(g, loss)
            ad.clip_grad_norm(params.values(), clip)
            ad.adam_step(adam, params)
            schedule.batches_seen += 1
            loss_sum += value * n_tok
            tok_sum += n_tok
        entry = TrainLogEntry(epoch, loss_sum / tok_sum, teacher_forcing_prob(schedule))
        log.append(entry)
        if log_path is not None:
            write_log(log, log_path)
        if on_epoch is not None:
            on_epoch(entry)
    return log


def write_log(log: Iterable[TrainLogEntry], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss", "epsilon"])
        for e in log:
            w.writerow([e.epoch, repr(e.mean_loss), repr(e.epsilon)])


def train_keygen2vec(corpus: Corpus, epochs: int = 50, seed: int = 0, batch_size: int = 32,
                     max_source_len: int = 256, log_path=None, on_epoch=None,
                     **cfg) -> tuple[Seq2SeqModel, list[TrainLogEntry]]:
    config = Seq2SeqConfig(len(corpus.vocab), max_source_len=max_source_len, kind="keygen2vec", **cfg)
    model = Seq2SeqModel(config, corpus.vocab, seed=seed)
    log = train(model, expand_multilabel(corpus, max_source_len), epochs, batch_size, seed,
                log_path=log_path, on_epoch=on_epoch)
    return model, log


def train_autoencoder(corpus: Corpus, epochs: int = 50, seed: int = 0, batch_size: int = 32,
                      max_len: int = 64, log_path=None, on_epoch=None,
                      **cfg) -> tuple[Seq2SeqModel, list[TrainLogEntry]]:
    """Same machinery as KeyGen2Vec with the (truncated) source as target."""
    config = Seq2SeqConfig(len(corpus.vocab), max_source_len=max_len, kind="s2s-ae", **cfg)
    model = Seq2SeqModel(config, corpus.vocab, seed=seed)
    log = train(model, autoencoder_pairs(corpus, max_len), epochs, batch_size, seed,
                log_path=log_path, on_epoch=on_epoch)
    return model, log


# --- generation -------------------------------------------------------------

@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float
    phrase: str = ""

    @property
    def score(self) -> float:
        """Length-normalised log-probability (EOS counts as a token)."""
        return self.logprob / len(self.tokens)


def generate_keywords(
    model: Seq2SeqModel,
    source: Sequence[int],
    beam_width: int = 5,
    max_len: int = 6,
    top_k: int = 2,
) -> list[Hypothesis]:
    """Beam search; hypotheses ranked by length-normalised log-probability.

    Beams are pruned on cumulative log-probability; a hypothesis completes on
    EOS or when ``max_len`` tokens have been emitted.  PAD and BOS are never
    emitted.
    """
    if not beam_width >= top_k >= 1:
        raise ValueError("need beam_width >= top_k >= 1")
    source = list(source)[: model.config.max_source_len]
    ids, mask = _pad([source])
    enc = _encode_batch(model, ids, mask)
    live = [((), 0.0)]
    live_state = enc.init_state.data
    finished: list[tuple[tuple[int, ...], float]] = []
    for step in range(max_len):
        n = len(live)
        rep = Encoded(
            Tensor(np.repeat(enc.states.data, n, axis=0)), None,
            np.repeat(enc.mask, n, axis=0), Tensor(np.repeat(enc.keys.data, n, axis=0)),
        )
        s_prev = Tensor(live_state)
        _, ctx = _attend_batch(model, s_prev, rep)
        y_prev = np.array([toks[-1] if toks else BOS for toks, _ in live])
        s_next, logits = _decode_step_batch(model, y_prev, s_prev, ctx)
        logp = ad._p_log_softmax(logits.data)[0]
        allowed = logp.copy()
        allowed[:, [PAD, BOS]] = -np.inf
        cand = np.array([lp for _, lp in live])[:, None] + allowed
        flat = cand.reshape(-1)
        order = np.argsort(-flat, kind="stable")[:beam_width]
        new_live, new_states = [], []
        for idx in order:
            if not np.isfinite(flat[idx]):
                break
            i, tok = divmod(int(idx), logp.shape[1])
            toks = live[i][0] + (tok,)
            lp = live[i][1] + float(logp[i, tok])
            if tok == EOS or step == max_len - 1:
                finished.append((toks, lp))
            else:
                new_live.append((toks, lp))
                new_states.append(s_next.data[i])
        if not new_live:
            break
        live, live_state = new_live, np.stack(new_states)
    ranked = sorted(finished, key=lambda h: -h[1] / len(h[0]))
    out, seen = [], set()
    for toks, lp in ranked:
        phrase = _phrase(model.vocab, toks)
        if phrase in seen:
            continue
        seen.add(phrase)
        out.append(Hypothesis(toks, lp, phrase))
        if len(out) == top_k:
            break
    return out


def _phrase(vocab: Vocab | None, toks: Sequence[int]) -> str:
    body = [t for t in toks if t != EOS]
    if vocab is None:
        return " ".join(str(t) for t in body)
    return " ".join(vocab.decode(body))


def greedy_decode(model: Seq2SeqModel, source: Sequence[int], max_len: int = 6) -> tuple[int, ...]:
    states, s = encode(model, source)
    toks, y_prev = [], BOS
    for _ in range(max_len):
        _, ctx = attend(model, s, states)
        s, logits = decode_step(model, y_prev, s, ctx)
        lp = logits.data.copy()
        lp[[PAD, BOS]] = -np.inf
        y_prev = int(lp.argmax())
        toks.append(y_prev)
        if y_prev == EOS:
            break
    return tuple(toks)
