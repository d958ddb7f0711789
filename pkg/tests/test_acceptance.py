"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Seed convention for the toy-replica experiments: the synthetic corpus, the
model and the clustering harness all use the same seed, and clustering is
scored on the held-out test split.
"""
import itertools
import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import log_softmax

from keygen2vec import autodiff as ad
from keygen2vec import classifiers as cl
from keygen2vec import clustereval as ce
from keygen2vec import embedders as em
from keygen2vec import pipeline as pl
from keygen2vec import seq2seq as s2s
from keygen2vec.autodiff import GRUParams, Tensor
from keygen2vec.classifiers import MlpConfig, MlpModel
from keygen2vec.cli import main
from keygen2vec.corpus import (BOS, EOS, PAD, PRESETS, CorpusFormatError, load_corpus, make_corpus,
                               save_corpus, synth_corpus)
from keygen2vec.seq2seq import ScheduleState, Seq2SeqConfig, Seq2SeqModel, TrainPair

from gradcheck import check_grads
from oracles import brute_assignment_total, brute_f1, brute_nmi, brute_purity
from test_autodiff import PRIMITIVE_CASES, _primitive_params, readout

SEEDS = range(5)
S2S_EPOCHS = 15
MLP_EPOCHS = 50
SWEEP_SIZES = (20, 50, 100, 250)


def toy(seed: int):
    return synth_corpus(replace(PRESETS["toy"], seed=seed))


def test_1_metric_oracles(verdict):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 13))
        w = rng.integers(0, rng.integers(1, 6), size=n).tolist()
        c = rng.integers(0, rng.integers(1, 6), size=n).tolist()
        worst = max(worst, abs(ce.purity(w, c) - brute_purity(w, c)), abs(ce.nmi(w, c) - brute_nmi(w, c)),
                    *np.abs(np.subtract(ce.pairwise_f1(w, c), brute_f1(w, c))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 10
    assert verdict(1, ok, f"max |diff| {worst:.1e} over 1000 pairs in {elapsed:.2f}s"), (worst, elapsed)


def _gradient_cases():
    """(name, loss_fn, params) for every differentiable building block.

    Every size (batch, length, embedding, hidden, attention) is at most 8.
    """
    rng = np.random.default_rng(7)
    p = lambda *shape: Tensor(rng.normal(size=shape), requires_grad=True)
    cases = []
    for name in sorted(PRIMITIVE_CASES):
        prm = _primitive_params()
        cases.append((name, (lambda f, q: lambda: readout(f(q)))(PRIMITIVE_CASES[name], prm), prm))
    logits, y = p(4, 6), np.array([1, 5, 0, 5])
    cases.append(("nll", lambda: ad.nll(ad.log_softmax(logits), y, weights=[1.0, 0.0, 2.0, 1.0]), {"x": logits}))
    z, t = p(3, 5), (rng.random((3, 5)) < 0.4).astype(float)
    cases.append(("bce_with_logits", lambda: ad.bce_with_logits(z, t), {"x": z}))

    g = GRUParams.create(3, 4, rng)
    x, h = p(2, 3), p(2, 4)
    cases.append(("gru_cell", lambda: readout(ad.gru_cell(x, h, g)), {**g.named("gru"), "x": x, "h": h}))
    mask = np.array([[1.0], [0.0]])
    cases.append(("gru_step (fused)", lambda: readout(ad.PreparedGRU(g).step_fused(x, h, mask)),
                  {**g.named("gru"), "x": x, "h": h}))
    xs, smask = p(2, 4, 3), np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=float)
    for rev in (False, True):
        cases.append((f"gru_seq reverse={rev}",
                      (lambda r: lambda: readout(ad.gru_sequence(xs, g, smask, reverse=r)))(rev),
                      {**g.named("gru"), "xs": xs}))

    m = Seq2SeqModel(Seq2SeqConfig(7, emb_dim=3, hidden=3, attn_dim=3), seed=10)
    s, states = p(6), p(4, 6)
    cases.append(("attention", lambda: readout(s2s.attend(m, s, states)[1]),
                  {"s": s, "states": states, **{k: v for k, v in m.params.items() if k.startswith("attn")}}))
    pairs = [TrainPair((4, 5), (6, EOS), 0), TrainPair((5, 6, 4), (4, EOS), 1)]
    cases.append(("seq2seq step", lambda: s2s._batch_loss(m, pairs, ScheduleState(math.inf),
                                                          np.random.default_rng(0))[0], m.params))

    seqs = [[4, 5, 6], [7, 8], [4]]
    for head in cl.HEADS:
        mlp = MlpModel(MlpConfig(9, 4, head, emb_dim=3, hidden=3, dropout=0.0), seed=5)
        targets = (np.array([[1.0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]]) if head == "sigmoid-keyword"
                   else np.array([0, 3, 1]))
        cases.append((f"mlp {head}", (lambda mm, tt: lambda: cl.head_loss(mm, cl.forward(mm, seqs)[1], tt))(
            mlp, targets), mlp.params))
    return cases


def test_2_gradient_integrity(verdict):
    start = time.perf_counter()
    worst, failures = {}, []
    cases = _gradient_cases()
    for name, fn, params in cases:
        err = max(check_grads(fn, params).values())
        worst[name] = err
        if not err < 1e-4:
            failures.append(name)
    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    ok = not failures and elapsed < 60
    assert verdict(2, ok, f"{len(cases)} checks, worst {top} {worst[top]:.1e}, {elapsed:.1f}s"
                   + (f", failing {failures}" if failures else "")), worst


def _realize(table: np.ndarray) -> tuple[list[int], list[int]]:
    """Cluster/class label lists whose contingency table is ``table``."""
    w, c = [], []
    for (k, j), count in np.ndenumerate(table):
        w += [k] * int(count)
        c += [j] * int(count)
    return w, c


def test_3_hungarian_optimality(verdict):
    rng = np.random.default_rng(31)
    mismatches = 0
    for _ in range(500):
        K, J = rng.integers(1, 8, size=2)
        table = rng.integers(0, 6, size=(K, J))
        table[rng.integers(K), rng.integers(J)] += 1  # at least one point
        w, c = _realize(table)
        al = ce.hungarian_align(w, c)
        if al.total != brute_assignment_total(ce.contingency(w, c)):
            mismatches += 1
    assert verdict(3, mismatches == 0, f"{500 - mismatches}/500 totals equal the permutation maximum"), mismatches


@pytest.mark.slow
def test_4_toy_replica_ordering(verdict):
    start = time.perf_counter()
    rows = []
    for seed in SEEDS:
        tr, te = toy(seed)
        res = {}
        for name, epochs in (("keygen2vec", S2S_EPOCHS), ("s2s-ae", S2S_EPOCHS), ("mlp-multiclass", MLP_EPOCHS)):
            embed = pl.fit_embedder(name, tr, seed, epochs)
            res[name] = pl.report(embed(te), name, "test", seed)
        rows.append(res)
        print(f"seed {seed}: " + ", ".join(
            f"{k} nmi {v['nmi']['mean']:.3f} purity {v['purity']['mean']:.3f}" for k, v in res.items()))
    elapsed = time.perf_counter() - start
    kg_nmi = [r["keygen2vec"]["nmi"]["mean"] for r in rows]
    gap_wins = sum(r["keygen2vec"]["nmi"]["mean"] - r["s2s-ae"]["nmi"]["mean"] >= 0.20 for r in rows)
    purity_wins = sum(r["mlp-multiclass"]["purity"]["mean"] >= r["keygen2vec"]["purity"]["mean"] for r in rows)
    ok = min(kg_nmi) >= 0.60 and gap_wins >= 4 and purity_wins >= 4 and elapsed < 30 * 60
    assert verdict(4, ok, f"KeyGen2Vec NMI min {min(kg_nmi):.3f}; gap>=0.20 in {gap_wins}/5; "
                          f"multiclass purity >= KeyGen2Vec in {purity_wins}/5; {elapsed / 60:.1f} min"), rows


@pytest.mark.slow
def test_5_label_dependency_ordering(verdict):
    wins, detail = 0, []
    for seed in SEEDS:
        tr, te = toy(seed)
        f1 = {}
        for name in ("mlp-softmax", "mlp-sigmoid"):
            f1[name] = pl.report(pl.fit_embedder(name, tr, seed, MLP_EPOCHS)(te), name, "test", seed)["f1"]["mean"]
        wins += f1["mlp-softmax"] >= f1["mlp-sigmoid"]
        detail.append(f"{f1['mlp-softmax']:.3f}/{f1['mlp-sigmoid']:.3f}")
        print(f"seed {seed}: softmax f1 {f1['mlp-softmax']:.4f} sigmoid f1 {f1['mlp-sigmoid']:.4f}")
    assert verdict(5, wins >= 4, f"softmax >= sigmoid F1 in {wins}/5 seeds (softmax/sigmoid {', '.join(detail)})"), detail


@pytest.mark.slow
def test_6_noise_sweep_shape(verdict):
    wins, detail = 0, []
    for seed in SEEDS:
        tr, te = toy(seed)
        f1 = {m: {} for m in ("mean-skipgram", "keygen2vec")}
        for model in f1:
            epochs = S2S_EPOCHS if model == "keygen2vec" else None
            for n in SWEEP_SIZES:
                rep = pl.run_sweep_cell(pl.SweepCell(model, n, seed, epochs), tr, te)
                f1[model][n] = rep["f1"]["mean"]
        drop = {m: (max(v.values()) - v[250]) / max(v.values()) for m, v in f1.items()}
        good = drop["mean-skipgram"] >= 0.20 and drop["keygen2vec"] <= 0.10
        wins += good
        detail.append(f"{drop['mean-skipgram']:.2f}/{drop['keygen2vec']:.2f}")
        print(f"seed {seed}: " + "; ".join(f"{m} " + " ".join(f"{n}:{v[n]:.3f}" for n in SWEEP_SIZES)
                                           for m, v in f1.items()))
    assert verdict(6, wins >= 4, f"shape holds in {wins}/5 seeds (relative drop mean/KeyGen2Vec {', '.join(detail)})"), detail


def _tiny_trained_model():
    words = ["red", "green", "blue", "cyan", "gray"]
    recs = [(f"d{i}", [words[i], words[(i + 1) % 5]], [words[(i + 2) % 5]], f"t{i % 2}") for i in range(5)]
    corpus = make_corpus(recs)
    assert len(corpus.vocab) == 4 + 5
    model, _ = s2s.train_keygen2vec(corpus, epochs=40, seed=3, batch_size=5, emb_dim=6, hidden=6, attn_dim=6)
    return model, corpus


def _manual_logprob(model, source, target) -> float:
    """Per-step log-softmax terms summed with an independent log-softmax."""
    states, s = s2s.encode(model, source)
    total, prev = 0.0, BOS
    for tok in target:
        _, ctx = s2s.attend(model, s, states)
        s, logits = s2s.decode_step(model, prev, s, ctx)
        total += float(log_softmax(logits.data)[tok])
        prev = tok
    return total


def _complete_sequences(tokens, max_len=3):
    """Every hypothesis a search of depth ``max_len`` can finish: EOS-terminated, or cut at max_len."""
    body = [t for t in tokens if t != EOS]
    out = []
    for n in range(max_len - 1):
        out += [seq + (EOS,) for seq in itertools.product(body, repeat=n)]
    out += [seq + (t,) for seq in itertools.product(body, repeat=max_len - 1) for t in tokens]
    return out


def test_7_joint_probability(verdict):
    model, corpus = _tiny_trained_model()
    V = len(corpus.vocab)
    emittable = [t for t in range(V) if t not in (PAD, BOS)]
    source = list(corpus.documents[0].tokens)
    seqs = _complete_sequences(emittable)
    logp = {seq: s2s.sequence_logprob(model, source, seq) for seq in seqs}
    best = max(seqs, key=lambda q: logp[q] / len(q))
    hyps = s2s.generate_keywords(model, source, beam_width=len(emittable) ** 3, max_len=3, top_k=len(seqs))
    ranking_ok = [h.tokens for h in hyps] == sorted(seqs, key=lambda q: -logp[q] / len(q))
    lp_err = max(abs(h.logprob - _manual_logprob(model, source, h.tokens)) for h in hyps)
    seq_err = max(abs(logp[q] - _manual_logprob(model, source, q)) for q in seqs)
    # over all tokens the depth-3 outcomes partition the probability mass
    mass = sum(math.exp(s2s.sequence_logprob(model, source, q)) for q in _complete_sequences(range(V)))
    ok = hyps[0].tokens == best and ranking_ok and max(lp_err, seq_err) <= 1e-9 and abs(mass - 1) <= 1e-9
    assert verdict(7, ok, f"beam argmax {hyps[0].tokens} vs enumerated {best} over {len(seqs)} sequences; "
                          f"full ranking equal {ranking_ok}; logprob err {max(lp_err, seq_err):.1e}; "
                          f"total mass {mass:.12f}"), (hyps[0], best)


def _cli(*argv) -> int:
    try:
        return main([str(a) for a in argv])
    except SystemExit as e:
        return e.code


def _snapshot(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_8_cli_determinism(verdict, tmp_path):
    data = tmp_path / "data"
    assert _cli("synth", "--preset", "toy", "--topics", "3", "--seed", "4", "--out", data) == 0
    tr, te = data / "train.jsonl", data / "test.jsonl"
    es = em.tfidf_embed(load_corpus(te))
    em.write_embeddings(es, tmp_path / "emb.tsv")
    commands = {
        "train keygen2vec": ("train", "--model", "keygen2vec", "--train", tr, "--epochs", 1, "--seed", 2),
        "train mlp-sigmoid": ("train", "--model", "mlp-sigmoid", "--train", tr, "--epochs", 3, "--seed", 2),
        "evaluate": ("evaluate", "--embeddings", f"tfidf={tmp_path / 'emb.tsv'}", "--test", te,
                     "--repetitions", 3, "--seed", 2),
        "chi2-sweep": ("chi2-sweep", "--train", tr, "--test", te, "--sizes", "5,20",
                       "--models", "keygen2vec,mean-skipgram,tfidf", "--epochs", 1, "--repetitions", 2, "--seed", 2),
    }
    same = {}
    for name, argv in commands.items():
        out = tmp_path / name.replace(" ", "-")
        assert _cli(*argv, "--out", out) == 0, name
        first = _snapshot(out)
        assert _cli(*argv, "--out", out) == 0, name
        same[name] = _snapshot(out) == first and len(first) > 1
    ok = all(same.values())
    assert verdict(8, ok, "byte-identical reruns: " + ", ".join(f"{k} {v}" for k, v in same.items())), same


def test_9_format_round_trips(verdict, tmp_path):
    checks = {}
    tr, _ = synth_corpus(replace(PRESETS["toy"], n_topics=3, seed=8))
    save_corpus(tr, tmp_path / "a.jsonl")
    back = load_corpus(tmp_path / "a.jsonl")
    save_corpus(back, tmp_path / "b.jsonl")
    checks["corpus"] = ([(d.id, d.words, d.keywords, d.topic) for d in back.documents]
                        == [(d.id, d.words, d.keywords, d.topic) for d in tr.documents]
                        and (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes())

    small = make_corpus([("a", ["x", "y"], ["k1", "k2"], "t0"), ("b", ["y", "z"], ["k3"], "t1")])
    s2s_model, _ = s2s.train_keygen2vec(small, epochs=2, seed=1, emb_dim=4, hidden=4, attn_dim=4)
    mlp_model, _ = cl.train_multilabel_softmax(small, epochs=2, seed=1)
    for name, model, cls in (("seq2seq", s2s_model, Seq2SeqModel), ("mlp", mlp_model, MlpModel)):
        model.save(tmp_path / f"{name}.ckpt")
        cls.load(tmp_path / f"{name}.ckpt").save(tmp_path / f"{name}2.ckpt")
        checks[f"{name} checkpoint"] = all(
            (tmp_path / f"{name}{suffix}").read_bytes() == (tmp_path / f"{name}2{suffix}").read_bytes()
            for suffix in (".ckpt", ".ckpt.meta", ".ckpt.vocab") if (tmp_path / f"{name}{suffix}").exists())
    raw = ad.load_checkpoint(tmp_path / "seq2seq.ckpt")
    checks["checkpoint arrays"] = all(np.array_equal(raw[k], v.data) for k, v in s2s_model.params.items())

    def fails_at(fn, path, lineno, exc=ValueError):
        try:
            fn(path)
        except exc as e:
            return f"{path}:{lineno}" in str(e)
        return False

    bad = tmp_path / "bad.jsonl"
    good = json.dumps({"id": "1", "text": "a b", "keywords": ["k"], "topic": "t"})
    bad.write_text(good + "\n" + json.dumps({"id": "2", "text": "c", "keywords": ["k"], "topic": "t"}) + "\n{oops\n")
    checks["malformed corpus json"] = fails_at(load_corpus, bad, 3, CorpusFormatError)
    bad.write_text(good + "\n" + json.dumps({"id": "2", "text": "c", "topic": "t"}) + "\n")
    checks["missing corpus field"] = fails_at(load_corpus, bad, 2, CorpusFormatError)
    emb = tmp_path / "bad.tsv"
    emb.write_text("id\ttopic\td0\td1\na\tt\t0.5\t1\nb\tt\t0.5\n")
    checks["malformed embeddings"] = fails_at(em.read_embeddings, emb, 3)
    vec = tmp_path / "bad.vec"
    vec.write_text("2 2\nx 0.1 0.2\ny 0.1 nope\n")
    checks["malformed word vectors"] = fails_at(lambda p: em.load_word_vectors(p, small.vocab), vec, 3)
    trunc = tmp_path / "trunc.ckpt"
    trunc.write_bytes((tmp_path / "mlp.ckpt").read_bytes()[:-5])
    try:
        ad.load_checkpoint(trunc)
        checks["truncated checkpoint"] = False
    except ValueError as e:
        checks["truncated checkpoint"] = "truncated" in str(e)
    ok = all(checks.values())
    assert verdict(9, ok, ", ".join(f"{k} {'ok' if v else 'BAD'}" for k, v in checks.items())), checks
