import math
from collections import Counter

import numpy as np
import pytest

from keygen2vec import classifiers as cl
from keygen2vec.classifiers import MlpConfig, MlpModel
from keygen2vec.corpus import SynthConfig, make_corpus, synth_corpus
from keygen2vec.seq2seq import expand_multilabel

from gradcheck import check_grads


def kw_corpus():
    recs = [
        ("a", ["w1", "w2"], ["k1", "k2"], "t0"),
        ("b", ["w3"], ["k3"], "t1"),
        ("c", ["w2", "w4", "w4"], ["k5", "k4"], "t1"),
    ]
    return make_corpus(recs)


def small(head, V=12, n_out=5, dim=4, dropout=0.5, seed=0):
    return MlpModel(MlpConfig(V, n_out, head, emb_dim=dim, hidden=dim, dropout=dropout), seed=seed)


@pytest.fixture(scope="module")
def separable():
    return synth_corpus(SynthConfig(n_topics=4, keywords_per_topic=3, docs_per_keyword_pair=4,
                                    noise_ratio=0.3, noise_vocab_size=40, seed=1))[0]


# --- targets ------------------------------------------------------------------

def test_multi_hot_target():
    recs = [("a", ["x"], ["k1", "k2"], "t")] + [(str(i), ["x"], [f"k{i}"], "t") for i in (3, 4, 5)]
    c = make_corpus(recs)
    assert cl.multi_hot(c)[0].tolist() == [1, 1, 0, 0, 0]


def test_softmax_keyword_examples_are_the_seq2seq_pairs():
    c = kw_corpus()
    ex = cl.training_examples(c, "softmax-keyword")
    pairs = expand_multilabel(c)
    assert len(ex.sources) == len(pairs) == 5
    assert Counter(zip(ex.sources, ex.targets.tolist())) == Counter(
        (p.source, c.keyword_vocab[p.keyword]) for p in pairs)


def test_two_keywords_per_doc_gives_two_examples_per_doc():
    c = synth_corpus(SynthConfig(n_topics=2, keywords_per_topic=2))[0]
    assert len(cl.training_examples(c, "softmax-keyword").sources) == 2 * len(c)


# --- heads ----------------------------------------------------------------------

def test_zero_final_layer_gives_half_probabilities_and_ln2():
    m = small("sigmoid-keyword")
    m["fc2.W"].data[:] = 0.0
    probs = cl.probabilities(m, [[4, 5, 6]])
    np.testing.assert_array_equal(probs, 0.5)
    _, logits = cl.forward(m, [[4, 5, 6]])
    loss = cl.head_loss(m, logits, np.array([[1.0, 0, 1, 0, 0]]))
    assert loss.item() == pytest.approx(math.log(2), abs=1e-15)


def test_sigmoid_outputs_are_independent():
    probs = cl.probabilities(small("sigmoid-keyword", dim=6, seed=2), [[4, 7, 9]])
    assert abs(probs.sum() - 1) > 1e-3


def test_softmax_heads_are_distributions():
    for head in ("softmax-topic", "softmax-keyword"):
        probs = cl.probabilities(small(head, seed=3), [[4, 7], [9], [5, 5, 6]])
        np.testing.assert_allclose(probs.sum(1), 1.0, atol=1e-12)


def test_raising_one_keyword_logit_lowers_the_others():
    m = small("softmax-keyword", seed=4)
    before = cl.probabilities(m, [[4, 6]])[0]
    m["fc2.b"].data[2] += 0.5
    after = cl.probabilities(m, [[4, 6]])[0]
    others = np.arange(5) != 2
    assert (after[others] < before[others]).all() and after[2] > before[2]


@pytest.mark.parametrize("head", cl.HEADS)
def test_head_gradients(head):
    m = small(head, V=9, n_out=4, dim=3, dropout=0.0, seed=5)
    seqs = [[4, 5, 6], [7, 8], [4]]
    targets = (np.array([[1.0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]]) if head == "sigmoid-keyword"
               else np.array([0, 3, 1]))
    errs = check_grads(lambda: cl.head_loss(m, cl.forward(m, seqs)[1], targets), m.params)
    assert max(errs.values()) < 1e-4, errs


def test_hidden_layer_matches_formula():
    m = small("softmax-topic", seed=6)
    h, logits = cl.forward(m, [[4, 6, 6]])
    pooled = m["embed"].data[[4, 6, 6]].mean(0)
    ref = np.tanh(pooled @ m["fc1.W"].data + m["fc1.b"].data)
    np.testing.assert_allclose(h.data[0], ref, atol=1e-14)
    np.testing.assert_allclose(logits.data[0], ref @ m["fc2.W"].data + m["fc2.b"].data, atol=1e-14)


# --- dropout ------------------------------------------------------------------

def test_zero_dropout_is_identity():
    m = small("softmax-topic", dropout=0.0, seed=7)
    h_train, _ = cl.forward(m, [[4, 5]], drop_rng=np.random.default_rng(0))
    h_eval, _ = cl.forward(m, [[4, 5]])
    assert np.array_equal(h_train.data, h_eval.data)


def test_dropout_only_during_training():
    m = small("softmax-topic", dropout=0.5, seed=7)
    a, _ = cl.forward(m, [[4, 5]])
    b, _ = cl.forward(m, [[4, 5]])
    assert np.array_equal(a.data, b.data)
    c, _ = cl.forward(m, [[4, 5]], drop_rng=np.random.default_rng(1))
    assert not np.array_equal(a.data, c.data)


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        MlpConfig(5, 2, "softmax-words")
    with pytest.raises(ValueError):
        MlpConfig(5, 2, "softmax-topic", dropout=1.0)


# --- training and embeddings ----------------------------------------------------

def test_single_topic_and_missing_keywords_rejected():
    one = make_corpus([("a", ["x"], ["k"], "t"), ("b", ["y"], ["k"], "t")])
    with pytest.raises(ValueError, match="two topics"):
        cl.train_multiclass(one, epochs=1)
    no_kw = one.__class__(one.documents, one.vocab, {}, one.topic_vocab)
    with pytest.raises(ValueError, match="keyword"):
        cl.train_multilabel_sigmoid(no_kw, epochs=1)


def test_multiclass_fits_separable_corpus(separable):
    model, losses = cl.train_multiclass(separable, epochs=50, seed=0)
    assert model.config.n_out == 4
    assert cl.accuracy(model, separable) > 0.95
    assert losses[-1] < losses[0]


def test_multilabel_heads_have_label_sized_outputs(separable):
    for fn in (cl.train_multilabel_sigmoid, cl.train_multilabel_softmax):
        model, losses = fn(separable, epochs=3, seed=0)
        assert model.config.n_out == 12
        assert losses[-1] < losses[0]


def test_classifier_embedding_properties(separable):
    model, _ = cl.train_multiclass(separable, epochs=1, seed=0)
    es = cl.classifier_embedding(model, separable, batch_size=100)
    assert es.dim == 100 and len(es) == len(separable)
    again = cl.classifier_embedding(model, separable)
    assert np.array_equal(es.matrix, again.matrix)
    d = separable.documents[0]
    rev = separable.with_documents([d.__class__(d.id, d.words[::-1], d.tokens[::-1], d.keywords, d.topic)])
    np.testing.assert_allclose(cl.classifier_embedding(model, rev).matrix[0], es.matrix[0], atol=1e-14)


def test_training_is_deterministic_and_round_trips(tmp_path):
    c = kw_corpus()
    for name in ("a", "b"):
        model, _ = cl.train_multilabel_softmax(c, epochs=3, seed=9)
        model.save(tmp_path / f"{name}.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    back = MlpModel.load(tmp_path / "a.ckpt")
    assert back.config == model.config and back.labels == model.labels
    assert back.labels == ("k1", "k2", "k3", "k4", "k5")
    for k in model.params:
        assert np.array_equal(back[k].data, model[k].data)


def test_loading_a_seq2seq_checkpoint_as_mlp_fails(tmp_path):
    from keygen2vec.seq2seq import Seq2SeqConfig, Seq2SeqModel

    Seq2SeqModel(Seq2SeqConfig(6, emb_dim=2, hidden=2, attn_dim=2)).save(tmp_path / "s.ckpt")
    with pytest.raises(ValueError, match="not an MLP"):
        MlpModel.load(tmp_path / "s.ckpt")
