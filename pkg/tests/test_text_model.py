import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emojimm.corpus import split
from emojimm.synthetic import SyntheticSpec, generate_synthetic
from emojimm.evaluation import macro_f1
from emojimm.text_model import (
    TextModel,
    TextModelParams,
    TextTrainConfig,
    TextVocab,
    bag_of_features,
    build_text_vocab,
    embed_text,
    forward,
    nll_loss,
    nll_loss_and_grad,
    predict_topk_text,
    tokenize,
    train_text,
)


def random_params(rng, V=6, d=3, k=4, scale=1.0):
    return TextModelParams(rng.normal(0, scale, (V, d)), rng.normal(0, scale, (d, k)), rng.normal(0, scale, k))


def oracle_softmax(scores):
    mpmath.mp.dps = 50
    e = [mpmath.exp(mpmath.mpf(float(s))) for s in scores]
    total = mpmath.fsum(e)
    return np.array([float(x / total) for x in e])


def central_difference(f, x, eps=1e-5):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + eps
        up = f()
        x[i] = old - eps
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


def max_rel_err(a, n):
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)))


VOCAB = TextVocab(("a", "b", "c", "#tag", "d", "e"))
LABELS = ("w", "x", "y", "z")


class TestTokenize:
    def test_basic(self):
        assert tokenize("Love my new home!") == ["love", "my", "new", "home"]

    def test_hashtags(self):
        assert tokenize("#myboys #mommy") == ["#myboys", "#mommy"]

    def test_empty(self):
        assert tokenize("") == []

    def test_mentions_and_wrapping_punctuation(self):
        assert tokenize("(@Anna, #NYC!!) ... can't") == ["@anna", "#nyc", "can't"]

    def test_bare_marker_dropped(self):
        assert tokenize("# @ !!!") == []


class TestBagOfFeatures:
    def test_single_token_is_row(self):
        p = random_params(np.random.default_rng(0))
        assert np.array_equal(bag_of_features(["b"], p, VOCAB).h, p.A[1])

    def test_duplicate_token(self):
        p = random_params(np.random.default_rng(0))
        assert np.allclose(bag_of_features(["b", "b"], p, VOCAB).h, p.A[1], atol=1e-15)

    def test_oov_skipped_and_all_oov_zero(self):
        p = random_params(np.random.default_rng(0))
        assert np.array_equal(bag_of_features(["b", "zzz"], p, VOCAB).h, p.A[1])
        bag = bag_of_features(["zzz"], p, VOCAB)
        assert bag.token_count == 0 and np.array_equal(bag.h, np.zeros(3))

    @given(st.lists(st.sampled_from(VOCAB.tokens), min_size=1, max_size=12), st.randoms(), st.integers(1, 4))
    def test_permutation_and_replication_invariant(self, tokens, rnd, times):
        p = random_params(np.random.default_rng(1))
        base = bag_of_features(tokens, p, VOCAB).h
        shuffled = list(tokens)
        rnd.shuffle(shuffled)
        np.testing.assert_allclose(bag_of_features(shuffled, p, VOCAB).h, base, atol=1e-14)
        np.testing.assert_allclose(bag_of_features(tokens * times, p, VOCAB).h, base, atol=1e-14)


class TestForward:
    def test_zero_output_is_uniform(self):
        p = TextModelParams(np.ones((6, 3)), np.zeros((3, 5)), np.zeros(5))
        assert np.allclose(forward(np.ones(3), p), 0.2, atol=1e-15)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        p = random_params(rng)
        h = rng.normal(size=3)
        shifted = TextModelParams(p.A, p.B, p.b_out + 123.0)
        np.testing.assert_allclose(forward(h, shifted), forward(h, p), atol=1e-12)

    def test_matches_high_precision_softmax(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = random_params(rng, d=4, k=5, scale=3.0)
            h = rng.normal(0, 2, size=4)
            np.testing.assert_allclose(forward(h, p), oracle_softmax(h @ p.B + p.b_out), atol=1e-10, rtol=0)

    @given(st.integers(0, 10_000))
    def test_simplex(self, seed):
        rng = np.random.default_rng(seed)
        probs = forward(rng.normal(0, 5, 3), random_params(rng, scale=5.0))
        assert np.all(probs > 0) and abs(probs.sum() - 1) <= 1e-6

    def test_non_finite(self):
        with pytest.raises(ValueError):
            forward(np.array([np.nan, 0, 0]), random_params(np.random.default_rng(0)))


class TestLoss:
    def test_perfect_predictor_zero(self):
        A = np.eye(6, 3)
        B = np.zeros((3, 4))
        b = np.array([1000.0, 0, 0, 0])
        assert nll_loss([("a b", "w")], TextModelParams(A, B, b), VOCAB, LABELS) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_is_log_k(self):
        k = 20
        labels = tuple(str(i) for i in range(k))
        p = TextModelParams(np.ones((6, 3)), np.zeros((3, k)), np.zeros(k))
        batch = [("a c", labels[i % k]) for i in range(40)]
        assert nll_loss(batch, p, VOCAB, labels) == pytest.approx(math.log(20), abs=1e-12)
        assert math.log(20) == pytest.approx(2.9957, abs=1e-4)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            nll_loss([], random_params(np.random.default_rng(0)), VOCAB, LABELS)

    def test_non_negative(self):
        rng = np.random.default_rng(4)
        batch = [("a b c", "w"), ("d e", "z"), ("#tag a", "y")]
        assert nll_loss(batch, random_params(rng), VOCAB, LABELS) >= 0

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        params = random_params(rng)
        batch = [
            (" ".join(rng.choice(VOCAB.tokens + ("oov",), size=rng.integers(1, 6))), LABELS[rng.integers(4)])
            for _ in range(5)
        ]
        _, gA, gB, gb = nll_loss_and_grad(batch, params, VOCAB, LABELS)
        f = lambda: nll_loss(batch, params, VOCAB, LABELS)  # noqa: E731
        for analytic, x in ((gA, params.A), (gB, params.B), (gb, params.b_out)):
            assert max_rel_err(analytic, central_difference(f, x)) < 1e-4


def text_only_split(k=5, n=600, noise=0.0, seed=0):
    spec = SyntheticSpec(k, n, tuple(range(k)), (), noise_rate=noise, seed=seed)
    return spec, split(generate_synthetic(spec), seed)


class TestTraining:
    def test_separable_set(self):
        spec, d = text_only_split()
        model = train_text(d.train, d.dev, spec.label_list)
        probs = model.predict_proba([p.text for p in d.train])
        gold = np.array([spec.label_list.index(p.label) for p in d.train])
        assert np.mean(probs.argmax(1) == gold) >= 0.99

    def test_batch_mode_loss_non_increasing(self):
        spec, d = text_only_split(k=3, n=60)
        cfg = TextTrainConfig(dim=8, lr=0.5, epochs=30, mode="batch", min_count=1)
        model = train_text(d.train, [], spec.label_list, cfg)
        losses = [h["loss"] for h in model.history]
        assert len(losses) == 30
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_deterministic(self):
        spec, d = text_only_split(n=200, noise=0.2)
        cfg = TextTrainConfig(epochs=5, seed=9)
        a = train_text(d.train, d.dev, spec.label_list, cfg)
        b = train_text(d.train, d.dev, spec.label_list, cfg)
        for name in ("A", "B", "b_out"):
            assert np.array_equal(getattr(a.params, name), getattr(b.params, name))

    def test_keeps_best_dev_epoch(self):
        spec, d = text_only_split(n=300, noise=0.3)
        model = train_text(d.train, d.dev, spec.label_list, TextTrainConfig(epochs=8, patience=2))
        scores = [h["dev_macro_f1"] for h in model.history]
        dev_probs = model.predict_proba([p.text for p in d.dev])
        gold = np.array([spec.label_list.index(p.label) for p in d.dev])
        assert macro_f1(gold, dev_probs.argmax(1), spec.k) == pytest.approx(max(scores), abs=1e-12)

    def test_empty_train(self):
        with pytest.raises(ValueError):
            train_text([], [], ("a",))

    def test_vocab_respects_min_count(self):
        vocab = build_text_vocab(["a a b", "a c c"], min_count=2)
        assert vocab.tokens == ("a", "c")


@pytest.fixture(scope="module")
def model():
    spec, d = text_only_split(n=300)
    return train_text(d.train, d.dev, spec.label_list, TextTrainConfig(epochs=5)), d


class TestEmbedAndPredict:
    def test_single_token_embedding(self, model):
        m, _ = model
        tok = m.vocab.tokens[0]
        assert np.array_equal(embed_text(tok, m.params, m.vocab), m.params.A[0])

    def test_all_oov_zero(self, model):
        m, _ = model
        assert np.array_equal(m.embed("qqq zzz"), np.zeros(m.params.d))

    def test_embed_then_forward_equals_predict(self, model):
        m, d = model
        for p in d.test[:20]:
            top = m.predict_topk(p.text, 1)[0]
            probs = forward(m.embed(p.text), m.params)
            assert top == (m.labels[int(np.argmax(probs))], pytest.approx(float(probs.max()), abs=1e-15))

    def test_embed_many_matches_single(self, model):
        m, d = model
        texts = [p.text for p in d.test[:10]]
        np.testing.assert_allclose(m.embed_many(texts), np.vstack([m.embed(t) for t in texts]), atol=1e-15)

    def test_l2_flag(self, model):
        m, d = model
        m2 = TextModel(m.vocab, m.params, m.labels, l2_normalize=True)
        assert np.linalg.norm(m2.embed(d.test[0].text)) == pytest.approx(1.0)

    def test_topk_full_permutation(self, model):
        m, d = model
        ranked = m.predict_topk(d.test[0].text, len(m.labels))
        assert sorted(lab for lab, _ in ranked) == sorted(m.labels)
        probs = [p for _, p in ranked]
        assert probs == sorted(probs, reverse=True)

    def test_topk_ties_follow_label_order(self, model):
        m, _ = model
        flat = TextModelParams(m.params.A, np.zeros_like(m.params.B), np.zeros(len(m.labels)))
        ranked = predict_topk_text("anything", flat, m.vocab, len(m.labels), m.labels)
        assert [lab for lab, _ in ranked] == list(m.labels)

    def test_topk_bounds(self, model):
        m, _ = model
        with pytest.raises(ValueError):
            m.predict_topk("x", 0)

    def test_save_load_bit_exact(self, model, tmp_path):
        m, _ = model
        m.save(tmp_path / "t.npz")
        back = TextModel.load(tmp_path / "t.npz")
        assert back.vocab == m.vocab and back.labels == m.labels
        for name in ("A", "B", "b_out"):
            assert getattr(back.params, name).tobytes() == getattr(m.params, name).tobytes()
