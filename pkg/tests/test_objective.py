import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from avpgate.diffcore import Tensor, finite_diff_check
from avpgate.errors import ConfigError, DomainError, EmptyQueueError, LabelError, ShapeError, ZeroVectorError
from avpgate.objective import (ContrastState, FocalParams, LossWeights, consistency_loss, contrastive_loss,
                               cosine_similarity, difficulty_weights, draw_without_replacement, focal_loss,
                               sample_hard_negatives, temperature, total_loss, update_queues)
from avpgate.rng import PortableRng

def simplices(min_size=2, max_size=5):
    return st.lists(st.floats(0.01, 1.0), min_size=min_size, max_size=max_size).map(lambda v: np.array(v) / sum(v))


simplex = simplices()


def unit(theta):
    return np.array([math.cos(theta), math.sin(theta)])


# cosine ----------------------------------------------------------------------

def test_cosine_cases():
    assert cosine_similarity([3.0, 4.0], [3.0, 4.0]) == pytest.approx(1.0, abs=1e-15)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 0], [1, 1]) == pytest.approx(0.7071068, abs=1e-7)


def test_cosine_zero_vector():
    with pytest.raises(ZeroVectorError):
        cosine_similarity([0, 0], [1, 0])


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_cosine_bounded(x, y):
    if np.linalg.norm(x) < 1e-3 or np.linalg.norm(y) < 1e-3:
        return
    assert -1.0 <= cosine_similarity(x, y) <= 1.0


# queues ----------------------------------------------------------------------

def test_prototype_is_mean():
    s = update_queues(ContrastState(), np.array([[1.0, 0.0], [0.0, 1.0]]), [1, 1])
    assert s.prototype.tolist() == [0.5, 0.5]


def test_fifo_eviction():
    s = ContrastState(pos_capacity=2)
    update_queues(s, np.array([[1.0, 0], [2.0, 0], [3.0, 0]]), [1, 1, 1])
    assert [v[0] for v in s.q_pos] == [2.0, 3.0]
    assert s.prototype.tolist() == [2.5, 0.0]


def test_negatives_routed_and_dims_checked():
    s = update_queues(ContrastState(), np.array([[1.0, 0], [0, 1.0]]), [0, 1])
    assert len(s.q_neg) == 1 and len(s.q_pos) == 1
    with pytest.raises(ShapeError):
        update_queues(s, np.ones((1, 3)), [0])


def test_queued_features_are_detached_copies():
    feats = np.array([[1.0, 2.0]])
    s = update_queues(ContrastState(), Tensor(feats, requires_grad=True), [0])
    feats[0, 0] = 99.0
    assert isinstance(s.q_neg[0], np.ndarray) and s.q_neg[0][0] == 1.0


@settings(max_examples=30)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=40), st.integers(1, 8), st.integers(1, 8))
def test_capacity_never_exceeded(labels, cp, cn):
    s = ContrastState(pos_capacity=cp, neg_capacity=cn)
    feats = np.arange(1.0, 2 * len(labels) + 1).reshape(-1, 2)
    for k, y in enumerate(labels):
        update_queues(s, feats[k:k + 1], [y])
        assert len(s.q_pos) <= cp and len(s.q_neg) <= cn
        if s.q_pos:
            np.testing.assert_allclose(s.prototype, np.mean(s.q_pos, axis=0))


# sampling --------------------------------------------------------------------

def test_empty_queue():
    with pytest.raises(EmptyQueueError):
        sample_hard_negatives(ContrastState(), 3, PortableRng(0))


def test_single_candidate_always_selected():
    s = update_queues(ContrastState(), np.array([[0.0, 1.0], [1.0, 0.0]]), [1, 0])
    for seed in range(20):
        assert sample_hard_negatives(s, 4, PortableRng(seed)).tolist() == [[1.0, 0.0]]


def test_no_prototype_means_uniform():
    w, _ = difficulty_weights(np.random.default_rng(0).normal(size=(7, 3)), None, 0.1)
    assert np.array_equal(w, np.full(7, 1 / 7))


def test_draws_are_distinct():
    rng = PortableRng(3)
    w = np.random.default_rng(3).random(20)
    for _ in range(200):
        picks = draw_without_replacement(w, 8, rng)
        assert len(set(picks)) == 8


def test_equal_difficulty_uniform_frequencies():
    # five negatives at the same angle to the prototype
    s = ContrastState(sharpness=0.1)
    negs = np.array([unit(a) for a in (0.5, -0.5, 0.5, -0.5, 0.5)]) * np.array([[1], [2], [3], [4], [5]])
    update_queues(s, np.vstack([[1.0, 0.0], negs]), [1, 0, 0, 0, 0, 0])
    rng = PortableRng(11)
    counts = np.zeros(5)
    for _ in range(100_000):
        counts[draw_without_replacement(negative_weights_of(s), 1, rng)[0]] += 1
    assert stats.chisquare(counts).pvalue > 0.001


def negative_weights_of(s):
    return difficulty_weights(np.asarray(s.q_neg), s.prototype, s.sharpness)[0]


def test_harder_negative_frequency():
    expected = math.exp(9) / (math.exp(9) + math.exp(1))
    s = ContrastState(sharpness=0.1)
    update_queues(s, np.vstack([[1.0, 0.0], unit(math.acos(0.9)), unit(math.acos(0.1))]), [1, 0, 0])
    w = negative_weights_of(s)
    assert w[0] == pytest.approx(expected, rel=1e-12)
    assert round(expected, 5) == 0.99966
    rng = PortableRng(12)
    n = 100_000
    hits = sum(draw_without_replacement(w, 1, rng)[0] == 0 for _ in range(n))
    sd = math.sqrt(n * expected * (1 - expected))
    assert abs(hits - n * expected) <= 4 * sd


# contrastive loss ------------------------------------------------------------

def test_no_negatives_gives_zero():
    a = np.random.default_rng(0).normal(size=(3, 4))
    assert contrastive_loss(a, a[::-1], np.zeros((3, 0, 4)), tau=0.3).data == 0.0


@pytest.mark.parametrize("tau", [0.05, 0.5, 1.0])
def test_symmetric_case_is_ln2(tau):
    a, p, n = unit(0.0)[None], unit(0.7)[None], unit(-0.7)[None, None]
    assert float(contrastive_loss(a, p, n, tau=tau).data) == pytest.approx(math.log(2), abs=1e-12)


def test_hand_case():
    a, p, n = unit(0.0)[None], unit(0.0)[None], unit(math.pi)[None, None]
    loss = float(contrastive_loss(a, p, n, tau=1.0).data)
    assert loss == pytest.approx(math.log1p(math.exp(-2)), abs=1e-12)
    assert round(loss, 6) == 0.126928


def test_bad_tau():
    with pytest.raises(DomainError):
        contrastive_loss(np.ones((1, 2)), np.ones((1, 2)), np.ones((1, 1, 2)), tau=0.0)


def test_temperature_clamped():
    assert float(temperature(Tensor(np.array([math.log(1e-5)]))).data[0]) == 0.01
    assert float(temperature(Tensor(np.array([3.0]))).data[0]) == 1.0


@settings(max_examples=40)
@given(st.lists(st.floats(-math.pi, math.pi), min_size=1, max_size=6), st.floats(0.05, 1.0))
def test_contrastive_nonneg_and_monotone(neg_angles, tau):
    negs = np.array([unit(t) for t in neg_angles])[None]
    a = unit(0.0)[None]
    prev = None
    for theta in np.linspace(math.pi, 0, 12):  # s_ap = cos(theta) increases
        loss = float(contrastive_loss(a, unit(theta)[None], negs, tau=tau).data)
        assert loss >= 0
        if prev is not None:
            assert loss <= prev + 1e-12
        prev = loss


def test_contrastive_gradients():
    rng = np.random.default_rng(1)

    def f(ts):
        return contrastive_loss(ts["a"], ts["p"], ts["n"], log_temperature=ts["t"])
    params = {"a": rng.normal(size=(3, 4)), "p": rng.normal(size=(3, 4)), "n": rng.normal(size=(3, 2, 4)),
              "t": np.array([math.log(0.3)])}
    assert finite_diff_check(f, params) <= 1e-4


# focal -----------------------------------------------------------------------

def test_focal_hand_cases():
    assert float(focal_loss(np.array([[0.5, 0.5]]), [0], FocalParams(0.0)).data) == pytest.approx(math.log(2))
    assert float(focal_loss(np.array([[0.0, 1.0]]), [1]).data) == 0.0
    v = float(focal_loss(np.array([[0.1, 0.9]]), [1], FocalParams(2.0)).data)
    assert v == pytest.approx(0.01 * -math.log(0.9), rel=1e-12)
    assert round(v, 7) == 0.0010536


def test_focal_labels_checked():
    with pytest.raises(LabelError):
        focal_loss(np.array([[0.5, 0.5]]), [2])


def test_focal_alpha_from_counts():
    fp = FocalParams.from_counts([30, 10])
    assert fp.alpha == pytest.approx((0.5, 1.5))
    with pytest.raises(ConfigError):
        FocalParams.from_counts([3, 0])


@settings(max_examples=30)
@given(st.lists(simplices(3, 3), min_size=1, max_size=6), st.data())
def test_focal_gamma0_is_cross_entropy(rows, data):
    probs = np.array(rows)
    labels = data.draw(st.lists(st.integers(0, 2), min_size=len(rows), max_size=len(rows)))
    ce = -np.mean(np.log(probs[np.arange(len(rows)), labels]))
    assert abs(float(focal_loss(probs, labels, FocalParams(0.0)).data) - ce) <= 1e-12


def test_focal_gradients():
    rng = np.random.default_rng(2)
    probs = rng.dirichlet(np.ones(3), size=4)
    f = lambda ts: focal_loss(ts["p"], [0, 2, 1, 1], FocalParams(2.0, (1.0, 2.0, 0.5)))  # noqa: E731
    assert finite_diff_check(f, {"p": probs}) <= 1e-4


# consistency -----------------------------------------------------------------

def test_consistency_hand_cases():
    p = np.array([[0.8, 0.2]])
    assert float(consistency_loss(p, p).data) == 0.0
    v = float(consistency_loss(p, p[:, ::-1]).data)
    assert v == pytest.approx(0.6 * math.log(4), rel=1e-12)
    assert round(v, 6) == 0.831777


@settings(max_examples=60)
@given(simplex, st.data())
def test_consistency_symmetric_nonneg(p, data):
    q = data.draw(simplex.filter(lambda v: len(v) == len(p)))
    a = float(consistency_loss(p[None], q[None]).data)
    b = float(consistency_loss(q[None], p[None]).data)
    assert a == b and a >= 0
    assert (a == 0) == np.array_equal(p, q) or a < 1e-15


def test_consistency_gradients():
    rng = np.random.default_rng(3)
    params = {"p": rng.dirichlet(np.ones(3), size=2), "q": rng.dirichlet(np.ones(3), size=2)}
    assert finite_diff_check(lambda ts: consistency_loss(ts["p"], ts["q"]), params) <= 1e-4


# total -----------------------------------------------------------------------

def test_total_cases():
    assert total_loss(0.1, 0.2, 0.3, LossWeights(0.0, 0.0)) == 0.2
    assert total_loss(0.1, 0.2, 0.3, LossWeights(1.0, 1.0)) == pytest.approx(0.6, abs=1e-15)
    with pytest.raises(ConfigError):
        LossWeights(-0.1, 0.1)
    with pytest.raises(ConfigError):
        LossWeights(0.1, -0.1)
