"""Training objective: queue-based hard-negative contrastive loss, focal
classification loss and a symmetric-KL consistency term."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .diffcore.tensor import (Tensor, as_tensor, clamp, concat, exp, log, logsumexp, mean, mul, power,
                              reshape, sqrt, sub)
from .diffcore.tensor import sum as tsum
from .errors import ConfigError, DomainError, EmptyQueueError, LabelError, ShapeError, ZeroVectorError

TAU_MIN, TAU_MAX = 0.01, 1.0
PROB_FLOOR = 1e-12


def cosine_similarity(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ZeroVectorError("cosine similarity of a zero vector")
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


@dataclass(frozen=True)
class LossWeights:
    contrastive: float = 0.5
    consistency: float = 0.1

    def __post_init__(self):
        if self.contrastive < 0 or self.consistency < 0:
            raise ConfigError("loss weights must be >= 0")


@dataclass(frozen=True)
class FocalParams:
    gamma: float = 2.0
    alpha: tuple | None = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("focal gamma must be >= 0")
        if self.alpha is not None:
            object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
            if min(self.alpha) <= 0:
                raise ConfigError("focal alpha components must be > 0")

    @classmethod
    def from_counts(cls, counts, gamma=2.0):
        """Inverse class frequency, scaled to mean 1."""
        counts = np.asarray(counts, dtype=np.float64)
        if (counts <= 0).any():
            raise ConfigError("every class needs at least one training sample")
        inv = 1.0 / counts
        return cls(gamma, tuple(inv / inv.mean()))


@dataclass(frozen=True)
class ContrastConfig:
    pos_capacity: int = 512
    neg_capacity: int = 1024
    k_neg: int = 16
    sharpness: float = 0.1
    lambda1: float = 0.5
    lambda2: float = 0.1
    focal_gamma: float = 2.0

    def __post_init__(self):
        if self.pos_capacity < 1 or self.neg_capacity < 1:
            raise ConfigError("contrast queue capacities must be >= 1")
        if self.k_neg < 0 or self.sharpness <= 0:
            raise ConfigError("contrast.k_neg must be >= 0 and contrast.sharpness > 0")
        if self.focal_gamma < 0:
            raise ConfigError("contrast.focal_gamma must be >= 0")
        LossWeights(self.lambda1, self.lambda2)

    @property
    def weights(self):
        return LossWeights(self.lambda1, self.lambda2)

    def new_state(self):
        return ContrastState(self.pos_capacity, self.neg_capacity, self.k_neg, self.sharpness)


class ContrastState:
    """Detached feature queues with a positive prototype.

    With an empty positive queue the prototype is undefined and negative
    sampling falls back to uniform weights.
    """

    def __init__(self, pos_capacity=512, neg_capacity=1024, k_neg=16, sharpness=0.1):
        if pos_capacity < 1 or neg_capacity < 1 or k_neg < 0 or sharpness <= 0:
            raise ConfigError("invalid contrast settings")
        self.q_pos = deque(maxlen=pos_capacity)
        self.q_neg = deque(maxlen=neg_capacity)
        self.k_neg = k_neg
        self.sharpness = sharpness
        self.dim = None
        self.prototype = None

    def _check(self, v):
        if self.dim is None:
            self.dim = v.shape[-1]
        elif v.shape[-1] != self.dim:
            raise ShapeError(f"feature dim {v.shape[-1]} != queue dim {self.dim}")


def update_queues(state, features, labels, positive_label=1):
    feats = np.array(getattr(features, "data", features), dtype=np.float64, copy=True)
    if feats.ndim == 1:
        feats = feats[None]
    if len(feats) != len(labels):
        raise ShapeError("features and labels differ in length")
    for v, y in zip(feats, labels):
        state._check(v)
        (state.q_pos if y == positive_label else state.q_neg).append(v)
    state.prototype = np.mean(state.q_pos, axis=0) if state.q_pos else None
    return state


def difficulty_weights(candidates, prototype, sharpness):
    """Sampling weights ``softmax(d / sharpness)`` with ``d`` the cosine
    similarity of each candidate to the prototype (uniform without one)."""
    cands = np.asarray(candidates, dtype=np.float64)
    if prototype is None:
        return np.full(len(cands), 1.0 / len(cands)), np.zeros(len(cands))
    pn = np.linalg.norm(prototype)
    nn = np.linalg.norm(cands, axis=1)
    if pn == 0 or (nn == 0).any():
        raise ZeroVectorError("zero vector among negatives or prototype")
    d = np.clip(cands @ prototype / (nn * pn), -1.0, 1.0)
    z = d / sharpness
    w = np.exp(z - z.max())
    return w / w.sum(), d


def negative_weights(state):
    return difficulty_weights(np.asarray(state.q_neg), state.prototype, state.sharpness)


def draw_without_replacement(weights, k, rng):
    """Sequential weighted draws; each pick is removed before the next."""
    w = np.array(weights, dtype=np.float64)
    k = min(k, len(w))
    picks = []
    for _ in range(k):
        cum = np.cumsum(w)
        u = rng.uniform() * cum[-1]
        j = min(int(np.searchsorted(cum, u, side="right")), len(w) - 1)
        while w[j] == 0:  # guard against landing on a removed slot at a boundary
            j -= 1
        picks.append(j)
        w[j] = 0.0
    return picks


def sample_hard_negatives(state, k, rng):
    """``min(k, |q_neg|)`` queued negatives, harder ones more likely."""
    if not state.q_neg:
        raise EmptyQueueError("negative queue is empty")
    w, _ = negative_weights(state)
    idx = draw_without_replacement(w, k, rng)
    return np.asarray(state.q_neg)[idx]


def _unit_rows(x):
    x = as_tensor(x)
    norm = sqrt(tsum(mul(x, x), axis=-1, keepdims=True))
    if (norm.data == 0).any():
        raise ZeroVectorError("zero feature vector in contrastive loss")
    return x / norm


def temperature(log_temperature):
    return clamp(exp(log_temperature), TAU_MIN, TAU_MAX)


def contrastive_loss(anchors, positives, negatives, tau=None, log_temperature=None):
    """InfoNCE over one positive and K negatives per anchor.

    anchors, positives: (N, D); negatives: (N, K, D), typically detached
    queue entries. Give either a fixed ``tau`` or a ``log_temperature``
    tensor (clamped to [0.01, 1] after exponentiation).
    """
    a, p = _unit_rows(anchors), _unit_rows(positives)
    N, D = a.shape
    negatives = as_tensor(negatives)
    if negatives.ndim != 3 or negatives.shape[0] != N or (negatives.shape[1] and negatives.shape[2] != D):
        raise ShapeError(f"negatives {negatives.shape} incompatible with anchors {a.shape}")
    if tau is None:
        t = reshape(temperature(log_temperature), ())
    else:
        if tau <= 0:
            raise DomainError(f"temperature must be > 0, got {tau}")
        t = Tensor(float(tau))
    s_ap = tsum(mul(a, p), axis=-1)
    cols = [reshape(s_ap, (N, 1))]
    if negatives.shape[1]:
        n = _unit_rows(negatives)
        cols.append(tsum(mul(reshape(a, (N, 1, D)), n), axis=-1))
    logits = concat(cols, axis=1) / t
    return mean(sub(logsumexp(logits, axis=1), s_ap / t))


def focal_loss(probs, labels, fp=FocalParams()):
    probs = as_tensor(probs)
    N, C = probs.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (N,) or (labels < 0).any() or (labels >= C).any():
        raise LabelError(f"labels must be {N} integers in 0..{C - 1}")
    alpha = np.ones(C) if fp.alpha is None else np.asarray(fp.alpha)
    if alpha.shape != (C,):
        raise ConfigError(f"focal alpha has {alpha.size} entries for {C} classes")
    pt = clamp(probs[np.arange(N), labels], PROB_FLOOR, 1.0)
    w = power(1.0 - pt, fp.gamma)
    return mean(mul(alpha[labels], mul(w, -log(pt))))


def consistency_loss(p, p_aug):
    """Symmetric KL, written as ``0.5 * sum((p - q) * (log p - log q))`` so
    swapping the arguments gives a bit-identical value."""
    p = clamp(as_tensor(p), PROB_FLOOR, None)
    q = clamp(as_tensor(p_aug), PROB_FLOOR, None)
    per = tsum(mul(p - q, log(p) - log(q)), axis=-1)
    return mul(mean(per), 0.5)


def total_loss(l_con, l_cls, l_cons, w=LossWeights()):
    return w.contrastive * l_con + l_cls + w.consistency * l_cons
