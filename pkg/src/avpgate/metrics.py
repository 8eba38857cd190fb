"""Classification metrics, ROC/PR areas and per-residue composition statistics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigError, EmptyError, SingleClassError, VarianceError
from .seqio import AA_INDEX, ALPHABET


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_labels(cls, y_true, y_pred, positive=1):
        t = np.asarray(y_true) == positive
        p = np.asarray(y_pred) == positive
        return cls(int((t & p).sum()), int((~t & ~p).sum()), int((~t & p).sum()), int((t & ~p).sum()))


@dataclass
class ScoredPredictions:
    ids: list
    labels: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or len(self.probs) != len(self.labels):
            raise ConfigError("probs must be an (N, C) array aligned with labels")
        if len(self.probs) and np.abs(self.probs.sum(axis=1) - 1.0).max() > 1e-6:
            raise ConfigError("probability rows must sum to 1")

    @property
    def scores(self):
        return self.probs[:, 1]

    @property
    def predicted(self):
        return self.probs.argmax(axis=1)


def _ratio(num, den):
    return (num / den, False) if den else (float("nan"), True)


def binary_metrics(c):
    """ACC, SN, SP, MCC, G-mean, F1 (and precision) from confusion counts.

    Undefined ratios come back as NaN with ``<name>_undefined`` set; MCC with a
    zero denominator is reported as 0 and flagged.
    """
    if c.total == 0:
        raise EmptyError("all confusion counts are zero")
    sn, sn_u = _ratio(c.tp, c.tp + c.fn)
    sp, sp_u = _ratio(c.tn, c.tn + c.fp)
    pre, pre_u = _ratio(c.tp, c.tp + c.fp)
    f1, f1_u = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    mcc = (c.tp * c.tn - c.fp * c.fn) / math.sqrt(den) if den else 0.0
    return {
        "ACC": (c.tp + c.tn) / c.total,
        "SN": sn,
        "SP": sp,
        "PRE": pre,
        "MCC": mcc,
        "G-mean": math.sqrt(sn * sp) if not (sn_u or sp_u) else float("nan"),
        "F1": f1,
        "SN_undefined": sn_u,
        "SP_undefined": sp_u,
        "PRE_undefined": pre_u,
        "F1_undefined": f1_u,
        "MCC_zero_denominator": den == 0,
    }


def multiclass_mcc(y_true, y_pred, class_count):
    """Gorodkin's R_K statistic; equals binary MCC when ``class_count`` is 2."""
    cm = confusion_matrix(y_true, y_pred, class_count).astype(np.float64)
    s = cm.sum()
    c = np.trace(cm)
    t = cm.sum(axis=1)
    p = cm.sum(axis=0)
    den = math.sqrt((s * s - p @ p) * (s * s - t @ t))
    return float((c * s - t @ p) / den) if den else 0.0


def confusion_matrix(y_true, y_pred, class_count):
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def _scores_labels(sp, labels=None):
    if isinstance(sp, ScoredPredictions):
        return sp.scores, sp.labels
    return np.asarray(sp, dtype=np.float64), np.asarray(labels, dtype=np.int64)


def _tie_groups(scores, labels):
    """Cumulative (tp, fp) after each distinct score, scanning high to low."""
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    ends = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y == 1)[ends]
    fp = np.cumsum(y != 1)[ends]
    return tp, fp, s[ends]


def auroc(sp, labels=None):
    """Trapezoidal ROC area with tied scores grouped into one step.

    Accumulated in integers, so it equals the pairwise concordance count
    (ties scoring one half) divided by ``P * N`` exactly.
    """
    scores, y = _scores_labels(sp, labels)
    P, N = int((y == 1).sum()), int((y != 1).sum())
    if P == 0 or N == 0:
        raise SingleClassError("AUROC needs both classes")
    tp, fp, _ = _tie_groups(scores, y)
    tp_prev = np.r_[0, tp[:-1]]
    fp_prev = np.r_[0, fp[:-1]]
    twice = int(((fp - fp_prev) * (tp + tp_prev)).sum())
    return twice / (2 * P * N)


def auprc(sp, labels=None):
    """Step-wise average precision: sum of (R_k - R_{k-1}) * P_k over thresholds.

    Summed as an exact fraction and rounded once at the end.
    """
    scores, y = _scores_labels(sp, labels)
    P = int((y == 1).sum())
    if P == 0:
        raise SingleClassError("AUPRC needs at least one positive")
    tp, fp, _ = _tie_groups(scores, y)
    tp_prev = np.r_[0, tp[:-1]]
    total = Fraction(0)
    for t, f, tprev in zip(tp.tolist(), fp.tolist(), tp_prev.tolist()):
        if t > tprev:
            total += Fraction((t - tprev) * t, t + f)
    return float(total / P)


def roc_curve(sp, labels=None):
    scores, y = _scores_labels(sp, labels)
    P, N = int((y == 1).sum()), int((y != 1).sum())
    if P == 0 or N == 0:
        raise SingleClassError("ROC curve needs both classes")
    tp, fp, thr = _tie_groups(scores, y)
    return np.r_[0.0, fp / N], np.r_[0.0, tp / P], np.r_[np.inf, thr]


def pr_curve(sp, labels=None):
    scores, y = _scores_labels(sp, labels)
    P = int((y == 1).sum())
    if P == 0:
        raise SingleClassError("PR curve needs at least one positive")
    tp, fp, thr = _tie_groups(scores, y)
    return tp / P, tp / (tp + fp), thr


def macro_metrics(y_true, y_pred, class_count):
    """MacroP, MacroR and MacroF (mean of per-class F1)."""
    if class_count < 2:
        raise ConfigError("class_count must be >= 2")
    cm = confusion_matrix(y_true, y_pred, class_count)
    ps, rs, fs = [], [], []
    for c in range(class_count):
        tp = cm[c, c]
        pred_c = cm[:, c].sum()
        true_c = cm[c, :].sum()
        if pred_c == 0 and true_c == 0:
            warnings.warn(f"class {c} absent from truth and predictions; scored as 0", stacklevel=2)
        p = tp / pred_c if pred_c else 0.0
        r = tp / true_c if true_c else 0.0
        ps.append(p)
        rs.append(r)
        fs.append(2 * p * r / (p + r) if p + r else 0.0)
    return {"MacroP": float(np.mean(ps)), "MacroR": float(np.mean(rs)), "MacroF": float(np.mean(fs)),
            "per_class": {"precision": ps, "recall": rs, "f1": fs}}


def evaluate_predictions(sp, class_count=None):
    """Metrics document for a set of scored predictions."""
    C = class_count or sp.probs.shape[1]
    pred = sp.predicted
    out = {"n": int(len(sp.labels)), "class_count": C, "MCC_multiclass": multiclass_mcc(sp.labels, pred, C)}
    if C == 2:
        out.update({k: v for k, v in binary_metrics(ConfusionCounts.from_labels(sp.labels, pred)).items()})
        try:
            out["AUROC"] = auroc(sp)
            out["AUPRC"] = auprc(sp)
        except SingleClassError as exc:
            out["AUROC"] = out["AUPRC"] = None
            out["curve_note"] = str(exc)
    macro = macro_metrics(sp.labels, pred, C)
    out.update({k: macro[k] for k in ("MacroP", "MacroR", "MacroF")})
    return out


# composition statistics ----------------------------------------------------

def _betacf(a, b, x, max_iter=300, eps=1e-15):
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def betainc_reg(a, b, x, y=None):
    """Regularised incomplete beta I_x(a, b) by continued fraction.

    ``y`` is ``1 - x``; pass it when it can be formed without cancellation.
    """
    y = 1.0 - x if y is None else y
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    ln_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log(y)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(ln_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(ln_front) * _betacf(b, a, y) / b


def t_sf_two_sided(t, df):
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    t2 = t * t
    return betainc_reg(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))


def welch_t(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise VarianceError("each group needs at least two sequences")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        return (0.0, float("nan"), 1.0) if diff == 0 else (math.copysign(math.inf, diff), float("nan"), 0.0)
    t = diff / math.sqrt(se2)
    df = se2 * se2 / (va * va / (len(a) - 1) + vb * vb / (len(b) - 1))
    return t, df, t_sf_two_sided(t, df)


def stars(p):
    return "***" if p < 0.001 else "**" if p < 0.01 else "*" if p < 0.05 else ""


def _composition(seqs):
    rows = np.zeros((len(seqs), 20))
    for k, s in enumerate(seqs):
        r = getattr(s, "residues", s)
        for aa in r:
            rows[k, AA_INDEX[aa]] += 1
        rows[k] /= len(r)
    return rows


def composition_analysis(group_a, group_b, eps=1e-6):
    """Per-residue mean frequency, log2 fold change and Welch t-test."""
    if len(group_a) < 2 or len(group_b) < 2:
        raise VarianceError("each group needs at least two sequences")
    A, B = _composition(group_a), _composition(group_b)
    out = []
    for j, aa in enumerate(ALPHABET):
        t, df, p = welch_t(A[:, j], B[:, j])
        ma, mb = A[:, j].mean(), B[:, j].mean()
        out.append({"residue": aa, "mean_a": ma, "mean_b": mb,
                    "log2_fold_change": math.log2((ma + eps) / (mb + eps)),
                    "t_statistic": t, "df": df, "p_value": p, "significance": stars(p)})
    return out
