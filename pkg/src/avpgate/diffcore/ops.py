"""Network building blocks on top of the tensor primitives."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from . import kernels
from .tensor import Tape, Tensor, _make, as_tensor, concat, matmul, mul, relu, softmax, tanh, sigmoid
from .tensor import sum as tsum

GATES = ("f", "i", "C", "o")


def _batched(x):
    """Lift an unbatched (L, D) tensor to (1, L, D); report whether we did."""
    x = as_tensor(x)
    if x.ndim == 2:
        return _make(x.data[None], (x,), lambda g: x._accum(g[0])), True
    if x.ndim != 3:
        raise ShapeError(f"expected (L, D) or (B, L, D), got {x.shape}")
    return x, False


def _unbatch(t):
    return _make(t.data[0], (t,), lambda g: t._accum(g[None]))


def conv1d(x, W, b, activation="relu"):
    """Valid 1-D convolution: ``c[j, k] = f(sum_i W[i] . x[j + i] + b[k])``.

    x: (L, Din) or (B, L, Din); W: (H, Din, K); b: (K,).
    """
    x, squeeze = _batched(x)
    W, b = as_tensor(W), as_tensor(b)
    H, Din, K = W.shape
    B, L, D = x.shape
    if D != Din:
        raise ShapeError(f"conv1d input dim {D} != kernel dim {Din}")
    if L < H:
        raise ShapeError(f"conv1d needs length >= {H}, got {L}")
    Lout = L - H + 1
    # (B, Lout, Din, H) -> (B, Lout, H, Din)
    cols = sliding_window_view(x.data, H, axis=1).transpose(0, 1, 3, 2).reshape(B, Lout, H * Din)
    Wr = W.data.reshape(H * Din, K)
    y = cols @ Wr + b.data

    def bw(g):
        if W.requires_grad:
            W._accum((cols.reshape(-1, H * Din).T @ g.reshape(-1, K)).reshape(H, Din, K))
        if b.requires_grad:
            b._accum(g.sum(axis=(0, 1)))
        if x.requires_grad:
            dcols = (g @ Wr.T).reshape(B, Lout, H, Din)
            dx = np.zeros_like(x.data)
            for i in range(H):
                dx[:, i:i + Lout] += dcols[:, :, i]
            x._accum(dx)
    out = _make(y, (x, W, b), bw)
    if activation == "relu":
        out = relu(out)
    return _unbatch(out) if squeeze else out


def lstm_sequence(gx, U, mask=None, reverse=False):
    """Run the recurrence over precomputed input projections.

    gx: (B, L, 4H) holding ``W_x x_t + b`` for gates [f, i, C, o];
    U: (H, 4H) recurrent weights. Positions with mask 0 leave the state
    untouched, so right-padding is transparent in both directions.
    """
    gx, U = as_tensor(gx), as_tensor(U)
    B, L, H4 = gx.shape
    if U.shape != (H4 // 4, H4) or H4 % 4:
        raise ShapeError(f"recurrent weights {U.shape} do not match projections {gx.shape}")
    m = np.ones((B, L)) if mask is None else np.asarray(mask, dtype=np.float64)
    g_in, m_in = (gx.data[:, ::-1], m[:, ::-1]) if reverse else (gx.data, m)
    hs, cs, acts = kernels.lstm_forward(g_in, U.data, m_in)
    y = hs[:, ::-1] if reverse else hs

    def bw(g):
        dh = g[:, ::-1] if reverse else g
        dgx, dU = kernels.lstm_backward(np.ascontiguousarray(dh), U.data, m_in, hs, cs, acts)
        if gx.requires_grad:
            gx._accum(dgx[:, ::-1] if reverse else dgx)
        if U.requires_grad:
            U._accum(dU)
    return _make(np.ascontiguousarray(y), (gx, U), bw)


def lstm_weights(p):
    """Split per-gate ``W_*`` of shape (Dh + Din, Dh) into recurrent and input parts.

    Rows ``[:Dh]`` multiply ``h_{t-1}``, rows ``[Dh:]`` multiply ``x_t``.
    Returns ``(U, Wx, b)`` with gates stacked along the last axis.
    """
    Dh = p["W_f"].shape[1]
    Wcat = concat([p[f"W_{k}"] for k in GATES], axis=1)
    bcat = concat([p[f"b_{k}"] for k in GATES], axis=0)
    return Wcat[:Dh], Wcat[Dh:], bcat


def lstm_step(x_t, h_prev, C_prev, p):
    """One LSTM cell update written directly with primitives."""
    x_t, h_prev, C_prev = as_tensor(x_t), as_tensor(h_prev), as_tensor(C_prev)
    Dh = p["W_f"].shape[1]
    if h_prev.shape[-1] != Dh or C_prev.shape[-1] != Dh or p["W_f"].shape[0] != Dh + x_t.shape[-1]:
        raise ShapeError("lstm_step shapes inconsistent with hidden size")
    z = concat([h_prev, x_t], axis=-1)
    f = sigmoid(matmul(z, p["W_f"]) + p["b_f"])
    i = sigmoid(matmul(z, p["W_i"]) + p["b_i"])
    c_tilde = tanh(matmul(z, p["W_C"]) + p["b_C"])
    C = f * C_prev + i * c_tilde
    o = sigmoid(matmul(z, p["W_o"]) + p["b_o"])
    return o * tanh(C), C


def bilstm(x, p_fwd, p_bwd, mask=None):
    """Forward and backward passes concatenated per position: (.., L, 2Dh)."""
    x, squeeze = _batched(x)
    if x.shape[1] < 1:
        raise ShapeError("bilstm needs at least one position")
    halves = []
    for p, rev in ((p_fwd, False), (p_bwd, True)):
        U, Wx, b = lstm_weights(p)
        if Wx.shape[0] != x.shape[-1]:
            raise ShapeError(f"lstm input dim {Wx.shape[0]} != {x.shape[-1]}")
        halves.append(lstm_sequence(matmul(x, Wx) + b, U, mask, reverse=rev))
    out = concat(halves, axis=-1)
    return _unbatch(out) if squeeze else out


def attention_pool(hs, W, w, mask=None):
    """Additive pooling: ``e_t = w . tanh(W^T h_t)``, ``alpha = softmax(e)``.

    Returns ``(pooled, alpha)``; masked positions get alpha exactly 0.
    """
    hs, squeeze = _batched(hs)
    if hs.shape[1] < 1:
        raise ShapeError("attention_pool needs at least one position")
    if as_tensor(W).shape[0] != hs.shape[-1]:
        raise ShapeError(f"attention weights {as_tensor(W).shape} vs states {hs.shape}")
    e = matmul(tanh(matmul(hs, W)), w)
    alpha = softmax(e, axis=-1, mask=mask)
    B, L, D = hs.shape
    pooled = tsum(mul(hs, _expand_last(alpha)), axis=1)
    if squeeze:
        return _unbatch(pooled), _unbatch(alpha)
    return pooled, alpha


def _expand_last(a):
    return _make(a.data[..., None], (a,), lambda g: a._accum(g[..., 0]))


def linear(x, W, b=None):
    y = matmul(x, W)
    return y if b is None else y + b


def dropout(x, rate, rng, training):
    if not training or rate <= 0.0:
        return x
    keep = (rng.uniform_array(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


def finite_diff_check(f, params, eps=1e-5, coords=None):
    """Max relative error between tape gradients and central differences.

    ``f`` maps a dict of tensors to a scalar tensor. ``coords`` optionally
    maps parameter names to lists of flat indices (default: all).
    """
    ts = {k: Tensor(np.array(v.data if isinstance(v, Tensor) else v, dtype=np.float64),
                    requires_grad=True, name=k) for k, v in params.items()}
    with Tape() as tape:
        loss = f(ts)
    tape.backward(loss)
    worst = 0.0
    for k, t in ts.items():
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        idx = range(flat.size) if coords is None or k not in coords else coords[k]
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            hi = float(f(ts).data)
            flat[j] = orig - eps
            lo = float(f(ts).data)
            flat[j] = orig
            central = (hi - lo) / (2.0 * eps)
            err = abs(grad.reshape(-1)[j] - central) / max(1e-8, abs(central))
            worst = max(worst, err)
    return worst
