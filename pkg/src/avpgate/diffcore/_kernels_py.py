"""Reference numpy kernels; used when the compiled extension is unavailable."""

import numpy as np


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_forward(gx, U, mask):
    """Masked LSTM recurrence over time.

    gx: (B, L, 4H) input projections plus bias, gate order [f, i, g, o].
    U: (H, 4H) recurrent weights. mask: (B, L) of 0/1.
    Rows with mask 0 carry (h, c) through unchanged.
    Returns hs, cs (B, L, H) and post-activation gates acts (B, L, 4H).
    """
    B, L, H4 = gx.shape
    H = H4 // 4
    hs = np.zeros((B, L, H))
    cs = np.zeros((B, L, H))
    acts = np.zeros((B, L, H4))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(L):
        z = gx[:, t] + h @ U
        a = acts[:, t]
        a[:, :2 * H] = _sig(z[:, :2 * H])
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        a[:, 3 * H:] = _sig(z[:, 3 * H:])
        f, i, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        m = mask[:, t:t + 1]
        c = np.where(m > 0, c_new, c)
        h = np.where(m > 0, h_new, h)
        hs[:, t] = h
        cs[:, t] = c
    return hs, cs, acts


def lstm_backward(dhs, U, mask, hs, cs, acts):
    B, L, H = hs.shape
    dgx = np.zeros((B, L, 4 * H))
    dU = np.zeros_like(U)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        m = mask[:, t:t + 1]
        dh = dhs[:, t] + dh_next
        dc = dc_next
        h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, H))
        c_prev = cs[:, t - 1] if t > 0 else np.zeros((B, H))
        a = acts[:, t]
        f, i, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = np.tanh(cs[:, t])
        do = dh * tc
        dct = dc + dh * o * (1.0 - tc * tc)
        dz = np.empty((B, 4 * H))
        dz[:, :H] = dct * c_prev * f * (1.0 - f)
        dz[:, H:2 * H] = dct * g * i * (1.0 - i)
        dz[:, 2 * H:3 * H] = dct * i * (1.0 - g * g)
        dz[:, 3 * H:] = do * o * (1.0 - o)
        dz *= m
        dgx[:, t] = dz
        dU += h_prev.T @ dz
        dh_next = dz @ U.T + (1.0 - m) * dh
        dc_next = m * dct * f + (1.0 - m) * dc
    return dgx, dU


_CRC_TABLE = None


def _crc_table():
    global _CRC_TABLE
    if _CRC_TABLE is None:
        poly = 0xC96C5795D7870F42
        table = []
        for n in range(256):
            c = n
            for _ in range(8):
                c = (c >> 1) ^ poly if c & 1 else c >> 1
            table.append(c)
        _CRC_TABLE = table
    return _CRC_TABLE


def crc64(data, crc=0):
    """CRC-64/XZ (ECMA-182 polynomial, reflected, init and xorout all ones)."""
    table = _crc_table()
    c = crc ^ 0xFFFFFFFFFFFFFFFF
    for b in bytes(data):
        c = table[(c ^ b) & 0xFF] ^ (c >> 8)
    return c ^ 0xFFFFFFFFFFFFFFFF
