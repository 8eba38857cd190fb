"""The compiled kernels must agree with the numpy reference implementation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avpgate.diffcore import _kernels_py as ref
from avpgate.diffcore import kernels

compiled = pytest.importorskip("avpgate.diffcore._kernels")


def test_backend_selected():
    assert kernels.BACKEND == "compiled"


@pytest.mark.parametrize("impl", [ref, compiled])
def test_crc64_check_value(impl):
    # CRC-64/XZ catalogue check value
    assert impl.crc64(b"123456789") == 0x995DC9BBDF1939FA
    assert impl.crc64(b"") == 0


@given(st.binary(max_size=2000), st.integers(0, 1999))
def test_crc64_parity_and_chaining(data, cut):
    cut = min(cut, len(data))
    whole = ref.crc64(data)
    assert compiled.crc64(data) == whole
    assert compiled.crc64(data[cut:], compiled.crc64(data[:cut])) == whole


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 9), st.integers(1, 6), st.integers(0, 10**6))
def test_lstm_parity(B, L, H, seed):
    rng = np.random.default_rng(seed)
    gx = rng.normal(size=(B, L, 4 * H))
    U = rng.normal(scale=0.5, size=(H, 4 * H))
    lengths = rng.integers(1, L + 1, size=B)
    mask = (np.arange(L)[None] < lengths[:, None]).astype(float)
    out_r = ref.lstm_forward(gx, U, mask)
    out_c = compiled.lstm_forward(gx, U, mask)
    for a, b in zip(out_r, out_c):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)
    dh = rng.normal(size=(B, L, H))
    back_r = ref.lstm_backward(dh, U, mask, *out_r)
    back_c = compiled.lstm_backward(dh, U, mask, *out_c)
    for a, b in zip(back_r, back_c):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-12)


def test_saturated_activations_stay_finite():
    H = 2
    gx = np.full((1, 3, 4 * H), 800.0)
    gx[..., H:2 * H] = -800.0
    hs, cs, _ = compiled.lstm_forward(gx, np.zeros((H, 4 * H)), np.ones((1, 3)))
    assert np.isfinite(hs).all() and np.isfinite(cs).all()
    np.testing.assert_allclose(hs, ref.lstm_forward(gx, np.zeros((H, 4 * H)), np.ones((1, 3)))[0], atol=1e-15)


@pytest.mark.parametrize("impl", [ref, compiled])
@pytest.mark.parametrize("B", [1, 3])
def test_inputs_not_mutated(impl, B):
    rng = np.random.default_rng(B)
    gx, U, mask = rng.normal(size=(B, 4, 8)), rng.normal(size=(2, 8)), np.ones((B, 4))
    dh = rng.normal(size=(B, 4, 2))
    before = [a.copy() for a in (gx, U, mask, dh)]
    fwd = impl.lstm_forward(gx, U, mask)
    saved = [a.copy() for a in fwd]
    impl.lstm_backward(dh, U, mask, *fwd)
    for a, b in zip((gx, U, mask, dh) + tuple(fwd), before + saved):
        assert np.array_equal(a, b)
