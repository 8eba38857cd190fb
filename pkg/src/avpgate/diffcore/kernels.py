"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting
``AVPGATE_BACKEND=python`` forces the numpy reference implementation.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("AVPGATE_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _kernels_py


def lstm_forward(gx, U, mask):
    if gx.shape[0] == 0 or gx.shape[1] == 0:
        return _kernels_py.lstm_forward(gx, U, mask)
    return _impl.lstm_forward(gx, U, mask)


def lstm_backward(dhs, U, mask, hs, cs, acts):
    if hs.shape[0] == 0 or hs.shape[1] == 0:
        return _kernels_py.lstm_backward(dhs, U, mask, hs, cs, acts)
    return _impl.lstm_backward(dhs, U, mask, hs, cs, acts)


def crc64(data, crc=0):
    return _impl.crc64(data, crc)
