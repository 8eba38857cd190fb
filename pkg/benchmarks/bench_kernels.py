"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Prints median wall time per call and the speed-up for the LSTM forward and
backward passes at training shapes and for CRC-64 over a checkpoint-sized
buffer. Also reports the largest disagreement between backends.
"""

import argparse
import statistics
import time

import numpy as np

from avpgate.diffcore import _kernels_py

try:
    from avpgate.diffcore import _kernels
except ImportError:
    _kernels = None


def timed(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, nargs="+", default=[1, 64])
    ap.add_argument("--length", type=int, default=30)
    ap.add_argument("--hidden", type=int, default=64)
    args = ap.parse_args()
    if _kernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(0)
    L, H = args.length, args.hidden
    U = rng.normal(scale=0.1, size=(H, 4 * H))
    blob = rng.bytes(4 << 20)
    assert _kernels_py.crc64(blob) == _kernels.crc64(blob)
    cases, diff = [], 0.0
    for B in args.batch:
        gx = rng.normal(size=(B, L, 4 * H))
        lengths = rng.integers(L // 2, L + 1, size=B)
        mask = (np.arange(L)[None, :] < lengths[:, None]).astype(np.float64)
        dhs = rng.normal(size=(B, L, H))
        st_py = _kernels_py.lstm_forward(gx, U, mask)
        st_c = _kernels.lstm_forward(gx, U, mask)
        g_py = _kernels_py.lstm_backward(dhs, U, mask, *st_py)
        g_c = _kernels.lstm_backward(dhs, U, mask, *st_c)
        diff = max(diff, *(float(np.abs(a - b).max()) for a, b in zip(st_py + g_py, st_c + g_c)))
        cases.append((f"lstm_forward  B={B} L={L} H={H}",
                       lambda m, gx=gx, mask=mask: m.lstm_forward(gx, U, mask), args.repeat))
        cases.append((f"lstm_backward B={B} L={L} H={H}",
                       lambda m, d=dhs, mask=mask, st=st_py: m.lstm_backward(d, U, mask, *st), args.repeat))
    cases.append(("crc64 4 MiB", lambda m: m.crc64(blob), max(1, args.repeat // 10)))

    print(f"{'kernel':34s} {'python ms':>10s} {'compiled ms':>12s} {'speed-up':>9s}")
    for name, call, rep in cases:
        tp = timed(lambda: call(_kernels_py), rep)
        tc = timed(lambda: call(_kernels), rep)
        print(f"{name:34s} {tp * 1e3:10.3f} {tc * 1e3:12.3f} {tp / tc:8.1f}x")
    print(f"max |python - compiled| = {diff:.3g}")


if __name__ == "__main__":
    main()
