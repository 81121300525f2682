"""Micro-benchmark comparing the numba and numpy kernel backends.

Run as ``dvcflow bench`` or ``python -m dvcflow.kernels.bench``.
"""

import time

import numpy as np

from . import numpy_impl

try:
    from . import numba_impl
except ImportError:
    numba_impl = None


def _time(fn, args, repeats):
    fn(*args)  # warm (jit compile / cache touch)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(rng, n, d):
    x = rng.normal(size=(n, d)).astype(np.float32)
    g = rng.normal(size=(n, d)).astype(np.float32)
    gain = rng.normal(size=d).astype(np.float32)
    bias = rng.normal(size=d).astype(np.float32)
    allowed = np.tril(np.ones((n, n), dtype=bool)) if n == d else np.ones((n, d), bool)
    p = rng.normal(size=n * d).astype(np.float32)
    pg = rng.normal(size=n * d).astype(np.float32)
    m = np.zeros(n * d, np.float32)
    v = np.zeros(n * d, np.float32)
    sq = rng.normal(size=(n, n)).astype(np.float32)
    probs = numpy_impl.softmax_rows_fwd(x)
    _, mean, rstd = numpy_impl.layer_norm_fwd(x, gain, bias, 1e-5)
    tri = np.tril(np.ones((n, n), dtype=bool))
    return [
        ("gelu_fwd", "gelu_fwd", (x,)),
        ("gelu_bwd", "gelu_bwd", (x, g)),
        ("softmax_rows_fwd", "softmax_rows_fwd", (x,)),
        ("softmax_rows_bwd", "softmax_rows_bwd", (probs, g)),
        ("masked_softmax_fwd", "masked_softmax_fwd", (sq, tri)),
        ("layer_norm_fwd", "layer_norm_fwd", (x, gain, bias, 1e-5)),
        ("layer_norm_bwd", "layer_norm_bwd", (x, gain, mean, rstd, g)),
        ("adamw_update", "adamw_update", (p, pg, m, v, 1e-4, 0.9, 0.999, 1e-8, 0.01, 3)),
    ]


def run(sizes=((64, 64), (256, 256), (1024, 512)), repeats=20, out=print):
    rng = np.random.default_rng(0)
    out(f"{'kernel':<22} {'shape':<12} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    for n, d in sizes:
        for name, attr, args in _cases(rng, n, d):
            t_np = _time(getattr(numpy_impl, name), args, repeats)
            if numba_impl is None:
                out(f"{name:<22} {n}x{d:<9} {t_np * 1e6:>10.1f}us {'n/a':>12} {'':>9}")
                continue
            t_nb = _time(getattr(numba_impl, name), args, repeats)
            out(
                f"{name:<22} {n}x{d:<9} {t_np * 1e6:>10.1f}us {t_nb * 1e6:>10.1f}us "
                f"{t_np / t_nb:>8.2f}x"
            )


if __name__ == "__main__":
    run()
