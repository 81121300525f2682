"""Backend selection for the hot numeric kernels.

The environment variable ``DVCFLOW_BACKEND`` picks the implementation:

* ``auto`` (default) — numba when importable, else pure numpy
* ``numba``          — require the jitted kernels, fail if numba is missing
* ``numpy``          — force the pure-numpy fallback

Both implementations are importable side by side (``numpy_impl`` /
``numba_impl``) for equivalence tests and the ``dvcflow bench`` command.
"""

import os

from . import numpy_impl

_choice = os.environ.get("DVCFLOW_BACKEND", "auto").lower()
if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"DVCFLOW_BACKEND must be one of auto/numba/numpy, got {_choice!r}"
    )

if _choice in ("auto", "numba"):
    try:
        from . import numba_impl as _impl

        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        _impl = numpy_impl
        BACKEND = "numpy"
else:
    _impl = numpy_impl
    BACKEND = "numpy"

gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
softmax_rows_fwd = _impl.softmax_rows_fwd
softmax_rows_bwd = _impl.softmax_rows_bwd
masked_softmax_fwd = _impl.masked_softmax_fwd
masked_softmax_bwd = _impl.masked_softmax_bwd
layer_norm_fwd = _impl.layer_norm_fwd
layer_norm_bwd = _impl.layer_norm_bwd
adamw_update = _impl.adamw_update


def warmup():
    """Trigger jit compilation (or no-op on the numpy backend).

    Exercises each kernel once per dtype so timing-sensitive callers do not
    pay the one-time compile cost inside a measured section.
    """
    import numpy as np

    for dt in (np.float32, np.float64):
        x = np.ones((2, 3), dtype=dt)
        v = np.ones(3, dtype=dt)
        allowed = np.ones((2, 3), dtype=bool)
        gelu_bwd(x, gelu_fwd(x))
        softmax_rows_bwd(softmax_rows_fwd(x), x)
        masked_softmax_bwd(masked_softmax_fwd(x, allowed), allowed, x)
        y, mean, rstd = layer_norm_fwd(x, v, v, 1e-5)
        layer_norm_bwd(x, v, mean, rstd, y)
        p = np.ones(4, dtype=dt)
        adamw_update(p, p.copy(), p.copy(), p.copy(), 1e-3, 0.9, 0.999, 1e-8, 0.01, 1)
