"""Dense float tensors with reverse-mode automatic differentiation.

Forward ops execute eagerly on numpy arrays and append their backward
closures to a thread-local tape (define-by-run). ``backward`` walks the
tape once in reverse, accumulates gradients additively, and frees the
tape. Model math is float32; ops preserve the dtype of their inputs so
a float64 pass (used by the finite-difference oracle) goes through the
identical code path.

Broadcasting is deliberately narrow: identical shapes, or a trailing-axis
vector combined with a higher-rank tensor. Anything else needs an explicit
reshape, which keeps every gradient rule auditable.
"""

from __future__ import annotations

import os
import threading

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class ContractError(ValueError):
    """An op precondition other than shape was violated."""


class NumericError(ArithmeticError):
    """Non-finite values appeared where finite math was required."""


_tls = threading.local()

_FINITE_CHECKS = os.environ.get("DVCFLOW_DEBUG_FINITE", "") not in ("", "0")


def set_finite_checks(enabled: bool) -> None:
    """Toggle the per-op NaN/Inf debug check (off by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, other)

    def __rmul__(self, other):
        return mul_scalar(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad)


def ones(shape, requires_grad=False):
    return Tensor(np.ones(shape, dtype=np.float32), requires_grad)


def randn(rng: np.random.Generator, shape, std: float = 1.0, requires_grad=False):
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad)


# ---------------------------------------------------------------------------
# Tape


class _Entry:
    __slots__ = ("out", "inputs", "bwd")

    def __init__(self, out, inputs, bwd):
        self.out = out
        self.inputs = inputs
        self.bwd = bwd


def _tape() -> list:
    t = getattr(_tls, "tape", None)
    if t is None:
        t = []
        _tls.tape = t
    return t


def tape_size() -> int:
    return len(getattr(_tls, "tape", ()))


def clear_tape() -> None:
    _tls.tape = []


class no_grad:
    """Context manager: ops inside are not recorded on the tape."""

    def __enter__(self):
        self._prev = getattr(_tls, "grad_enabled", True)
        _tls.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _tls.grad_enabled = self._prev
        return False


def _recording(*tensors: Tensor) -> bool:
    if not getattr(_tls, "grad_enabled", True):
        return False
    return any(t.requires_grad for t in tensors)


def _finish(arr: np.ndarray, inputs: tuple, bwd) -> Tensor:
    if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NumericError("non-finite value produced by a tensor op")
    rec = _recording(*inputs)
    out = Tensor._wrap(arr, rec)
    if rec:
        _tape().append(_Entry(out, inputs, bwd))
    return out


def compute_grads(loss: Tensor) -> dict:
    """Reverse sweep from a scalar loss; returns {leaf tensor: gradient array}.

    Does not touch ``.grad`` (callers that batch work across workers reduce
    the returned dicts in a fixed order). Consumes and frees the tape.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    tape = _tape()
    if not any(e.out is loss for e in tape):
        raise ContractError("loss is not on the active tape")
    grads: dict[Tensor, np.ndarray] = {loss: np.ones((), dtype=loss.data.dtype)}
    for entry in reversed(tape):
        g = grads.pop(entry.out, None)
        if g is None:
            continue
        for t, ig in zip(entry.inputs, entry.bwd(g)):
            if ig is None or not t.requires_grad:
                continue
            acc = grads.get(t)
            # rebind instead of += : a bwd may hand the same array to two
            # inputs, so stored arrays must never be mutated in place
            grads[t] = ig if acc is None else acc + ig
    clear_tape()
    return grads


def backward(loss: Tensor) -> None:
    """Accumulate dL/dθ into ``.grad`` of every requires_grad leaf."""
    for t, g in compute_grads(loss).items():
        if t.grad is None:
            # copy: dict values can alias each other (e.g. both outputs of add)
            t.grad = np.array(g, dtype=t.data.dtype)
        else:
            t.grad += g.astype(t.data.dtype, copy=False)


# ---------------------------------------------------------------------------
# Elementwise ops


def _binary_shapes(a: Tensor, b: Tensor, name: str):
    if a.shape == b.shape:
        return "same"
    if b.ndim == 1 and a.ndim > 1 and a.shape[-1] == b.shape[0]:
        return "rowvec"
    raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_rowvec(g: np.ndarray) -> np.ndarray:
    return g.sum(axis=tuple(range(g.ndim - 1)))


def add(a: Tensor, b: Tensor) -> Tensor:
    mode = _binary_shapes(a, b, "add")
    out = a.data + b.data
    if mode == "same":
        return _finish(out, (a, b), lambda g: (g, g))
    return _finish(out, (a, b), lambda g: (g, _reduce_rowvec(g)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    mode = _binary_shapes(a, b, "sub")
    out = a.data - b.data
    if mode == "same":
        return _finish(out, (a, b), lambda g: (g, -g))
    return _finish(out, (a, b), lambda g: (g, -_reduce_rowvec(g)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    mode = _binary_shapes(a, b, "mul")
    out = a.data * b.data
    if mode == "same":
        return _finish(out, (a, b), lambda g: (g * b.data, g * a.data))
    return _finish(out, (a, b), lambda g: (g * b.data, _reduce_rowvec(g * a.data)))


def mul_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _finish(a.data * s, (a,), lambda g: (g * s,))


def neg(a: Tensor) -> Tensor:
    return _finish(-a.data, (a,), lambda g: (-g,))


def gelu(a: Tensor) -> Tensor:
    x = a.data
    return _finish(kernels.gelu_fwd(x), (a,), lambda g: (kernels.gelu_bwd(x, g),))


_LOG_TINY = 1e-30


def log(a: Tensor) -> Tensor:
    """Natural log, with the argument clamped at 1e-30 to keep a finite
    value (and gradient) when a probability underflows."""
    x = np.maximum(a.data, _LOG_TINY)
    return _finish(np.log(x), (a,), lambda g: (g / x,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _finish(
        np.asarray(a.data.sum(), dtype=a.data.dtype),
        (a,),
        lambda g: (np.broadcast_to(g, shape).astype(g.dtype, copy=False),),
    )


def mean_last(a: Tensor) -> Tensor:
    if a.ndim < 1:
        raise ShapeError("mean_last needs at least one axis")
    n = a.shape[-1]
    return _finish(
        a.data.mean(axis=-1),
        (a,),
        lambda g: (np.repeat(g[..., None], n, axis=-1) / n,),
    )


def var_last(a: Tensor) -> Tensor:
    """Population variance along the last axis."""
    if a.ndim < 1:
        raise ShapeError("var_last needs at least one axis")
    x = a.data
    n = x.shape[-1]
    centered = x - x.mean(axis=-1, keepdims=True)
    return _finish(
        np.mean(centered * centered, axis=-1),
        (a,),
        lambda g: (2.0 / n * centered * g[..., None],),
    )


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _finish(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _finish(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


# ---------------------------------------------------------------------------
# Softmax / normalization


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    axis = axis % a.ndim
    moved = np.moveaxis(a.data, axis, -1)
    flat = np.ascontiguousarray(moved.reshape(-1, moved.shape[-1]))
    p_flat = kernels.softmax_rows_fwd(flat)
    out = np.moveaxis(p_flat.reshape(moved.shape), -1, axis)

    def bwd(g):
        gm = np.ascontiguousarray(np.moveaxis(g, axis, -1).reshape(flat.shape))
        dx = kernels.softmax_rows_bwd(p_flat, gm)
        return (np.moveaxis(dx.reshape(moved.shape), -1, axis),)

    return _finish(np.ascontiguousarray(out), (a,), bwd)


def masked_softmax(scores: Tensor, allowed: np.ndarray) -> Tensor:
    """Row-wise softmax over allowed positions; disallowed weights are exactly
    zero. A row with nothing allowed yields an all-zero row."""
    if scores.ndim != 2 or allowed.shape != scores.shape:
        raise ShapeError(
            f"masked_softmax: scores {scores.shape} vs mask {allowed.shape}"
        )
    allowed = np.ascontiguousarray(allowed, dtype=bool)
    p = kernels.masked_softmax_fwd(scores.data, allowed)
    return _finish(
        p, (scores,), lambda g: (kernels.masked_softmax_bwd(p, allowed, g),)
    )


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if x.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(
            f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}"
        )
    y, mean, rstd = kernels.layer_norm_fwd(x.data, gain.data, bias.data, eps)

    def bwd(g):
        dx, dgain, dbias = kernels.layer_norm_bwd(x.data, gain.data, mean, rstd, g)
        return dx, dgain, dbias

    return _finish(y, (x, gain, bias), bwd)


# ---------------------------------------------------------------------------
# Shape / gather ops


def max_pool_time(a: Tensor) -> Tensor:
    """Columnwise max over axis 0; the subgradient routes to the first argmax."""
    if a.ndim != 2:
        raise ShapeError(f"max_pool_time expects [T, d], got {a.shape}")
    if a.shape[0] == 0:
        raise ContractError("max_pool_time: empty segment (T == 0)")
    idx = np.argmax(a.data, axis=0)

    def bwd(g):
        dx = np.zeros_like(a.data)
        dx[idx, np.arange(a.shape[1])] = g
        return (dx,)

    return _finish(a.data.max(axis=0), (a,), bwd)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2 or not (0 <= start < stop <= a.shape[0]):
        raise ShapeError(f"slice_rows[{start}:{stop}] invalid for shape {a.shape}")

    def bwd(g):
        dx = np.zeros_like(a.data)
        dx[start:stop] = g
        return (dx,)

    return _finish(a.data[start:stop].copy(), (a,), bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2 or not (0 <= start < stop <= a.shape[1]):
        raise ShapeError(f"slice_cols[{start}:{stop}] invalid for shape {a.shape}")

    def bwd(g):
        dx = np.zeros_like(a.data)
        dx[:, start:stop] = g
        return (dx,)

    return _finish(np.ascontiguousarray(a.data[:, start:stop]), (a,), bwd)


def row(a: Tensor, i: int) -> Tensor:
    if a.ndim != 2 or not (0 <= i < a.shape[0]):
        raise ShapeError(f"row {i} invalid for shape {a.shape}")

    def bwd(g):
        dx = np.zeros_like(a.data)
        dx[i] = g
        return (dx,)

    return _finish(a.data[i].copy(), (a,), bwd)


def concat_rows(parts: list) -> Tensor:
    if not parts:
        raise ContractError("concat_rows needs at least one part")
    widths = {p.shape[1] for p in parts if p.ndim == 2}
    if len(widths) != 1 or any(p.ndim != 2 for p in parts):
        raise ShapeError(f"concat_rows: shapes {[p.shape for p in parts]}")
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _finish(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bwd)


def concat_cols(parts: list) -> Tensor:
    if not parts:
        raise ContractError("concat_cols needs at least one part")
    heights = {p.shape[0] for p in parts if p.ndim == 2}
    if len(heights) != 1 or any(p.ndim != 2 for p in parts):
        raise ShapeError(f"concat_cols: shapes {[p.shape for p in parts]}")
    sizes = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.ascontiguousarray(g[:, offsets[i]:offsets[i + 1]])
            for i in range(len(parts))
        )

    return _finish(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bwd)


def stack_rows(vectors: list) -> Tensor:
    if not vectors:
        raise ContractError("stack_rows needs at least one vector")
    if any(v.ndim != 1 for v in vectors) or len({v.shape[0] for v in vectors}) != 1:
        raise ShapeError(f"stack_rows: shapes {[v.shape for v in vectors]}")

    def bwd(g):
        return tuple(g[i] for i in range(len(vectors)))

    return _finish(np.stack([v.data for v in vectors], axis=0), tuple(vectors), bwd)


def tile_rows(v: Tensor, n: int) -> Tensor:
    if v.ndim != 1 or n < 1:
        raise ShapeError(f"tile_rows: vector shape {v.shape}, n={n}")
    return _finish(
        np.tile(v.data, (n, 1)), (v,), lambda g: (g.sum(axis=0),)
    )


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2 or ids.ndim != 1:
        raise ShapeError(f"embedding: table {table.shape}, ids {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(
            f"embedding: id out of range 0..{table.shape[0] - 1}"
        )

    def bwd(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids, g)
        return (dt,)

    return _finish(table.data[ids], (table,), bwd)


def gather_rows(a: Tensor, ids: np.ndarray) -> Tensor:
    """Pick one column per row: out[i] = a[i, ids[i]]."""
    ids = np.asarray(ids, dtype=np.int64)
    if a.ndim != 2 or ids.shape != (a.shape[0],):
        raise ShapeError(f"gather_rows: a {a.shape}, ids {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= a.shape[1]):
        raise ContractError(f"gather_rows: id out of range 0..{a.shape[1] - 1}")
    rows = np.arange(a.shape[0])

    def bwd(g):
        dx = np.zeros_like(a.data)
        dx[rows, ids] = g
        return (dx,)

    return _finish(a.data[rows, ids], (a,), bwd)
