"""Numba-jitted hot kernels, semantically identical to ``numpy_impl``.

Kernels are written as plain loops so numba can compile them for both
float32 and float64 inputs. ``cache=True`` keeps the compile cost to the
first run on a machine; ``fastmath`` stays off so results are reproducible
and close to the numpy path.
"""

import math

import numpy as np
from numba import njit

_C0 = 0.7978845608028654  # sqrt(2/pi)
_C1 = 0.044715


@njit(cache=True)
def gelu_fwd(x):
    out = np.empty_like(x)
    flat_x = x.ravel()
    flat_o = out.ravel()
    for i in range(flat_x.size):
        v = flat_x[i]
        inner = _C0 * (v + _C1 * v * v * v)
        flat_o[i] = 0.5 * v * (1.0 + math.tanh(inner))
    return out


@njit(cache=True)
def gelu_bwd(x, g):
    out = np.empty_like(x)
    flat_x = x.ravel()
    flat_g = g.ravel()
    flat_o = out.ravel()
    for i in range(flat_x.size):
        v = flat_x[i]
        inner = _C0 * (v + _C1 * v * v * v)
        t = math.tanh(inner)
        dinner = _C0 * (1.0 + 3.0 * _C1 * v * v)
        flat_o[i] = flat_g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner)
    return out


@njit(cache=True)
def softmax_rows_fwd(x):
    n, d = x.shape
    out = np.empty_like(x)
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            e = math.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        for j in range(d):
            out[i, j] /= s
    return out


@njit(cache=True)
def softmax_rows_bwd(p, g):
    n, d = p.shape
    out = np.empty_like(p)
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += g[i, j] * p[i, j]
        for j in range(d):
            out[i, j] = p[i, j] * (g[i, j] - dot)
    return out


@njit(cache=True)
def masked_softmax_fwd(x, allowed):
    n, d = x.shape
    out = np.zeros_like(x)
    for i in range(n):
        m = -np.inf
        any_allowed = False
        for j in range(d):
            if allowed[i, j]:
                any_allowed = True
                if x[i, j] > m:
                    m = x[i, j]
        if not any_allowed:
            continue
        s = 0.0
        for j in range(d):
            if allowed[i, j]:
                e = math.exp(x[i, j] - m)
                out[i, j] = e
                s += e
        for j in range(d):
            if allowed[i, j]:
                out[i, j] /= s
    return out


@njit(cache=True)
def masked_softmax_bwd(p, allowed, g):
    n, d = p.shape
    out = np.zeros_like(p)
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += g[i, j] * p[i, j]
        for j in range(d):
            if allowed[i, j]:
                out[i, j] = p[i, j] * (g[i, j] - dot)
    return out


@njit(cache=True)
def layer_norm_fwd(x, gain, bias, eps):
    n, d = x.shape
    y = np.empty_like(x)
    mean = np.empty(n, dtype=x.dtype)
    rstd = np.empty(n, dtype=x.dtype)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            dv = x[i, j] - mu
            var += dv * dv
        var /= d
        r = 1.0 / math.sqrt(var + eps)
        mean[i] = mu
        rstd[i] = r
        for j in range(d):
            y[i, j] = (x[i, j] - mu) * r * gain[j] + bias[j]
    return y, mean, rstd


@njit(cache=True)
def layer_norm_bwd(x, gain, mean, rstd, g):
    n, d = x.shape
    dx = np.empty_like(x)
    dgain = np.zeros(d, dtype=x.dtype)
    dbias = np.zeros(d, dtype=x.dtype)
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            dxh = g[i, j] * gain[j]
            m1 += dxh
            m2 += dxh * xhat
            dgain[j] += g[i, j] * xhat
            dbias[j] += g[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            dxh = g[i, j] * gain[j]
            dx[i, j] = rstd[i] * (dxh - m1 - xhat * m2)
    return dx, dgain, dbias


@njit(cache=True)
def adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay, t):
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for i in range(p.size):
        p[i] -= lr * weight_decay * p[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / c1) / (math.sqrt(v[i] / c2) + eps)
