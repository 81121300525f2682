"""Pure-numpy reference implementations of the hot kernels.

Every function here has a jitted twin in ``numba_impl``; the active backend
is chosen in ``dvcflow.kernels``. All kernels preserve the input dtype so
the same code paths serve the float32 model math and the float64 oracle
runs used by gradient checking.
"""

import numpy as np

_C0 = 0.7978845608028654  # sqrt(2/pi)
_C1 = 0.044715


def gelu_fwd(x):
    inner = _C0 * (x + _C1 * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_bwd(x, g):
    inner = _C0 * (x + _C1 * x * x * x)
    t = np.tanh(inner)
    dinner = _C0 * (1.0 + 3.0 * _C1 * x * x)
    return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def softmax_rows_fwd(x):
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=1, keepdims=True)


def softmax_rows_bwd(p, g):
    dot = np.sum(g * p, axis=1, keepdims=True)
    return p * (g - dot)


def masked_softmax_fwd(x, allowed):
    """Row softmax over the allowed entries only; disallowed entries are
    exactly zero in the output. Rows with no allowed entry come out all-zero."""
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        idx = np.nonzero(allowed[i])[0]
        if idx.size == 0:
            continue
        row = x[i, idx]
        e = np.exp(row - np.max(row))
        out[i, idx] = e / np.sum(e)
    return out


def masked_softmax_bwd(p, allowed, g):
    dot = np.sum(g * p, axis=1, keepdims=True)
    dx = p * (g - dot)
    return np.where(allowed, dx, 0.0).astype(p.dtype, copy=False)


def layer_norm_fwd(x, gain, bias, eps):
    mean = np.mean(x, axis=1)
    var = np.mean((x - mean[:, None]) ** 2, axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean[:, None]) * rstd[:, None] * gain[None, :] + bias[None, :]
    return y.astype(x.dtype, copy=False), mean, rstd


def layer_norm_bwd(x, gain, mean, rstd, g):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgain = np.sum(g * xhat, axis=0)
    dbias = np.sum(g, axis=0)
    dxhat = g * gain[None, :]
    m1 = np.mean(dxhat, axis=1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return dx.astype(x.dtype, copy=False), dgain, dbias


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay, t):
    """One decoupled-weight-decay Adam step, in place on p/m/v."""
    p -= lr * weight_decay * p
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
