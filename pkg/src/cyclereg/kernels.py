"""Elementwise/reduction kernels for the training hot path.

Every kernel exists twice: a plain numpy version (suffix ``_np``) and a
numba-jitted version (suffix ``_nb``) compiled lazily on first call.
The public names at the bottom point at whichever twin wins on
benchmarks/bench_kernels.py; that is the jitted one for everything
except tanh_fwd (numpy's vectorized libm beats a scalar-math loop by
~10x) and sumsq (np.dot is a BLAS call). Set ``CYCLEREG_NO_NUMBA=1``
before import to force the all-numpy path; it is also taken
automatically when numba cannot be imported. ``BACKEND`` records the
live choice.

Matrix products are not in here on purpose: np.matmul already sits on
BLAS and a jitted twin would buy nothing.

All kernels expect float64, C-contiguous arrays. 2-d arrays are
(rows, features); optimizer kernels take 1-d raveled views and update
in place.
"""

import os

import numpy as np


def _numpy_forced():
    return os.environ.get("CYCLEREG_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")


try:
    if _numpy_forced():
        raise ImportError("numpy path forced via CYCLEREG_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    njit = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ----------------------------------------------------------------------
# numpy twins

def tanh_fwd_np(x):
    return np.tanh(x)


def tanh_bwd_np(g, y):
    # y is the forward output, d tanh = 1 - y^2
    return g * (1.0 - y * y)


def relu_fwd_np(x):
    return np.maximum(x, 0.0)


def relu_bwd_np(g, x):
    return np.where(x > 0.0, g, 0.0)


def bn_fwd_train_np(x, gamma, beta, eps):
    """Returns (y, xhat, mean, var); var is the biased column variance."""
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    xhat = (x - mean) / np.sqrt(var + eps)
    return gamma * xhat + beta, xhat, mean, var


def bn_fwd_infer_np(x, gamma, beta, mean, var, eps):
    xhat = (x - mean) / np.sqrt(var + eps)
    return gamma * xhat + beta, xhat


def bn_bwd_np(g, xhat, var, gamma, eps):
    """Gradient through training-mode normalization (batch stats)."""
    n = g.shape[0]
    gbeta = g.sum(axis=0)
    ggamma = (g * xhat).sum(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    gx = (gamma * inv / n) * (n * g - gbeta - xhat * ggamma)
    return gx, ggamma, gbeta


# penalty kinds share an integer code so the jitted twin stays monomorphic
PENALTY_L2 = 0
PENALTY_L1 = 1
PENALTY_SMOOTH_L1 = 2


def penalty_fwd_np(r, code, beta):
    if code == PENALTY_L2:
        return r * r
    if code == PENALTY_L1:
        return np.abs(r)
    small = np.abs(r) < beta
    return np.where(small, 0.5 * r * r / beta, np.abs(r) - 0.5 * beta)


def penalty_bwd_np(r, code, beta):
    if code == PENALTY_L2:
        return 2.0 * r
    if code == PENALTY_L1:
        return np.sign(r)
    return np.clip(r / beta, -1.0, 1.0)


def sumsq_np(x):
    return float(np.dot(x, x))


def scale_inplace_np(x, s):
    x *= s


def sgd_step_np(p, g, lr):
    p -= lr * g


def adam_step_np(p, g, m, v, lr, b1, b2, eps, bc1, bc2):
    """One bias-corrected step, in place. bc1/bc2 are 1 - beta^t."""
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ----------------------------------------------------------------------
# numba twins

if HAVE_NUMBA:
    import math

    @njit(cache=True)
    def tanh_fwd_nb(x):
        n, c = x.shape
        y = np.empty((n, c))
        for i in range(n):
            for j in range(c):
                y[i, j] = math.tanh(x[i, j])
        return y

    @njit(cache=True)
    def tanh_bwd_nb(g, y):
        n, c = g.shape
        out = np.empty((n, c))
        for i in range(n):
            for j in range(c):
                out[i, j] = g[i, j] * (1.0 - y[i, j] * y[i, j])
        return out

    @njit(cache=True)
    def relu_fwd_nb(x):
        n, c = x.shape
        y = np.empty((n, c))
        for i in range(n):
            for j in range(c):
                v = x[i, j]
                y[i, j] = v if v > 0.0 else 0.0
        return y

    @njit(cache=True)
    def relu_bwd_nb(g, x):
        n, c = g.shape
        out = np.empty((n, c))
        for i in range(n):
            for j in range(c):
                out[i, j] = g[i, j] if x[i, j] > 0.0 else 0.0
        return out

    @njit(cache=True)
    def bn_fwd_train_nb(x, gamma, beta, eps):
        n, c = x.shape
        mean = np.zeros(c)
        var = np.zeros(c)
        for i in range(n):
            for j in range(c):
                mean[j] += x[i, j]
        for j in range(c):
            mean[j] /= n
        for i in range(n):
            for j in range(c):
                d = x[i, j] - mean[j]
                var[j] += d * d
        for j in range(c):
            var[j] /= n
        y = np.empty((n, c))
        xhat = np.empty((n, c))
        for j in range(c):
            inv = 1.0 / math.sqrt(var[j] + eps)
            for i in range(n):
                h = (x[i, j] - mean[j]) * inv
                xhat[i, j] = h
                y[i, j] = gamma[j] * h + beta[j]
        return y, xhat, mean, var

    @njit(cache=True)
    def bn_fwd_infer_nb(x, gamma, beta, mean, var, eps):
        n, c = x.shape
        y = np.empty((n, c))
        xhat = np.empty((n, c))
        for j in range(c):
            inv = 1.0 / math.sqrt(var[j] + eps)
            for i in range(n):
                h = (x[i, j] - mean[j]) * inv
                xhat[i, j] = h
                y[i, j] = gamma[j] * h + beta[j]
        return y, xhat

    @njit(cache=True)
    def bn_bwd_nb(g, xhat, var, gamma, eps):
        n, c = g.shape
        gbeta = np.zeros(c)
        ggamma = np.zeros(c)
        for i in range(n):
            for j in range(c):
                gbeta[j] += g[i, j]
                ggamma[j] += g[i, j] * xhat[i, j]
        gx = np.empty((n, c))
        for j in range(c):
            k = gamma[j] / math.sqrt(var[j] + eps) / n
            for i in range(n):
                gx[i, j] = k * (n * g[i, j] - gbeta[j] - xhat[i, j] * ggamma[j])
        return gx, ggamma, gbeta

    @njit(cache=True)
    def penalty_fwd_nb(r, code, beta):
        n, c = r.shape
        out = np.empty((n, c))
        for i in range(n):
            for j in range(c):
                v = r[i, j]
                if code == 0:
                    out[i, j] = v * v
                elif code == 1:
                    out[i, j] = abs(v)
                else:
                    a = abs(v)
                    out[i, j] = 0.5 * v * v / beta if a < beta else a - 0.5 * beta
        return out

    @njit(cache=True)
    def penalty_bwd_nb(r, code, beta):
        n, c = r.shape
        out = np.empty((n, c))
        for i in range(n):
            for j in range(c):
                v = r[i, j]
                if code == 0:
                    out[i, j] = 2.0 * v
                elif code == 1:
                    out[i, j] = 0.0 if v == 0.0 else (1.0 if v > 0.0 else -1.0)
                else:
                    s = v / beta
                    out[i, j] = -1.0 if s < -1.0 else (1.0 if s > 1.0 else s)
        return out

    @njit(cache=True)
    def sumsq_nb(x):
        total = 0.0
        for i in range(x.shape[0]):
            total += x[i] * x[i]
        return total

    @njit(cache=True)
    def scale_inplace_nb(x, s):
        for i in range(x.shape[0]):
            x[i] *= s

    @njit(cache=True)
    def sgd_step_nb(p, g, lr):
        for i in range(p.shape[0]):
            p[i] -= lr * g[i]

    @njit(cache=True)
    def adam_step_nb(p, g, m, v, lr, b1, b2, eps, bc1, bc2):
        for i in range(p.shape[0]):
            m[i] = b1 * m[i] + (1.0 - b1) * g[i]
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
            p[i] -= lr * (m[i] / bc1) / (math.sqrt(v[i] / bc2) + eps)


if HAVE_NUMBA:
    tanh_fwd = tanh_fwd_np   # SIMD libm outruns the jitted scalar loop
    tanh_bwd = tanh_bwd_nb
    relu_fwd = relu_fwd_nb
    relu_bwd = relu_bwd_nb
    bn_fwd_train = bn_fwd_train_nb
    bn_fwd_infer = bn_fwd_infer_nb
    bn_bwd = bn_bwd_nb
    penalty_fwd = penalty_fwd_nb
    penalty_bwd = penalty_bwd_nb
    sumsq = sumsq_np         # np.dot is BLAS
    scale_inplace = scale_inplace_nb
    sgd_step = sgd_step_nb
    adam_step = adam_step_nb
else:
    tanh_fwd = tanh_fwd_np
    tanh_bwd = tanh_bwd_np
    relu_fwd = relu_fwd_np
    relu_bwd = relu_bwd_np
    bn_fwd_train = bn_fwd_train_np
    bn_fwd_infer = bn_fwd_infer_np
    bn_bwd = bn_bwd_np
    penalty_fwd = penalty_fwd_np
    penalty_bwd = penalty_bwd_np
    sumsq = sumsq_np
    scale_inplace = scale_inplace_np
    sgd_step = sgd_step_np
    adam_step = adam_step_np
