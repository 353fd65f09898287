"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names at the bottom of the module are bound to one or the other
according to :mod:`bbuap._accel`. Both variants are importable explicitly
(``*_numba`` / ``*_numpy``) so tests and benchmarks can compare them.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit


# --------------------------------------------------------------------------
# L1-ball projection (sort-based soft thresholding)
# --------------------------------------------------------------------------

def l1_threshold_numpy(abs_v, radius):
    u = np.sort(abs_v)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, u.size + 1, dtype=np.float64)
    cond = u - (css - radius) / ks > 0
    rho = int(np.nonzero(cond)[0][-1])
    return (css[rho] - radius) / (rho + 1.0)


@njit(cache=True)
def _l1_threshold_jit(abs_v, radius):
    u = np.sort(abs_v)[::-1]
    css = 0.0
    theta = 0.0
    for i in range(u.size):
        css += u[i]
        t = (css - radius) / (i + 1.0)
        if u[i] - t > 0:
            theta = t
    return theta


def l1_threshold_numba(abs_v, radius):
    return _l1_threshold_jit(abs_v, radius)


def project_l1_numpy(v, radius):
    a = np.abs(v)
    theta = l1_threshold_numpy(a, radius)
    return np.sign(v) * np.maximum(a - theta, 0.0)


@njit(cache=True)
def _project_l1_jit(v, radius):
    a = np.abs(v)
    theta = _l1_threshold_jit(a, radius)
    out = np.empty_like(v)
    for i in range(v.size):
        m = a[i] - theta
        if m > 0:
            out[i] = m if v[i] > 0 else -m
        else:
            out[i] = 0.0
    return out


def project_l1_numba(v, radius):
    return _project_l1_jit(v, radius)


# --------------------------------------------------------------------------
# Orthonormal DCT-II basis planes
# --------------------------------------------------------------------------

def dct_vector_numpy(n, u):
    r = np.arange(n, dtype=np.float64)
    if u == 0:
        return np.full(n, 1.0 / math.sqrt(n))
    return math.sqrt(2.0 / n) * np.cos(np.pi * (2.0 * r + 1.0) * u / (2.0 * n))


def dct_plane_numpy(h, w, u, v):
    return np.outer(dct_vector_numpy(h, u), dct_vector_numpy(w, v))


@njit(cache=True)
def _dct_vector_jit(n, u):
    out = np.empty(n)
    if u == 0:
        c = 1.0 / math.sqrt(n)
        for r in range(n):
            out[r] = c
        return out
    s = math.sqrt(2.0 / n)
    for r in range(n):
        out[r] = s * math.cos(math.pi * (2.0 * r + 1.0) * u / (2.0 * n))
    return out


@njit(cache=True)
def _dct_plane_jit(h, w, u, v):
    a = _dct_vector_jit(h, u)
    b = _dct_vector_jit(w, v)
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            out[i, j] = a[i] * b[j]
    return out


def dct_plane_numba(h, w, u, v):
    return _dct_plane_jit(h, w, u, v)


# --------------------------------------------------------------------------
# Dense affine layer, row by row
#
# Each output row depends only on its own input row, so results do not
# change with how a caller splits a dataset into batches.
# --------------------------------------------------------------------------

def affine_rows_numpy(x, weight, bias):
    out = np.empty((x.shape[0], weight.shape[0]))
    for i in range(x.shape[0]):
        out[i] = weight @ x[i] + bias
    return out


@njit(cache=True)
def _affine_rows_jit(x, weight, bias):
    n, d = x.shape
    k = weight.shape[0]
    out = np.empty((n, k))
    for i in range(n):
        for c in range(k):
            acc = 0.0
            for j in range(d):
                acc += weight[c, j] * x[i, j]
            out[i, c] = acc + bias[c]
    return out


def affine_rows_numba(x, weight, bias):
    return _affine_rows_jit(
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(weight, dtype=np.float64),
        np.ascontiguousarray(bias, dtype=np.float64),
    )


if USE_NUMBA:
    l1_threshold = l1_threshold_numba
    project_l1 = project_l1_numba
    dct_plane = dct_plane_numba
    affine_rows = affine_rows_numba
else:
    l1_threshold = l1_threshold_numpy
    project_l1 = project_l1_numpy
    dct_plane = dct_plane_numpy
    affine_rows = affine_rows_numpy
