"""Euclidean projection onto Lp balls for p in {1, 2, inf}."""

import math

import numpy as np

from . import kernels
from .tensor import TensorError, lp_norm, parse_norm


def project(delta, p, xi):
    """Return the L2-closest point to ``delta`` with ``||.||_p <= xi``.

    The input shape is preserved. Points already inside the ball are returned
    unchanged (as a copy). ``xi == 0`` yields zeros.

    Parameters
    ----------
    delta : array_like
        Candidate perturbation, any shape.
    p : {1, 2, inf}
        Norm type.
    xi : float
        Ball radius.
    """
    if xi < 0:
        raise TensorError("negative budget")
    p = parse_norm(p)
    v = np.asarray(delta, dtype=np.float64)
    norm = lp_norm(v, p)
    if norm <= xi:
        return v.copy()
    if xi == 0:
        return np.zeros_like(v)
    if p == 2:
        return v * (xi / norm)
    if p == math.inf:
        return np.clip(v, -xi, xi)
    flat = np.ascontiguousarray(v.ravel())
    out = kernels.project_l1(flat, float(xi))
    return out.reshape(v.shape)
