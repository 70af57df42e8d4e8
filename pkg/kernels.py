# kernels.py - numba inner-loop kernels (bilinear LUT lookup, steered sums)
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _node(d, lo, hi, n):
    t = (d - lo) / (hi - lo) * (n - 1)
    i = int(np.floor(t))
    if i < 0:
        i = 0
    elif i > n - 2:
        i = n - 2
    return i, t - i


@njit(cache=True, nogil=True)
def _bilinear(values, lo, hi, d1, d2):
    n = values.shape[0]
    i, fx = _node(d1, lo, hi, n)
    j, fy = _node(d2, lo, hi, n)
    return (
        (1.0 - fx) * (1.0 - fy) * values[i, j]
        + fx * (1.0 - fy) * values[i + 1, j]
        + (1.0 - fx) * fy * values[i, j + 1]
        + fx * fy * values[i + 1, j + 1]
    )


@njit(cache=True, nogil=True)
def bilinear_lookup(values, lo, hi, d1, d2):
    """Bilinear interpolation of a square complex table on [lo, hi]^2 (axis 0 = d1)"""
    out = np.empty(d1.shape[0], dtype=np.complex128)
    for k in range(d1.shape[0]):
        out[k] = _bilinear(values, lo, hi, d1[k], d2[k])
    return out


@njit(cache=True, nogil=True)
def steered_sum(values, lo, hi, d1, d2, weights):
    """sum_k Gamma(d1[k], d2[k]) * weights[k] without materializing the Gamma map"""
    acc = 0.0 + 0.0j
    for k in range(d1.shape[0]):
        acc += _bilinear(values, lo, hi, d1[k], d2[k]) * weights[k]
    return acc
