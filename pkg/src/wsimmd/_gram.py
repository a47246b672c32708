"""Pure NumPy Gram-sum kernel, used when the compiled core is unavailable."""

import math

import numpy as np


def gram_sum(a, b, scale, block=256):
    """Return sum_ij exp(-scale * ||a_i - b_j||^2) streaming row blocks of ``a``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} != {b.shape[1]}")
    if block < 1:
        raise ValueError("block must be positive")
    na, nb = a.shape[0], b.shape[0]
    if na == 0 or nb == 0:
        return 0.0
    block = min(block, na)
    norm_a = np.einsum("ij,ij->i", a, a)
    norm_b = np.einsum("ij,ij->i", b, b)
    buf = np.empty((block, nb))
    partial = []
    for i0 in range(0, na, block):
        rows = min(block, na - i0)
        out = buf[:rows]
        np.matmul(a[i0:i0 + rows], b.T, out=out)
        out *= -2.0
        out += norm_a[i0:i0 + rows, None]
        out += norm_b[None, :]
        np.maximum(out, 0.0, out=out)
        out *= -scale
        np.exp(out, out=out)
        partial.append(float(out.sum()))
    return math.fsum(partial)
