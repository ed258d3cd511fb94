"""Pure numpy implementations of the sparse kernels.

Every function here has a twin in ``_native.pyx`` with the same signature and
the same accumulation order, so both backends produce identical floats.
"""

import numpy as np


def csr_spmm(indptr, indices, values, dense):
    """out[i] = sum_e values[e] * dense[indices[e]] for e in row i."""
    n_rows = indptr.shape[0] - 1
    out = np.zeros((n_rows, dense.shape[1]), dtype=np.float64)
    if indices.shape[0] == 0:
        return out
    rows = np.repeat(np.arange(n_rows), np.diff(indptr))
    np.add.at(out, rows, values[:, None] * dense[indices])
    return out


def csr_spmm_t(indptr, indices, values, grad, n_cols):
    """Transposed product: out[indices[e]] += values[e] * grad[row(e)]."""
    out = np.zeros((n_cols, grad.shape[1]), dtype=np.float64)
    if indices.shape[0] == 0:
        return out
    rows = np.repeat(np.arange(indptr.shape[0] - 1), np.diff(indptr))
    np.add.at(out, indices, values[:, None] * grad[rows])
    return out


def csr_edge_dot(indptr, indices, left, right):
    """Per-edge inner product left[row(e)] . right[indices[e]]."""
    if indices.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    rows = np.repeat(np.arange(indptr.shape[0] - 1), np.diff(indptr))
    return np.einsum("ij,ij->i", left[rows], right[indices])


def csr_contains(indptr, indices, rows, cols):
    """Membership test of (rows[k], cols[k]) in a CSR pattern with sorted rows."""
    out = np.zeros(rows.shape[0], dtype=bool)
    for k in range(rows.shape[0]):
        lo, hi = indptr[rows[k]], indptr[rows[k] + 1]
        pos = lo + np.searchsorted(indices[lo:hi], cols[k])
        out[k] = pos < hi and indices[pos] == cols[k]
    return out
