"""Dense tensor algebra: unfolding, contraction, truncated SVD, norms.

Conventions used across the whole package:

* tensors are ``numpy.ndarray`` of ``float64`` in row-major (C) order,
  last index fastest;
* mode indices are 0-based;
* ``unfold`` puts mode ``k`` on the rows and orders the columns by the
  remaining modes ascending, last varying fastest (plain C-order reshape
  after moving axis ``k`` to the front).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TruncatedSVD",
    "unfold",
    "fold",
    "contract",
    "svd_truncated",
    "nuclear_norm",
    "frobenius_norm",
]


@dataclass(frozen=True)
class TruncatedSVD:
    """Rank-``r`` factorization ``m ~ left @ diag(singular) @ right``.

    ``singular`` is non-increasing.  For a nonzero input all values are
    strictly positive; the all-zero matrix yields the designated degenerate
    result (rank 1, ``singular == [0]``, first canonical vectors).
    """

    left: np.ndarray      # (m, r)
    singular: np.ndarray  # (r,)
    right: np.ndarray     # (r, n)
    rank: int


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding: matrix of shape (I_mode, prod of the rest)."""
    t = np.asarray(t)
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for order-{t.ndim} tensor")
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1)


def fold(m: np.ndarray, mode: int, shape) -> np.ndarray:
    """Inverse of :func:`unfold` for the given full tensor ``shape``."""
    shape = tuple(int(s) for s in shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for order-{len(shape)} shape")
    m = np.asarray(m)
    rest = shape[:mode] + shape[mode + 1:]
    expected = (shape[mode], int(np.prod(rest, dtype=np.int64)) if rest else 1)
    if m.shape != expected:
        raise ValueError(f"matrix shape {m.shape} does not match unfolding {expected}")
    return np.moveaxis(m.reshape((shape[mode],) + rest), 0, mode)


def contract(a: np.ndarray, modes_a, b: np.ndarray, modes_b) -> np.ndarray:
    """Contract ``a`` and ``b`` over the paired modes.

    Result carries a's free modes (ascending) followed by b's free modes
    (ascending).  Empty mode lists give the outer product.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    modes_a = list(modes_a)
    modes_b = list(modes_b)
    if len(modes_a) != len(modes_b):
        raise ValueError("modes_a and modes_b must have equal length")
    for ma, mb in zip(modes_a, modes_b):
        if a.shape[ma] != b.shape[mb]:
            raise ValueError(
                f"paired mode size mismatch: a mode {ma} has {a.shape[ma]}, "
                f"b mode {mb} has {b.shape[mb]}"
            )
    return np.tensordot(a, b, axes=(modes_a, modes_b))


def svd_truncated(m: np.ndarray, threshold: float, max_rank: int | None = None) -> TruncatedSVD:
    """Truncated SVD keeping singular values above ``threshold * sigma_1``.

    The effective relative cutoff is ``max(threshold, max(m,n) * eps)`` so
    that numerically-rank-deficient matrices (e.g. an outer product) truncate
    to their numerical rank even at ``threshold=0``.  At least rank 1 is
    retained.  The zero matrix returns the degenerate rank-1 result.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("svd_truncated expects a matrix")
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        left = np.zeros((m.shape[0], 1))
        right = np.zeros((1, m.shape[1]))
        left[0, 0] = 1.0
        right[0, 0] = 1.0
        return TruncatedSVD(left, np.zeros(1), right, 1)
    cutoff = max(threshold, max(m.shape) * np.finfo(np.float64).eps) * s[0]
    r = int(np.sum(s > cutoff))
    r = max(r, 1)
    if max_rank is not None:
        r = min(r, int(max_rank))
    return TruncatedSVD(u[:, :r].copy(), s[:r].copy(), vt[:r, :].copy(), r)


def nuclear_norm(m: np.ndarray) -> float:
    """Sum of singular values."""
    m = np.asarray(m, dtype=np.float64)
    return float(np.linalg.svd(m, compute_uv=False).sum())


def frobenius_norm(t: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(t)))
