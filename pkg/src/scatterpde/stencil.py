"""Taylor least-squares derivative stencils on scattered points.

Around a centre point, each neighbor ``i`` at offset ``(dx, dy)`` contributes one
linear equation

    u(p_i) - u(p_0) = sum_{1 <= q + r <= Q} dx^q dy^r / (q! r!) * u_{x^q y^r}(p_0)

whose unknowns are the partial derivatives at the centre. Stacking K neighbors gives
``du = A d`` with ``A`` of shape ``(K, m)``; the minimum-norm least-squares solution is
``d = pinv(A) du``. Because ``pinv(A)`` only depends on geometry it is computed once
and reused for every field.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import factorial

import numpy as np
import scipy.sparse as sp

from .errors import InsufficientNeighborsError
from .pointcloud import NeighborTable

__all__ = [
    "RTOL",
    "derivative_indices",
    "n_unknowns",
    "derivative_name",
    "taylor_row",
    "design_matrix",
    "TaylorStencil",
    "DerivativeOperator",
    "build_stencil",
    "build_operator",
    "apply",
]

#: relative singular-value cutoff used for pseudo-inverses and rank-deficiency flags
RTOL = 1e-10


def derivative_indices(Q):
    """Canonical ``(q, r)`` order: by total order, then by ``q`` descending.

    >>> derivative_indices(2)
    [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    """
    if Q < 1:
        raise ValueError(f"maximum derivative order must be >= 1, got {Q}")
    return [(q, s - q) for s in range(1, Q + 1) for q in range(s, -1, -1)]


def n_unknowns(Q):
    return (Q + 1) * (Q + 2) // 2 - 1


def derivative_name(idx):
    q, r = idx
    return "u_" + "x" * q + "y" * r


def taylor_row(offset, idx):
    """Taylor coefficient ``dx^q dy^r / (q! r!)`` of derivative ``idx`` at ``offset``."""
    dx, dy = offset
    q, r = idx
    return dx**q * dy**r / (factorial(q) * factorial(r))


def design_matrix(offsets, Q):
    """Stack of Taylor design matrices, shape ``(..., K, m)`` for offsets ``(..., K, 2)``."""
    offsets = np.asarray(offsets, dtype=float)
    dx = offsets[..., 0]
    dy = offsets[..., 1]
    cols = [
        dx**q * dy**r / (factorial(q) * factorial(r)) for q, r in derivative_indices(Q)
    ]
    return np.stack(cols, axis=-1)


def _pinv_stack(A):
    """Batched minimum-norm pseudo-inverse with condition numbers and rank flags."""
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    smax = s[..., :1]
    keep = s > RTOL * smax
    s_inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    pinv = np.einsum("...ji,...j,...kj->...ik", vt, s_inv, u)
    with np.errstate(divide="ignore"):
        cond = np.where(s[..., -1] > 0, s[..., 0] / np.where(s[..., -1] > 0, s[..., -1], 1.0), np.inf)
    rank_deficient = ~keep.all(axis=-1)
    return pinv, cond, rank_deficient


@dataclass(frozen=True, eq=False)
class TaylorStencil:
    """Least-squares derivative weights for a single centre point.

    Attributes
    ----------
    center : int
        Index of the centre point (``-1`` for a free-standing stencil).
    weights : ndarray, shape (m, K)
        Row ``j`` maps neighbor differences to derivative ``derivative_indices(Q)[j]``.
    condition : float
        2-norm condition number of the ``(K, m)`` design matrix, ``inf`` if singular.
    rank_deficient : bool
        True when a singular value falls below ``RTOL * sigma_max``.
    """

    center: int
    Q: int
    weights: np.ndarray
    condition: float
    rank_deficient: bool

    @property
    def m(self):
        return self.weights.shape[0]

    @property
    def K(self):
        return self.weights.shape[1]


def build_stencil(offsets, Q, center=-1):
    """Build the Taylor stencil for one point from its neighbor offsets."""
    offsets = np.asarray(offsets, dtype=float)
    if offsets.ndim != 2 or offsets.shape[1] != 2:
        raise ValueError(f"offsets must have shape (K, 2), got {offsets.shape}")
    m = n_unknowns(Q)
    K = offsets.shape[0]
    if K < m:
        raise InsufficientNeighborsError(K, m, None if center < 0 else center)
    if np.any(np.all(offsets == 0, axis=1)):
        raise ValueError("neighbor offsets must be nonzero")
    pinv, cond, deficient = _pinv_stack(design_matrix(offsets, Q))
    return TaylorStencil(center, Q, pinv, float(cond), bool(deficient))


@dataclass(frozen=True, eq=False)
class DerivativeOperator:
    """Per-point Taylor stencils for a whole point set.

    ``weights[i]`` is the ``(m, K)`` stencil of point ``i``; ``apply`` turns a field
    (or a batch of fields as columns) into derivative estimates.
    """

    Q: int
    neighbors: NeighborTable
    weights: np.ndarray
    conditions: np.ndarray
    rank_deficient: np.ndarray

    def __post_init__(self):
        for arr in (self.weights, self.conditions, self.rank_deficient):
            arr.setflags(write=False)

    @property
    def n(self):
        return self.weights.shape[0]

    @property
    def m(self):
        return self.weights.shape[1]

    @property
    def K(self):
        return self.weights.shape[2]

    @property
    def indices(self):
        return derivative_indices(self.Q)

    def stencil(self, i):
        return TaylorStencil(
            i, self.Q, self.weights[i], float(self.conditions[i]), bool(self.rank_deficient[i])
        )

    @cached_property
    def _pattern(self):
        """CSR pattern shared by every derivative matrix: neighbors then the centre."""
        n, K = self.n, self.K
        cols = np.concatenate([self.neighbors.indices, np.arange(n)[:, None]], axis=1)
        indptr = np.arange(0, n * (K + 1) + 1, K + 1)
        return indptr, cols.ravel()

    @cached_property
    def matrix_data(self):
        """Values of the ``m`` sparse derivative matrices, shape ``(m, n * (K + 1))``.

        Matrix ``j`` has, in row ``i``, the stencil weights of derivative ``j`` on the
        neighbor columns and minus their sum on the diagonal.
        """
        w = np.transpose(self.weights, (1, 0, 2))
        data = np.concatenate([w, -w.sum(axis=2, keepdims=True)], axis=2)
        return data.reshape(self.m, -1)

    def combined_matrix(self, coefficients, diagonal=0.0):
        """Sparse ``diagonal * I + sum_j coefficients[j] * S_j`` as CSR."""
        n, K = self.n, self.K
        data = np.asarray(coefficients, dtype=float) @ self.matrix_data
        data = data.reshape(n, K + 1)
        data[:, K] += diagonal
        indptr, cols = self._pattern
        return sp.csr_matrix((data.ravel(), cols, indptr), shape=(n, n))

    def matrices(self):
        """The ``m`` sparse derivative matrices ``S_j`` in canonical order."""
        eye = np.eye(self.m)
        return [self.combined_matrix(eye[j]) for j in range(self.m)]

    def apply(self, field):
        return apply(self, field)


def build_operator(nt: NeighborTable, Q: int) -> DerivativeOperator:
    m = n_unknowns(Q)
    if nt.k < m:
        raise InsufficientNeighborsError(nt.k, m)
    if np.any(np.all(nt.offsets == 0, axis=-1)):
        raise ValueError("neighbor offsets must be nonzero")
    pinv, cond, deficient = _pinv_stack(design_matrix(nt.offsets, Q))
    return DerivativeOperator(Q, nt, pinv, cond, deficient)


def apply(op: DerivativeOperator, field):
    """Estimate all derivatives of ``field`` at every point.

    Parameters
    ----------
    field : array_like, shape (n,) or (n, B)

    Returns
    -------
    ndarray, shape (n, m) or (n, m, B)
        Derivatives in canonical order, e.g. ``(u_x, u_y, u_xx, u_xy, u_yy)`` for Q = 2.
    """
    u = np.asarray(field, dtype=float)
    if u.shape[:1] != (op.n,) or u.ndim > 2:
        raise ValueError(f"field must have leading length {op.n}, got shape {u.shape}")
    du = u[op.neighbors.indices] - u[:, None]
    if u.ndim == 1:
        return np.einsum("imk,ik->im", op.weights, du)
    return np.einsum("imk,ikb->imb", op.weights, du)
