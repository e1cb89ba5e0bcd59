"""Learnable forward-Euler PDE surrogate.

One step maps a field ``u`` to ``w0 * u + dt * sum_j w[j] * D_j(u)`` where ``D_j`` are
the stencil derivative estimates. The weights ``w`` double as the reconstructed
equation coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .stencil import DerivativeOperator, derivative_indices, derivative_name, n_unknowns

__all__ = [
    "DIVERGENCE_FACTOR",
    "PDEModel",
    "Reconstruction",
    "euler_step",
    "rollout",
    "reconstruct",
    "reconstruction_mse",
    "step_matrix",
]

#: rollouts abort once the RMS exceeds this multiple of the initial RMS
DIVERGENCE_FACTOR = 1e6


@dataclass
class PDEModel:
    Q: int
    dt: float
    w0: float = 1.0
    w: np.ndarray = None

    def __post_init__(self):
        m = n_unknowns(self.Q)
        self.w = np.zeros(m) if self.w is None else np.array(self.w, dtype=float).ravel()
        self.w0 = float(self.w0)
        if self.w.shape != (m,):
            raise ValueError(f"expected {m} derivative weights for Q={self.Q}, got {self.w.shape}")
        if not (np.all(np.isfinite(self.w)) and np.isfinite(self.w0)):
            raise ValueError("model weights must be finite")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def m(self):
        return self.w.shape[0]

    @property
    def params(self):
        """``(w0, w...)`` as one flat vector."""
        return np.concatenate([[self.w0], self.w])

    def with_params(self, params):
        return PDEModel(self.Q, self.dt, params[0], params[1:])

    def copy(self):
        return PDEModel(self.Q, self.dt, self.w0, self.w.copy())


def _check_field(op, u):
    u = np.asarray(u, dtype=float)
    if u.shape[:1] != (op.n,) or u.ndim > 2:
        raise ValueError(f"field must have leading length {op.n}, got shape {u.shape}")
    return u


def step_matrix(model: PDEModel, op: DerivativeOperator):
    """Sparse ``n x n`` matrix of one Euler step, ``w0 I + dt sum_j w_j S_j``."""
    if op.m != model.m:
        raise ValueError(f"operator has {op.m} derivatives, model has {model.m}")
    return op.combined_matrix(model.dt * model.w, diagonal=model.w0)


def euler_step(model: PDEModel, op: DerivativeOperator, u):
    """One forward-Euler step; ``u`` may be a single field or a batch of columns."""
    u = _check_field(op, u)
    d = op.apply(u)
    if u.ndim == 1:
        return model.w0 * u + model.dt * (d @ model.w)
    return model.w0 * u + model.dt * np.einsum("imb,m->ib", d, model.w)


def rollout(model: PDEModel, op: DerivativeOperator, u0, L: int):
    """Apply :func:`euler_step` ``L`` times with shared weights.

    Returns the ``L`` predicted states stacked along the first axis. Raises
    :class:`DivergenceError` with the 1-based step index if a state becomes
    non-finite or its RMS grows past ``DIVERGENCE_FACTOR`` times the initial RMS.
    """
    if int(L) != L or L < 1:
        raise ValueError(f"number of rollout steps must be >= 1, got {L}")
    u = _check_field(op, u0)
    M = step_matrix(model, op)
    limit = DIVERGENCE_FACTOR * max(np.sqrt(np.mean(u * u)), np.finfo(float).tiny)
    out = np.empty((int(L),) + u.shape)
    for i in range(int(L)):
        u = M @ u
        if not np.all(np.isfinite(u)) or np.sqrt(np.mean(u * u)) > limit:
            raise DivergenceError(i + 1)
        out[i] = u
    return out


@dataclass(frozen=True)
class Reconstruction:
    """Learned equation: derivative index -> coefficient, plus the identity weight."""

    coefficients: dict
    identity_weight: float = 1.0

    def as_array(self):
        return np.array(list(self.coefficients.values()))

    def format(self, digits=3):
        terms = " ".join(
            f"{c:+.{digits}f} {derivative_name(idx)}" for idx, c in self.coefficients.items()
        )
        return f"u_t = {terms}"

    def __str__(self):
        return self.format()


def reconstruct(model: PDEModel) -> Reconstruction:
    idx = derivative_indices(model.Q)
    return Reconstruction(
        {i: float(v) for i, v in zip(idx, model.w)}, identity_weight=float(model.w0)
    )


def reconstruction_mse(rec: Reconstruction, truth) -> float:
    """Mean squared coefficient error over the derivative terms (``w0`` excluded).

    ``truth`` is a :class:`~scatterpde.spectral.PDECoefficients` or a mapping from
    derivative index to value; missing terms count as zero.
    """
    if hasattr(truth, "as_array"):
        truth = dict(zip(derivative_indices(2), truth.as_array()))
    errs = [(v - float(truth.get(idx, 0.0))) ** 2 for idx, v in rec.coefficients.items()]
    return float(np.mean(errs))
