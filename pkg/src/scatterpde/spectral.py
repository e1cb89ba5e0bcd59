"""Exact Fourier solution of constant-coefficient advection-diffusion on a periodic square.

For ``u_t = a10 u_x + a01 u_y + a20 u_xx + a11 u_xy + a02 u_yy`` every Fourier mode
``exp(i (kx x + ky y))`` evolves independently with growth rate

    lam(kx, ky) = i (a10 kx + a01 ky) - a20 kx^2 - a11 kx ky - a02 ky^2,

so a band-limited initial condition can be advanced to any time without
discretisation error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UnstableEquationError
from .pointcloud import PointSet

__all__ = [
    "PDECoefficients",
    "SpectralField",
    "FieldSeries",
    "random_initial",
    "single_mode",
    "evolve",
    "evaluate_at",
    "generate_series",
    "wavenumbers",
    "EQUATIONS",
]


@dataclass(frozen=True)
class PDECoefficients:
    """Coefficients of the right-hand side; absent terms are zero."""

    a10: float = 0.0
    a01: float = 0.0
    a20: float = 0.0
    a11: float = 0.0
    a02: float = 0.0

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError("PDE coefficients must be finite")
        # Re(lam) <= 0 for every wavenumber iff the diffusion form is positive semi-definite
        a20, a11, a02 = self.a20, self.a11, self.a02
        tol = 1e-12 * max(1.0, abs(a20), abs(a11), abs(a02)) ** 2
        if a20 < 0 or a02 < 0 or 4.0 * a20 * a02 - a11 * a11 < -tol:
            raise UnstableEquationError(
                f"diffusion form a20={a20}, a11={a11}, a02={a02} is not positive "
                "semi-definite; some Fourier modes would grow without bound"
            )

    def as_array(self):
        """Coefficients in canonical derivative order (u_x, u_y, u_xx, u_xy, u_yy)."""
        return np.array([self.a10, self.a01, self.a20, self.a11, self.a02])

    @classmethod
    def from_array(cls, values):
        a10, a01, a20, a11, a02 = (float(v) for v in values)
        return cls(a10=a10, a01=a01, a20=a20, a11=a11, a02=a02)

    def symbol(self, kx, ky):
        """Complex growth rate of the mode with physical wavenumber ``(kx, ky)``."""
        return 1j * (self.a10 * kx + self.a01 * ky) - (
            self.a20 * kx * kx + self.a11 * kx * ky + self.a02 * ky * ky
        )


#: the three benchmark equations: advection, anisotropic diffusion, advection-diffusion
EQUATIONS = {
    1: PDECoefficients(a10=1.5, a01=1.5),
    2: PDECoefficients(a20=0.9, a11=0.77, a02=0.33),
    3: PDECoefficients(a10=1.0, a01=1.0, a20=1.0, a11=1.0, a02=1.0),
}


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real band-limited field ``sum_k c[k] exp(2 pi i k.x / extent)``.

    ``coefficients[kx + M, ky + M]`` holds the amplitude of integer mode ``(kx, ky)``
    for ``|kx|, |ky| <= M``.
    """

    coefficients: np.ndarray
    extent: float = 2 * np.pi

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=complex, copy=True)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] % 2 != 1 or c.shape[0] < 3:
            raise ValueError(f"coefficients must be (2M+1, 2M+1) with M >= 1, got {c.shape}")
        if not np.allclose(c, np.conj(c[::-1, ::-1]), rtol=0, atol=1e-14 * max(1.0, np.abs(c).max())):
            raise ValueError("coefficients must be conjugate symmetric for a real field")
        c = 0.5 * (c + np.conj(c[::-1, ::-1]))
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def max_wavenumber(self):
        return (self.coefficients.shape[0] - 1) // 2

    def energy(self):
        """Spatial mean of ``u^2`` (Parseval)."""
        return float(np.sum(np.abs(self.coefficients) ** 2))

    def mean(self):
        M = self.max_wavenumber
        return float(self.coefficients[M, M].real)


def wavenumbers(M, extent):
    """Integer mode numbers ``-M..M`` and the matching physical wavenumbers."""
    k = np.arange(-M, M + 1)
    return k, 2 * np.pi * k / extent


def random_initial(M, seed, spectrum_decay=0.05, extent=2 * np.pi):
    """Zero-mean, unit-RMS Gaussian random field with modes up to ``M``.

    Amplitudes are standard complex normals damped by
    ``exp(-spectrum_decay * (kx^2 + ky^2))`` in integer mode numbers.
    """
    if int(M) != M or M < 1:
        raise ValueError(f"max wavenumber must be an integer >= 1, got {M}")
    if spectrum_decay < 0:
        raise ValueError("spectrum_decay must be non-negative")
    M = int(M)
    rng = np.random.Generator(np.random.PCG64(seed))
    shape = (2 * M + 1, 2 * M + 1)
    c = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    k = np.arange(-M, M + 1)
    c *= np.exp(-spectrum_decay * (k[:, None] ** 2 + k[None, :] ** 2))
    c = 0.5 * (c + np.conj(c[::-1, ::-1]))
    c[M, M] = 0.0
    c /= np.sqrt(np.sum(np.abs(c) ** 2))
    return SpectralField(c, extent)


def single_mode(kx, ky, extent=2 * np.pi, kind="sin", amplitude=1.0, M=None):
    """``amplitude * sin`` or ``cos`` of ``2 pi (kx x + ky y) / extent``."""
    M = max(abs(kx), abs(ky), 1) if M is None else M
    c = np.zeros((2 * M + 1, 2 * M + 1), dtype=complex)
    if kind == "sin":
        c[M + kx, M + ky] += amplitude / 2j
        c[M - kx, M - ky] -= amplitude / 2j
    elif kind == "cos":
        c[M + kx, M + ky] += amplitude / 2
        c[M - kx, M - ky] += amplitude / 2
    else:
        raise ValueError(f"kind must be 'sin' or 'cos', got {kind!r}")
    return SpectralField(c, extent)


def evolve(f0: SpectralField, coeffs: PDECoefficients, t: float) -> SpectralField:
    """Advance ``f0`` by time ``t`` exactly."""
    if t < 0:
        raise ValueError("evolution time must be non-negative")
    _, k = wavenumbers(f0.max_wavenumber, f0.extent)
    lam = coeffs.symbol(k[:, None], k[None, :])
    if np.any(lam.real > 1e-12 * np.maximum(1.0, np.abs(lam))):
        raise UnstableEquationError("equation has growing modes in the retained band")
    return SpectralField(f0.coefficients * np.exp(lam * t), f0.extent)


def evaluate_at(f: SpectralField, ps) -> np.ndarray:
    """Exact trigonometric evaluation of ``f`` at arbitrary points.

    ``ps`` may be a :class:`PointSet` or an ``(n, 2)`` coordinate array.
    """
    pts = ps.points if isinstance(ps, PointSet) else np.asarray(ps, dtype=float).reshape(-1, 2)
    _, k = wavenumbers(f.max_wavenumber, f.extent)
    ex = np.exp(1j * pts[:, :1] * k[None, :])
    ey = np.exp(1j * pts[:, 1:] * k[None, :])
    return np.einsum("ia,ab,ib->i", ex, f.coefficients, ey).real


@dataclass(frozen=True, eq=False)
class FieldSeries:
    """Snapshots ``u(t0 + tau dt)`` at the points of ``pointset``, shape ``(T, n)``."""

    pointset: PointSet
    dt: float
    snapshots: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.array(self.snapshots, dtype=float, copy=True)
        if s.ndim != 2 or s.shape[0] < 2:
            raise ValueError(f"snapshots must have shape (T, n) with T >= 2, got {s.shape}")
        if s.shape[1] != self.pointset.n:
            raise ValueError(
                f"snapshot width {s.shape[1]} does not match {self.pointset.n} points"
            )
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        s.setflags(write=False)
        object.__setattr__(self, "snapshots", s)

    @property
    def T(self):
        return self.snapshots.shape[0]

    @property
    def n(self):
        return self.snapshots.shape[1]


def generate_series(coeffs, ic_seed, ps, dt=0.1, T=171, M=8, decay=0.05):
    """Sample the exact solution from a random initial condition at ``T`` times."""
    if int(T) != T or T < 2:
        raise ValueError(f"need at least two snapshots, got T={T}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    f0 = random_initial(M, ic_seed, decay, ps.domain.extent)
    snaps = np.empty((int(T), ps.n))
    for tau in range(int(T)):
        snaps[tau] = evaluate_at(evolve(f0, coeffs, tau * dt), ps)
    return FieldSeries(ps, float(dt), snaps)
