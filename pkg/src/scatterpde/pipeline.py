"""End-to-end experiment steps shared by the command line and the acceptance tests."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, InsufficientNeighborsError
from .model import DIVERGENCE_FACTOR, PDEModel, reconstruct, reconstruction_mse, step_matrix
from .pointcloud import build_neighbors
from .spectral import FieldSeries, generate_series
from .stencil import (
    DerivativeOperator,
    build_operator,
    derivative_indices,
    design_matrix,
    n_unknowns,
)
from .train import TrainReport, train

__all__ = [
    "Dataset",
    "Forecast",
    "ExperimentResult",
    "make_dataset",
    "make_operator",
    "forecast",
    "run_experiment",
    "ablate",
    "stencil_diagnostics",
    "heatmap_steps",
]

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    train: list
    test: FieldSeries

    @property
    def pointset(self):
        return self.test.pointset


def make_dataset(cfg, pointset=None) -> Dataset:
    """Training trajectories (seeds ``ic_seed + i``) and one held-out test trajectory."""
    ps = cfg.pointset() if pointset is None else pointset
    coeffs = cfg.coefficients()
    gen = dict(ps=ps, dt=cfg.dt, T=cfg.T, M=cfg.max_wavenumber, decay=cfg.spectrum_decay)
    train_series = [generate_series(coeffs, cfg.ic_seed + i, **gen) for i in range(cfg.n_train)]
    test = generate_series(coeffs, cfg.test_seed, **gen)
    return Dataset(train_series, test)


def make_operator(pointset, K, Q=2) -> DerivativeOperator:
    m = n_unknowns(Q)
    if K < m:
        raise InsufficientNeighborsError(K, m)
    return build_operator(build_neighbors(pointset, K), Q)


@dataclass
class Forecast:
    """Per-step MSE of a rollout from snapshot 0; truncated at the first bad step."""

    mse: np.ndarray
    states: dict
    diverged_at: int | None = None

    @property
    def final_mse(self):
        return math.inf if self.diverged_at is not None else float(self.mse[-1])


def heatmap_steps(H):
    return sorted({max(1, s) for s in (1, H // 4, H // 2, H)})


def forecast(model: PDEModel, op: DerivativeOperator, series: FieldSeries, H: int,
             keep_steps=()) -> Forecast:
    """Roll ``model`` out ``H`` steps from the first snapshot of ``series``."""
    if series.T < H + 1:
        raise ValueError(f"series has {series.T} snapshots, forecast needs {H + 1}")
    M = step_matrix(model, op)
    u = series.snapshots[0].copy()
    limit = DIVERGENCE_FACTOR * max(np.sqrt(np.mean(u * u)), np.finfo(float).tiny)
    mse = []
    states = {}
    for step in range(1, H + 1):
        u = M @ u
        if not np.all(np.isfinite(u)) or np.sqrt(np.mean(u * u)) > limit:
            return Forecast(np.array(mse), states, diverged_at=step)
        mse.append(float(np.mean((u - series.snapshots[step]) ** 2)))
        if step in keep_steps:
            states[step] = u.copy()
    return Forecast(np.array(mse), states)


@dataclass
class ExperimentResult:
    K: int
    report: TrainReport
    forecast: Forecast
    reconstruction_mse: float
    max_condition: float
    rank_deficient: int

    @property
    def model(self):
        return self.report.model


def run_experiment(cfg, data: Dataset, K=None, op=None) -> ExperimentResult:
    """Train on ``data.train`` and forecast ``cfg.horizon`` steps of ``data.test``."""
    K = cfg.K if K is None else K
    if op is None:
        op = make_operator(data.pointset, K, cfg.Q)
    truth = cfg.coefficients()
    report = train(op, data.train, cfg.train_config(), truth=truth)
    fc = forecast(report.model, op, data.test, cfg.horizon)
    rec = reconstruction_mse(reconstruct(report.model), truth)
    return ExperimentResult(K, report, fc, rec, float(np.max(op.conditions)),
                            int(np.sum(op.rank_deficient)))


def ablate(cfg, data: Dataset, k_values):
    """Repeat :func:`run_experiment` for each neighbor count on the same data and seeds.

    Failures are recorded as NaN (or ``inf`` forecast MSE on divergence) rather than
    stopping the sweep.
    """
    rows = []
    for k in k_values:
        try:
            res = run_experiment(cfg, data, K=k)
            rows.append(dict(k=k, reconstruction_mse=res.reconstruction_mse,
                             forecast_mse=res.forecast.final_mse,
                             max_condition=res.max_condition,
                             rank_deficient=res.rank_deficient, result=res))
        except (InsufficientNeighborsError, DivergenceError, ValueError) as err:
            log.warning("ablation K=%d failed: %s", k, err)
            rows.append(dict(k=k, reconstruction_mse=math.nan, forecast_mse=math.nan,
                             max_condition=math.nan, rank_deficient=-1, result=None))
    return rows


def stencil_diagnostics(op: DerivativeOperator):
    """Per-point condition numbers and worst monomial reproduction error.

    For every monomial ``dx^q dy^r`` (``1 <= q + r <= Q``) in local coordinates around
    each centre, the stencil should return exactly ``q! r!`` for that derivative and 0
    for the others. Returns a dict of per-point arrays.
    """
    A = design_matrix(op.neighbors.offsets, op.Q)  # (n, K, m)
    recovered = np.einsum("imk,ikj->imj", op.weights, A)
    err = np.abs(recovered - np.eye(op.m))
    scale = np.array([math.factorial(q) * math.factorial(r) for q, r in derivative_indices(op.Q)])
    err = err * scale[None, None, :]
    return dict(
        condition=np.asarray(op.conditions),
        rank_deficient=np.asarray(op.rank_deficient),
        max_error=err.max(axis=(1, 2)),
    )
