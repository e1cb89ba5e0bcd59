"""Fitting model weights by minimising the multi-step rollout error.

The loss of one window of ``L`` steps starting at snapshot ``s`` is

    (1 / L) * sum_{i=1..L} mean_points (u[s + i] - uhat_i)^2,
    uhat_i = M(w) uhat_{i-1},  uhat_0 = u[s],  M(w) = w0 I + dt sum_j w_j S_j.

Gradients are computed exactly by running the adjoint of this linear recurrence
backwards through the stored forward states.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .errors import DivergenceError
from .model import DIVERGENCE_FACTOR, PDEModel, reconstruct, reconstruction_mse
from .stencil import DerivativeOperator

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "TrainReport",
    "AdamState",
    "adam_step",
    "rollout_loss",
    "gradient",
    "batch_loss_and_grad",
    "train",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    L: int = 20
    lr: float = 1e-3
    weight_decay: float = 1e-7
    batch_size: int = 9
    epochs: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"L must be a positive integer, got {self.L}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not self.weight_decay >= 0:
            raise ValueError(f"weight decay must be non-negative, got {self.weight_decay}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValueError(f"batch size must be a positive integer, got {self.batch_size}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ValueError(f"epochs must be a positive integer, got {self.epochs}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ValueError("Adam eps must be positive")


@dataclass
class AdamState:
    step: int = 0
    exp_avg: np.ndarray = None
    exp_avg_sq: np.ndarray = None


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One Adam update with decoupled weight decay.

    Returns the new parameter vector and optimizer state; inputs are not modified.
    """
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    b1, b2 = config.adam_beta1, config.adam_beta2
    m = np.zeros_like(params) if state.exp_avg is None else state.exp_avg
    v = np.zeros_like(params) if state.exp_avg_sq is None else state.exp_avg_sq
    t = state.step + 1
    m = b1 * m + (1 - b1) * grads
    v = b2 * v + (1 - b2) * grads * grads
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    new = params - config.lr * config.weight_decay * params
    new = new - config.lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return new, AdamState(t, m, v)


@numba.njit(cache=True, fastmath=True)
def _step_forward(data, cols, u, out):
    """``out = M u`` for the stencil-pattern matrix ``M`` (row ``p`` holds ``data[p]`` at ``cols[p]``)."""
    n, width = cols.shape
    nb = u.shape[1]
    for p in range(n):
        for b in range(nb):
            out[p, b] = 0.0
        for k in range(width):
            c = cols[p, k]
            d = data[p, k]
            for b in range(nb):
                out[p, b] += d * u[c, b]


@numba.njit(cache=True, fastmath=True)
def _step_adjoint(data, t_ptr, t_src, t_row, lam, out):
    """``out = M^T lam`` using the column-major view of the stencil pattern.

    Column ``c`` of ``M`` has entries ``data.flat[t_src[e]]`` in rows ``t_row[e]``
    for ``e`` in ``t_ptr[c]:t_ptr[c + 1]``.
    """
    n = t_ptr.shape[0] - 1
    nb = lam.shape[1]
    flat = data.ravel()
    for c in range(n):
        for b in range(nb):
            out[c, b] = 0.0
        for e in range(t_ptr[c], t_ptr[c + 1]):
            d = flat[t_src[e]]
            p = t_row[e]
            for b in range(nb):
                out[c, b] += d * lam[p, b]


@numba.njit(cache=True, fastmath=True)
def _accumulate_edges(cols, lam, prev, edge):
    """``edge[p, k] += sum_b lam[p, b] * prev[cols[p, k], b]``."""
    n, width = cols.shape
    nb = lam.shape[1]
    for p in range(n):
        for k in range(width):
            c = cols[p, k]
            s = 0.0
            for b in range(nb):
                s += lam[p, b] * prev[c, b]
            edge[p, k] += s


@numba.njit(cache=True)
def _rollout_adjoint(data, cols, t_ptr, t_src, t_row, u0, targets, limit, need_grad):
    """Forward rollout plus adjoint sweep for one batch of windows.

    Returns ``(per_point_loss, dloss/dw0, edge, diverged_step)`` where ``edge[p, k]`` sums
    ``lam[p] * prev[cols[p, k]]`` over steps, so that ``dloss/dw_j`` follows by a
    dot product with the stencil values of derivative ``j``. ``diverged_step`` is 0
    unless a state became non-finite or exceeded ``limit`` in RMS.
    """
    L, n, nb = targets.shape
    width = cols.shape[1]
    states = np.empty((L + 1, n, nb))
    states[0] = u0
    scale = 1.0 / (L * n * nb)
    # short per-point sums keep the total accurate enough for finite-difference checks
    loss = np.zeros(n)
    for i in range(L):
        _step_forward(data, cols, states[i], states[i + 1])
        sq = 0.0
        ok = True
        for p in range(n):
            for b in range(nb):
                v = states[i + 1, p, b]
                if not np.isfinite(v):
                    ok = False
                sq += v * v
                r = v - targets[i, p, b]
                loss[p] += r * r
        if not ok or np.sqrt(sq / (n * nb)) > limit:
            return loss, np.nan, np.zeros((n, width)), i + 1
    loss *= scale
    edge = np.zeros((n, width))
    if not need_grad:
        return loss, 0.0, edge, 0
    lam = np.empty((n, nb))
    lam_next = np.empty((n, nb))
    for p in range(n):
        for b in range(nb):
            lam[p, b] = 2.0 * scale * (states[L, p, b] - targets[L - 1, p, b])
    g_w0 = 0.0
    for i in range(L, 0, -1):
        prev = states[i - 1]
        for p in range(n):
            for b in range(nb):
                g_w0 += lam[p, b] * prev[p, b]
        _accumulate_edges(cols, lam, prev, edge)
        if i > 1:
            _step_adjoint(data, t_ptr, t_src, t_row, lam, lam_next)
            for p in range(n):
                for b in range(nb):
                    lam[p, b] = lam_next[p, b] + 2.0 * scale * (states[i - 1, p, b] - targets[i - 2, p, b])
    return loss, g_w0, edge, 0


def _transpose_pattern(op):
    cached = op.__dict__.get("_transpose_pattern")
    if cached is None:
        cols = op._pattern[1]
        src = np.argsort(cols, kind="stable")
        ptr = np.searchsorted(cols[src], np.arange(op.n + 1))
        cached = (ptr, src, src // (op.K + 1))
        # DerivativeOperator is frozen; cache alongside its cached_property values
        op.__dict__["_transpose_pattern"] = cached
    return cached


def _windows(series, start, L):
    """Initial states ``(n, B)`` and targets ``(L, n, B)`` for a list of windows."""
    u0 = np.stack([series[s].snapshots[t] for s, t in start], axis=1)
    y = np.stack([series[s].snapshots[t + 1 : t + L + 1] for s, t in start], axis=2)
    return u0, y


def batch_loss_and_grad(model: PDEModel, op: DerivativeOperator, u0, targets, need_grad=True):
    """Mean rollout loss over a batch of windows and its exact gradient.

    Parameters
    ----------
    u0 : ndarray, shape (n, B)
        Initial state of each window.
    targets : ndarray, shape (L, n, B)
        Ground truth for steps ``1..L``.

    Returns
    -------
    loss : float
    grad : ndarray, shape (1 + m,) or None
        Derivative with respect to ``(w0, w_1, ..., w_m)``.
    """
    u0 = np.asarray(u0, dtype=float)
    if u0.ndim == 1:
        u0 = u0[:, None]
        targets = np.asarray(targets)[..., None]
    L, n, B = targets.shape
    if u0.shape != (n, B) or n != op.n:
        raise ValueError("window shapes do not match the operator")
    n_cols = op.K + 1
    cols = op._pattern[1].reshape(n, n_cols)
    data = (model.dt * model.w @ op.matrix_data).reshape(n, n_cols)
    data[:, -1] += model.w0
    limit = DIVERGENCE_FACTOR * max(np.sqrt(np.mean(u0 * u0)), np.finfo(float).tiny)
    t_ptr, t_src, t_row = _transpose_pattern(op)
    loss, g_w0, edge, bad = _rollout_adjoint(
        data, cols, t_ptr, t_src, t_row, np.ascontiguousarray(u0),
        np.ascontiguousarray(targets, dtype=float), limit, need_grad,
    )
    if bad:
        raise DivergenceError(int(bad))
    loss = float(np.sum(loss))
    if not need_grad:
        return float(loss), None
    g_w = model.dt * (op.matrix_data @ edge.ravel())
    return loss, np.concatenate([[g_w0], g_w])


def rollout_loss(model, op, series, start, L):
    """Rollout loss of one window of ``series`` starting at snapshot ``start``."""
    _check_window(series, start, L)
    u0, y = _windows([series], [(0, start)], L)
    return batch_loss_and_grad(model, op, u0, y, need_grad=False)[0]


def gradient(model, op, series, start, L):
    """Exact ``(dloss/dw0, dloss/dw)`` of :func:`rollout_loss`."""
    _check_window(series, start, L)
    u0, y = _windows([series], [(0, start)], L)
    _, g = batch_loss_and_grad(model, op, u0, y)
    return g[0], g[1:]


def _check_window(series, start, L):
    if int(L) != L or L < 1:
        raise ValueError(f"L must be a positive integer, got {L}")
    if start < 0 or start + L >= series.T:
        raise ValueError(f"window start={start}, L={L} does not fit in T={series.T} snapshots")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    reconstruction_mse: float
    w0: float
    lr: float


@dataclass
class TrainReport:
    model: PDEModel
    epochs: list = field(default_factory=list)
    wall_time: float = 0.0
    diverged: int = 0
    aborted: bool = False

    def to_csv(self):
        lines = ["epoch,loss,reconstruction_mse,w0"]
        for r in self.epochs:
            lines.append(f"{r.epoch},{r.loss!r},{r.reconstruction_mse!r},{r.w0!r}")
        return "\n".join(lines) + "\n"


def train(op: DerivativeOperator, dataset, config: TrainConfig = TrainConfig(), truth=None,
          model: PDEModel | None = None) -> TrainReport:
    """Fit an Euler-step model to a list of :class:`~scatterpde.spectral.FieldSeries`.

    Every epoch visits all ``(trajectory, start)`` windows in a seeded random order,
    averaging gradients over ``batch_size`` windows per Adam step. On the first
    divergence the learning rate is halved and training resumes from the last
    finite weights; a second divergence aborts and returns the partial report.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    dt = dataset[0].dt
    if any(s.dt != dt for s in dataset):
        raise ValueError("all series must share the same dt")
    L = config.L
    windows = [(s, t) for s, ser in enumerate(dataset) for t in range(ser.T - L)]
    if not windows:
        raise ValueError(f"no series is long enough for L={L} prediction steps")
    if model is None:
        model = PDEModel(op.Q, dt)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    report = TrainReport(model.copy())
    params = model.params
    state = AdamState()
    cfg = config
    t_start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(windows))
        losses = []
        for b in range(0, len(order), config.batch_size):
            batch = [windows[j] for j in order[b : b + config.batch_size]]
            u0, y = _windows(dataset, batch, L)
            try:
                loss, g = batch_loss_and_grad(model.with_params(params), op, u0, y)
            except DivergenceError as err:
                report.diverged += 1
                log.warning("divergence at epoch %d (%s)", epoch, err)
                if report.diverged > 1:
                    report.aborted = True
                    report.model = model.with_params(params)
                    report.wall_time = time.perf_counter() - t_start
                    return report
                cfg = _replace_lr(cfg, cfg.lr / 2)
                state = AdamState()
                continue
            losses.append(loss)
            params, state = adam_step(params, g, state, cfg)
        current = model.with_params(params)
        rec = reconstruction_mse(reconstruct(current), truth) if truth is not None else float("nan")
        record = EpochRecord(epoch, float(np.mean(losses)) if losses else float("nan"), rec,
                             float(params[0]), cfg.lr)
        report.epochs.append(record)
        log.info("epoch %d loss %.3e recon %.3e w0 %.6f", epoch, record.loss, rec, record.w0)
    report.model = model.with_params(params)
    report.wall_time = time.perf_counter() - t_start
    return report


def _replace_lr(cfg, lr):
    return replace(cfg, lr=lr)
