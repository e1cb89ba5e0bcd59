"""Independent reference implementations used as test oracles."""

import numpy as np

from scatterpde.errors import DivergenceError
from scatterpde.model import PDEModel, euler_step
from scatterpde.pointcloud import Domain, build_neighbors, sample_random
from scatterpde.stencil import build_operator
from scatterpde.train import batch_loss_and_grad


def all_pairs_knn(ps, k):
    """O(n^2) kNN: full distance matrix, stable sort by (distance, index)."""
    pts = ps.points
    E = ps.domain.extent
    d = pts[None, :, :] - pts[:, None, :]
    d = np.where(d >= E / 2, d - E, d)
    d = np.where(d < -E / 2, d + E, d)
    d2 = d[..., 0] ** 2 + d[..., 1] ** 2
    n = len(pts)
    np.fill_diagonal(d2, np.inf)
    order = np.lexsort((np.broadcast_to(np.arange(n), (n, n)), d2), axis=-1)[:, :k]
    off = np.take_along_axis(d, order[..., None], axis=1)
    return order, off


def dense_step(model, op):
    """Euler step matrix assembled entry by entry from the raw stencil weights."""
    n = op.n
    M = np.zeros((n, n))
    idx = op.neighbors.indices
    for i in range(n):
        M[i, i] += model.w0
        for k in range(op.K):
            c = model.dt * float(model.w @ op.weights[i, :, k])
            M[i, idx[i, k]] += c
            M[i, i] -= c
    return M


def reference_loss(params, op, dt, u0, targets):
    """Plain numpy L-step loss: mean over steps, points and windows."""
    model = PDEModel(op.Q, dt, params[0], params[1:])
    u = u0
    total = 0.0
    for y in targets:
        u = euler_step(model, op, u)
        total += np.mean((u - y) ** 2)
    return total / len(targets)


def central_difference(params, op, dt, u0, targets, h=1e-6):
    g = np.empty_like(params)
    for j in range(len(params)):
        p, q = params.copy(), params.copy()
        p[j] += h
        q[j] -= h
        g[j] = (reference_loss(p, op, dt, u0, targets) - reference_loss(q, op, dt, u0, targets)) / (2 * h)
    return g


def _draw_problem(rng, max_L=20):
    d = Domain(float(rng.choice([8.0, 32.0])))
    n = int(rng.integers(40, 160))
    ps = sample_random(d, n, int(rng.integers(1 << 30)))
    op = build_operator(build_neighbors(ps, int(rng.integers(5, 21))), 2)
    L = int(rng.integers(1, max_L + 1))
    B = int(rng.integers(1, 4))
    dt = float(rng.choice([0.01, 0.05, 0.1]))
    params = np.concatenate([[rng.uniform(0.8, 1.1)], rng.normal(scale=0.5, size=5)])
    u0 = rng.normal(size=(n, B))
    targets = rng.normal(size=(L, n, B))
    return op, dt, params, u0, targets


def random_problem(rng, max_L=20):
    """Random operator, weights and windows; redrawn until the rollout stays bounded."""
    while True:
        prob = _draw_problem(rng, max_L)
        op, dt, params, u0, y = prob
        try:
            batch_loss_and_grad(PDEModel(2, dt, params[0], params[1:]), op, u0, y, need_grad=False)
        except DivergenceError:
            continue
        return prob
