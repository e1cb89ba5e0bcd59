"""Observation locations on a periodic square and periodic k-nearest-neighbor search."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "Domain",
    "PointSet",
    "NeighborTable",
    "sample_grid",
    "sample_random",
    "sample_lattice",
    "build_neighbors",
    "brute_force_neighbors",
    "minimum_image",
]


def _workers():
    # SCATTERPDE_NUM_THREADS caps the kd-tree query pool; -1 means all cores
    return int(os.environ.get("SCATTERPDE_NUM_THREADS", "1"))


@dataclass(frozen=True)
class Domain:
    """Periodic square ``[0, extent)^2``."""

    extent: float = 32.0

    def __post_init__(self):
        if not (np.isfinite(self.extent) and self.extent > 0):
            raise ValueError(f"domain extent must be positive, got {self.extent}")


def minimum_image(delta, extent):
    """Wrap displacements to the nearest periodic copy, components in ``[-extent/2, extent/2)``."""
    half = 0.5 * extent
    d = np.asarray(delta, dtype=float)
    # differences of in-domain coordinates lie in (-extent, extent): one shift suffices
    d = np.where(d >= half, d - extent, d)
    return np.where(d < -half, d + extent, d)


@dataclass(frozen=True, eq=False)
class PointSet:
    domain: Domain
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ValueError(f"points must have shape (n, 2) with n >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        extent = self.domain.extent
        if np.any(pts < 0) or np.any(pts >= extent):
            raise ValueError(f"point coordinates must lie in [0, {extent})")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("points must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def x(self):
        return self.points[:, 0]

    @property
    def y(self):
        return self.points[:, 1]


@dataclass(frozen=True, eq=False)
class NeighborTable:
    """k nearest periodic neighbors of every point.

    ``indices[i]`` lists the neighbors of point ``i`` (never ``i`` itself), sorted by
    distance and then by index. ``offsets[i, j]`` is the minimum-image displacement
    from point ``i`` to point ``indices[i, j]``.
    """

    pointset: PointSet
    indices: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        for arr in (self.indices, self.offsets):
            arr.setflags(write=False)

    @property
    def k(self):
        return self.indices.shape[1]

    @property
    def n(self):
        return self.indices.shape[0]


def sample_grid(domain: Domain, side: int) -> PointSet:
    """Cell-centred ``side x side`` grid, x varying fastest."""
    if int(side) != side or side < 2:
        raise ValueError(f"grid side must be an integer >= 2, got {side}")
    side = int(side)
    coords = (np.arange(side) + 0.5) * (domain.extent / side)
    xx, yy = np.meshgrid(coords, coords, indexing="xy")
    return PointSet(domain, np.column_stack([xx.ravel(), yy.ravel()]))


def sample_random(domain: Domain, n: int, seed: int) -> PointSet:
    """``n`` i.i.d. uniform points drawn with numpy's PCG64 generator.

    Coincident points are redrawn, so the result is always pairwise distinct.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"number of points must be >= 1, got {n}")
    n = int(n)
    rng = np.random.Generator(np.random.PCG64(seed))
    extent = domain.extent
    pts = rng.uniform(0.0, extent, size=(n, 2))
    while True:
        bad = np.any(pts >= extent, axis=1)
        _, first = np.unique(pts, axis=0, return_index=True)
        dup = np.ones(n, dtype=bool)
        dup[first] = False
        bad |= dup
        if not bad.any():
            break
        pts[bad] = rng.uniform(0.0, extent, size=(int(bad.sum()), 2))
    return PointSet(domain, pts)


def sample_lattice(domain: Domain, n: int, seed: int, fine_side: int = 256) -> PointSet:
    """Random subset of ``n`` nodes of a cell-centred ``fine_side x fine_side`` grid.

    This mimics simulating on a fine grid and keeping a random subset of its nodes.
    Unlike :func:`sample_random` no two points can be closer than one fine cell,
    which keeps least-squares stencils well shaped. Points are returned in
    row-major order of the fine grid.
    """
    if int(fine_side) != fine_side or fine_side < 2:
        raise ValueError(f"fine grid side must be an integer >= 2, got {fine_side}")
    fine_side = int(fine_side)
    if int(n) != n or not 1 <= n <= fine_side * fine_side:
        raise ValueError(f"need 1 <= n <= {fine_side ** 2}, got {n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = np.sort(rng.choice(fine_side * fine_side, size=int(n), replace=False))
    return PointSet(domain, sample_grid(domain, fine_side).points[chosen])


def _sorted_candidates(ps, centers, cand, k):
    """Order candidate neighbor lists by (squared distance, index), keep ``k``.

    Returns indices, offsets, and the boolean mask of rows whose k-th neighbor is
    strictly closer than the farthest candidate (i.e. the selection is provably exact).
    """
    pts = ps.points
    off = minimum_image(pts[cand] - pts[centers][:, None, :], ps.domain.extent)
    d2 = off[..., 0] * off[..., 0] + off[..., 1] * off[..., 1]
    order = np.lexsort((cand, d2), axis=-1)
    cand = np.take_along_axis(cand, order, axis=1)
    off = np.take_along_axis(off, order[..., None], axis=1)
    d2 = np.take_along_axis(d2, order, axis=1)
    exact = d2[:, k - 1] < d2[:, -1] if cand.shape[1] > k else np.ones(len(cand), bool)
    return cand[:, :k], off[:, :k], exact


def build_neighbors(ps: PointSet, k: int) -> NeighborTable:
    """Exact periodic kNN using a periodic kd-tree.

    The tree proposes candidates; their distances are recomputed with
    :func:`minimum_image` and ties are broken by ascending index, so the result is
    identical to :func:`brute_force_neighbors`.
    """
    n = ps.n
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    k = int(k)
    if k >= n:
        raise ValueError(f"k={k} neighbors requested but only {n} points exist")
    extent = ps.domain.extent
    tree = cKDTree(ps.points, boxsize=extent)
    indices = np.empty((n, k), dtype=np.intp)
    offsets = np.empty((n, k, 2))
    todo = np.arange(n)
    extra = 4
    while todo.size:
        q = min(k + 1 + extra, n)
        _, cand = tree.query(ps.points[todo], k=q, workers=_workers())
        cand = np.asarray(cand).reshape(len(todo), q)
        keep = cand != todo[:, None]
        # self is normally returned first; if a row lacks it, drop its farthest candidate
        keep[keep.all(axis=1), -1] = False
        cand = cand[keep].reshape(len(todo), q - 1)
        idx, off, exact = _sorted_candidates(ps, todo, cand, k)
        if q == n:
            exact[:] = True
        indices[todo[exact]] = idx[exact]
        offsets[todo[exact]] = off[exact]
        todo = todo[~exact]
        extra *= 2
    return NeighborTable(ps, indices, offsets)


def brute_force_neighbors(ps: PointSet, k: int) -> NeighborTable:
    """O(n^2) reference search with the same ordering rules as :func:`build_neighbors`."""
    n = ps.n
    if k >= n:
        raise ValueError(f"k={k} neighbors requested but only {n} points exist")
    indices = np.empty((n, k), dtype=np.intp)
    offsets = np.empty((n, k, 2))
    others = np.arange(n)
    for i in range(n):
        cand = np.delete(others, i)[None, :]
        idx, off, _ = _sorted_candidates(ps, np.array([i]), cand, k)
        indices[i] = idx[0]
        offsets[i] = off[0]
    return NeighborTable(ps, indices, offsets)
