from math import factorial

import numpy as np
import pytest

from scatterpde.errors import InsufficientNeighborsError
from scatterpde.pointcloud import Domain, build_neighbors, sample_grid, sample_random
from scatterpde.stencil import (
    apply,
    build_operator,
    build_stencil,
    derivative_indices,
    derivative_name,
    design_matrix,
    n_unknowns,
)


def local_monomial_derivs(q, r):
    """Exact derivatives at the origin of dx^q dy^r, in canonical order for Q = 2."""
    return np.array([factorial(q) * factorial(r) if (a, b) == (q, r) else 0.0
                     for a, b in derivative_indices(2)])


def test_canonical_order():
    assert derivative_indices(2) == [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert n_unknowns(2) == 5
    assert n_unknowns(1) == 2
    assert n_unknowns(3) == 9
    assert [derivative_name(i) for i in derivative_indices(2)] == [
        "u_x", "u_y", "u_xx", "u_xy", "u_yy"]


def test_design_matrix_entries(rng):
    off = rng.normal(size=(7, 2))
    A = design_matrix(off, 2)
    assert A.shape == (7, 5)
    dx, dy = off[:, 0], off[:, 1]
    expect = np.column_stack([dx, dy, dx**2 / 2, dx * dy, dy**2 / 2])
    np.testing.assert_allclose(A, expect, rtol=1e-15)


def test_stencil_exact_for_quadratics(rng):
    off = rng.uniform(-1, 1, size=(12, 2))
    st = build_stencil(off, 2)
    assert st.weights.shape == (5, 12)
    assert not st.rank_deficient
    for q, r in derivative_indices(2):
        du = off[:, 0] ** q * off[:, 1] ** r
        np.testing.assert_allclose(st.weights @ du, local_monomial_derivs(q, r), atol=1e-10)


def test_exactly_determined_stencil_inverts(rng):
    off = rng.uniform(-1, 1, size=(5, 2))
    st = build_stencil(off, 2)
    np.testing.assert_allclose(st.weights @ design_matrix(off, 2), np.eye(5), atol=1e-9)


def test_condition_matches_numpy(rng):
    off = rng.uniform(-1, 1, size=(20, 2))
    st = build_stencil(off, 2)
    assert st.condition == pytest.approx(np.linalg.cond(design_matrix(off, 2)), rel=1e-10)


def test_collinear_stencil_flagged():
    t = np.linspace(-1, 1, 10)
    off = np.column_stack([t, 2 * t])
    off = off[np.abs(t) > 0]
    st = build_stencil(off, 2)
    assert np.linalg.matrix_rank(design_matrix(off, 2)) < 5
    assert st.rank_deficient
    assert st.condition > 1e10
    assert np.all(np.isfinite(st.weights))


def test_insufficient_neighbors_names_m():
    with pytest.raises(InsufficientNeighborsError, match="m=5"):
        build_stencil(np.eye(2)[:, ::-1] + 0.1, 2)
    nt = build_neighbors(sample_grid(Domain(1.0), 8), 4)
    with pytest.raises(InsufficientNeighborsError, match="K=4.*m=5"):
        build_operator(nt, 2)


def test_zero_offset_rejected():
    with pytest.raises(ValueError):
        build_stencil([[0, 0], [1, 0], [0, 1], [1, 1], [-1, 0], [0, -1]], 2)


def test_single_neighbor_q1_underdetermined():
    with pytest.raises(InsufficientNeighborsError):
        build_stencil([[1.0, 0.0]], 1)


@pytest.mark.parametrize("kind", ["grid", "random"])
def test_operator_exact_on_linear_field_interior(kind):
    d = Domain(32.0)
    ps = sample_grid(d, 32) if kind == "grid" else sample_random(d, 1024, 0)
    op = build_operator(build_neighbors(ps, 20), 2)
    u = 0.3 * ps.x - 0.7 * ps.y + 0.05 * (ps.x - 16) ** 2
    D = apply(op, u)
    # stencils that do not straddle the periodic seam see the polynomial unwrapped
    radius = np.linalg.norm(op.neighbors.offsets, axis=-1).max(axis=1)
    inner = np.all((ps.points > radius[:, None]) & (ps.points < 32 - radius[:, None]), axis=1)
    assert inner.sum() > 100
    expect = np.column_stack([0.3 + 0.1 * (ps.x - 16), np.full(ps.n, -0.7),
                              np.full(ps.n, 0.1), np.zeros(ps.n), np.zeros(ps.n)])
    np.testing.assert_allclose(D[inner], expect[inner], atol=1e-9)


def test_apply_shapes_and_batch(grid64):
    op = build_operator(build_neighbors(grid64, 8), 2)
    u = np.sin(grid64.x * np.pi / 16)
    single = apply(op, u)
    assert single.shape == (4096, 5)
    batch = apply(op, np.column_stack([u, 2 * u, -u]))
    assert batch.shape == (4096, 5, 3)
    np.testing.assert_allclose(batch[..., 0], single, atol=1e-12)
    np.testing.assert_allclose(batch[..., 1], 2 * single, atol=1e-12)
    with pytest.raises(ValueError):
        apply(op, u[:-1])


def test_constant_field_has_zero_derivatives(grid64):
    op = build_operator(build_neighbors(grid64, 24), 2)
    np.testing.assert_allclose(apply(op, np.full(grid64.n, 3.7)), 0.0, atol=1e-12)


def test_sparse_matrices_agree_with_apply(rng):
    ps = sample_random(Domain(32.0), 300, 4)
    op = build_operator(build_neighbors(ps, 12), 2)
    u = rng.normal(size=ps.n)
    D = apply(op, u)
    for j, S in enumerate(op.matrices()):
        np.testing.assert_allclose(S @ u, D[:, j], rtol=1e-12, atol=1e-12)
    c = rng.normal(size=5)
    M = op.combined_matrix(c, diagonal=0.5)
    np.testing.assert_allclose(M @ u, 0.5 * u + D @ c, rtol=1e-12, atol=1e-12)


def test_grid_stencils_share_weights(grid64):
    op = build_operator(build_neighbors(grid64, 24), 2)
    # identical geometry everywhere gives identical conditions
    assert np.ptp(op.conditions) < 1e-9 * op.conditions[0]
    assert not op.rank_deficient.any()
