import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_state
from oracles import fd_jacobian, shoelace_loop
from properties import jacobian_vs_fd
from sdflow.assembly import (BAND, DofMap, SparseSystem, StepUnknowns, assemble_jacobian,
                             assemble_residual, element_integral_deg2, zigzag_order)
from sdflow.geometry import Curve, make_ellipse, make_polygon, perimeter, polygon_area
from sdflow.newton import bootstrap_curvature, solve_time_step
from sdflow.timequad import node_jump_integrals


def _rot(phi):
    return np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])


def test_static_residual_is_the_tangent_jump():
    c = make_ellipse(2, 1, 16)
    tau = 0.05
    dm = DofMap(16)
    res = assemble_residual(c, StepUnknowns(c.nodes, np.zeros(16), np.zeros(16)), tau)
    np.testing.assert_array_equal(res[dm.p_slice], 0)
    np.testing.assert_array_equal(res[dm.q_slice], 0)
    theta = node_jump_integrals(c, c, tau)
    np.testing.assert_allclose(res[dm.x_slice], -theta.ravel(), atol=1e-15)


def test_translation_invariance_of_residual():
    prev, guess = random_state(14, seed=2)
    shift = np.array([3.7, -12.25])
    moved_prev = Curve(prev.nodes + shift, orient=False)
    moved = StepUnknowns(guess.positions + shift, guess.p, guess.q)
    r0 = assemble_residual(prev, guess, 0.01)
    r1 = assemble_residual(moved_prev, moved, 0.01)
    assert np.max(np.abs(r1 - r0)) <= 1e-13 * max(1.0, np.max(np.abs(r0)))


@given(phi=st.floats(0, 2 * np.pi), seed=st.integers(0, 1000))
def test_rotation_equivariance(phi, seed):
    prev, guess = random_state(10, seed=seed)
    rot = _rot(phi)
    dm = DofMap(10)
    r0 = assemble_residual(prev, guess, 0.02)
    r1 = assemble_residual(Curve(prev.nodes @ rot.T, orient=False),
                           StepUnknowns(guess.positions @ rot.T, guess.p, guess.q), 0.02)
    scale = np.max(np.abs(r0))
    # vector rows rotate with the curve, scalar rows are invariant
    np.testing.assert_allclose(r1[dm.x_slice].reshape(-1, 2), r0[dm.x_slice].reshape(-1, 2) @ rot.T,
                               atol=1e-12 * scale)
    np.testing.assert_allclose(r1[2 * 10:], r0[2 * 10:], atol=1e-12 * scale)


def test_jacobian_matches_finite_differences():
    assert jacobian_vs_fd() <= 1e-6


def test_written_variant_differs_only_in_position_columns():
    prev, guess = random_state(10, seed=4)
    exact = assemble_jacobian(prev, guess, 0.01, "time_weighted").matrix.toarray()
    written = assemble_jacobian(prev, guess, 0.01, "as_written").matrix.toarray()
    diff = np.abs(exact - written)
    assert np.max(diff) > 0
    assert np.max(diff[:, 2 * 10:]) == 0
    assert np.max(diff[3 * 10:]) == 0


def test_jacobian_structure_and_rhs():
    prev, guess = random_state(12, seed=6)
    dm = DofMap(12)
    sys_ = assemble_jacobian(prev, guess, 0.01)
    np.testing.assert_array_equal(sys_.rhs, -assemble_residual(prev, guess, 0.01))
    a = sys_.matrix.toarray()
    # tangential rows only see positions
    assert np.max(np.abs(a[dm.q_slice, 2 * 12:])) == 0
    with pytest.raises(ValueError):
        assemble_jacobian(prev, guess, 0.01, "other")


@pytest.mark.parametrize("m", [3, 4, 5, 8, 33, 64])
def test_banded_storage_matches_sparse(m):
    prev, guess = random_state(m, seed=m)
    sys_ = assemble_jacobian(prev, guess, 0.01)
    ab, perm = sys_.banded()
    n = 4 * m
    dense = np.zeros((n, n))
    for i in range(n):
        for j in range(max(0, i - BAND), min(n, i + BAND + 1)):
            dense[i, j] = ab[2 * BAND + i - j, j]
    a = sys_.matrix.toarray()[np.ix_(perm, perm)]
    np.testing.assert_allclose(dense, a, rtol=0, atol=0)


def test_nonzeros_grow_linearly():
    counts = []
    for m in (16, 32, 64):
        prev, guess = random_state(m, seed=1)
        counts.append(assemble_jacobian(prev, guess, 0.01).matrix.nnz)
    assert counts[1] == 2 * counts[0] and counts[2] == 2 * counts[1]


def test_zigzag_neighbours_are_close():
    for m in range(3, 40):
        order = zigzag_order(m)
        assert sorted(order) == list(range(m))
        pos = np.empty(m, dtype=int)
        pos[order] = np.arange(m)
        gaps = np.abs(pos - np.roll(pos, -1))
        assert gaps.max() <= 2


def test_dof_map_is_a_bijection():
    dm = DofMap(7)
    idx = [dm.x(i, c) for i in range(7) for c in (0, 1)] + [dm.p(i) for i in range(7)] \
        + [dm.q(i) for i in range(7)]
    assert sorted(idx) == list(range(dm.size))
    prev, guess = random_state(7)
    back = dm.unpack(dm.pack(guess))
    np.testing.assert_array_equal(back.positions, guess.positions)
    np.testing.assert_array_equal(back.p, guess.p)
    np.testing.assert_array_equal(back.q, guess.q)
    assert dm.x(7, 1) == dm.x(0, 1)


def test_sparse_system_needs_one_representation():
    with pytest.raises(ValueError):
        SparseSystem(rhs=np.zeros(4))
    with pytest.raises(ValueError):
        SparseSystem(np.eye(4), np.zeros(4)).banded()


def test_assembly_is_deterministic():
    prev, guess = random_state(20, seed=9)
    a = assemble_jacobian(prev, guess, 0.01)
    b = assemble_jacobian(prev, guess, 0.01)
    np.testing.assert_array_equal(a.matrix.toarray(), b.matrix.toarray())
    np.testing.assert_array_equal(a.rhs, b.rhs)


def test_input_validation():
    prev, guess = random_state(6)
    with pytest.raises(ValueError):
        assemble_residual(prev, guess, 0.0)
    with pytest.raises(ValueError):
        assemble_residual(make_polygon(5), guess, 0.1)
    with pytest.raises(ValueError):
        StepUnknowns(np.zeros((3, 2)), np.zeros(3), np.array([0, 0, np.nan]))


def test_element_integral_examples():
    assert element_integral_deg2(1, 0, 0, 1) == pytest.approx(1 / 6, rel=1e-15)
    assert element_integral_deg2(1, 0, 1, 0) == pytest.approx(1 / 3, rel=1e-15)
    assert element_integral_deg2(1, 1, width=2.5) == pytest.approx(2.5, rel=1e-15)


def test_element_integral_of_random_cubic(rng):
    for _ in range(20):
        v = rng.standard_normal(6)
        h = rng.uniform(0.1, 3)
        s = np.linspace(0, 1, 2001)
        lin = lambda l, r: l + s * (r - l)
        f = lin(v[0], v[1]) * lin(v[2], v[3]) * lin(v[4], v[5])
        # Simpson is exact for cubics
        ref = h * (f[0] + 4 * f[1:-1:2].sum() + 2 * f[2:-1:2].sum() + f[-1]) / (3 * 2000)
        assert element_integral_deg2(*v, width=h) == pytest.approx(ref, rel=1e-12, abs=1e-14)
    with pytest.raises(ValueError):
        element_integral_deg2(1, 2, 3)


@given(seed=st.integers(0, 10_000), tau=st.floats(1e-4, 0.1))
def test_normal_rows_sum_to_area_change(seed, tau):
    prev, guess = random_state(11, seed=seed)
    res = assemble_residual(prev, guess, tau)
    total = res[DofMap(11).p_slice].sum()
    change = shoelace_loop(prev.nodes) - shoelace_loop(guess.positions)
    assert abs(total - change) <= 1e-12 * (abs(change) + polygon_area(prev) * 1e-3)


@given(seed=st.integers(0, 10_000), tau=st.floats(1e-4, 0.1))
def test_velocity_tangent_pairing_is_perimeter_change(seed, tau):
    prev, guess = random_state(11, seed=seed)
    new = Curve(guess.positions, orient=False)
    v = (guess.positions - prev.nodes) / tau
    theta = node_jump_integrals(prev, new, tau)
    pairing = -np.sum(v * theta)
    assert pairing == pytest.approx(perimeter(new) - perimeter(prev), rel=1e-10, abs=1e-13)


def test_converged_step_has_small_residual():
    c = make_ellipse(2, 1, 24)
    p, q = bootstrap_curvature(c)
    sol, rep = solve_time_step(c, StepUnknowns(c.nodes, p, q), 1e-3)
    res = assemble_residual(c, sol, 1e-3)
    assert np.max(np.abs(res)) <= 1e-12
    assert rep.converged


def test_fd_jacobian_helper_on_linear_map(rng):
    a = rng.standard_normal((5, 5))
    np.testing.assert_allclose(fd_jacobian(lambda x: a @ x, rng.standard_normal(5)), a, atol=1e-8)
