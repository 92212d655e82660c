import math

import numpy as np
import pytest
import scipy.sparse as sp

from sdflow.assembly import DofMap, SparseSystem, StepUnknowns, assemble_jacobian, assemble_residual
from sdflow.geometry import make_ellipse, make_polygon
from sdflow.newton import (NewtonConfig, SingularSystemError, StepFailure, bootstrap_curvature,
                           linear_solve, solve_time_step)


def _start(curve):
    p, q = bootstrap_curvature(curve)
    return StepUnknowns(curve.nodes, p, q)


@pytest.mark.parametrize("m,r", [(8, 1.0), (16, 2.5), (33, 0.7)])
def test_bootstrap_of_regular_polygon(m, r):
    p, q = bootstrap_curvature(make_polygon(m, r))
    np.testing.assert_allclose(p, 1 / (r * math.cos(math.pi / m)), rtol=1e-13)
    np.testing.assert_allclose(q, 0, atol=1e-13 / r)


def test_bootstrap_approaches_circle_curvature():
    p, _ = bootstrap_curvature(make_polygon(2000, 2.0))
    np.testing.assert_allclose(p, 0.5, rtol=2e-6)


def test_bootstrap_of_ellipse_respects_symmetry():
    m = 32
    p, q = bootstrap_curvature(make_ellipse(2, 1, m))
    mirror = (-np.arange(m)) % m
    np.testing.assert_allclose(p, p[mirror], rtol=1e-12)
    np.testing.assert_allclose(q, -q[mirror], atol=1e-12)
    assert np.all(p > 0)
    assert p[0] > p[m // 4]


def test_exact_warm_start_takes_one_iteration():
    c = make_ellipse(2, 1, 24)
    cfg = NewtonConfig()
    sol, _ = solve_time_step(c, _start(c), 1e-3, cfg)
    again, rep = solve_time_step(c, sol, 1e-3, cfg)
    assert rep.iterations == 1 and rep.converged
    np.testing.assert_allclose(again.positions, sol.positions, atol=1e-12)


def test_ellipse_step_converges_quickly():
    c = make_ellipse(2, 1, 32)
    _, exact = solve_time_step(c, _start(c), 1e-4)
    _, written = solve_time_step(c, _start(c), 1e-4, NewtonConfig(jacobian_variant="as_written"))
    assert 2 <= exact.iterations <= 6
    # the inexact linearisation still converges, only more slowly
    assert exact.iterations <= written.iterations <= 12
    assert max(exact.final_residual_norm, written.final_residual_norm) < 1e-8


def test_smaller_step_needs_no_more_iterations():
    c = make_ellipse(2, 1, 32)
    it = [solve_time_step(c, _start(c), tau)[1].iterations for tau in (1e-3, 5e-4, 2.5e-4)]
    assert it == sorted(it, reverse=True)


def test_exact_jacobian_gives_quadratic_convergence():
    c = make_ellipse(2, 1, 32)
    _, rep = solve_time_step(c, _start(c), 1e-2, NewtonConfig(tol_x=1e-14, tol_p=1e-12, tol_q=1e-12,
                                                              max_iter=12))
    dx = [n[0] for n in rep.increment_norms]
    big = [d for d in dx if d > 1e-11]
    ratios = [b / a for a, b in zip(big, big[1:])]
    assert ratios and max(ratios) < 0.05
    assert all(b < 10 * a * a for a, b in zip(big, big[1:]))


def test_solution_is_deterministic():
    c = make_ellipse(2, 1, 20)
    a, _ = solve_time_step(c, _start(c), 1e-3)
    b, _ = solve_time_step(c, _start(c), 1e-3)
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.p, b.p)


def test_all_three_increments_must_be_small():
    c = make_ellipse(2, 1, 20)
    loose = NewtonConfig(tol_x=1.0, tol_p=1.0, tol_q=1.0)
    tight = NewtonConfig(tol_x=1.0, tol_p=1.0, tol_q=1e-11)
    _, r1 = solve_time_step(c, _start(c), 1e-3, loose)
    _, r2 = solve_time_step(c, _start(c), 1e-3, tight)
    assert r1.iterations == 1
    assert r2.iterations > 1
    dx, dp, dq = r2.increment_norms[-1]
    assert dq <= 1e-11


def test_iteration_cap_raises_with_report():
    c = make_ellipse(2, 1, 20)
    with pytest.raises(StepFailure) as info:
        solve_time_step(c, _start(c), 1e-2, NewtonConfig(max_iter=1, tol_x=1e-15))
    assert info.value.report.iterations == 1
    assert not info.value.report.converged


def test_newton_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(tol_x=0)
    with pytest.raises(ValueError):
        NewtonConfig(max_iter=0)
    with pytest.raises(ValueError):
        NewtonConfig(jacobian_variant="secant")


def test_linear_solve_identity():
    b = np.arange(6.0)
    np.testing.assert_array_equal(linear_solve(SparseSystem(sp.eye(6), b)), b)


def test_linear_solve_random_sparse(rng):
    a = sp.random(40, 40, density=0.1, random_state=1) + 5 * sp.eye(40)
    b = rng.standard_normal(40)
    np.testing.assert_allclose(linear_solve(SparseSystem(a, b)), np.linalg.solve(a.toarray(), b),
                               rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("m", [3, 7, 32])
def test_banded_solve_matches_dense(m):
    from conftest import random_state
    prev, guess = random_state(m, seed=11)
    system = assemble_jacobian(prev, guess, 0.01)
    x = linear_solve(system)
    ref = np.linalg.solve(system.matrix.toarray(), system.rhs)
    np.testing.assert_allclose(x, ref, rtol=1e-10, atol=1e-12 * np.max(np.abs(ref)))


def test_singular_systems_raise():
    a = sp.csc_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularSystemError):
        linear_solve(SparseSystem(a, np.ones(2)))
    blocks = np.zeros((4, 8, 8))
    with pytest.raises(SingularSystemError):
        linear_solve(SparseSystem(rhs=np.ones(16), blocks=blocks))


def test_step_preserves_area_to_round_off():
    from oracles import shoelace_loop
    c = make_ellipse(2, 1, 32)
    sol, _ = solve_time_step(c, _start(c), 1e-3)
    a0, a1 = shoelace_loop(c.nodes), shoelace_loop(sol.positions)
    assert abs(a1 - a0) <= 1e-12 * a0
    res = assemble_residual(c, sol, 1e-3)
    assert abs(res[DofMap(32).p_slice].sum()) <= 1e-14 * a0
