from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import nnls

from fracstefan.graphs import MonotoneGraph
from fracstefan.lab import obstacle_scenario, stefan_scenario
from fracstefan.solver import run
from fracstefan.vi import (freezing_index, lcp_residual, solve_lcp, solve_one_phase_vi,
                           vi_cross_residual, vi_residual_two_phase)


def _spd(rng, n):
    B = rng.normal(size=(n, n))
    return B @ B.T + n * np.eye(n)


def test_freezing_index_rules():
    t = np.linspace(0, 1, 11)
    th = np.ones((11, 3))
    np.testing.assert_allclose(freezing_index(t, th)[:, 1], t)
    np.testing.assert_allclose(freezing_index(t, t[:, None] * th, "right")[-1], 0.55)
    with pytest.raises(ValueError):
        freezing_index(t, th, "simpson")


def test_lcp_nonpositive_rhs_gives_zero():
    rng = np.random.default_rng(0)
    A = _spd(rng, 6)
    out = solve_lcp(A, -np.abs(rng.normal(size=6)))
    assert np.all(out.x == 0.0)


def test_lcp_without_active_set_is_linear_solve():
    rng = np.random.default_rng(1)
    A = np.diag(rng.uniform(1, 2, 6))
    q = rng.uniform(0.1, 1.0, 6)
    out = solve_lcp(A, q)
    np.testing.assert_allclose(out.x, q / np.diag(A), rtol=1e-14)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), method=st.sampled_from(["active_set", "psor"]))
def test_lcp_against_nnls(seed, method):
    rng = np.random.default_rng(seed)
    n = 8
    A = _spd(rng, n)
    q = rng.normal(size=n)
    out = solve_lcp(A, q, tol=1e-12, method=method)
    # the LCP solves min 0.5 x.A x - q.x over x >= 0, i.e. min ||L^T x - L^{-1} q|| with A = L L^T
    L = np.linalg.cholesky(A)
    ref, _ = nnls(L.T, np.linalg.solve(L, q))
    np.testing.assert_allclose(out.x, ref, atol=1e-8)
    assert lcp_residual(out.x, out.w) <= 1e-10


def test_lcp_unknown_method():
    with pytest.raises(ValueError):
        solve_lcp(np.eye(2), np.ones(2), method="lemke")


@pytest.fixture(scope="module")
def obstacle():
    sc = obstacle_scenario(n=16, tau=4e-3)
    return sc, solve_one_phase_vi(sc), run(sc)


def test_obstacle_complementarity(obstacle):
    sc, out, tr = obstacle
    assert out.residual.max() <= 1e-8
    assert np.all(out.Theta >= 0)
    assert out.Theta[-1].max() > 0
    assert np.all(out.multiplier >= -1e-10)


def test_obstacle_matches_rectangle_freezing_index(obstacle):
    sc, out, tr = obstacle
    Th = freezing_index(tr.times, tr.theta, "right")
    assert np.max(np.abs(Th - out.Theta)) <= 1e-10
    assert vi_cross_residual(sc, tr, "right") <= 1e-8
    assert vi_cross_residual(sc, tr) <= 5e-2


def test_obstacle_psor_agrees(obstacle):
    sc, out, _ = obstacle
    short = sc.replace(T=0.04)
    a = solve_one_phase_vi(short)
    b = solve_one_phase_vi(short, method="psor")
    np.testing.assert_allclose(a.Theta, b.Theta, atol=1e-9)


def test_obstacle_rejects_two_phase():
    with pytest.raises(ValueError):
        solve_one_phase_vi(stefan_scenario(n=8))
    sc = obstacle_scenario(n=8).replace(graph=MonotoneGraph((0.3,), (1.0, 2.0), 1.0, "one_phase"))
    with pytest.raises(ValueError):
        solve_one_phase_vi(sc)


def test_two_phase_inequality_holds():
    sc = stefan_scenario(n=16, T=0.03, tau=2e-3)
    tr = run(sc)
    rng = np.random.default_rng(0)
    tests = rng.normal(0, 1, size=(6, 16))
    assert vi_residual_two_phase(sc.space(), sc.graph, tr, tests) >= -1e-8
