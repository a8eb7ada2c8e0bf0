from __future__ import annotations

import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from fracstefan.graphs import (MonotoneGraph, beta_interval, conjugate_j, gamma_derivative,
                               gamma_eval, graph_point, phase_fraction, primitive_j,
                               regularize, regularized_beta, yosida_resolvent)

IDENT = MonotoneGraph((), (1.0,), 1.0, "two_phase")
ONE = MonotoneGraph((), (1.0,), 1.0, "one_phase")


def test_gamma_values_identity_b():
    np.testing.assert_allclose(gamma_eval(IDENT, [-2.0, 0.5, 2.0]), [-2.0, 0.0, 1.0], atol=0)


def test_beta_interval_examples():
    lo, hi = beta_interval(IDENT, 0.0)
    assert (lo, hi) == (0.0, 1.0)
    lo, hi = beta_interval(IDENT, -1.0)
    assert (lo, hi) == (-1.0, -1.0)
    g = MonotoneGraph((), (2.0,), 0.5)
    lo, hi = beta_interval(g, 1.0)
    assert lo == pytest.approx(2.5, abs=1e-15) and hi == pytest.approx(2.5, abs=1e-15)


def test_one_phase_interval_and_range():
    lo, hi = beta_interval(ONE, 0.0)
    assert lo == -np.inf and hi == 1.0
    with pytest.raises(ValueError):
        beta_interval(ONE, -0.1)


def test_primitive_values():
    np.testing.assert_allclose(primitive_j(IDENT, [-2.0, 1.0, 0.0]), [2.0, 0.0, 0.0], atol=1e-15)


def test_conjugate_against_grid_search():
    # brute force sup over an r-grid with step 1e-4 gives 1.5
    assert conjugate_j(IDENT, 1.0) == pytest.approx(1.5, abs=1e-8)
    r = np.arange(-10, 10, 1e-4)
    for v in (-1.3, 0.0, 0.4, 2.2):
        brute = np.max(r * v - primitive_j(IDENT, r))
        assert conjugate_j(IDENT, v) == pytest.approx(brute, abs=1e-7)


def test_conjugate_one_phase_infinite_below_range():
    assert conjugate_j(ONE, -0.5) == np.inf
    assert conjugate_j(ONE, 0.0) == 0.0


def test_regularized_gamma_half_plateau():
    lam = 1.0
    g = regularize(ONE, 0.1)
    assert gamma_eval(g, lam / 2) == pytest.approx(0.05 * lam, abs=1e-15)
    assert g.lipschitz_gamma == pytest.approx(ONE.lipschitz_gamma + 0.1)


def test_regularized_beta_bisection():
    # bisection of gamma_nu(y) = 0.3 gives 13/11
    assert regularized_beta(ONE, 0.1, 0.3) == pytest.approx(1.1818181818181819, abs=1e-10)
    root = brentq(lambda y: float(gamma_eval(regularize(ONE, 0.1), y)) - 0.3, -10, 10, xtol=1e-14)
    assert regularized_beta(ONE, 0.1, 0.3) == pytest.approx(root, abs=1e-10)


def test_resolvent_examples():
    ident = MonotoneGraph((), (1.0,), 0.0)
    assert yosida_resolvent(ident, 1.0, 2.0) == pytest.approx(1.0, abs=1e-15)
    x = float(yosida_resolvent(IDENT, 0.5, 1.2))
    assert x == pytest.approx(0.4666666666666666, abs=1e-12)
    lo, hi = beta_interval(IDENT, x)
    assert x + 0.5 * lo <= 1.2 + 1e-12 and x + 0.5 * hi >= 1.2 - 1e-12


def test_invalid_inputs():
    with pytest.raises(ValueError):
        regularize(ONE, 0.0)
    with pytest.raises(ValueError):
        MonotoneGraph((), (0.0,), 1.0)
    with pytest.raises(ValueError):
        MonotoneGraph((), (1.0,), -1.0)
    with pytest.raises(ValueError):
        MonotoneGraph((0.0,), (1.0,), 1.0)
    with pytest.raises(ValueError):
        yosida_resolvent(IDENT, -1.0, 0.0)


def test_derivative_on_plateau_edges():
    assert gamma_derivative(IDENT, 0.0) == 0.0
    assert gamma_derivative(IDENT, 1.0) == 1.0
    assert gamma_derivative(IDENT, 0.5) == 0.0


def test_phase_fraction():
    chi = phase_fraction(IDENT, [-1.0, 0.0, 0.25, 1.0, 3.0])
    np.testing.assert_allclose(chi, [0.0, 0.0, 0.25, 1.0, 1.0])
    p = graph_point(IDENT, np.array([0.5]))
    assert p.theta[0] == 0.0 and p.chi[0] == 0.5


def test_dict_roundtrip():
    g = MonotoneGraph.from_dict({"b": {"breakpoints": [0.5], "slopes": [1.0, 2.0]}, "lambda": 0.7,
                                 "kind": "one_phase", "nu": 0.05})
    assert g.kind == "regularized" and g.nu == 0.05
    assert MonotoneGraph.from_dict(g.to_dict()) == g


# -- properties ---------------------------------------------------------------

@st.composite
def graphs(draw):
    k = draw(st.integers(0, 3))
    pts = sorted(set(draw(st.lists(st.floats(-3, 3, allow_nan=False), min_size=k, max_size=k))))
    pts = [p for i, p in enumerate(pts) if i == 0 or p - pts[i - 1] > 1e-3]
    slopes = draw(st.lists(st.floats(0.2, 5.0), min_size=len(pts) + 1, max_size=len(pts) + 1))
    lam = draw(st.floats(0.0, 3.0))
    kind = draw(st.sampled_from(["two_phase", "one_phase", "regularized"]))
    if kind == "regularized":
        return regularize(MonotoneGraph(tuple(pts), tuple(slopes), lam, "one_phase"),
                          draw(st.floats(1e-3, 1.0)))
    return MonotoneGraph(tuple(pts), tuple(slopes), lam, kind)


R = np.linspace(-10, 10, 10_000)


@settings(max_examples=40, deadline=None)
@given(g=graphs())
def test_gamma_monotone_lipschitz(g):
    t = time.perf_counter()
    y = gamma_eval(g, R)
    dy = np.diff(y)
    assert np.all(dy >= -1e-12)
    assert np.all(dy <= g.lipschitz_gamma * np.diff(R) * (1 + 1e-12) + 1e-12)
    assert time.perf_counter() - t < 5.0


@settings(max_examples=40, deadline=None)
@given(g=graphs())
def test_inverse_consistency(g):
    theta = gamma_eval(g, R)
    lo, hi = beta_interval(g, theta)
    assert np.all(lo <= R + 1e-12) and np.all(hi >= R - 1e-12)
    fin = np.isfinite(lo)
    assert np.max(np.abs(gamma_eval(g, lo[fin]) - theta[fin])) <= 1e-12 * max(1, np.abs(theta).max())


@settings(max_examples=40, deadline=None)
@given(g=graphs(), seed=st.integers(0, 2**31 - 1))
def test_fenchel_young(g, seed):
    rng = np.random.default_rng(seed)
    r = rng.uniform(-10, 10, 10_000)
    v = gamma_eval(g, rng.uniform(-10, 10, 10_000))
    gap = primitive_j(g, r) + conjugate_j(g, v) - r * v
    assert np.all(gap >= -1e-10)
    eq = primitive_j(g, r) + conjugate_j(g, gamma_eval(g, r)) - r * gamma_eval(g, r)
    assert np.max(np.abs(eq)) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(g=graphs(), nu=st.floats(1e-3, 10.0), seed=st.integers(0, 2**31 - 1))
def test_resolvent_nonexpansive(g, nu, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-10, 10, (2, 10_000))
    ja, jb = yosida_resolvent(g, nu, a), yosida_resolvent(g, nu, b)
    assert np.all(np.abs(ja - jb) <= np.abs(a - b) * (1 + 1e-12) + 1e-12)


@settings(max_examples=30, deadline=None)
@given(g=graphs(), nu=st.floats(1e-4, 1.0))
def test_regularization_uniform_bound(g, nu):
    base = g.base
    if base.kind != "one_phase":
        return
    gn = regularize(base, nu)
    assert np.max(np.abs(gamma_eval(gn, R) - gamma_eval(base, R))) <= nu * np.max(np.abs(R)) * (1 + 1e-12)
