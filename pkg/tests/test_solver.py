from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracstefan.discretization import Mesh1D
from fracstefan.graphs import MonotoneGraph
from fracstefan.lab import one_phase_scenario, stefan_scenario
from fracstefan.lift import ExteriorData, harmonic_lift
from fracstefan.solver import (InitialData, Scenario, SolverError, Source, contraction_report,
                               gronwall_check, l2_space_time, lumped_eigenbasis, monotonicity_report,
                               prox_descent_check, prox_objective, run, spectral_run,
                               stationary_solve, step_implicit, weak_form_residual)
from fracstefan.spectral import eigs

IDENTITY = MonotoneGraph((), (1.0,), 0.0, "two_phase")


def linear_oracle(sc):
    """Implicit Euler for the linear fractional heat equation by dense solves."""
    sp = sc.space()
    times = sc.times
    gE = sc.exterior.at(times, sc.mesh.n_ext)
    A = np.diag(sp.ml) + sc.tau * sp.K_II
    h = [sc.eta0.nodal(sc.mesh)]
    for k in range(1, times.size):
        F = sp.ml * sc.source.nodal(sc.mesh, times[k])
        h.append(np.linalg.solve(A, sp.ml * h[-1] + sc.tau * (F - sp.K_IE @ gE[k])))
    return np.array(h)


def test_step_with_identity_graph_is_linear_solve(space_of):
    sp = space_of(16, 0.5)
    rng = np.random.default_rng(0)
    hp, F = rng.normal(size=(2, 16))
    gE = np.full(2 * sp.mesh.n_ext, 0.3)
    h, info = step_implicit(sp, IDENTITY, hp, F, gE, harmonic_lift(sp, gE), 0.01)
    ref = np.linalg.solve(np.diag(sp.ml) + 0.01 * sp.K_II, sp.ml * hp + 0.01 * (F - sp.K_IE @ gE))
    assert np.max(np.abs(h - ref)) <= 1e-12
    assert info.iterations <= 2


def test_zero_data_stays_zero():
    sc = stefan_scenario(n=16, T=0.02).replace(exterior=ExteriorData("constant", 0.0),
                                               eta0=InitialData("constant", 0.0))
    tr = run(sc)
    assert np.all(tr.eta == 0.0)


def test_linear_run_matches_oracle():
    sc = Scenario(mesh=Mesh1D(0, 1, 16), s=0.5, graph=IDENTITY, source=Source("bump", 2.0),
                  exterior=ExteriorData("ramp", 1.0, left=-1.0, t_ramp=0.03),
                  eta0=InitialData("step", left=1.0, right=-0.5), T=0.05, tau=1e-3)
    assert np.max(np.abs(run(sc).eta - linear_oracle(sc))) <= 1e-10


def test_classical_limit_matches_p1_heat_solver():
    n, tau = 20, 2e-3
    sc = Scenario(mesh=Mesh1D(0, 1, n), s=1.0, graph=IDENTITY, exterior=ExteriorData("constant", 0.0, left=1.0),
                  eta0=InitialData("bump", 1.0), T=0.04, tau=tau)
    tr = run(sc)
    h = 1.0 / (n + 1)
    K = (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / h
    ml = np.full(n, h)
    ml[[0, -1]] = 5 * h / 6
    bc = np.zeros(n)
    bc[0] = 1.0 / h
    u = sc.eta0.nodal(sc.mesh)
    for _ in range(sc.n_steps):
        u = np.linalg.solve(np.diag(ml) + tau * K, ml * u + tau * bc)
    assert np.max(np.abs(tr.eta[-1] - u)) <= 1e-12


def test_nonexpansive_step(space_of):
    sp = space_of(16, 0.5)
    g = MonotoneGraph((0.2,), (1.0, 3.0), 1.5, "two_phase")
    rng = np.random.default_rng(4)
    gE = np.full(2 * sp.mesh.n_ext, 0.5)
    gI = harmonic_lift(sp, gE)
    F = rng.normal(size=16)
    for _ in range(10):
        a, b = rng.normal(0, 2, size=(2, 16))
        ha, _ = step_implicit(sp, g, a, F, gE, gI, 0.01)
        hb, _ = step_implicit(sp, g, b, F, gE, gI, 0.01)
        assert sp.enthalpy_dual_norm(ha - hb) <= sp.enthalpy_dual_norm(a - b) * (1 + 1e-10)


def test_step_minimizes_prox_objective(space_of):
    sp = space_of(16, 0.5)
    g = MonotoneGraph((), (1.0,), 1.0, "one_phase")
    gE = np.full(2 * sp.mesh.n_ext, 1.0)
    gI = harmonic_lift(sp, gE)
    hp = np.full(16, 0.3)
    F = np.zeros(16)
    h, _ = step_implicit(sp, g, hp, F, gE, gI, 0.01)
    base = prox_objective(sp, g, h, hp, F, gI, 0.01)
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = h + 1e-3 * rng.normal(size=16)
        assert prox_objective(sp, g, p, hp, F, gI, 0.01) >= base - 1e-13


@pytest.fixture(scope="module")
def stefan_run():
    sc = stefan_scenario(n=32, T=0.05)
    return sc, run(sc)


def test_stefan_run_diagnostics(stefan_run):
    sc, tr = stefan_run
    sp = sc.space()
    assert tr.newton_iters[1:].max() <= 10
    assert np.all(np.diff(tr.E) <= 1e-8 * np.abs(tr.E).max())
    assert prox_descent_check(sc, tr, trials=3) >= -1e-12
    assert monotonicity_report(tr)["monotone"]
    # enthalpy grows as the exterior heats the domain, phase fraction in [0, 1]
    assert np.all(tr.chi >= 0) and np.all(tr.chi <= 1)
    assert np.sum(sp.ml * tr.eta[-1]) > np.sum(sp.ml * tr.eta[0])
    rng = np.random.default_rng(1)
    xi = rng.normal(size=(tr.times.size - 1, sc.mesh.n))
    xi[-1] = 0.0
    assert weak_form_residual(sp, tr, xi) <= 1e-8


def test_spectral_run_with_all_modes_reproduces_run():
    sc = one_phase_scenario(n=16, T=0.05)
    a, b = run(sc), spectral_run(sc, 16)
    assert np.max(np.abs(a.eta - b.eta)) <= 1e-12


def test_spectral_linear_mode_recurrence():
    sc = Scenario(mesh=Mesh1D(0, 1, 16), s=0.5, graph=IDENTITY, source=Source("constant", 1.0),
                  exterior=ExteriorData("constant", 0.5), eta0=InitialData("bump", 1.0), T=0.02, tau=1e-3)
    sp = sc.space()
    mu, U = lumped_eigenbasis(sp)
    k = 5
    tr = spectral_run(sc, k)
    c = U[:, :k].T @ (sp.ml * sc.eta0.nodal(sc.mesh))
    Fk = U[:, :k].T @ (sp.ml * 1.0)
    gk = U[:, :k].T @ (sp.ml * tr.g[1])
    for _ in range(sc.n_steps):
        c = (c + sc.tau * (Fk + mu[:k] * gk)) / (1 + sc.tau * mu[:k])
    np.testing.assert_allclose(tr.eta[-1], U[:, :k] @ c, rtol=0, atol=1e-12)


def test_spectral_error_decreases_with_modes():
    sc = stefan_scenario(n=32, T=0.02)
    ref = run(sc)
    errs = [l2_space_time(sc.space(), ref.times, spectral_run(sc, m).eta, ref.eta) for m in (4, 8, 16, 32)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-10


def test_stationary_solution_and_decay_rate():
    sc = Scenario(mesh=Mesh1D(0, 1, 16), s=0.5, graph=IDENTITY, exterior=ExteriorData("constant", 0.0),
                  eta0=InitialData("bump", 1.0), T=1.0, tau=1e-3)
    tr = run(sc)
    st_ = stationary_solve(sc.space(), IDENTITY, np.zeros(16), tr.g_ext[-1])
    assert np.all(st_.theta == 0.0)
    nrm = np.linalg.norm(tr.eta, axis=1)
    rate = np.log(nrm[500] / nrm[1000]) / 0.5
    mu1 = eigs(sc.space(), 1).mu[0]
    assert rate == pytest.approx(mu1, rel=0.2)


def test_stationary_enthalpy_interval(space_of):
    sp = space_of(16, 0.5)
    g = MonotoneGraph((), (1.0,), 1.0, "two_phase")
    st_ = stationary_solve(sp, g, np.zeros(16), np.zeros(2 * sp.mesh.n_ext))
    np.testing.assert_allclose(st_.eta_lo, 0.0, atol=1e-12)
    np.testing.assert_allclose(st_.eta_hi, 1.0, atol=1e-12)


def test_contraction_for_a_pair():
    base = stefan_scenario(n=16, T=0.05)
    a = base.replace(eta0=InitialData("constant", -0.3))
    b = base.replace(eta0=InitialData("constant", 0.8), source=Source("pulse", 1.0, t_off=0.01))
    ta, tb = run(a), run(b)
    rep = contraction_report(base.space(), base.graph, ta, tb)
    assert rep.ratio <= 1 + 1e-9
    assert rep.theta_l2 <= rep.theta_bound
    with pytest.raises(ValueError):
        contraction_report(base.space(), base.graph, ta, run(base.replace(exterior=ExteriorData("constant", 0.0))))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), C=st.floats(1e-3, 10.0))
def test_gronwall_lemma(seed, C):
    rng = np.random.default_rng(seed)
    N = 40
    a = rng.uniform(0, 1, N)
    y = np.empty(N)
    past = 0.0
    for n in range(N):
        # largest admissible value, slightly shrunk at random
        y[n] = np.sqrt(C + past) * rng.uniform(0.5, 1.0)
        past += a[n] * y[n]
    hyp, margin = gronwall_check(a, y, C)
    assert hyp.all()
    assert margin.min() >= -1e-10


def test_gronwall_hypothesis_detection():
    hyp, _ = gronwall_check([0.0, 0.0], [1.0, 3.0], 1.0)
    assert hyp.tolist() == [True, False]


def test_solver_error_on_unreachable_tolerance():
    sc = stefan_scenario(n=8, T=0.002).replace(newton_tol=-1.0, newton_max_iter=2)
    with pytest.raises(SolverError) as exc:
        run(sc)
    assert exc.value.step == 1


def test_scenario_roundtrip():
    sc = Scenario(mesh=Mesh1D(-1, 2, 12, R=6.0), s=0.7, graph=MonotoneGraph((0.5,), (1.0, 2.0), 0.3),
                  source=Source("pulse", 2.0, t_off=0.1), exterior=ExteriorData("ramp", 1.0, t_ramp=0.2),
                  eta0=InitialData("step", left=1.0, right=-1.0, x0=0.2), T=0.3, tau=0.01)
    d = json.loads(json.dumps(sc.to_dict()))
    sc2 = Scenario.from_dict(d)
    assert sc2.digest() == sc.digest()
    assert sc2.to_dict() == sc.to_dict()
    with pytest.raises(ValueError):
        Scenario.from_dict({"mesh": {"a": 0, "b": 1, "n": 4, "bogus": 1}})
    with pytest.raises(ValueError):
        Scenario.from_dict({"s": 1.5})


def test_replace_reuses_space():
    sc = stefan_scenario(n=8)
    sp = sc.space()
    assert sc.replace(T=0.5).space() is sp
    assert sc.replace(s=0.4)._space is None
