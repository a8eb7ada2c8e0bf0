"""Freezing-index formulation and its obstacle problem.

The freezing index ``Theta(t) = int_0^t theta`` of a one-phase problem with
``b(r) = c r`` solves, at every implicit Euler level, the linear
complementarity problem

    Theta >= 0,  w = A Theta - q >= 0,  Theta . w = 0,
    A = (c / tau) M_L + K_II,
    q = (c / tau) M_L Theta_prev - K_IE Theta_ext + Fcum + M_L (eta0 - lam),

where ``Theta_ext`` and ``Fcum`` accumulate the exterior data and the load
with the rectangle rule of the implicit scheme.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .discretization import FracSpace
from .graphs import MonotoneGraph
from .solver import Scenario, Trajectory, _data, l2_space_time


def freezing_index(times, theta, rule: str = "trapezoid") -> np.ndarray:
    """Nodewise cumulative time integral of ``theta`` with ``Theta(0) = 0``.

    ``rule`` is ``"trapezoid"`` or ``"right"`` (rectangle rule at the new level).
    """
    theta = np.asarray(theta, dtype=float)
    dt = np.diff(np.asarray(times, dtype=float))
    shape = (-1,) + (1,) * (theta.ndim - 1)
    if rule == "right":
        inc = dt.reshape(shape) * theta[1:]
    elif rule == "trapezoid":
        inc = 0.5 * dt.reshape(shape) * (theta[1:] + theta[:-1])
    else:
        raise ValueError("rule must be 'trapezoid' or 'right'")
    return np.concatenate([np.zeros_like(theta[:1]), np.cumsum(inc, axis=0)])


@dataclass
class LCPResult:
    x: np.ndarray
    w: np.ndarray
    iterations: int
    residual: float
    method: str


def lcp_residual(x, w) -> float:
    return float(np.max(np.abs(np.minimum(x, w)))) if x.size else 0.0


def solve_lcp(A, q, x0=None, tol: float = 1e-12, method: str = "active_set",
              max_iter: int = 200, omega: float = 1.5, psor_iter: int = 100000) -> LCPResult:
    """Solve ``x >= 0, A x - q >= 0, x . (A x - q) = 0`` for SPD ``A``.

    ``active_set`` is the primal-dual active set method; if it cycles the
    projected SOR iteration takes over from its last iterate.
    """
    A = np.asarray(A, dtype=float)
    q = np.asarray(q, dtype=float)
    n = q.size
    x = np.zeros(n) if x0 is None else np.maximum(np.asarray(x0, dtype=float), 0.0)
    if method == "active_set":
        active = (x <= 0) & (A @ x - q > 0)
        seen = set()
        for it in range(1, max_iter + 1):
            free = ~active
            x = np.zeros(n)
            if free.any():
                Aff = A[np.ix_(free, free)]
                x[free] = cho_solve(cho_factor(Aff), q[free])
            w = A @ x - q
            new = (x - w) < 0
            key = new.tobytes()
            if np.array_equal(new, active):
                return LCPResult(x, w, it, lcp_residual(x, w), "active_set")
            if key in seen:
                break
            seen.add(key)
            active = new
        method = "psor"
    if method != "psor":
        raise ValueError(f"unknown LCP method {method!r}")
    d = np.diag(A)
    for it in range(1, psor_iter + 1):
        for i in range(n):
            x[i] = max(0.0, x[i] + omega * (q[i] - A[i] @ x) / d[i])
        w = A @ x - q
        if lcp_residual(x, w) <= tol:
            break
    return LCPResult(x, w, it, lcp_residual(x, w), "psor")


@dataclass
class ObstacleSolution:
    times: np.ndarray
    Theta: np.ndarray
    multiplier: np.ndarray
    active: np.ndarray
    residual: np.ndarray
    theta: np.ndarray


def _linear_slope(graph: MonotoneGraph) -> float:
    base = graph.base
    if base.kind != "one_phase" or graph.kind != "one_phase":
        raise ValueError("the obstacle formulation needs a one-phase graph")
    if base.breakpoints:
        raise ValueError("the obstacle formulation needs a linear b")
    return float(base.slopes[0])


def solve_one_phase_vi(sc: Scenario, method: str = "active_set", tol: float = 1e-12) -> ObstacleSolution:
    """Freezing index of a one-phase scenario from a sequence of LCPs."""
    c = _linear_slope(sc.graph)
    lam = sc.graph.lam
    space = sc.space()
    times, gE, _, F = _data(sc, space)
    tau = sc.tau
    ml, K = space.ml, space.K_II
    eta0 = sc.eta0.nodal(sc.mesh)
    Fcum = freezing_index(times, F, "right")
    Gcum = freezing_index(times, gE, "right")
    A = np.diag(c / tau * ml) + K
    N, n = times.size - 1, sc.mesh.n
    Theta = np.zeros((N + 1, n))
    W = np.zeros((N + 1, n))
    res = np.zeros(N + 1)
    for k in range(1, N + 1):
        q = c / tau * ml * Theta[k - 1] - space.K_IE @ Gcum[k] + Fcum[k] + ml * (eta0 - lam)
        out = solve_lcp(A, q, Theta[k - 1], tol=tol, method=method)
        Theta[k], W[k], res[k] = out.x, out.w, out.residual
    theta = np.zeros_like(Theta)
    theta[1:] = np.diff(Theta, axis=0) / tau
    return ObstacleSolution(times, Theta, W, Theta <= 0, res, theta)


def vi_cross_residual(sc: Scenario, traj: Trajectory, rule: str = "trapezoid") -> float:
    """Defect of an enthalpy trajectory in the obstacle system.

    The freezing index and the accumulated data are formed with ``rule``.
    Nodes with ``Theta > 0`` contribute ``|w_i| / m_i``, the others the
    negative part of ``w_i / m_i``; the maximum is divided by
    ``lam + max |eta|``.
    """
    c = _linear_slope(sc.graph)
    lam = sc.graph.lam
    space = sc.space()
    ml, K = space.ml, space.K_II
    tau = np.diff(traj.times)
    Th = freezing_index(traj.times, traj.theta, rule)
    Gc = freezing_index(traj.times, traj.g_ext, rule)
    Fc = freezing_index(traj.times, traj.F, rule)
    eta0 = traj.eta[0]
    worst = 0.0
    for k in range(1, traj.times.size):
        w = c / tau[k - 1] * ml * (Th[k] - Th[k - 1]) + K @ Th[k] + space.K_IE @ Gc[k] \
            - (Fc[k] + ml * (eta0 - lam))
        pos = Th[k] > 0
        e = np.where(pos, np.abs(w), np.maximum(-w, 0.0)) / ml
        worst = max(worst, float(e.max()))
    return worst / (lam + float(np.max(np.abs(traj.eta))))


def vi_residual_two_phase(space: FracSpace, graph: MonotoneGraph, traj: Trajectory, tests) -> float:
    """Smallest value of the freezing-index inequality over test functions.

    For every level ``n`` and interior test array ``w`` this evaluates
    ``sum m b(theta)(w - theta) + <K Theta + K_IE Theta_ext, w - theta>
    + lam sum m (w^+ - theta^+) - <Fcum + M_L eta0, w - theta>``,
    which is nonnegative for a solution; the result is scaled by the size of
    the terms.
    """
    ml = space.ml
    Th = freezing_index(traj.times, traj.theta, "right")
    Gc = freezing_index(traj.times, traj.g_ext, "right")
    Fc = freezing_index(traj.times, traj.F, "right")
    lam = graph.base.lam
    worst = np.inf
    tests = np.atleast_2d(np.asarray(tests, dtype=float))
    for k in range(1, traj.times.size):
        th = traj.theta[k]
        flux = space.K_II @ Th[k] + space.K_IE @ Gc[k]
        src = Fc[k] + ml * traj.eta[0]
        bt = graph.base.b(th)
        for w in tests:
            d = w - th
            terms = np.array([ml @ (bt * d), flux @ d, lam * ml @ (np.maximum(w, 0) - np.maximum(th, 0)),
                              -(src @ d)])
            worst = min(worst, terms.sum() / max(np.abs(terms).max(), 1e-300))
    return float(worst)


def vi_distance(sc: Scenario, traj: Trajectory, obstacle: ObstacleSolution, rule: str = "trapezoid") -> float:
    """Relative ``L^2(Q_T)`` distance between the obstacle solution and the
    freezing index of an enthalpy trajectory formed with ``rule``."""
    space = sc.space()
    Th = freezing_index(traj.times, traj.theta, rule)
    num = l2_space_time(space, traj.times, obstacle.Theta, Th)
    return num / max(l2_space_time(space, traj.times, obstacle.Theta), 1e-300)
