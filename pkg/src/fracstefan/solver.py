"""Implicit Euler enthalpy solver for the fractional Stefan problem.

Each step is the proximal map of the convex functional
``phi(h) = sum_i m_i (j(h_i) - g_i h_i)`` in the discrete ``H^{-s}`` metric
``W = M_L K^{-1} M_L``.  Its optimality condition is the nodal system

    M_L (h - h_prev) / tau + K_II gamma(h) + K_IE g_ext = F,

solved by a damped semismooth Newton method whose Armijo test uses the
proximal objective as merit function.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
from scipy.linalg import eigh, lu_factor, lu_solve

from .discretization import Coefficient, FracSpace, Mesh1D, build_space
from .graphs import MonotoneGraph, beta_interval, phase_fraction, primitive_j
from .lift import ExteriorData, harmonic_lift


class SolverError(RuntimeError):
    """Newton and fallback iterations failed; ``residual`` holds the last norm."""

    def __init__(self, message: str, residual: float, step: Optional[int] = None):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual
        self.step = step


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass
class Source:
    """Heat source ``f(x, t)``.

    ``zero``; ``constant``: ``value``; ``bump``: ``value * sin(pi (x-a)/(b-a))``;
    ``pulse``: ``value`` until ``t_off`` and zero afterwards.
    """

    kind: str = "zero"
    value: float = 0.0
    t_off: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "bump", "pulse"):
            raise ValueError(f"unknown source preset {self.kind!r}")

    def nodal(self, mesh: Mesh1D, t: float) -> np.ndarray:
        x = mesh.x
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "constant":
            return np.full_like(x, self.value)
        if self.kind == "bump":
            return self.value * np.sin(np.pi * (x - mesh.a) / (mesh.b - mesh.a))
        return np.full_like(x, self.value if t < self.t_off else 0.0)

    def constant_after(self) -> float:
        return self.t_off if self.kind == "pulse" else 0.0

    def to_dict(self) -> dict:
        d = {"type": self.kind, "value": self.value}
        if self.kind == "pulse":
            d["t_off"] = self.t_off
        return d

    @classmethod
    def from_dict(cls, d) -> "Source":
        if d is None:
            return cls()
        if isinstance(d, (int, float)):
            return cls("constant", float(d))
        d = dict(d)
        return cls(d.pop("type", "zero"), **d)


@dataclass
class InitialData:
    """Initial enthalpy.

    ``constant``: ``value``; ``bump``: ``value * sin(pi (x-a)/(b-a))``;
    ``step``: ``left`` for ``x < x0`` and ``right`` beyond; ``nodal``: ``values``.
    """

    kind: str = "constant"
    value: float = 0.0
    left: float = 0.0
    right: float = 0.0
    x0: float = 0.5
    values: Optional[list] = None

    def __post_init__(self):
        if self.kind not in ("constant", "bump", "step", "nodal"):
            raise ValueError(f"unknown initial data preset {self.kind!r}")
        if self.kind == "nodal" and self.values is None:
            raise ValueError("nodal initial data needs values")

    def nodal(self, mesh: Mesh1D) -> np.ndarray:
        x = mesh.x
        if self.kind == "constant":
            return np.full_like(x, self.value)
        if self.kind == "bump":
            return self.value * np.sin(np.pi * (x - mesh.a) / (mesh.b - mesh.a))
        if self.kind == "step":
            return np.where(x < self.x0, self.left, self.right).astype(float)
        v = np.asarray(self.values, dtype=float)
        if v.shape != x.shape:
            raise ValueError("nodal initial data does not match the mesh")
        return v.copy()

    def to_dict(self) -> dict:
        if self.kind == "nodal":
            return {"type": "nodal", "values": list(map(float, self.values))}
        if self.kind == "step":
            return {"type": "step", "left": self.left, "right": self.right, "x0": self.x0}
        return {"type": self.kind, "value": self.value}

    @classmethod
    def from_dict(cls, d) -> "InitialData":
        if d is None:
            return cls()
        if isinstance(d, (int, float)):
            return cls("constant", float(d))
        if isinstance(d, (list, tuple)):
            return cls("nodal", values=list(d))
        d = dict(d)
        return cls(d.pop("type", "constant"), **d)


@dataclass
class Scenario:
    """Complete problem description.

    Parameters
    ----------
    mesh : Mesh1D
    s : float
        Fractional order in ``(0, 1]``.
    graph : MonotoneGraph
    source : Source
    exterior : ExteriorData
    eta0 : InitialData
    T, tau : float
        Final time and time step.
    coeff : Coefficient
    newton_tol, newton_max_iter, armijo : float, int, float
        Newton tolerance (relative to the right-hand side scale), iteration
        cap and sufficient-decrease constant.
    """

    mesh: Mesh1D = field(default_factory=Mesh1D)
    s: float = 0.5
    graph: MonotoneGraph = field(default_factory=MonotoneGraph)
    source: Source = field(default_factory=Source)
    exterior: ExteriorData = field(default_factory=ExteriorData)
    eta0: InitialData = field(default_factory=InitialData)
    T: float = 0.1
    tau: float = 1e-3
    coeff: Coefficient = field(default_factory=Coefficient)
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    armijo: float = 1e-4
    _space: Optional[FracSpace] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0 < self.s <= 1:
            raise ValueError("s must lie in (0, 1]")
        if not (self.T > 0 and self.tau > 0):
            raise ValueError("T and tau must be positive")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T / self.tau)))

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.n_steps + 1)

    def space(self) -> FracSpace:
        if self._space is None:
            self._space = build_space(self.mesh, self.s, self.coeff)
        return self._space

    def replace(self, **kw) -> "Scenario":
        """Copy with some fields changed; the assembled space is reused when
        mesh, order and coefficient are unchanged."""
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "_space"}
        d.update(kw)
        out = Scenario(**d)
        if all(getattr(out, k) == getattr(self, k) for k in ("mesh", "s", "coeff")):
            out._space = self._space
        return out

    def to_dict(self) -> dict:
        m = self.mesh
        return {
            "mesh": {"a": m.a, "b": m.b, "n": m.n, "R": m.R, "n_ext": m.n_ext},
            "s": self.s,
            "graph": self.graph.to_dict(),
            "source": self.source.to_dict(),
            "exterior": self.exterior.to_dict(),
            "eta0": self.eta0.to_dict(),
            "T": self.T,
            "tau": self.tau,
            "coeff": {"breakpoints": list(self.coeff.breakpoints), "values": list(self.coeff.values)},
            "solver": {"tol": self.newton_tol, "max_iter": self.newton_max_iter, "armijo": self.armijo},
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            mesh = Mesh1D(**d.get("mesh", {}))
            solver = d.get("solver", {})
            return cls(
                mesh=mesh,
                s=float(d.get("s", 0.5)),
                graph=MonotoneGraph.from_dict(d.get("graph", {})),
                source=Source.from_dict(d.get("source")),
                exterior=ExteriorData.from_dict(d.get("exterior")),
                eta0=InitialData.from_dict(d.get("eta0")),
                T=float(d.get("T", 0.1)),
                tau=float(d.get("tau", 1e-3)),
                coeff=Coefficient.from_dict(d.get("coeff")),
                newton_tol=float(solver.get("tol", 1e-10)),
                newton_max_iter=int(solver.get("max_iter", 50)),
                armijo=float(solver.get("armijo", 1e-4)),
            )
        except (TypeError, KeyError) as exc:
            raise ValueError(f"malformed scenario: {exc}") from exc


# ---------------------------------------------------------------------------
# nonlinear solve
# ---------------------------------------------------------------------------

@dataclass
class NewtonInfo:
    iterations: int
    residual: float
    fallback: bool = False


def _damped_newton(x0, residual, jacobian, merit, merit_grad, fallback_dir, tol,
                   max_iter, armijo, fallback_iter=2000):
    """Semismooth Newton with Armijo backtracking on a convex merit function.

    A step is accepted when the merit decreases sufficiently or the residual
    norm decreases, which keeps the method moving once merit differences
    reach round-off.  If Newton stalls the preconditioned gradient direction
    ``fallback_dir`` is iterated with the same line search.
    """
    x = np.array(x0, dtype=float)
    r = residual(x)
    rn = float(np.max(np.abs(r)))
    it = 0

    def search(x, r, rn, d):
        phi0 = merit(x)
        slope = float(merit_grad(x, r) @ d)
        alpha = 1.0
        for _ in range(40):
            xn = x + alpha * d
            rnew = residual(xn)
            rnn = float(np.max(np.abs(rnew)))
            if merit(xn) <= phi0 + armijo * alpha * slope or rnn < (1 - armijo * alpha) * rn:
                return xn, rnew, rnn, True
            alpha *= 0.5
        return x, r, rn, False

    while rn > tol and it < max_iter:
        d = np.linalg.solve(jacobian(x), -r)
        x, r, rn, ok = search(x, r, rn, d)
        it += 1
        if not ok:
            break
    if rn <= tol:
        return x, NewtonInfo(it, rn)
    for _ in range(fallback_iter):
        x, r, rn, ok = search(x, r, rn, fallback_dir(r))
        it += 1
        if rn <= tol or not ok:
            break
    if rn <= tol:
        return x, NewtonInfo(it, rn, fallback=True)
    raise SolverError("nonlinear solve did not converge", rn)


def step_implicit(space: FracSpace, graph: MonotoneGraph, h_prev, F, g_ext, g_I, tau: float,
                  tol: float = 1e-10, max_iter: int = 50, armijo: float = 1e-4):
    """One implicit Euler step for the nodal enthalpy.

    Parameters
    ----------
    h_prev : ndarray
        Enthalpy at the previous time level.
    F : ndarray
        Load vector at the new level.
    g_ext, g_I : ndarray
        Exterior data and its lift at the new level.

    Returns
    -------
    h : ndarray
    info : NewtonInfo

    Raises
    ------
    SolverError
        If the residual cannot be brought below ``tol`` times the scale.
    """
    ml, K = space.ml, space.K_II
    h_prev = np.asarray(h_prev, dtype=float)
    load = F - space.K_IE @ g_ext
    rhs = ml * h_prev + tau * load
    scale = max(1.0, float(np.max(np.abs(rhs))))
    gam = graph.gamma
    C = graph.lipschitz_gamma
    pre = lu_factor(np.diag(ml) + tau * C * K)

    def residual(h):
        return ml * h + tau * (K @ gam(h)) - rhs

    def jacobian(h):
        return np.diag(ml) + tau * K * gam.right_derivative(h)[None, :]

    def merit(h):
        y = ml * (h - h_prev) - tau * F
        return 0.5 / tau * float(y @ space.solve(y)) + float(ml @ (primitive_j(graph, h) - g_I * h))

    def merit_grad(h, r):
        return ml * space.solve(r) / tau

    def fallback_dir(r):
        return -lu_solve(pre, r)

    h, info = _damped_newton(h_prev, residual, jacobian, merit, merit_grad, fallback_dir,
                             tol * scale, max_iter, armijo)
    info.residual /= scale
    return h, info


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Time history of a run (rows are time levels)."""

    times: np.ndarray
    x: np.ndarray
    eta: np.ndarray
    theta: np.ndarray
    chi: np.ndarray
    newton_iters: np.ndarray
    phi: np.ndarray
    E: np.ndarray
    dual_dist: np.ndarray
    g: np.ndarray
    g_ext: np.ndarray
    F: np.ndarray
    meta: dict = field(default_factory=dict)


def _data(sc: Scenario, space: FracSpace):
    times = sc.times
    gE = sc.exterior.at(times, sc.mesh.n_ext)
    gI = harmonic_lift(space, gE)
    F = np.stack([space.ml * sc.source.nodal(sc.mesh, t) for t in times])
    return times, gE, gI, F


def energy_functional(space: FracSpace, graph: MonotoneGraph, times, eta, theta, g, F) -> np.ndarray:
    """Discrete energy

    ``E_n = (1/C) sum_m |theta_m - theta_{m-1}|^2_{M_L} / tau_m
    + 0.5 <K (theta_n - g_n), theta_n - g_n> - <M_L eta_n, dg_n> - <F_n, theta_n - g_n>``

    with backward differences ``dg_n``.  It does not increase over steps
    where the data are constant.
    """
    ml, K = space.ml, space.K_II
    C = graph.lipschitz_gamma
    dt = np.diff(times)
    diss = np.concatenate([[0.0], np.cumsum(np.sum(ml * np.diff(theta, axis=0) ** 2, axis=1) / dt)])
    w = theta - g
    quad = 0.5 * np.einsum("ni,ij,nj->n", w, K, w)
    dg = np.zeros_like(g)
    if len(times) > 1:
        dg[1:] = np.diff(g, axis=0) / dt[:, None]
        dg[0] = dg[1]
    return diss / C + quad - np.sum(ml * eta * dg, axis=1) - np.sum(F * w, axis=1)


def run(sc: Scenario, progress: Optional[Callable[[int], None]] = None) -> Trajectory:
    """Integrate a scenario with the implicit Euler scheme."""
    space = sc.space()
    times, gE, gI, F = _data(sc, space)
    N = times.size - 1
    h = np.empty((N + 1, sc.mesh.n))
    h[0] = sc.eta0.nodal(sc.mesh)
    iters = np.zeros(N + 1, dtype=int)
    for k in range(1, N + 1):
        try:
            h[k], info = step_implicit(space, sc.graph, h[k - 1], F[k], gE[k], gI[k], sc.tau,
                                       sc.newton_tol, sc.newton_max_iter, sc.armijo)
        except SolverError as exc:
            exc.step = k
            raise
        iters[k] = info.iterations
        if progress is not None:
            progress(k)
    return _finish(sc, space, times, h, gE, gI, F, iters)


def _finish(sc, space, times, h, gE, gI, F, iters, meta=None) -> Trajectory:
    theta = sc.graph.gamma(h)
    chi = phase_fraction(sc.graph, h)
    phi = np.sum(space.ml * (primitive_j(sc.graph, h) - gI * h), axis=1)
    E = energy_functional(space, sc.graph, times, h, theta, gI, F)
    dual = np.zeros(times.size)
    dual[1:] = space.enthalpy_dual_norm(np.diff(h, axis=0))
    w0 = theta[0] - gI[0]
    meta = dict(meta or {})
    meta.update(scenario=sc.digest(), s=sc.s, n=sc.mesh.n, tail_estimate=space.tail_estimate,
                compatibility_energy=float(w0 @ space.K_II @ w0))
    return Trajectory(times, sc.mesh.x, h, theta, chi, iters, phi, E, dual, gI, gE, F, meta)


def prox_objective(space, graph, h, h_prev, F, g_I, tau) -> float:
    """Objective whose minimizer is the implicit Euler step."""
    y = space.ml * (h - h_prev) - tau * F
    return 0.5 / tau * float(y @ space.solve(y)) + float(space.ml @ (primitive_j(graph, h) - g_I * h))


def prox_descent_check(sc: Scenario, traj: Trajectory, trials: int = 8, seed: int = 0,
                       radius: float = 1e-3) -> float:
    """Smallest increase of the step objective under random perturbations of
    the computed steps; nonnegative up to round-off at a true minimizer."""
    rng = np.random.default_rng(seed)
    space = sc.space()
    worst = np.inf
    for k in range(1, traj.times.size):
        base = prox_objective(space, sc.graph, traj.eta[k], traj.eta[k - 1], traj.F[k], traj.g[k], sc.tau)
        for _ in range(trials):
            p = traj.eta[k] + radius * rng.standard_normal(sc.mesh.n)
            val = prox_objective(space, sc.graph, p, traj.eta[k - 1], traj.F[k], traj.g[k], sc.tau)
            worst = min(worst, (val - base) / max(1.0, abs(base)))
    return float(worst)


def weak_form_residual(space: FracSpace, traj: Trajectory, xi) -> float:
    """Summation-by-parts defect against a space-time test array ``xi``
    (rows are time levels ``1..N``, last row zero).

    ``-sum_{n<N} (xi_{n+1} - xi_n) M_L eta_n + tau sum_n xi_n (K_II theta_n + K_IE g_n)
    - tau sum_n xi_n F_n - xi_1 M_L eta_0``, relative to the size of its terms.
    """
    xi = np.asarray(xi, dtype=float)
    eta, th, gE, F = traj.eta, traj.theta, traj.g_ext, traj.F
    dt = np.diff(traj.times)
    ml = space.ml
    flux = th[1:] @ space.K_II + gE[1:] @ space.K_IE.T
    t1 = -np.sum((xi[1:] - xi[:-1]) * (ml * eta[1:-1]))
    t2 = np.sum(dt[:, None] * xi * flux)
    t3 = -np.sum(dt[:, None] * xi * F[1:])
    t4 = -float(xi[0] @ (ml * eta[0]))
    scale = max(abs(t1), abs(t2), abs(t3), abs(t4), 1.0)
    return abs(t1 + t2 + t3 + t4) / scale


def monotonicity_report(traj: Trajectory) -> dict:
    """Whether ``theta`` is nondecreasing in time at every node (monitored)."""
    d = np.diff(traj.theta, axis=0)
    worst = float(d.min()) if d.size else 0.0
    return {"min_increment": worst, "monotone": bool(worst >= -1e-10)}


# ---------------------------------------------------------------------------
# spectral Galerkin in time
# ---------------------------------------------------------------------------

def lumped_eigenbasis(space: FracSpace):
    """Eigenpairs of ``K_II u = mu M_L u`` with ``M_L``-orthonormal vectors."""
    mu, U = eigh(space.K_II, np.diag(space.ml))
    return mu, U


def spectral_run(sc: Scenario, n_modes: int) -> Trajectory:
    """Run restricted to the span of the first ``n_modes`` eigenvectors.

    In modal coordinates ``c`` the step solves
    ``c - c_prev + tau Lam U^T M_L (gamma(U c) - g) = tau U^T F``.
    """
    space = sc.space()
    n = sc.mesh.n
    if not 1 <= n_modes <= n:
        raise ValueError("number of modes must lie in [1, n]")
    mu, U = lumped_eigenbasis(space)
    lam, U = mu[:n_modes], U[:, :n_modes]
    ml = space.ml
    times, gE, gI, F = _data(sc, space)
    N = times.size - 1
    c = np.empty((N + 1, n_modes))
    c[0] = U.T @ (ml * sc.eta0.nodal(sc.mesh))
    gam, graph, tau = sc.graph.gamma, sc.graph, sc.tau
    C = graph.lipschitz_gamma
    iters = np.zeros(N + 1, dtype=int)
    for k in range(1, N + 1):
        cp, Fk, gk = c[k - 1], U.T @ F[k], gI[k]
        rhs = cp + tau * Fk
        scale = max(1.0, float(np.max(np.abs(rhs))))

        def residual(cc):
            return cc - rhs + tau * lam * (U.T @ (ml * (gam(U @ cc) - gk)))

        def jacobian(cc):
            D = ml * gam.right_derivative(U @ cc)
            return np.eye(n_modes) + tau * lam[:, None] * ((U.T * D) @ U)

        def merit(cc):
            d = cc - cp
            hh = U @ cc
            return 0.5 / tau * float(d @ (d / lam)) - float(d @ (Fk / lam)) + \
                float(ml @ (primitive_j(graph, hh) - gk * hh))

        def merit_grad(cc, r):
            return r / (lam * tau)

        def fallback_dir(r):
            return -r / (1.0 + tau * C * lam)

        try:
            c[k], info = _damped_newton(cp, residual, jacobian, merit, merit_grad, fallback_dir,
                                        sc.newton_tol * scale, sc.newton_max_iter, sc.armijo)
        except SolverError as exc:
            exc.step = k
            raise
        iters[k] = info.iterations
    h = c @ U.T
    return _finish(sc, space, times, h, gE, gI, F, iters, meta={"n_modes": n_modes})


# ---------------------------------------------------------------------------
# stationary state and contraction
# ---------------------------------------------------------------------------

@dataclass
class StationarySolution:
    theta: np.ndarray
    eta_lo: np.ndarray
    eta_hi: np.ndarray


def stationary_solve(space: FracSpace, graph: MonotoneGraph, F_inf, g_ext_inf) -> StationarySolution:
    """Limit temperature ``theta = g + K_II^{-1} F`` and its enthalpy interval."""
    g = harmonic_lift(space, g_ext_inf)
    theta = g + space.solve(np.asarray(F_inf, dtype=float))
    lo, hi = beta_interval(graph, theta)
    return StationarySolution(theta, lo, hi)


def l2_space_time(space: FracSpace, times, u, v=None, rule: str = "trapezoid") -> float:
    """``L^2(Q_T)`` norm of ``u - v`` with consistent mass in space.

    ``rule="trapezoid"`` or ``"right"`` (the rectangle rule matching implicit Euler).
    """
    d = np.asarray(u) if v is None else np.asarray(u) - np.asarray(v)
    per = np.einsum("ni,ij,nj->n", d, space.M, d)
    dt = np.diff(times)
    if rule == "right":
        total = np.sum(dt * per[1:])
    else:
        total = np.sum(0.5 * dt * (per[1:] + per[:-1]))
    return float(math.sqrt(max(total, 0.0)))


@dataclass
class ContractionReport:
    dist: np.ndarray
    bound: np.ndarray
    ratio: float
    max_increase: float
    theta_l2: float
    theta_bound: float


def contraction_report(space: FracSpace, graph: MonotoneGraph, a: Trajectory, b: Trajectory) -> ContractionReport:
    """Compare two runs with equal exterior data.

    ``dist_n = ||M_L (eta_n - eta'_n)||_{K^{-1}}`` is checked against
    ``dist_0 + sum_m tau ||F_m - F'_m||_{K^{-1}}`` and the temperature gap in
    ``L^2(Q_T)`` (right-endpoint rule, lumped mass) against
    ``sqrt(C) dist_0 + sqrt(3C/2) sum_m tau ||F_m - F'_m||``.
    """
    if not np.allclose(a.g_ext, b.g_ext, rtol=0, atol=0):
        raise ValueError("contraction compares runs with the same exterior data")
    dist = space.enthalpy_dual_norm(a.eta - b.eta)
    dt = np.diff(a.times)
    dF = space.dual_norm(a.F - b.F)
    S = np.concatenate([[0.0], np.cumsum(dt * dF[1:])])
    bound = dist[0] + S
    ratio = float(np.max(dist / np.maximum(bound, 1e-300)))
    C = graph.lipschitz_gamma
    dth = a.theta - b.theta
    th_l2 = float(np.sqrt(np.sum(dt * np.sum(space.ml * dth[1:] ** 2, axis=1))))
    th_bound = math.sqrt(C) * dist[0] + math.sqrt(1.5 * C) * S[-1]
    return ContractionReport(dist, bound, ratio, float(np.max(np.diff(dist))), th_l2, th_bound)


def gronwall_check(a, y, C: float):
    """Discrete Gronwall-type lemma with left-endpoint sums.

    If ``y_n^2 <= C + sum_{m<n} a_m y_m`` then
    ``y_n <= sqrt(C) + 0.5 sum_{m<n} a_m``.

    Returns
    -------
    hypothesis : ndarray of bool
        Nodes where the hypothesis holds up to that index.
    margin : ndarray
        ``sqrt(C) + 0.5 sum a - y`` (nonnegative wherever the lemma applies).
    """
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    past = np.concatenate([[0.0], np.cumsum(a * y)[:-1]])
    hyp = np.cumprod(y**2 <= C + past + 1e-14 * (C + past)).astype(bool)
    margin = math.sqrt(C) + 0.5 * np.concatenate([[0.0], np.cumsum(a)[:-1]]) - y
    return hyp, margin
