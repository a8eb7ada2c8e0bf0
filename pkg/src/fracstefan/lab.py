"""Experiments, regression scenarios and the command-line interface."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .discretization import (Coefficient, Mesh1D, assemble_stiffness, build_space,
                             fft_oracle_stiffness)
from .graphs import MonotoneGraph, regularize
from .lift import ExteriorData
from .solver import (InitialData, Scenario, SolverError, Source, contraction_report,
                     l2_space_time, run, stationary_solve)
from .spectral import eigs
from .vi import freezing_index, solve_one_phase_vi, vi_cross_residual, vi_distance

EXPERIMENTS = ("run", "eigs", "sweep-s", "sweep-nu", "asymptotic", "vi", "contraction", "oracle-check")


# ---------------------------------------------------------------------------
# regression scenarios
# ---------------------------------------------------------------------------

def stefan_scenario(n: int = 64, s: float = 0.5, T: float = 0.2, tau: float = 1e-3) -> Scenario:
    """Two-phase melting: solid at -0.5, liquid exterior at +1, unit latent heat."""
    return Scenario(mesh=Mesh1D(0.0, 1.0, n), s=s, graph=MonotoneGraph((), (1.0,), 1.0, "two_phase"),
                    exterior=ExteriorData("constant", 1.0), eta0=InitialData("constant", -0.5),
                    T=T, tau=tau)


def one_phase_scenario(n: int = 32, s: float = 0.5, T: float = 0.2, tau: float = 1e-3) -> Scenario:
    """One-phase melting from the melting temperature with a warm exterior."""
    return Scenario(mesh=Mesh1D(0.0, 1.0, n), s=s, graph=MonotoneGraph((), (1.0,), 1.0, "one_phase"),
                    exterior=ExteriorData("constant", 1.0), eta0=InitialData("constant", 0.5),
                    T=T, tau=tau)


def obstacle_scenario(n: int = 64, tau: float = 1e-3, s: float = 0.5, T: float = 0.2) -> Scenario:
    """One-phase problem with compatible data (exterior ramps up from zero)."""
    return Scenario(mesh=Mesh1D(0.0, 1.0, n), s=s, graph=MonotoneGraph((), (1.0,), 0.5, "one_phase"),
                    exterior=ExteriorData("ramp", 1.0, t_ramp=0.02), eta0=InitialData("constant", 0.0),
                    T=T, tau=tau)


def data_constant_index(sc: Scenario) -> int:
    """First time index from which source and exterior data are constant."""
    t0 = max(sc.exterior.constant_after(), sc.source.constant_after())
    if not math.isfinite(t0):
        return sc.n_steps + 1
    return int(np.searchsorted(sc.times, t0 - 1e-12 * sc.tau))


def monotone_with_wobble(d, wobble: float = 0.10) -> bool:
    d = np.asarray(d, dtype=float)
    return bool(np.all(d[1:] <= (1.0 + wobble) * d[:-1]))


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    """Name, parameter grid and seed of an experiment."""

    name: str
    grid: tuple = ()
    seed: int = 0
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentResult:
    name: str
    header: list
    rows: list
    passed: bool
    summary: dict = field(default_factory=dict)


def experiment_s_convergence(base: Scenario, s_grid: Sequence[float] = (0.6, 0.9, 0.99, 0.999),
                             wobble: float = 0.10) -> ExperimentResult:
    """Distance in ``L^2(Q_T)`` between runs at order ``s`` and the classical run."""
    ref = run(base.replace(s=1.0))
    space1 = base.replace(s=1.0).space()
    rows = []
    dth, det = [], []
    for s in s_grid:
        tr = run(base.replace(s=float(s)))
        a = l2_space_time(space1, tr.times, tr.theta, ref.theta)
        b = l2_space_time(space1, tr.times, tr.eta, ref.eta)
        dth.append(a)
        det.append(b)
        rows.append([float(s), a, b, int(tr.newton_iters.max())])
    ok = monotone_with_wobble(dth, wobble) and monotone_with_wobble(det, wobble)
    return ExperimentResult("sweep-s", ["s", "theta_dist", "eta_dist", "max_newton"], rows, ok,
                            {"theta_dist": dth, "eta_dist": det})


def experiment_two_to_one_phase(base: Scenario, nu_grid: Sequence[float] = (0.1, 0.03, 0.01, 0.003),
                                wobble: float = 0.10) -> ExperimentResult:
    """Distance between regularized runs and the one-phase run."""
    ref = run(graph_for_nu(base, 0.0))
    space = base.space()
    rows, dth = [], []
    for nu in nu_grid:
        tr = run(graph_for_nu(base, float(nu)))
        a = l2_space_time(space, tr.times, tr.theta, ref.theta)
        b = l2_space_time(space, tr.times, tr.eta, ref.eta)
        dth.append(a)
        rows.append([float(nu), a, b])
    ok = monotone_with_wobble(dth, wobble)
    return ExperimentResult("sweep-nu", ["nu", "theta_dist", "eta_dist"], rows, ok, {"theta_dist": dth})


def graph_for_nu(base: Scenario, nu: float) -> Scenario:
    """Scenario with the regularized graph; ``nu = 0`` returns the base one-phase scenario."""
    if nu == 0.0:
        return base.replace(graph=base.graph.base)
    return base.replace(graph=regularize(base.graph, nu))


def experiment_asymptotic(base: Scenario, periods: float = 50.0, steps: int = 1000,
                          tol: float = 1e-3, energy_slack: float = 1e-8) -> ExperimentResult:
    """Long-time run against the stationary solution with energy and
    dual-increment monitoring."""
    space = base.space()
    mu1 = float(eigs(space, 1).mu[0])
    T = periods / mu1
    t_const = max(base.exterior.constant_after(), base.source.constant_after())
    if not math.isfinite(t_const):
        raise ValueError("asymptotic experiment needs data that become constant")
    sc = base.replace(T=T, tau=T / steps)
    tr = run(sc)
    st = stationary_solve(space, sc.graph, tr.F[-1], tr.g_ext[-1])
    rel = float(np.linalg.norm(tr.theta[-1] - st.theta) / max(np.linalg.norm(st.theta), 1e-300))
    k0 = data_constant_index(sc)
    E = tr.E[k0 + 1:]
    dE = np.diff(E)
    e_ok = bool(np.all(dE <= energy_slack * max(1.0, np.max(np.abs(E)))))
    d = tr.dual_dist[k0 + 1:]
    inc = np.diff(d)
    d_ok = bool(np.all(inc <= 1e-10 * max(1.0, d.max()) + 1e-14))
    rows = [[float(t), float(e), float(dd)] for t, e, dd in zip(tr.times, tr.E, tr.dual_dist)]
    return ExperimentResult("asymptotic", ["t", "E", "dual_dist"], rows,
                            rel <= tol and e_ok and d_ok,
                            {"mu1": mu1, "T": T, "rel_error": rel, "energy_ok": e_ok,
                             "max_energy_increase": float(dE.max()) if dE.size else 0.0,
                             "dual_monotone": d_ok, "eta_interval": (st.eta_lo, st.eta_hi)})


def random_pair(rng: np.random.Generator, space_sc: Scenario):
    """Two scenarios differing in initial enthalpy and source."""
    n = space_sc.mesh.n
    lam = float(rng.uniform(0.0, 2.0))
    slope = float(rng.uniform(0.5, 2.0))
    graph = MonotoneGraph((), (slope,), lam, "two_phase")
    ext = ExteriorData("constant", float(rng.uniform(-1.0, 1.0)))
    e1 = rng.uniform(-2.0, 3.0, n)
    e2 = e1 + rng.normal(0.0, 0.5, n)
    f1 = Source("pulse", float(rng.normal()), t_off=float(rng.uniform(0.0, space_sc.T)))
    f2 = Source("pulse", float(rng.normal()), t_off=float(rng.uniform(0.0, space_sc.T)))
    a = space_sc.replace(graph=graph, exterior=ext, eta0=InitialData("nodal", values=e1.tolist()), source=f1)
    b = space_sc.replace(graph=graph, exterior=ext, eta0=InitialData("nodal", values=e2.tolist()), source=f2)
    return a, b


def experiment_contraction(seed: int = 0, pairs: int = 20, n: int = 16, steps: int = 200,
                           s: float = 0.5, slack: float = 0.05) -> ExperimentResult:
    """Seeded pairs of runs checked against the contraction estimates.

    Per pair: nonexpansiveness of the step map for identical data (after the
    source pulse is switched off the two runs share data), the enthalpy bound
    and the temperature bound, each with relative ``slack``.
    """
    rng = np.random.default_rng(seed)
    base = Scenario(mesh=Mesh1D(0.0, 1.0, n), s=s, T=0.2, tau=0.2 / steps)
    base.space()
    rows = []
    ok = True
    for p in range(pairs):
        a, b = random_pair(rng, base)
        ta, tb = run(a), run(b)
        rep = contraction_report(base.space(), a.graph, ta, tb)
        t_off = max(a.source.t_off, b.source.t_off)
        k0 = int(np.searchsorted(ta.times, t_off - 1e-12)) + 1
        incr = np.diff(rep.dist[k0:])
        tol = 10 * a.newton_tol * max(1.0, float(rep.dist.max()))
        nonexp = float(incr.max()) if incr.size else 0.0
        good = (nonexp <= tol and rep.ratio <= 1 + slack and rep.theta_l2 <= (1 + slack) * rep.theta_bound)
        ok &= good
        rows.append([p, rep.ratio, nonexp, rep.theta_l2, rep.theta_bound, int(good)])
    return ExperimentResult("contraction", ["pair", "bound_ratio", "max_increase_same_data",
                                            "theta_l2", "theta_bound", "ok"], rows, bool(ok))


def experiment_oracle(n: int = 32, s_grid: Sequence[float] = (0.3, 0.5, 0.7), tol: float = 1e-3) -> ExperimentResult:
    """Quadrature stiffness against the Fourier oracle."""
    mesh = Mesh1D(0.0, 1.0, n)
    rows, ok = [], True
    for s in s_grid:
        K, _, tail = assemble_stiffness(mesh, float(s))
        Ko = fft_oracle_stiffness(mesh, float(s))
        err = float(np.linalg.norm(K - Ko) / np.linalg.norm(Ko))
        ok &= err <= tol
        rows.append([float(s), err, tail])
    return ExperimentResult("oracle-check", ["s", "rel_frobenius", "tail_estimate"], rows, bool(ok))


def experiment_vi(sc: Scenario, tol: float = 5e-2) -> ExperimentResult:
    out = solve_one_phase_vi(sc)
    tr = run(sc)
    cross = vi_cross_residual(sc, tr)
    dist = vi_distance(sc, tr, out)
    rows = []
    x = sc.mesh.x
    for k, t in enumerate(out.times):
        for i in range(sc.mesh.n):
            rows.append([float(t), i, float(out.Theta[k, i]), float(out.multiplier[k, i]), int(out.active[k, i])])
    ok = float(out.residual.max()) <= 1e-8 and cross <= tol
    return ExperimentResult("vi", ["t", "node", "Theta", "multiplier", "active"], rows, ok,
                            {"complementarity": float(out.residual.max()), "cross_residual": cross, "l2_distance": dist,
                             "nodes": x.tolist()})


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows, digest: str, params: dict) -> None:
    """CSV with a scenario hash and parameter echo as comment lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# scenario={digest}\n")
        fh.write(f"# params={json.dumps(params, sort_keys=True, default=float)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def trajectory_rows(traj):
    rows = []
    for k, t in enumerate(traj.times):
        for i, xi in enumerate(traj.x):
            rows.append([float(t), i, float(xi), float(traj.eta[k, i]), float(traj.theta[k, i]),
                         float(traj.chi[k, i])])
    return rows


def diagnostics_rows(traj):
    return [[float(t), float(p), float(e), float(d), int(it)]
            for t, p, e, d, it in zip(traj.times, traj.phi, traj.E, traj.dual_dist, traj.newton_iters)]


def _plot(path, x, ys, labels, xlabel, ylabel, logy=False):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for y, lab in zip(ys, labels):
        ax.plot(x, y, label=lab)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if any(labels):
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def load_scenario(path: Optional[str], default: Scenario) -> Scenario:
    if path is None:
        return default
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed scenario file: {exc}") from exc
    return Scenario.from_dict(d)


def _grid(text: Optional[str], default):
    if text is None:
        return tuple(default)
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise ValueError(f"bad grid {text!r}") from exc


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracstefan", description="Fractional Stefan problem experiments")
    p.add_argument("command", choices=EXPERIMENTS)
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plots", action="store_true", help="write PNG plots")
    p.add_argument("--s-grid", help="comma-separated orders")
    p.add_argument("--nu-grid", help="comma-separated regularization parameters")
    p.add_argument("--k", type=int, default=6, help="number of eigenpairs")
    return p


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns 0 on success, 2 on a failed check and 1 on a
    solver error or malformed input."""
    args = _parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cmd = args.command
    try:
        return _dispatch(cmd, args, out)
    except (SolverError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(cmd, args, out: Path) -> int:
    params = {k: v for k, v in vars(args).items() if k not in ("out",)}
    if cmd == "run":
        sc = load_scenario(args.scenario, stefan_scenario(n=32))
        tr = run(sc)
        p = dict(params, **sc.to_dict())
        write_csv(out / "trajectory.csv", ["t", "node", "x", "eta", "theta", "chi"],
                  trajectory_rows(tr), sc.digest(), p)
        write_csv(out / "diagnostics.csv", ["t", "phi", "E", "dual_dist", "newton_iters"],
                  diagnostics_rows(tr), sc.digest(), p)
        if args.plots:
            _plot(out / "run_theta.png", tr.x, [tr.theta[0], tr.theta[-1]], ["t=0", f"t={tr.times[-1]:g}"],
                  "x", "theta")
            _plot(out / "run_energy.png", tr.times, [tr.E], [""], "t", "E")
        print(f"run: {sc.n_steps} steps, max Newton iterations {int(tr.newton_iters.max())}")
        return 0
    if cmd == "eigs":
        sc = load_scenario(args.scenario, stefan_scenario(n=64))
        grid = _grid(args.s_grid, (sc.s,))
        rows = []
        for s in grid:
            tab = eigs(build_space(sc.mesh, s, sc.coeff), args.k)
            rows += [[s, k + 1, float(m), float(r)] for k, (m, r) in enumerate(zip(tab.mu, tab.residual))]
        write_csv(out / "eigs.csv", ["s", "k", "mu", "residual"], rows, sc.digest(), params)
        if args.plots:
            mu = np.array([r[2] for r in rows]).reshape(len(grid), -1)
            _plot(out / "eigs_mu.png", np.arange(1, mu.shape[1] + 1), list(mu), [f"s={s:g}" for s in grid],
                  "k", "mu", logy=True)
        ok = all(r[3] <= 1e-8 * r[2] for r in rows)
        print(f"eigs: {len(rows)} eigenpairs, residual check {'ok' if ok else 'FAILED'}")
        return 0 if ok else 2
    if cmd == "sweep-s":
        sc = load_scenario(args.scenario, stefan_scenario())
        res = experiment_s_convergence(sc, _grid(args.s_grid, (0.6, 0.9, 0.99, 0.999)))
    elif cmd == "sweep-nu":
        sc = load_scenario(args.scenario, one_phase_scenario())
        res = experiment_two_to_one_phase(sc, _grid(args.nu_grid, (0.1, 0.03, 0.01, 0.003)))
    elif cmd == "asymptotic":
        sc = load_scenario(args.scenario, stefan_scenario(n=32))
        res = experiment_asymptotic(sc)
    elif cmd == "vi":
        sc = load_scenario(args.scenario, obstacle_scenario())
        res = experiment_vi(sc)
    elif cmd == "contraction":
        sc = Scenario(mesh=Mesh1D(0.0, 1.0, 16))
        res = experiment_contraction(seed=args.seed)
    else:
        sc = Scenario(mesh=Mesh1D(0.0, 1.0, 32))
        res = experiment_oracle(32, _grid(args.s_grid, (0.3, 0.5, 0.7)))
    name = {"vi": "obstacle"}.get(cmd, cmd.replace("-", "_"))
    write_csv(out / f"{name}.csv", res.header, res.rows, sc.digest(), dict(params, **sc.to_dict()))
    if args.plots and res.rows and cmd in ("sweep-s", "sweep-nu"):
        arr = np.array(res.rows, dtype=float)
        _plot(out / f"{cmd}_{res.header[0]}.png", arr[:, 0], [arr[:, 1]], [""], res.header[0],
              "theta distance", logy=True)
    if args.plots and cmd == "asymptotic":
        arr = np.array(res.rows, dtype=float)
        _plot(out / "asymptotic_dual_dist.png", arr[1:, 0], [arr[1:, 2]], [""], "t", "increment",
              logy=True)
    print(f"{cmd}: {'ok' if res.passed else 'FAILED'}")
    return 0 if res.passed else 2


def main() -> None:
    sys.exit(cli_main())
