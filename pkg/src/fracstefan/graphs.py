"""Maximal monotone enthalpy graphs and their inverses.

The enthalpy graph is ``beta = b + lam * H`` where ``b`` is a piecewise-linear
nondecreasing map with ``b(0) = 0`` and ``H`` is the maximal monotone
Heaviside graph.  All computations go through the inverse ``gamma = beta^{-1}``,
which is a continuous, nondecreasing, piecewise-linear function of the
enthalpy.  Three kinds are supported:

``two_phase``
    ``gamma(r) = b^{-1}(r)`` for ``r <= 0``, ``0`` on ``[0, lam]`` and
    ``b^{-1}(r - lam)`` for ``r >= lam``.
``one_phase``
    ``gamma(r) = 0`` for ``r <= lam`` and ``b^{-1}(r - lam)`` beyond.
``regularized``
    ``gamma_nu = gamma_base + nu * r`` for a one-phase base graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

KINDS = ("two_phase", "one_phase", "regularized")


class PiecewiseLinear:
    """Continuous piecewise-linear function with linear extrapolation.

    Parameters
    ----------
    knots : array_like
        Strictly increasing abscissae.
    values : array_like
        Function values at ``knots``.
    slope_left, slope_right : float
        Slopes used for extrapolation below the first and above the last knot.
    """

    def __init__(self, knots, values, slope_left: float, slope_right: float):
        self.knots = np.asarray(knots, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.knots.ndim != 1 or self.knots.size == 0:
            raise ValueError("need at least one knot")
        if np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        self.slope_left = float(slope_left)
        self.slope_right = float(slope_right)
        dk = np.diff(self.knots)
        self.seg_slopes = np.diff(self.values) / dk
        # primitive at the knots, anchored at r = 0
        seg_int = 0.5 * (self.values[1:] + self.values[:-1]) * dk
        cum = np.concatenate([[0.0], np.cumsum(seg_int)])
        self._prim = cum - self._primitive_raw(0.0, cum)

    # -- evaluation -----------------------------------------------------
    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.interp(r, self.knots, self.values)
        lo, hi = self.knots[0], self.knots[-1]
        out = np.where(r < lo, self.values[0] + self.slope_left * (r - lo), out)
        out = np.where(r > hi, self.values[-1] + self.slope_right * (r - hi), out)
        return out

    def all_slopes(self) -> np.ndarray:
        return np.concatenate([[self.slope_left], self.seg_slopes, [self.slope_right]])

    def right_derivative(self, r):
        """Slope of the segment immediately to the right of ``r``."""
        r = np.asarray(r, dtype=float)
        idx = np.searchsorted(self.knots, r, side="right")
        return self.all_slopes()[idx]

    def _primitive_raw(self, r, cum):
        r = np.asarray(r, dtype=float)
        k = np.clip(np.searchsorted(self.knots, r, side="right") - 1, 0, self.knots.size - 1)
        slopes = np.concatenate([self.seg_slopes, [self.slope_right]])[k]
        d = r - self.knots[k]
        out = cum[k] + self.values[k] * d + 0.5 * slopes * d * d
        d0 = r - self.knots[0]
        left = cum[0] + self.values[0] * d0 + 0.5 * self.slope_left * d0 * d0
        return np.where(r < self.knots[0], left, out)

    def primitive(self, r):
        """Exact integral of the function from 0 to ``r``."""
        return self._primitive_raw(r, self._prim)

    # -- generalized inverses -------------------------------------------
    def level_set(self, y):
        """Endpoints of ``{r : f(r) = y}`` for a nondecreasing function.

        Returns ``(lo, hi)``; unbounded ends are ``-inf``/``+inf`` and an
        empty level set is reported as ``(nan, nan)``.
        """
        y = np.asarray(y, dtype=float)
        k, v = self.knots, self.values
        m = v.size
        sl, sr = self.slope_left, self.slope_right
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            ext_l = k[0] + (y - v[0]) / sl if sl > 0 else np.full_like(y, np.nan)
            ext_r = k[-1] + (y - v[-1]) / sr if sr > 0 else np.full_like(y, np.nan)

            def interp(i):
                i = np.clip(i, 1, max(m - 1, 1))
                if m == 1:
                    return np.full_like(y, k[0])
                dv = v[i] - v[i - 1]
                t = np.clip((y - v[i - 1]) / np.where(dv > 0, dv, np.inf), 0.0, 1.0)
                return k[i - 1] + t * (k[i] - k[i - 1])

            i = np.searchsorted(v, y, side="left")
            ic = np.minimum(i, m - 1)
            lo = np.where(v[ic] == y, k[ic], interp(i))
            lo = np.where(y < v[0], ext_l, lo)
            lo = np.where(y > v[-1], ext_r, lo)
            if sl == 0:
                lo = np.where(y == v[0], -np.inf, lo)

            j = np.searchsorted(v, y, side="right")
            jc = np.maximum(j - 1, 0)
            hi = np.where(v[jc] == y, k[jc], interp(j))
            hi = np.where(y < v[0], ext_l, hi)
            hi = np.where(y > v[-1], ext_r, hi)
            if sr == 0:
                hi = np.where(y == v[-1], np.inf, hi)
        bad = np.isnan(lo) | np.isnan(hi)
        return np.where(bad, np.nan, lo), np.where(bad, np.nan, hi)

    def inverse_strict(self, y):
        """Inverse of a strictly increasing function."""
        if self.slope_left <= 0 or self.slope_right <= 0 or np.any(self.seg_slopes <= 0):
            raise ValueError("function is not strictly increasing")
        y = np.asarray(y, dtype=float)
        out = np.interp(y, self.values, self.knots)
        out = np.where(y < self.values[0], self.knots[0] + (y - self.values[0]) / self.slope_left, out)
        out = np.where(y > self.values[-1], self.knots[-1] + (y - self.values[-1]) / self.slope_right, out)
        return out

    def add_linear(self, nu: float) -> "PiecewiseLinear":
        return PiecewiseLinear(self.knots, self.values + nu * self.knots,
                               self.slope_left + nu, self.slope_right + nu)


@dataclass
class MonotoneGraph:
    """Enthalpy graph ``beta = b + lam * H`` described through its inverse.

    Parameters
    ----------
    breakpoints : sequence of float
        Sorted breakpoints of the piecewise-linear map ``b``.
    slopes : sequence of float
        Slopes of ``b``; one more entry than ``breakpoints``.  All slopes must
        be positive so that ``b^{-1}`` is Lipschitz.
    lam : float
        Latent heat, ``lam >= 0``.
    kind : {"two_phase", "one_phase", "regularized"}
    nu : float, optional
        Regularization parameter, only for ``kind="regularized"``.
    """

    breakpoints: tuple = ()
    slopes: tuple = (1.0,)
    lam: float = 1.0
    kind: str = "two_phase"
    nu: float = 0.0
    gamma: PiecewiseLinear = field(init=False, repr=False, compare=False)
    b: PiecewiseLinear = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.breakpoints = tuple(float(p) for p in self.breakpoints)
        self.slopes = tuple(float(c) for c in self.slopes)
        self.lam = float(self.lam)
        self.nu = float(self.nu)
        if self.kind not in KINDS:
            raise ValueError(f"unknown graph kind {self.kind!r}")
        if len(self.slopes) != len(self.breakpoints) + 1:
            raise ValueError("need len(slopes) == len(breakpoints) + 1")
        if any(c <= 0 for c in self.slopes):
            raise ValueError("slopes of b must be positive")
        if any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if self.lam < 0:
            raise ValueError("latent heat must be nonnegative")
        if self.kind == "regularized" and not self.nu > 0:
            raise ValueError("regularization requires nu > 0")
        if self.kind != "regularized" and self.nu != 0:
            raise ValueError("nu is only meaningful for regularized graphs")
        self.b = self._build_b()
        self.gamma = self._build_gamma()

    def _build_b(self) -> PiecewiseLinear:
        p = np.asarray(self.breakpoints, dtype=float)
        c = np.asarray(self.slopes, dtype=float)
        knots = np.union1d(p, [0.0])
        # slope on [knots[i], knots[i+1]] is the slope of the interval containing its midpoint
        mids = 0.5 * (knots[1:] + knots[:-1])
        seg = c[np.searchsorted(p, mids)] if mids.size else np.array([])
        vals = np.concatenate([[0.0], np.cumsum(seg * np.diff(knots))])
        vals -= vals[np.searchsorted(knots, 0.0)]
        return PiecewiseLinear(knots, vals, c[0], c[-1])

    @staticmethod
    def _merge(knots, vals):
        # knots closer than round-off (tiny lam or breakpoints) are merged
        keep = np.concatenate([[True], np.diff(knots) > 1e-12 * np.maximum(1.0, np.abs(knots[1:]))])
        return knots[keep], vals[keep]

    def _build_gamma(self) -> PiecewiseLinear:
        bk, bv = self.b.knots, self.b.values
        neg = bk < 0
        pos = bk > 0
        lam = self.lam
        if self.kind == "two_phase":
            knots = np.concatenate([bv[neg], [0.0], [lam] if lam > 0 else [], bv[pos] + lam])
            vals = np.concatenate([bk[neg], [0.0], [0.0] if lam > 0 else [], bk[pos]])
            knots, vals = self._merge(knots, vals)
            return PiecewiseLinear(knots, vals, 1.0 / self.b.slope_left, 1.0 / self.b.slope_right)
        knots = np.concatenate([[0.0] if lam > 0 else [], [lam], bv[pos] + lam])
        vals = np.concatenate([[0.0] if lam > 0 else [], [0.0], bk[pos]])
        knots, vals = self._merge(knots, vals)
        base = PiecewiseLinear(knots, vals, 0.0, 1.0 / self.b.slope_right)
        if self.kind == "regularized":
            return base.add_linear(self.nu)
        return base

    # -- derived quantities ---------------------------------------------
    @property
    def lipschitz_gamma(self) -> float:
        """Lipschitz constant ``C_gamma`` of ``gamma``."""
        return float(np.max(self.gamma.all_slopes()))

    @property
    def base(self) -> "MonotoneGraph":
        """Unregularized graph (the graph itself unless regularized)."""
        if self.kind != "regularized":
            return self
        return MonotoneGraph(self.breakpoints, self.slopes, self.lam, "one_phase")

    def to_dict(self) -> dict:
        d = {"b": {"breakpoints": list(self.breakpoints), "slopes": list(self.slopes)},
             "lambda": self.lam, "kind": self.kind}
        if self.kind == "regularized":
            d["nu"] = self.nu
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MonotoneGraph":
        """Build a graph from its scenario-file description.

        ``{"b": {"breakpoints": [...], "slopes": [...]}, "lambda": x,
        "kind": "two_phase" | "one_phase", "nu": optional}``.  A positive
        ``nu`` turns a one-phase graph into its regularization.
        """
        b = d.get("b", {"breakpoints": [], "slopes": [1.0]})
        kind = d.get("kind", "two_phase")
        nu = float(d.get("nu", 0.0) or 0.0)
        g = cls(tuple(b.get("breakpoints", [])), tuple(b.get("slopes", [1.0])),
                float(d.get("lambda", 1.0)), "one_phase" if kind == "regularized" else kind)
        if nu > 0 or kind == "regularized":
            return regularize(g, nu)
        return g


@dataclass
class GraphPoint:
    """Nodewise point ``(eta, theta, chi)`` on the graph."""

    eta: np.ndarray
    theta: np.ndarray
    chi: np.ndarray


def gamma_eval(graph: MonotoneGraph, r):
    """Temperature ``gamma(r)`` for enthalpy ``r``."""
    return graph.gamma(r)


def gamma_derivative(graph: MonotoneGraph, r):
    """Right derivative of ``gamma``; on plateau edges this is the outer slope
    at the right edge and zero at the left edge."""
    return graph.gamma.right_derivative(r)


def beta_interval(graph: MonotoneGraph, theta):
    """Enthalpy interval ``beta(theta)`` as ``(lo, hi)``.

    Raises
    ------
    ValueError
        If ``theta`` lies outside the range of ``gamma``.
    """
    lo, hi = graph.gamma.level_set(theta)
    if np.any(np.isnan(lo)):
        raise ValueError("temperature outside the range of the graph")
    return lo, hi


def phase_fraction(graph: MonotoneGraph, eta):
    """Selection ``chi`` of the Heaviside graph along the enthalpy.

    ``chi = 0`` in the solid, ``1`` in the liquid and ``eta / lam`` clamped to
    ``[0, 1]`` on the plateau.  For a regularized graph the base graph is used.
    """
    eta = np.asarray(eta, dtype=float)
    g = graph.base
    theta = g.gamma(eta)
    if g.lam == 0:
        return (theta > 0).astype(float)
    mush = np.clip(eta / g.lam, 0.0, 1.0)
    return np.where(theta > 0, 1.0, np.where(theta < 0, 0.0, mush))


def graph_point(graph: MonotoneGraph, eta) -> GraphPoint:
    eta = np.asarray(eta, dtype=float)
    return GraphPoint(eta, graph.gamma(eta), phase_fraction(graph, eta))


def primitive_j(graph: MonotoneGraph, r):
    """Convex primitive ``j`` of ``gamma`` with ``j(0) = 0``."""
    return graph.gamma.primitive(r)


def conjugate_j(graph: MonotoneGraph, v):
    """Convex conjugate ``j*(v) = sup_r (r v - j(r))`` in closed form.

    The supremum is attained on ``beta(v)``; ``+inf`` is returned when ``v``
    is outside the range of ``gamma``.
    """
    v = np.asarray(v, dtype=float)
    lo, hi = graph.gamma.level_set(v)
    r = np.where(np.isfinite(lo), lo, hi)
    with np.errstate(invalid="ignore"):
        val = r * v - graph.gamma.primitive(np.where(np.isfinite(r), r, 0.0))
    return np.where(np.isfinite(r), val, np.inf)


def regularize(graph: MonotoneGraph, nu: float) -> MonotoneGraph:
    """Regularized graph ``gamma_nu = gamma + nu * Id`` of a one-phase graph."""
    if not nu > 0:
        raise ValueError("regularization parameter must be positive")
    base = graph.base
    if base.kind != "one_phase":
        raise ValueError("regularization is defined for one-phase graphs")
    return MonotoneGraph(base.breakpoints, base.slopes, base.lam, "regularized", float(nu))


def yosida_resolvent(graph: MonotoneGraph, nu: float, r):
    """Resolvent ``(Id + nu * beta)^{-1}(r)``.

    Solving ``x + nu * y = r`` with ``x = gamma(y)`` gives
    ``y = (gamma + nu Id)^{-1}(r)`` and ``x = gamma(y)``.
    """
    if not nu > 0:
        raise ValueError("resolvent parameter must be positive")
    y = graph.gamma.add_linear(nu).inverse_strict(r)
    return graph.gamma(y)


def regularized_beta(graph: MonotoneGraph, nu: float, r):
    """Inverse of ``gamma + nu Id`` written through the resolvent,
    ``(r - (Id + nu beta)^{-1}(r)) / nu``."""
    r = np.asarray(r, dtype=float)
    return (r - yosida_resolvent(graph, nu, r)) / nu
