"""Exterior data and its discrete harmonic extension into the domain."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from .discretization import FracSpace

PRESETS = ("constant", "ramp", "decaying", "samples")


@dataclass
class ExteriorData:
    """Time-dependent exterior values on the collar nodes.

    Parameters
    ----------
    kind : {"constant", "ramp", "decaying", "samples"}
        ``constant`` holds ``value``; ``ramp`` grows linearly from 0 to
        ``value`` over ``t_ramp``; ``decaying`` is ``value * exp(-rate t)``;
        ``samples`` interpolates nodal arrays given on a time grid.
    value : float
        Amplitude.  ``left`` and ``right`` override it on one collar.
    """

    kind: str = "constant"
    value: float = 0.0
    left: Optional[float] = None
    right: Optional[float] = None
    t_ramp: float = 1.0
    rate: float = 1.0
    times: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None
    interp: str = "linear"

    def __post_init__(self):
        if self.kind not in PRESETS:
            raise ValueError(f"unknown exterior data preset {self.kind!r}")
        if self.kind == "samples":
            if self.times is None or self.samples is None:
                raise ValueError("sampled exterior data needs times and samples")
            self.times = np.asarray(self.times, dtype=float)
            self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
            if self.samples.shape[0] != self.times.size:
                raise ValueError("one sample row per time is required")
            if self.interp not in ("linear", "constant"):
                raise ValueError("interp must be 'linear' or 'constant'")
        if self.kind == "ramp" and not self.t_ramp > 0:
            raise ValueError("ramp time must be positive")

    def _profile(self, n_ext_side: int) -> np.ndarray:
        lv = self.value if self.left is None else self.left
        rv = self.value if self.right is None else self.right
        return np.concatenate([np.full(n_ext_side, lv), np.full(n_ext_side, rv)])

    def _amplitude(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.ones_like(t)
        if self.kind == "ramp":
            return np.clip(t / self.t_ramp, 0.0, 1.0)
        return np.exp(-self.rate * t)

    def at(self, t, n_ext_side: int) -> np.ndarray:
        """Exterior nodal values at time(s) ``t``; shape ``(..., 2 * n_ext_side)``."""
        t = np.asarray(t, dtype=float)
        if self.kind == "samples":
            if self.samples.shape[1] != 2 * n_ext_side:
                raise ValueError("sample rows do not match the exterior node count")
            if self.interp == "constant":
                idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 1)
                return self.samples[idx]
            flat = np.atleast_1d(t)
            out = np.stack([np.interp(flat, self.times, col) for col in self.samples.T], axis=-1)
            return out.reshape(t.shape + (2 * n_ext_side,))
        return self._amplitude(t)[..., None] * self._profile(n_ext_side)

    def constant_after(self) -> float:
        """Time after which the data no longer changes (``inf`` if never)."""
        if self.kind == "constant":
            return 0.0
        if self.kind == "ramp":
            return self.t_ramp
        if self.kind == "decaying":
            return np.inf
        return float(self.times[-1])

    def to_dict(self) -> dict:
        d: dict = {"type": self.kind, "value": self.value}
        for key in ("left", "right"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        if self.kind == "ramp":
            d["t_ramp"] = self.t_ramp
        if self.kind == "decaying":
            d["rate"] = self.rate
        if self.kind == "samples":
            d.update(times=self.times.tolist(), samples=self.samples.tolist(), interp=self.interp)
        return d

    @classmethod
    def from_dict(cls, d: Any) -> "ExteriorData":
        if d is None:
            return cls()
        if isinstance(d, (int, float)):
            return cls("constant", float(d))
        d = dict(d)
        kind = d.pop("type", d.pop("kind", "constant"))
        return cls(kind, **d)


def harmonic_lift(space: FracSpace, g_ext, check: float = 1e-10) -> np.ndarray:
    """Interior values ``g_I`` with ``K_II g_I = -K_IE g_ext``.

    ``g_ext`` may carry leading batch dimensions.

    Raises
    ------
    RuntimeError
        If the solve leaves a residual above ``check * ||rhs||``.
    """
    g_ext = np.asarray(g_ext, dtype=float)
    rhs = -(g_ext @ space.K_IE.T)
    flat = rhs.reshape(-1, space.n)
    g = space.solve(flat.T).T
    res = np.linalg.norm(g @ space.K_II - flat, axis=-1)
    scale = np.maximum(np.linalg.norm(flat, axis=-1), 1e-300)
    if np.any(res > check * np.maximum(scale, 1.0)):
        raise RuntimeError("harmonic lift solve is inaccurate; stiffness is ill-conditioned")
    return g.reshape(rhs.shape)


def lift_residual(space: FracSpace, g_I, g_ext) -> float:
    """Relative harmonicity defect ``||K_II g_I + K_IE g_ext|| / ||K_IE g_ext||``."""
    r = space.K_II @ g_I + space.K_IE @ g_ext
    return float(np.linalg.norm(r) / max(np.linalg.norm(space.K_IE @ g_ext), 1e-300))


@dataclass
class LiftedTrajectory:
    times: np.ndarray
    g_ext: np.ndarray
    g: np.ndarray
    dg: np.ndarray
    d2g: np.ndarray
    positivity: dict = field(default_factory=dict)


def lift_trajectory(space: FracSpace, data: ExteriorData, times) -> LiftedTrajectory:
    """Lift exterior data on a time grid.

    Time derivatives are second-order finite differences of the lifted
    samples, which by linearity equal lifts of the differenced data.
    """
    times = np.asarray(times, dtype=float)
    gE = data.at(times, space.mesh.n_ext)
    g = harmonic_lift(space, gE)
    if times.size >= 3:
        dg = np.gradient(g, times, axis=0)
        d2g = np.gradient(dg, times, axis=0)
    else:
        dg = np.zeros_like(g)
        d2g = np.zeros_like(g)
    return LiftedTrajectory(times, gE, g, dg, d2g, positivity_report(g, gE))


def positivity_report(g_I, g_ext) -> dict:
    """Whether the lift stays within the range of its data (monitored only)."""
    lo, hi = float(np.min(g_ext)), float(np.max(g_ext))
    return {"min": float(np.min(g_I)), "max": float(np.max(g_I)),
            "data_min": lo, "data_max": hi,
            "within_range": bool(np.min(g_I) >= lo - 1e-12 and np.max(g_I) <= hi + 1e-12)}
