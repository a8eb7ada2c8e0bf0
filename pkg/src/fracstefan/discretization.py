"""P1 finite elements for the Riesz fractional gradient on an interval.

For a function ``u`` whose derivative is integrable and compactly supported
the fractional gradient is a Riesz potential of ``u'``,

    D^s u(x) = kappa_s * int |x - y|^{-s} u'(y) dy,
    kappa_s  = 1 / (2 Gamma(1 - s) sin(pi s / 2)),

so a piecewise-linear ``u`` has a closed-form ``D^s u``: on every element
with slope ``m`` the contribution is ``m * kappa_s / (1 - s)`` times a
difference of ``psi(z) = sign(z) |z|^{1-s}``.  Stiffness entries
``int a D^s phi_i D^s phi_j`` are integrated on the real line by graded Gauss
rules split at every node, geometric panels in the far field and the leading
term of the asymptotic expansion beyond that.

The global node set is an interior mesh of ``(a, b)`` plus an exterior collar
of width ``R`` on each side whose nodes include ``a`` and ``b``.  The
outermost exterior basis functions are continued by a constant towards
infinity, so exterior data beyond the collar equals its value at the collar
end and constant data is exactly harmonic.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gamma as gamma_fn

_GAUSS_ORDER = 8
_GRADING = 0.15


def riesz_constant(s: float, d: int = 1) -> float:
    """Normalization ``c_{d,s}`` of the singular-integral form of ``D^s``."""
    return 2.0**s * math.pi ** (-d / 2) * gamma_fn((d + s + 1) / 2) / gamma_fn((1 - s) / 2)


def potential_constant(s: float) -> float:
    """``kappa_s`` of the potential form; equals ``c_{1,s} / s``."""
    return 1.0 / (2.0 * gamma_fn(1.0 - s) * math.sin(math.pi * s / 2.0))


@dataclass(frozen=True)
class Coefficient:
    """Piecewise-constant diffusion coefficient on the real line.

    ``values[k]`` holds on ``(breakpoints[k-1], breakpoints[k])`` with the
    first and last values continued to infinity.
    """

    breakpoints: tuple = ()
    values: tuple = (1.0,)

    def __post_init__(self):
        if len(self.values) != len(self.breakpoints) + 1:
            raise ValueError("need len(values) == len(breakpoints) + 1")
        if min(self.values) <= 0:
            raise ValueError("coefficient must be bounded below by a positive constant")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("coefficient breakpoints must increase")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self.values)[np.searchsorted(self.breakpoints, x, side="right")]

    @property
    def lower(self) -> float:
        return float(min(self.values))

    @property
    def upper(self) -> float:
        return float(max(self.values))

    @classmethod
    def from_dict(cls, d) -> "Coefficient":
        if d is None:
            return cls()
        if isinstance(d, (int, float)):
            return cls((), (float(d),))
        return cls(tuple(d.get("breakpoints", ())), tuple(d.get("values", (1.0,))))


@dataclass
class Mesh1D:
    """Uniform mesh of ``(a, b)`` with exterior collars of width ``R``.

    Parameters
    ----------
    a, b : float
        Domain endpoints.
    n : int
        Number of interior nodes; ``h = (b - a) / (n + 1)``.
    R : float, optional
        Collar width, at least ``b - a``; defaults to ``4 (b - a)``.
    n_ext : int, optional
        Exterior nodes per side including the boundary node.  The default
        matches the interior spacing, capped at 129 nodes per side.
    """

    a: float = 0.0
    b: float = 1.0
    n: int = 32
    R: Optional[float] = None
    n_ext: Optional[int] = None

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("need a < b")
        if self.n < 1:
            raise ValueError("need at least one interior node")
        width = self.b - self.a
        if self.R is None:
            self.R = 4.0 * width
        if self.R < width * (1 - 1e-12):
            raise ValueError("collar width must be at least the domain length")
        if self.n_ext is None:
            self.n_ext = min(int(math.ceil(self.R / self.h - 1e-9)), 128) + 1
        if self.n_ext < 2:
            raise ValueError("need at least two exterior nodes per side")

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.n + 1)

    @property
    def x(self) -> np.ndarray:
        """Interior node coordinates."""
        return self.a + self.h * np.arange(1, self.n + 1)

    @property
    def x_ext(self) -> np.ndarray:
        """Exterior node coordinates, left collar (far to near) then right."""
        t = np.linspace(0.0, self.R, self.n_ext)
        return np.concatenate([self.a - t[::-1], self.b + t])

    @property
    def nodes(self) -> np.ndarray:
        """All nodes in increasing order."""
        xe = self.x_ext
        m = self.n_ext
        return np.concatenate([xe[:m], self.x, xe[m:]])

    @property
    def interior_index(self) -> np.ndarray:
        return np.arange(self.n_ext, self.n_ext + self.n)

    @property
    def exterior_index(self) -> np.ndarray:
        m = self.n_ext
        return np.concatenate([np.arange(m), np.arange(m + self.n, 2 * m + self.n)])


# ---------------------------------------------------------------------------
# closed-form fractional gradient of P1 functions
# ---------------------------------------------------------------------------

def _psi_increment(z, w, alpha):
    """``psi(z + w) - psi(z)`` for ``w > 0`` without cancellation when ``|z|``
    is large."""
    z = np.asarray(z, dtype=float)
    zw = z + w
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        raw = np.sign(zw) * np.abs(zw) ** alpha - np.sign(z) * np.abs(z) ** alpha
        pos = z ** alpha * np.expm1(alpha * np.log1p(w / z))
        q = -z
        neg = -(q ** alpha) * np.expm1(alpha * np.log1p(-w / q))
    out = np.where(z > 0, pos, np.where(zw < 0, neg, raw))
    return out


def element_gradients(x, nodes, s: float) -> np.ndarray:
    """Fractional gradient of unit-slope ramps on every element.

    Row ``e`` holds ``kappa_s / (1 - s) * (psi(x_{e+1} - x) - psi(x_e - x)) /
    (x_{e+1} - x_e)``, the fractional gradient of a function whose derivative
    is the indicator of element ``e`` divided by its length.
    """
    x = np.asarray(x, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    alpha = 1.0 - s
    c = potential_constant(s) / alpha
    lengths = np.diff(nodes)
    z = nodes[:-1, None] - x[None, :]
    return c * _psi_increment(z, lengths[:, None], alpha) / lengths[:, None]


def basis_gradients(x, nodes, s: float, open_ends: bool = True) -> np.ndarray:
    """``D^s`` of every nodal basis function at points ``x``.

    With ``open_ends`` the first and last basis functions are continued by
    one towards minus and plus infinity.  At ``s = 1`` the classical
    derivative is returned.
    """
    x = np.asarray(x, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    if s == 1.0:
        lengths = np.diff(nodes)
        e = np.searchsorted(nodes, x, side="right") - 1
        E = np.zeros((nodes.size - 1, x.size))
        inside = (e >= 0) & (e < nodes.size - 1)
        E[e[inside], np.nonzero(inside)[0]] = 1.0 / lengths[e[inside]]
    else:
        E = element_gradients(x, nodes, s)
    G = np.zeros((nodes.size, x.size))
    G[1:] += E
    G[:-1] -= E
    if not open_ends:
        return G
    G[0] = -E[0]
    G[-1] = E[-1]
    return G


def frac_gradient_basis(s: float, center: float, h: float, x) -> np.ndarray:
    """``D^s`` of the hat function of half-width ``h`` centered at ``center``."""
    nodes = np.array([center - h, center, center + h])
    return basis_gradients(x, nodes, s, open_ends=False)[1]


def frac_gradient_p1(s: float, nodes, values, x, open_ends: bool = False) -> np.ndarray:
    """``D^s`` of the piecewise-linear interpolant of ``values`` on ``nodes``."""
    G = basis_gradients(x, nodes, s, open_ends=open_ends)
    return np.asarray(values, dtype=float) @ G


# ---------------------------------------------------------------------------
# quadrature on the real line
# ---------------------------------------------------------------------------

def _graded_panels(lo: float, hi: float, levels: int, grading: float = _GRADING):
    """Panels of ``[lo, hi]`` refined geometrically towards both ends."""
    if levels <= 0:
        return [(lo, hi)]
    L = hi - lo
    cuts = [grading**k * L / 2 for k in range(levels, 0, -1)]
    left = [lo] + [lo + c for c in cuts]
    right = [hi - c for c in cuts[::-1]] + [hi]
    pts = left + right
    return list(zip(pts[:-1], pts[1:]))


@dataclass
class RealLineRule:
    """Quadrature on ``[left, right]`` plus far-field data for ``|x| > far``."""

    x: np.ndarray
    w: np.ndarray
    center: float
    far: float


def real_line_rule(breaks: Sequence[float], levels_in: int = 4, levels_out: int = 2,
                   inner: Optional[tuple] = None, order: int = _GAUSS_ORDER,
                   far_factor: float = 1e6) -> RealLineRule:
    """Composite Gauss rule split at ``breaks`` with geometric far-field panels.

    Intervals inside ``inner`` get ``levels_in`` grading levels towards each
    endpoint, the others ``levels_out``.  Beyond the outermost break the panels
    double in length until distance ``far_factor * span`` from the center,
    where the asymptotic expansion takes over.
    """
    g, gw = np.polynomial.legendre.leggauss(order)
    breaks = np.unique(np.asarray(breaks, dtype=float))
    lo_in, hi_in = inner if inner is not None else (breaks[0], breaks[-1])
    panels = []
    for p, q in zip(breaks[:-1], breaks[1:]):
        lev = levels_in if (p >= lo_in - 1e-12 and q <= hi_in + 1e-12) else levels_out
        panels.extend(_graded_panels(p, q, lev))
    span = breaks[-1] - breaks[0]
    center = 0.5 * (breaks[0] + breaks[-1])
    far = far_factor * span
    step = np.min(np.diff(breaks))
    for side in (-1, 1):
        edge = breaks[-1] if side > 0 else breaks[0]
        d, width, first = 0.0, step, True
        while abs(edge + side * d - center) < far:
            a = edge + side * d
            stop = min(d + width, abs(side * far + center - edge))
            b = edge + side * stop
            seg = (a, b) if side > 0 else (b, a)
            panels.extend(_graded_panels(*seg, levels_out) if first else [seg])
            d, width, first = stop, width * 2.0, False
    panels = np.asarray(panels)
    mid = 0.5 * (panels[:, 0] + panels[:, 1])
    half = 0.5 * (panels[:, 1] - panels[:, 0])
    x = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    w = (half[:, None] * gw[None, :]).ravel()
    order_ = np.argsort(x)
    return RealLineRule(x[order_], w[order_], center, far)


def _moments(nodes, center, open_ends: bool):
    """Zeroth and first moments of the derivatives of the basis functions,
    ``M0 = int u'`` and ``M1 = int (y - center) u'(y) dy``."""
    nodes = np.asarray(nodes, dtype=float)
    lengths = np.diff(nodes)
    mids = 0.5 * (nodes[1:] + nodes[:-1]) - center
    N = nodes.size
    M0 = np.zeros(N)
    M1 = np.zeros(N)
    # derivative of hat k is +1/len on element k-1 and -1/len on element k
    M1[1:] += mids
    M1[:-1] -= mids
    if open_ends:
        M0[0], M0[-1] = -1.0, 1.0
        M1[0] = -mids[0]
        M1[-1] = mids[-1]
    return M0, M1


def far_field_gram(s: float, rows, cols, a_left: float, a_right: float, far: float) -> np.ndarray:
    """Leading-order contribution of ``|x - center| > far`` to
    ``int a D^s u D^s v`` for families with moments ``rows`` and ``cols``.

    ``D^s u = kappa |z|^{-s} (M0 + s M1 / z + O(z^-2))`` with ``z = x - center``.
    Pairs with both ``M0 != 0`` have infinite energy and are not supported.
    """
    k2 = potential_constant(s) ** 2
    M0u, M1u = rows
    M0v, M1v = cols
    if np.any((M0u[:, None] != 0) & (M0v[None, :] != 0)):
        raise ValueError("far field of two non-decaying functions diverges")
    # cross terms M0 * M1: odd in z, so the two sides enter with opposite signs
    cross = 0.5 * k2 * far ** (-2 * s) * (a_right - a_left) * (
        np.outer(M1u, M0v) + np.outer(M0u, M1v))
    sq = k2 * s * s * far ** (-1 - 2 * s) / (1 + 2 * s) * (a_right + a_left) * np.outer(M1u, M1v)
    return cross + sq


# ---------------------------------------------------------------------------
# assembled space
# ---------------------------------------------------------------------------

@dataclass
class FracSpace:
    """Assembled P1 space for ``<L u, v> = int a D^s u D^s v``.

    Attributes
    ----------
    K_II, K_IE : ndarray
        Interior and interior-exterior stiffness blocks.
    M : ndarray
        Consistent interior mass matrix.
    ml : ndarray
        Row-sum lumped interior masses (diagonal of ``M_L``).
    tail_estimate : float
        Bound on the neglected next-order far-field term, relative to
        ``max |K_II|``.
    """

    mesh: Mesh1D
    s: float
    coeff: Coefficient
    K_II: np.ndarray
    K_IE: np.ndarray
    M: np.ndarray
    ml: np.ndarray
    tail_estimate: float = 0.0
    _chol: tuple = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.mesh.n

    @property
    def M_L(self) -> np.ndarray:
        return np.diag(self.ml)

    @property
    def cds(self) -> float:
        return riesz_constant(self.s)

    @property
    def chol(self):
        if self._chol is None:
            self._chol = cho_factor(self.K_II, lower=True)
        return self._chol

    def solve(self, rhs) -> np.ndarray:
        return cho_solve(self.chol, rhs)

    def dual_norm(self, F) -> np.ndarray:
        """``sqrt(F^T K_II^{-1} F)`` along the last axis."""
        F = np.asarray(F, dtype=float)
        Y = cho_solve(self.chol, F.T).T
        return np.sqrt(np.maximum(np.sum(F * Y, axis=-1), 0.0))

    def enthalpy_dual_norm(self, eta) -> np.ndarray:
        """Discrete ``H^{-s}`` norm of nodal enthalpies, the ``W = M_L K^{-1} M_L`` norm."""
        return self.dual_norm(np.asarray(eta) * self.ml)

    def energy_norm(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(np.sqrt(max(u @ self.K_II @ u, 0.0)))


def assemble_mass(mesh: Mesh1D):
    """Consistent mass ``(h/6) tridiag(1, 4, 1)`` and its row-sum lumping."""
    n, h = mesh.n, mesh.h
    M = (h / 6.0) * (4.0 * np.eye(n) + np.eye(n, k=1) + np.eye(n, k=-1))
    return M, M.sum(axis=1)


def _classical_stiffness(mesh: Mesh1D, coeff: Coefficient):
    nodes = mesh.nodes
    n = mesh.n
    # exact element averages of the piecewise-constant coefficient
    lo, hi = nodes[:-1], nodes[1:]
    bp = np.asarray(coeff.breakpoints, dtype=float)
    vals = np.asarray(coeff.values, dtype=float)
    cuts = np.concatenate([[-np.inf], bp, [np.inf]])
    integ = np.zeros(lo.size)
    for k in range(vals.size):
        overlap = np.clip(np.minimum(hi, cuts[k + 1]) - np.maximum(lo, cuts[k]), 0.0, None)
        integ += vals[k] * overlap
    ke = integ / (hi - lo) ** 2
    N = nodes.size
    K = np.zeros((N, N))
    idx = np.arange(N - 1)
    K[idx, idx] += ke
    K[idx + 1, idx + 1] += ke
    K[idx, idx + 1] -= ke
    K[idx + 1, idx] -= ke
    I, E = mesh.interior_index, mesh.exterior_index
    return K[np.ix_(I, I)], K[np.ix_(I, E)]


def assemble_stiffness(mesh: Mesh1D, s: float, coeff: Optional[Coefficient] = None,
                       tol: float = 1e-6, levels: int = 4, chunk: int = 4096):
    """Stiffness blocks ``K_II`` and ``K_IE`` of ``int a D^s phi_i D^s phi_j``.

    Returns
    -------
    K_II, K_IE : ndarray
    tail_estimate : float
        Relative size of the first neglected far-field term.

    Raises
    ------
    RuntimeError
        If the tail estimate exceeds ``tol``.
    """
    if not 0.0 < s <= 1.0:
        raise ValueError("s must lie in (0, 1]")
    coeff = coeff or Coefficient()
    if s == 1.0:
        K_II, K_IE = _classical_stiffness(mesh, coeff)
        return 0.5 * (K_II + K_II.T), K_IE, 0.0
    nodes = mesh.nodes
    a_bp = [p for p in coeff.breakpoints if nodes[0] < p < nodes[-1]]
    rule = real_line_rule(np.concatenate([nodes, a_bp]), levels_in=levels,
                          inner=(mesh.a, mesh.b))
    I, E = mesh.interior_index, mesh.exterior_index
    n, nE = I.size, E.size
    K_II = np.zeros((n, n))
    K_IE = np.zeros((n, nE))
    # interior hats only see the elements next to them
    for start in range(0, rule.x.size, chunk):
        xq = rule.x[start:start + chunk]
        wq = rule.w[start:start + chunk] * coeff(xq)
        G = basis_gradients(xq, nodes, s, open_ends=True)
        GI = G[I]
        GIw = GI * wq
        K_II += GIw @ GI.T
        K_IE += GIw @ G[E].T
    M0, M1 = _moments(nodes, rule.center, open_ends=True)
    a_l, a_r = coeff.values[0], coeff.values[-1]
    rows = (M0[I], M1[I])
    K_II += far_field_gram(s, rows, rows, a_l, a_r, rule.far)
    K_IE += far_field_gram(s, rows, (M0[E], M1[E]), a_l, a_r, rule.far)
    K_II = 0.5 * (K_II + K_II.T)
    # next-order term is smaller by a factor span / far
    span = nodes[-1] - nodes[0]
    leading = np.max(np.abs(far_field_gram(s, rows, (M0[E], M1[E]), a_l, a_r, rule.far)))
    tail = float(leading * span / rule.far / np.max(np.abs(K_II)))
    if tail > tol:
        raise RuntimeError(f"far-field estimate {tail:.3e} exceeds tolerance {tol:.1e}")
    return K_II, K_IE, tail


def build_space(mesh: Mesh1D, s: float, coeff: Optional[Coefficient] = None,
                tol: float = 1e-6) -> FracSpace:
    """Assemble stiffness and mass for ``mesh`` at order ``s``."""
    coeff = coeff or Coefficient()
    K_II, K_IE, tail = assemble_stiffness(mesh, s, coeff, tol=tol)
    M, ml = assemble_mass(mesh)
    return FracSpace(mesh, float(s), coeff, K_II, K_IE, M, ml, tail)


def dual_norm(space: FracSpace, F) -> np.ndarray:
    """Discrete ``H^{-s}`` norm ``sqrt(F^T K_II^{-1} F)`` of a load vector."""
    return space.dual_norm(F)


def exterior_energy(space: FracSpace, g_ext) -> float:
    """``||D^s G||_{L^2}`` of the P1 extension of compactly supported exterior data."""
    mesh = space.mesh
    g_ext = np.asarray(g_ext, dtype=float)
    if g_ext[0] != 0 or g_ext[-1] != 0:
        raise ValueError("exterior data must vanish at the collar ends")
    nodes = mesh.nodes
    vals = np.zeros(nodes.size)
    vals[mesh.exterior_index] = g_ext
    if space.s == 1.0:
        return float(np.sqrt(np.sum(np.diff(vals) ** 2 / np.diff(nodes))))
    rule = real_line_rule(nodes, levels_in=3, inner=(mesh.a, mesh.b))
    Du = frac_gradient_p1(space.s, nodes, vals, rule.x)
    M0, M1 = _moments(nodes, rule.center, open_ends=False)
    mom = (np.array([vals @ M0]), np.array([vals @ M1]))
    far = far_field_gram(space.s, mom, mom, 1.0, 1.0, rule.far)[0, 0]
    return float(np.sqrt(np.sum(rule.w * Du * Du) + far))


# ---------------------------------------------------------------------------
# Fourier oracle
# ---------------------------------------------------------------------------

def fft_oracle_apply(s: float, samples, dx: float, edge_fraction: float = 0.1) -> np.ndarray:
    """``D^s`` of periodic samples by multiplying the DFT with
    ``(2 pi i xi) |2 pi xi|^{s-1}``.

    Warns when the support of ``samples`` comes within ``edge_fraction`` of
    the window edges, where periodic images alias into the result.
    """
    u = np.asarray(samples, dtype=float)
    N = u.size
    k = max(1, int(edge_fraction * N))
    scale = np.max(np.abs(u)) or 1.0
    if np.max(np.abs(u[:k])) > 1e-12 * scale or np.max(np.abs(u[-k:])) > 1e-12 * scale:
        warnings.warn("support reaches the edge of the periodic window; result is aliased",
                      RuntimeWarning, stacklevel=2)
    xi = np.fft.fftfreq(N, dx)
    w = 2 * np.pi * xi
    with np.errstate(divide="ignore", invalid="ignore"):
        sym = np.where(xi == 0, 0.0, 1j * w * np.abs(w) ** (s - 1.0))
    return np.real(np.fft.ifft(sym * np.fft.fft(u)))


def fft_oracle_stiffness(mesh: Mesh1D, s: float, width: float = 64.0,
                         N: int = 2**18) -> np.ndarray:
    """Interior Galerkin matrix for ``a = 1`` from sampled hats and Parseval,
    ``K_ij = (dx / N) sum |2 pi xi|^{2s} U_i conj(U_j)``."""
    dx = width / N
    grid = (np.arange(N) - N // 2) * dx + 0.5 * (mesh.a + mesh.b)
    h = mesh.h
    U = np.empty((mesh.n, N), dtype=complex)
    for i, c in enumerate(mesh.x):
        U[i] = np.fft.fft(np.clip(1.0 - np.abs(grid - c) / h, 0.0, None))
    xi = np.fft.fftfreq(N, dx)
    sym = np.abs(2 * np.pi * xi) ** (2 * s)
    K = (dx / N) * np.real((U * sym) @ U.conj().T)
    return 0.5 * (K + K.T)


def write_matrix(path, K, s: float, n: int, R: float) -> None:
    """Dump ``K`` as ``# K s=<s> n=<n> R=<R>`` followed by ``i j value`` lines."""
    with open(path, "w") as fh:
        fh.write(f"# K s={s!r} n={n} R={R!r}\n")
        for i, j in zip(*np.nonzero(np.ones_like(K, dtype=bool))):
            fh.write(f"{i} {j} {K[i, j]:.17g}\n")


def read_matrix(path) -> np.ndarray:
    rows = np.loadtxt(path, comments="#")
    n = int(rows[:, 0].max()) + 1
    m = int(rows[:, 1].max()) + 1
    K = np.zeros((n, m))
    K[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 2]
    return K
