"""Generalized eigenproblems ``K u = mu M u`` of the discrete operator."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import eigh

from .discretization import Coefficient, FracSpace, Mesh1D, assemble_mass, build_space


@dataclass
class EigenTable:
    """Lowest eigenpairs with ``M``-orthonormal, sign-normalized vectors."""

    s: float
    mu: np.ndarray
    vectors: np.ndarray
    residual: np.ndarray
    orthogonality: float


def _fix_signs(U: np.ndarray) -> np.ndarray:
    # largest-magnitude entry positive, lowest index on (near) ties
    A = np.abs(U)
    idx = np.argmax(A >= A.max(axis=0) * (1 - 1e-8), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def eigs(space: FracSpace, k: int, mass: str = "consistent") -> EigenTable:
    """Lowest ``k`` eigenpairs of ``K_II u = mu M u``.

    Parameters
    ----------
    mass : {"consistent", "lumped"}
        Mass matrix on the right-hand side.
    """
    n = space.n
    if not 1 <= k <= n:
        raise ValueError("k must lie in [1, n]")
    M = space.M if mass == "consistent" else np.diag(space.ml)
    mu, U = eigh(space.K_II, M, subset_by_index=[0, k - 1])
    U = _fix_signs(U)
    res = np.linalg.norm(space.K_II @ U - (M @ U) * mu, axis=0)
    orth = float(np.max(np.abs(U.T @ M @ U - np.eye(k))))
    return EigenTable(space.s, mu, U, res, orth)


def power_iteration_check(space: FracSpace, iters: int = 200, seed: int = 0) -> float:
    """Independent estimate of the lowest eigenvalue by inverse iteration."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(space.n)
    mu = 0.0
    for _ in range(iters):
        w = space.solve(space.M @ v)
        w /= np.sqrt(w @ space.M @ w)
        mu = float(w @ space.K_II @ w)
        v = w
    return mu


@dataclass
class SweepResult:
    s_grid: np.ndarray
    tables: list
    deltas: np.ndarray
    vector_distance: np.ndarray


def s_sweep(mesh: Mesh1D, coeff: Optional[Coefficient], s_grid: Sequence[float], k: int,
            workers: int = 1) -> SweepResult:
    """Eigenvalues along an ``s`` grid with increments between neighbours.

    ``deltas[i] = |mu(s_{i+1}) - mu(s_i)|`` and ``vector_distance[i]`` is the
    ``M``-norm distance between consecutive sign-normalized eigenvectors.
    """
    s_grid = np.asarray(s_grid, dtype=float)

    def one(s):
        return eigs(build_space(mesh, float(s), coeff), k)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            tables = list(ex.map(one, s_grid))
    else:
        tables = [one(s) for s in s_grid]
    M, _ = assemble_mass(mesh)
    deltas = np.array([np.abs(b.mu - a.mu) for a, b in zip(tables[:-1], tables[1:])])
    dist = []
    for a, b in zip(tables[:-1], tables[1:]):
        d = a.vectors - b.vectors
        dist.append(np.sqrt(np.einsum("ik,ij,jk->k", d, M, d)))
    return SweepResult(s_grid, tables, deltas.reshape(-1, k), np.array(dist).reshape(-1, k))

