"""Weighted stiffness/mass operators of the Witten-Laplacian and its first nonzero eigenpair.

The weak form ``int <grad u, grad v> dmu = lambda int u v dmu`` with
``dmu = exp(-phi) dA`` is discretised with piecewise-linear elements: the
stiffness ``K`` carries the element-averaged factor ``exp(-phi)``, the mass is
lumped onto vertices. Both matrices share the common factor when ``phi`` is
constant, so the generalized spectrum of ``(K, M)`` is then weight-independent.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import splu

from .mesh import CurveMesh, GeometryState, Mesh, cotangent_stiffness, curve_stiffness


class EigenSolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last relative residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class WeightedOperators:
    stiffness: sparse.csr_matrix
    mass_diag: np.ndarray

    @property
    def n(self) -> int:
        return len(self.mass_diag)

    @property
    def mass(self) -> sparse.dia_matrix:
        return sparse.diags(self.mass_diag)


@dataclass(frozen=True, eq=False)
class EigenPair:
    """First nonzero eigenvalue and its eigenfunction, normalized ``f^T M f = 1``."""

    value: float
    vector: np.ndarray
    residual: float
    iterations: int


def assemble(mesh: Mesh, state: GeometryState, phi: np.ndarray) -> WeightedOperators:
    """Build the weighted stiffness ``K`` and lumped mass ``M = diag(exp(-phi) w)``."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (mesh.n_vertices,):
        raise ValueError(f"weight field has {phi.size} values for {mesh.n_vertices} vertices")
    if np.any(state.dual_area <= 0.0):
        raise ValueError("non-positive dual area")
    ew = np.exp(-phi)
    if isinstance(mesh, CurveMesh):
        K = curve_stiffness(mesh.vertices, 0.5 * (ew + np.roll(ew, -1)))
    else:
        K = cotangent_stiffness(mesh.vertices, mesh.triangles, ew[mesh.triangles].mean(axis=1))
    return WeightedOperators(stiffness=K.tocsr(), mass_diag=ew * state.dual_area)


def rayleigh(ops: WeightedOperators, f: np.ndarray) -> float:
    """``f^T K f / f^T M f``."""
    f = np.asarray(f, dtype=float)
    den = float(f @ (ops.mass_diag * f))
    if den <= 0.0:
        raise ValueError("Rayleigh quotient of the zero vector")
    return float(f @ (ops.stiffness @ f)) / den


class _GroundedSolver:
    """Solves ``K x = b`` for ``b`` orthogonal to constants.

    K is singular with the constants as kernel; pinning the last vertex to zero
    leaves an SPD system, and any particular solution is fine because the caller
    projects constants out afterwards.
    """

    def __init__(self, K: sparse.csr_matrix):
        n = K.shape[0]
        self.n = n
        self.lu = splu(K[: n - 1, : n - 1].tocsc())

    def __call__(self, b: np.ndarray) -> np.ndarray:
        x = np.zeros_like(b)
        x[: self.n - 1] = self.lu.solve(np.ascontiguousarray(b[: self.n - 1]))
        return x


def _deflate(X: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Remove the M-mean (the constant component) from each column."""
    return X - np.outer(np.ones(len(m)), (m @ X) / m.sum())


def first_eigenpair(
    ops: WeightedOperators,
    x0: np.ndarray | None = None,
    *,
    block: int = 6,
    tol: float = 1e-8,
    maxiter: int = 10_000,
    seed: int = 0,
) -> EigenPair:
    """Smallest eigenvalue of ``K f = lambda M f`` on the M-complement of constants.

    Block inverse iteration with Rayleigh-Ritz. ``x0`` (e.g. the eigenfunction at
    the previous time step) seeds the first column of the block so that a
    degenerate eigenspace is followed continuously.
    """
    K, m = ops.stiffness, ops.mass_diag
    n = ops.n
    p = min(block, n - 1)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    if x0 is not None:
        X[:, 0] = x0
    X = _deflate(X, m)
    solve = _GroundedSolver(K)

    res = np.inf
    for it in range(1, maxiter + 1):
        Y = np.column_stack([solve(m * X[:, k]) for k in range(p)])
        Y = _deflate(Y, m)
        # M-orthonormalise before Ritz so the small pencil stays well conditioned
        Q, _ = np.linalg.qr(Y * np.sqrt(m)[:, None])
        Y = Q / np.sqrt(m)[:, None]
        KY = K @ Y
        A = Y.T @ KY
        B = Y.T @ (m[:, None] * Y)
        A = 0.5 * (A + A.T)
        B = 0.5 * (B + B.T)
        theta, C = scipy.linalg.eigh(A, B)
        X = Y @ C
        f = X[:, 0]
        Kf = KY @ C[:, 0]
        lam = float(theta[0])
        res = float(np.linalg.norm(Kf - lam * m * f) / np.linalg.norm(Kf))
        if res <= tol:
            break
    else:
        raise EigenSolverError(f"no convergence after {maxiter} iterations", res)

    f = _deflate(f[:, None], m)[:, 0]
    f = f / np.sqrt(f @ (m * f))
    if f[np.argmax(np.abs(f))] < 0:
        f = -f
    Kf = K @ f
    lam = float(f @ Kf)
    res = float(np.linalg.norm(Kf - lam * m * f) / np.linalg.norm(Kf))
    return EigenPair(value=lam, vector=f, residual=res, iterations=it)


def write_eigenpair(pair: EigenPair, csv_path: str | Path, json_path: str | Path) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vertex", "f"])
        for i, val in enumerate(pair.vector):
            w.writerow([i, f"{val:.17g}"])
    summary = {"lambda": pair.value, "residual": pair.residual, "iterations": pair.iterations}
    Path(json_path).write_text(json.dumps(summary, indent=2) + "\n")
