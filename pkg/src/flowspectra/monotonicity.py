"""Quadrature of the eigenvalue variation formula and checks of the monotonicity theorems.

For a flow ``dF/dt = -S nu`` and a normalized eigenfunction ``f`` of the
Witten-Laplacian, the first eigenvalue moves with rate

    lambda * int S H f^2 dmu + 2 int S h(grad f, grad f) dmu - int |grad f|^2 S H dmu.

All integrals use the weighted measure ``dmu = exp(-phi) dA`` with the same
lumping as the eigensolve, so ``int f^2 dmu = 1`` holds exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .flow import FlowKind, FlowTrace, SpeedLaw, step
from .mesh import CurveMesh, GeometryState, Mesh, geometry_state, pinching_report
from .spectral import EigenPair, assemble, first_eigenpair

TOL_MONO_REL = 1e-6


# ---------------------------------------------------------------------------
# variation formula


@dataclass(frozen=True)
class VariationReport:
    t: float
    rhs_general: float
    terms: tuple[float, float, float]
    fd_lambda_dot: float | None = None
    relative_error: float | None = None


def _elements(mesh: Mesh, f: np.ndarray):
    """Element corner indices, measures and piecewise-constant gradients of ``f``."""
    v = mesh.vertices
    if isinstance(mesh, CurveMesh):
        n = len(v)
        corners = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
        e = v[corners[:, 1]] - v[corners[:, 0]]
        length = np.linalg.norm(e, axis=1)
        grad = ((f[corners[:, 1]] - f[corners[:, 0]]) / length**2)[:, None] * e
        return corners, length, grad
    t = mesh.triangles
    p = v[t]
    N = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    twice_area = np.linalg.norm(N, axis=1)
    nhat = N / twice_area[:, None]
    grad = np.zeros((len(t), 3))
    for k in range(3):
        opposite = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
        grad += f[t[:, k]][:, None] * np.cross(nhat, opposite)
    grad /= twice_area[:, None]
    return t, 0.5 * twice_area, grad


def variation_terms(
    mesh: Mesh,
    state: GeometryState,
    phi: np.ndarray,
    f: np.ndarray,
    lam: float,
    S: np.ndarray,
) -> tuple[float, float, float]:
    """The three quadrature terms of the variation formula for speed ``S``."""
    phi = np.asarray(phi, dtype=float)
    f = np.asarray(f, dtype=float)
    if f.shape != (mesh.n_vertices,) or phi.shape != f.shape:
        raise ValueError("eigenfunction, weight and mesh sizes disagree")
    ew = np.exp(-phi)
    H = state.mean_curvature
    mu = ew * state.dual_area

    corners, measure, grad = _elements(mesh, f)
    w_elem = measure * ew[corners].mean(axis=1)
    II = state.ambient_shape_operator()
    # h(grad f, grad f) with each corner's shape operator, weighted by that corner's S
    h_corner = np.einsum("ea,ecab,eb->ec", grad, II[corners], grad)
    sh_elem = (S[corners] * h_corner).mean(axis=1)
    shh_elem = (S[corners] * H[corners]).mean(axis=1)
    grad2 = np.einsum("ea,ea->e", grad, grad)

    t1 = lam * float(np.sum(mu * S * H * f * f))
    t2 = 2.0 * float(np.sum(w_elem * sh_elem))
    t3 = -float(np.sum(w_elem * grad2 * shh_elem))
    return t1, t2, t3


def variation_rhs(
    mesh: Mesh,
    state: GeometryState,
    phi: np.ndarray,
    eig: EigenPair,
    law: SpeedLaw,
    t: float = 0.0,
) -> VariationReport:
    """Predicted ``d lambda / dt`` from the variation formula."""
    terms = variation_terms(mesh, state, phi, eig.vector, eig.value, law.values(state))
    return VariationReport(t=t, rhs_general=terms[0] + terms[1] + terms[2], terms=terms)


def _derivative_weights(x: np.ndarray, x0: float) -> np.ndarray:
    """Weights of the derivative at ``x0`` of the quadratic through three nodes."""
    a, b, c = x
    return np.array(
        [
            (2 * x0 - b - c) / ((a - b) * (a - c)),
            (2 * x0 - a - c) / ((b - a) * (b - c)),
            (2 * x0 - a - b) / ((c - a) * (c - b)),
        ]
    )


def finite_difference(times: np.ndarray, values: np.ndarray, t: float) -> float:
    """Second-order derivative estimate at ``t`` from the three nearest nodes.

    At an interior node this is the centered non-uniform three-point formula;
    at either end it becomes the one-sided one.
    """
    times = np.asarray(times, dtype=float)
    if len(times) < 3:
        raise ValueError("need at least three samples for a derivative")
    span = times[-1] - times[0]
    if t < times[0] - 1e-12 * span or t > times[-1] + 1e-12 * span:
        raise ValueError(f"t = {t} lies outside the sampled range [{times[0]}, {times[-1]}]")
    i = int(np.argmin(np.abs(times - t)))
    i = min(max(i - 1, 0), len(times) - 3)
    sl = slice(i, i + 3)
    return float(_derivative_weights(times[sl], t) @ np.asarray(values, dtype=float)[sl])


def fd_lambda_dot(trace: FlowTrace, t: float) -> float:
    """Finite-difference ``d lambda / dt`` from the trace's eigenvalue samples."""
    ts, lam = trace.sampled("lambda")
    return finite_difference(ts, lam, t)


# ---------------------------------------------------------------------------
# observer


class SpectralObserver:
    """Flow observer that solves the eigenproblem and evaluates the variation formula.

    Each solve is seeded with the previous eigenfunction so the tracked branch
    stays continuous through (near-)degenerate eigenspaces.
    """

    def __init__(self, phi: np.ndarray, law: SpeedLaw, seed: int = 0):
        self.phi = np.asarray(phi, dtype=float)
        self.law = law
        self.seed = seed
        self.pairs: list[EigenPair] = []
        self.reports: list[VariationReport] = []

    def __call__(self, t: float, mesh: Mesh, state: GeometryState) -> dict[str, Any]:
        ops = assemble(mesh, state, self.phi)
        prev = self.pairs[-1].vector if self.pairs else None
        pair = first_eigenpair(ops, prev, seed=self.seed)
        report = variation_rhs(mesh, state, self.phi, pair, self.law, t)
        pinch = pinching_report(state)
        self.pairs.append(pair)
        self.reports.append(report)
        return {
            "lambda": pair.value,
            "residual": pair.residual,
            "rhs_variation": report.rhs_general,
            "eps_star": pinch.eps_star,
            "a_spread": pinch.spread,
            "term_sh": report.terms[1],
            "term_shgrad": -report.terms[2],
        }


# ---------------------------------------------------------------------------
# verdicts


@dataclass
class Verdict:
    theorem: str
    hypothesis_holds: bool
    conclusion_holds: bool
    max_violation: float
    samples: int
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        """The implication ``hypothesis => conclusion``."""
        return (not self.hypothesis_holds) or self.conclusion_holds

    def to_dict(self) -> dict[str, Any]:
        return to_jsonable(asdict(self))

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def to_jsonable(x):
    if isinstance(x, dict):
        return {k: to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return None if not np.isfinite(x) else float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _monotone_violation(values: np.ndarray, tol: float, increasing: bool = True) -> float:
    """Largest step against the expected direction beyond ``tol`` (0 if none)."""
    d = np.diff(values)
    worst = -np.min(d) if increasing else np.max(d)
    return float(max(0.0, worst - tol)) if len(d) else 0.0


def _require(trace: FlowTrace, kinds: tuple[FlowKind, ...], what: str) -> None:
    if trace.law.kind not in kinds:
        raise ValueError(f"{what} needs a trace under {[k.value for k in kinds]}, got {trace.law.name}")


def check_variation(trace: FlowTrace, tol: float = 0.05, floor: float = 0.0) -> Verdict:
    """Compare the variation formula with the finite-difference eigenvalue rate.

    Errors are ``|rhs - fd| / max(|fd|, floor)`` at every interior eigenvalue sample.
    """
    ts, lam = trace.sampled("lambda")
    _, rhs = trace.sampled("rhs_variation")
    if len(ts) < 3:
        return Verdict("variation", False, False, float("nan"), len(ts),
                       {"reason": "fewer than three eigenvalue samples"})
    errs = []
    for i in range(1, len(ts) - 1):
        fd = finite_difference(ts, lam, ts[i])
        errs.append(abs(rhs[i] - fd) / max(abs(fd), floor))
    errs = np.array(errs)
    worst = float(np.max(errs))
    return Verdict(
        "variation", True, worst <= tol, max(0.0, worst - tol), len(errs),
        {"max_relative_error": worst, "tolerance": tol},
    )


def check_area_identity(trace: FlowTrace, tol: float = 0.05) -> Verdict:
    """Total-area rate against ``-int S H dA`` at every interior trace row."""
    t = trace.column("t")
    area = trace.column("area")
    rate = trace.column("area_rate")
    errs = []
    for i in range(1, len(t) - 1):
        fd = finite_difference(t[i - 1 : i + 2], area[i - 1 : i + 2], t[i])
        errs.append(abs(fd - rate[i]) / abs(rate[i]))
    worst = float(np.max(errs)) if errs else float("nan")
    return Verdict(
        "lemma21", True, bool(worst <= tol), max(0.0, worst - tol), len(errs),
        {"max_relative_error": worst, "tolerance": tol},
    )


def check_metric_identity(mesh: Mesh, law: SpeedLaw, dt: float = 1e-7, tol: float = 0.1) -> Verdict:
    """Edge-length rate ``d(l^2)/dt`` after one small step against ``-2 S h(e, e)``.

    ``S`` and ``h`` are averaged over the two endpoints of each edge. The
    verdict uses the relative L2 error over all edges; pointwise errors at
    irregular vertices do not shrink under refinement and are only reported.
    """
    state = geometry_state(mesh)
    moved = step(mesh, law, dt, state)
    edges = _edge_list(mesh)
    e0 = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    e1 = moved.vertices[edges[:, 1]] - moved.vertices[edges[:, 0]]
    fd = (np.einsum("ij,ij->i", e1, e1) - np.einsum("ij,ij->i", e0, e0)) / dt
    S = law.values(state)
    II = state.ambient_shape_operator()
    h_mid = 0.5 * (II[edges[:, 0]] + II[edges[:, 1]])
    pred = -2.0 * 0.5 * (S[edges[:, 0]] + S[edges[:, 1]]) * np.einsum("ea,eab,eb->e", e0, h_mid, e0)
    l2 = float(np.linalg.norm(fd - pred) / np.linalg.norm(pred))
    worst = float(np.max(np.abs(fd - pred) / np.maximum(np.abs(pred), 1e-300)))
    return Verdict(
        "lemma21-metric", True, l2 <= tol, max(0.0, l2 - tol), len(edges),
        {"relative_l2_error": l2, "max_relative_error": worst},
    )


def _edge_list(mesh: Mesh) -> np.ndarray:
    if isinstance(mesh, CurveMesh):
        n = mesh.n_vertices
        return np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    return mesh.edges


def check_theorem_tt1(
    trace: FlowTrace, tol_rel: float = TOL_MONO_REL, pinch_tol: float = 5e-3
) -> Verdict:
    """Pinching ``h >= H g / 2`` at t = 0 and ``H > 0`` imply nondecreasing lambda under MCF.

    The hypothesis and the conclusion are evaluated independently.
    """
    _require(trace, (FlowKind.MCF, FlowKind.POWER), "the pinching theorem")
    first = trace.rows[0]
    eps0 = first.get("eps_star")
    hyp = first["H_min"] > 0.0 and eps0 is not None and eps0 >= 0.5 - pinch_tol
    ts, lam = trace.sampled("lambda")
    tol = tol_rel * lam[0]
    viol = _monotone_violation(lam, tol)
    return Verdict(
        "tt1", bool(hyp), viol == 0.0, viol, len(lam),
        {"eps_star_0": eps0, "H_min_0": first["H_min"], "tol_mono": tol,
         "lambda_0": lam[0], "lambda_end": lam[-1]},
    )


def check_theorem_hk(
    trace: FlowTrace,
    tol_rel: float = TOL_MONO_REL,
    spread_tol: float = 1e-2,
    umbilic_tol: float = 0.05,
) -> Verdict:
    """Near-umbilic start under the ``H^k`` flow: ratios ``k_i / H`` persist, lambda nondecreasing.

    Hypothesis: ``H > 0`` and every ratio within ``umbilic_tol`` of ``1/n`` at t = 0.
    Conclusion: the per-vertex ratio spread never exceeds its initial value by
    more than ``spread_tol`` and lambda is nondecreasing within ``tol_rel * lambda(0)``.
    """
    _require(trace, (FlowKind.POWER, FlowKind.MCF), "the H^k theorem")
    first = trace.rows[0]
    n = trace.dim
    spread0 = first.get("a_spread")
    eps0 = first.get("eps_star")
    # eps_star is the smallest ratio; with sum(a_i) = 1 the largest is at most
    # 1 - (n-1) * eps_star, so both sides are bounded by 1/n - eps_star
    hyp = (
        first["H_min"] > 0.0
        and eps0 is not None
        and (n == 1 or (1.0 / n - eps0) * (n - 1) <= umbilic_tol)
    )
    _, spread = trace.sampled("a_spread")
    spread_excess = float(np.max(spread) - spread0 - spread_tol) if len(spread) else np.inf
    ts, lam = trace.sampled("lambda")
    tol = tol_rel * lam[0]
    viol = _monotone_violation(lam, tol)
    ok = spread_excess <= 0.0 and viol == 0.0
    return Verdict(
        "hk", bool(hyp), bool(ok), max(viol, max(spread_excess, 0.0)), len(lam),
        {"k": trace.law.k, "spread_0": spread0, "spread_max": float(np.max(spread)),
         "lambda_violation": viol, "tol_mono": tol},
    )


# ---------------------------------------------------------------------------
# psi / phi monotone quantities for the H^2 volume-preserving flow


@dataclass(frozen=True)
class MonotoneQuantities:
    t: float
    psi: float
    phi_hi: float
    q_up: float
    q_down: float


@dataclass(frozen=True)
class MonotoneFit:
    C1: float
    C2: float
    C3: float
    eps: float
    series: list[MonotoneQuantities]


def fit_curvature_bounds(t: np.ndarray, H_min: np.ndarray, H_max: np.ndarray) -> tuple[float, float, float]:
    """Constants with ``C1 exp(-C2 t) <= H_min(t)`` and ``H_max(t) <= C3`` on the trace."""
    C1 = float(H_min[0])
    C3 = float(np.max(H_max))
    later = t > 0
    if C1 <= 0.0:
        raise ValueError("H_min(0) must be positive")
    ratio = H_min[later] / C1
    C2 = float(max(0.0, np.max(-np.log(ratio) / t[later]))) if np.any(later) else 0.0
    return C1, C2, C3


def monotone_quantities(trace: FlowTrace, variant: str = "text") -> MonotoneFit:
    """Fit the curvature constants and evaluate ``Q_up``, ``Q_down`` at the eigenvalue samples.

    ``variant="text"`` uses ``phi - psi + 2 phi`` in the decreasing exponent;
    ``variant="symmetric"`` uses ``phi - psi + 2 eps phi``.
    """
    _require(trace, (FlowKind.SQUARED_VOLUME_PRESERVING,), "the psi/phi quantities")
    if variant not in ("text", "symmetric"):
        raise ValueError(f"unknown variant {variant!r}")
    t = trace.column("t")
    C1, C2, C3 = fit_curvature_bounds(t, trace.column("H_min"), trace.column("H_max"))
    eps = max(0.0, float(trace.rows[0].get("eps_star") or 0.0))
    r_tilde = trace.column("r_tilde")
    lower = C1 * np.exp(-C2 * t)
    psi = (lower**2 - r_tilde) * lower
    phi_hi = (C3**2 - r_tilde) * C3
    up_rate = psi - phi_hi + 2.0 * eps * psi
    down_rate = phi_hi - psi + (2.0 if variant == "text" else 2.0 * eps) * phi_hi
    up_int = _cumtrapz(up_rate, t)
    down_int = _cumtrapz(down_rate, t)

    series = []
    for i, r in enumerate(trace.rows):
        lam = r.get("lambda")
        if lam is None:
            continue
        q_up = float(np.exp(-up_int[i]) * lam)
        q_down = float(np.exp(-down_int[i]) * lam)
        r["q_up"], r["q_down"] = q_up, q_down
        series.append(MonotoneQuantities(float(t[i]), float(psi[i]), float(phi_hi[i]), q_up, q_down))
    return MonotoneFit(C1, C2, C3, eps, series)


def _cumtrapz(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


def check_theorem_psi_phi(
    trace: FlowTrace, tol_rel: float = TOL_MONO_REL, variant: str = "text"
) -> Verdict:
    """``Q_up`` nondecreasing and ``Q_down`` nonincreasing under the H^2 volume-preserving flow."""
    first = trace.rows[0]
    hyp = first["H_min"] > 0.0
    if not hyp:
        return Verdict("psi-phi", False, False, float("nan"), 0, {"reason": "H_min(0) <= 0"})
    fit = monotone_quantities(trace, variant)
    q_up = np.array([q.q_up for q in fit.series])
    q_down = np.array([q.q_down for q in fit.series])
    lam0 = fit.series[0].q_up
    tol = tol_rel * lam0
    v_up = _monotone_violation(q_up, tol, increasing=True)
    v_down = _monotone_violation(q_down, tol, increasing=False)
    # independent re-check of the fitted bounds on every row
    t = trace.column("t")
    lower_ok = bool(np.all(fit.C1 * np.exp(-fit.C2 * t) <= trace.column("H_min") * (1 + 1e-12)))
    upper_ok = bool(np.all(trace.column("H_max") <= fit.C3))
    return Verdict(
        "psi-phi", True, v_up == 0.0 and v_down == 0.0 and lower_ok and upper_ok,
        max(v_up, v_down), len(q_up),
        {"C1": fit.C1, "C2": fit.C2, "C3": fit.C3, "eps": fit.eps, "variant": variant,
         "q_up_violation": v_up, "q_down_violation": v_down,
         "lower_bound_ok": lower_ok, "upper_bound_ok": upper_ok, "tol_mono": tol},
    )


# ---------------------------------------------------------------------------
# metric comparison


def metric_comparison_bound(eps: float, n: int, lam1: float) -> float:
    """Upper bound on ``lambda(g2) - lambda(g1)`` for ``g1 / (1+eps) <= g2 <= (1+eps) g1``."""
    q = 1.0 + eps
    return (q ** (n / 2 + 1) - q ** (-n / 2)) * q ** (n / 2) * lam1


def check_metric_comparison(mesh: Mesh, phi: np.ndarray, eps: float) -> Verdict:
    """Scale the metric by ``c = (1+eps)^(+-1)`` and test the eigenvalue comparison bound."""
    n = mesh.dim
    lam1 = first_eigenpair(assemble(mesh, geometry_state(mesh), phi)).value
    bound = metric_comparison_bound(eps, n, lam1)
    rows = []
    worst = -np.inf
    for c in (1.0 / (1.0 + eps), 1.0 + eps):
        scaled = mesh.scaled(np.sqrt(c))
        lam2 = first_eigenpair(assemble(scaled, geometry_state(scaled), phi)).value
        worst = max(worst, lam2 - lam1 - bound)
        rows.append({"c": c, "lambda2": lam2, "lambda2_closed_form": lam1 / c,
                     "difference": lam2 - lam1})
    return Verdict(
        "metric-cmp", True, worst <= 0.0, max(0.0, worst), len(rows),
        {"eps": eps, "lambda1": lam1, "bound": bound, "scalings": rows},
    )


def check_example_rate(trace: FlowTrace, tol: float = 0.05) -> Verdict:
    """On a round sphere under MCF: ``rhs / lambda = 2 Hbar^2 / n`` at every sample.

    ``Hbar`` is the area-weighted mean curvature.
    """
    _require(trace, (FlowKind.MCF,), "the sphere rate identity")
    n = trace.dim
    errs = []
    for r in trace.rows:
        if r.get("lambda") is None:
            continue
        expected = 2.0 * r["r_mean"] ** 2 / n
        errs.append(abs(r["rhs_variation"] / r["lambda"] - expected) / expected)
    worst = float(np.max(errs))
    return Verdict("example-rate", True, worst <= tol, max(0.0, worst - tol), len(errs),
                   {"max_relative_error": worst})
