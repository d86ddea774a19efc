"""Explicit time stepping of ``dF/dt = -S nu`` for curvature-driven speed laws."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from .mesh import CurveMesh, GeometryState, Mesh, MeshError, _cross, geometry_state

log = logging.getLogger(__name__)


class FlowKind(str, Enum):
    MCF = "mcf"
    VOLUME_PRESERVING = "vpmcf"
    POWER = "power"
    SQUARED_VOLUME_PRESERVING = "h2vp"


@dataclass(frozen=True)
class SpeedLaw:
    """Normal speed ``S`` as a function of the curvatures.

    ``MCF``: ``S = H``; ``VOLUME_PRESERVING``: ``S = H - <H>``; ``POWER``:
    ``S = H**k``; ``SQUARED_VOLUME_PRESERVING``: ``S = H**2 - <H**2>``, where
    ``<.>`` is the average over the (unweighted) area measure.

    Other symmetric speeds can be plugged in by subclassing and overriding
    :meth:`values` and :attr:`gamma`.
    """

    kind: FlowKind = FlowKind.MCF
    k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", FlowKind(self.kind))
        if self.kind is FlowKind.POWER:
            if int(self.k) != self.k or self.k < 1:
                raise ValueError(f"power flow exponent must be a positive integer, got {self.k}")
        elif self.k != 1:
            raise ValueError(f"exponent k only applies to the power flow ({self.kind.value})")

    @classmethod
    def mcf(cls) -> SpeedLaw:
        return cls(FlowKind.MCF)

    @classmethod
    def volume_preserving(cls) -> SpeedLaw:
        return cls(FlowKind.VOLUME_PRESERVING)

    @classmethod
    def power(cls, k: int) -> SpeedLaw:
        return cls(FlowKind.POWER, k)

    @classmethod
    def squared_volume_preserving(cls) -> SpeedLaw:
        return cls(FlowKind.SQUARED_VOLUME_PRESERVING)

    @property
    def gamma(self) -> int:
        """Homogeneity degree of ``S`` in the curvatures."""
        if self.kind is FlowKind.POWER:
            return self.k
        if self.kind is FlowKind.SQUARED_VOLUME_PRESERVING:
            return 2
        return 1

    @property
    def name(self) -> str:
        return f"power{self.k}" if self.kind is FlowKind.POWER else self.kind.value

    def values(self, state: GeometryState) -> np.ndarray:
        H = state.mean_curvature
        w = state.dual_area
        if self.kind is FlowKind.MCF:
            return H.copy()
        if self.kind is FlowKind.VOLUME_PRESERVING:
            return H - np.sum(H * w) / np.sum(w)
        if self.kind is FlowKind.POWER:
            return H**self.k
        H2 = H * H
        return H2 - np.sum(H2 * w) / np.sum(w)


def parse_law(name: str, k: int | None = None) -> SpeedLaw:
    """Law from its short name: ``mcf``, ``vpmcf``, ``power`` (with ``k``), ``h2vp``."""
    kind = FlowKind(name.strip().lower())
    if kind is FlowKind.POWER:
        return SpeedLaw.power(1 if k is None else int(k))
    return SpeedLaw(kind)


def speed(state: GeometryState, law: SpeedLaw) -> np.ndarray:
    """Per-vertex normal speed ``S``."""
    return law.values(state)


class StepRejected(MeshError):
    """An explicit step produced an invalid mesh."""


def step(mesh: Mesh, law: SpeedLaw, dt: float, state: GeometryState | None = None) -> Mesh:
    """One forward-Euler update ``F <- F - dt * S * nu``; the input mesh is untouched."""
    if not dt > 0.0:
        raise ValueError(f"time step must be positive, got {dt}")
    if state is None:
        state = geometry_state(mesh)
    S = law.values(state)
    new_v = mesh.vertices - dt * S[:, None] * state.normals
    try:
        out = mesh.with_vertices(new_v)
    except MeshError as exc:
        raise StepRejected(f"step dt={dt:.3e} produced an invalid mesh: {exc}") from exc
    _check_no_flip(mesh, out)
    return out


def _check_no_flip(old: Mesh, new: Mesh) -> None:
    if isinstance(old, CurveMesh):
        e0 = np.roll(old.vertices, -1, axis=0) - old.vertices
        e1 = np.roll(new.vertices, -1, axis=0) - new.vertices
        cos = np.einsum("ij,ij->i", e0, e1)
    else:
        t = old.triangles
        p0, p1 = old.vertices[t], new.vertices[t]
        n0 = _cross(p0[:, 1] - p0[:, 0], p0[:, 2] - p0[:, 0])
        n1 = _cross(p1[:, 1] - p1[:, 0], p1[:, 2] - p1[:, 0])
        cos = np.einsum("ij,ij->i", n0, n1)
    bad = np.flatnonzero(cos <= 0.0)
    if len(bad):
        raise StepRejected(f"element {int(bad[0])} flipped orientation during the step")


def adaptive_dt(
    state: GeometryState, law: SpeedLaw, cfl: float, length_scale: float | None = None
) -> float:
    """Explicit step ``cfl * h_min**2 / (gamma * max(max|S| / L, max gamma |H|**(gamma-1)))``.

    ``L`` defaults to the current :attr:`GeometryState.length_scale`. A
    stationary state (``S == 0``) gets the diffusive floor ``cfl * h_min**2``.
    """
    if not 0.0 < cfl <= 1.0:
        raise ValueError(f"cfl must lie in (0, 1], got {cfl}")
    h2 = state.min_edge**2
    S = law.values(state)
    s_max = float(np.max(np.abs(S)))
    if s_max == 0.0:
        return cfl * h2
    g = law.gamma
    L = state.length_scale if length_scale is None else length_scale
    diffusivity = float(np.max(g * np.abs(state.mean_curvature) ** (g - 1)))
    return cfl * h2 / (g * max(s_max / L, diffusivity))


# ---------------------------------------------------------------------------
# traces


TRACE_COLUMNS = (
    "t", "dt", "area", "volume", "H_min", "H_max",
    "eps_star", "lambda", "rhs_variation", "q_up", "q_down",
)


@dataclass
class FlowTrace:
    """Time series of one flow run.

    ``rows`` holds one dict per recorded state; keys beyond :data:`TRACE_COLUMNS`
    (e.g. ``area_rate``) are kept in memory but not written to CSV. Spectral
    columns are ``None`` where the observer cadence skipped a step.
    """

    law: SpeedLaw
    dim: int
    rows: list[dict[str, Any]] = field(default_factory=list)
    truncated: bool = False
    reason: str = ""
    meta: dict[str, Any] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array(
            [np.nan if r.get(name) is None else r[name] for r in self.rows], dtype=float
        )

    def sampled(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """Times and values of the rows where ``name`` was recorded."""
        keep = [r for r in self.rows if r.get(name) is not None]
        return (
            np.array([r["t"] for r in keep], dtype=float),
            np.array([r[name] for r in keep], dtype=float),
        )

    def set_column(self, name: str, times: Iterable[float], values: Iterable[float]) -> None:
        lookup = dict(zip(times, values))
        for r in self.rows:
            if r["t"] in lookup:
                r[name] = float(lookup[r["t"]])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r.get(c)) for c in TRACE_COLUMNS])


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{float(x):.17g}"


def read_trace_csv(path: str | Path) -> tuple[list[dict[str, float | None]], list[str]]:
    """Rows (empty cells as ``None``) and the header of a trace CSV."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [
            {k: (float(v) if v not in ("", None) else None) for k, v in r.items()}
            for r in reader
        ]
        return rows, list(reader.fieldnames or [])


Observer = Callable[[float, Mesh, GeometryState], "dict[str, Any] | None"]


def evolve(
    mesh: Mesh,
    law: SpeedLaw,
    phi: np.ndarray,
    t_end: float,
    observers: Iterable[Observer] = (),
    *,
    cfl: float = 0.25,
    cadence: int = 1,
    h_ceiling: float | None = None,
    dt_floor: float = 1e-10,
    max_steps: int = 1_000_000,
) -> FlowTrace:
    """Integrate the flow to ``t_end`` or until a singularity guard fires.

    Observers are called as ``obs(t, mesh, state)`` every ``cadence`` steps and
    at the final state; returned dicts are merged into that trace row. ``phi``
    is stored in the trace metadata for observers that need it. The guard trips
    when ``max|H|`` exceeds ``h_ceiling`` (default ``50 / L0`` with ``L0`` the
    initial length scale), when ``dt`` falls below ``dt_floor`` or when a step
    is rejected.
    """
    if not t_end > 0.0:
        raise ValueError("t_end must be positive")
    if cadence < 1:
        raise ValueError("observer cadence must be >= 1")
    observers = list(observers)
    state = geometry_state(mesh)
    L0 = state.length_scale
    ceiling = 50.0 / L0 if h_ceiling is None else h_ceiling
    trace = FlowTrace(law=law, dim=state.dim, meta={"phi": np.asarray(phi), "length_scale": L0})

    def record(t, n, mesh, state, dt, force_observe=False):
        S = law.values(state)
        H, w = state.mean_curvature, state.dual_area
        row = {
            "t": t,
            "dt": dt,
            "area": state.total_area,
            "volume": state.volume,
            "H_min": float(np.min(state.mean_curvature)),
            "H_max": float(np.max(state.mean_curvature)),
            "area_rate": -float(np.sum(S * H * w)),
            "r_mean": float(np.sum(H * w) / np.sum(w)),
            "r_tilde": float(np.sum(H * H * w) / np.sum(w)),
            "step": n,
        }
        if force_observe or n % cadence == 0:
            for obs in observers:
                extra = obs(t, mesh, state)
                if extra:
                    row.update(extra)
        trace.rows.append(row)
        return row

    t, n = 0.0, 0
    while True:
        H_max = float(np.max(np.abs(state.mean_curvature)))
        if H_max > ceiling:
            trace.truncated, trace.reason = True, f"max|H| = {H_max:.4g} exceeds {ceiling:.4g}"
            break
        if t >= t_end * (1.0 - 1e-12):
            break
        if n >= max_steps:
            trace.truncated, trace.reason = True, f"step limit {max_steps} reached"
            break
        dt = adaptive_dt(state, law, cfl, L0)
        if dt < dt_floor:
            trace.truncated, trace.reason = True, f"dt = {dt:.3e} below floor {dt_floor:.1e}"
            break
        dt = min(dt, t_end - t)
        try:
            new_mesh = step(mesh, law, dt, state)
        except StepRejected as exc:
            trace.truncated, trace.reason = True, str(exc)
            break
        record(t, n, mesh, state, dt)
        mesh, t, n = new_mesh, t + dt, n + 1
        state = geometry_state(mesh)

    record(t, n, mesh, state, None, force_observe=True)
    if trace.truncated:
        log.info("flow %s truncated at t=%.6g: %s", law.name, t, trace.reason)
    trace.meta["final_mesh"] = mesh
    trace.meta["t_final"] = t
    return trace
