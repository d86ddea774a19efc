import time
from dataclasses import dataclass

import numpy as np
import pytest

from flowspectra.flow import FlowTrace, SpeedLaw, evolve
from flowspectra.mesh import Mesh, icosphere, perturbed_icosphere, regular_polygon
from flowspectra.monotonicity import SpectralObserver

ACCEPTANCE_LINES: list[str] = []


@dataclass
class TimedTrace:
    mesh: Mesh
    phi: np.ndarray
    trace: FlowTrace
    seconds: float


def run_flow(mesh, law, t_end, cadence, phi=None, **kw) -> TimedTrace:
    phi = np.zeros(mesh.n_vertices) if phi is None else phi
    obs = SpectralObserver(phi, law)
    t0 = time.perf_counter()
    trace = evolve(mesh, law, phi, t_end, [obs], cadence=cadence, **kw)
    return TimedTrace(mesh, phi, trace, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def sphere_trace() -> TimedTrace:
    """Level-4 unit icosphere under MCF to t = 0.2."""
    return run_flow(icosphere(1.0, 4), SpeedLaw.mcf(), 0.2, cadence=20)


@pytest.fixture(scope="session")
def circle_trace() -> TimedTrace:
    """Unit 256-gon under curve shortening to t = 0.4."""
    return run_flow(regular_polygon(256, 1.0), SpeedLaw.mcf(), 0.4, cadence=200)


@pytest.fixture(scope="session")
def perturbed_weighted_trace() -> TimedTrace:
    m = perturbed_icosphere(1.0, 3, 0.05, seed=0)
    return run_flow(m, SpeedLaw.mcf(), 0.1, cadence=10, phi=m.vertices[:, 2] / 2)


@pytest.fixture(scope="session")
def h2vp_trace() -> TimedTrace:
    m = perturbed_icosphere(1.0, 3, 0.05, seed=0)
    return run_flow(m, SpeedLaw.squared_volume_preserving(), 0.05, cadence=10)


@pytest.fixture(scope="session")
def power2_trace() -> TimedTrace:
    return run_flow(icosphere(1.0, 4), SpeedLaw.power(2), 0.05, cadence=40)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
