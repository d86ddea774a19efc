import numpy as np
import pytest

from flowspectra.flow import (
    FlowKind,
    SpeedLaw,
    StepRejected,
    TRACE_COLUMNS,
    adaptive_dt,
    evolve,
    parse_law,
    read_trace_csv,
    speed,
    step,
)
from flowspectra.mesh import geometry_state, icosphere, perturbed_icosphere, regular_polygon


def test_parse_law():
    assert parse_law("MCF") == SpeedLaw.mcf()
    assert parse_law("power", 3) == SpeedLaw.power(3)
    assert parse_law("h2vp").gamma == 2
    assert parse_law("vpmcf").kind is FlowKind.VOLUME_PRESERVING
    with pytest.raises(ValueError):
        parse_law("willmore")


def test_law_validation():
    with pytest.raises(ValueError):
        SpeedLaw.power(0)
    with pytest.raises(ValueError):
        SpeedLaw.power(1.5)
    with pytest.raises(ValueError):
        SpeedLaw(FlowKind.MCF, k=2)
    assert SpeedLaw.power(4).name == "power4"


def test_speed_values():
    st = geometry_state(perturbed_icosphere(1.0, 2, 0.1, seed=2))
    H, w = st.mean_curvature, st.dual_area
    assert np.array_equal(speed(st, SpeedLaw.mcf()), H)
    assert np.allclose(speed(st, SpeedLaw.power(3)), H**3)
    vp = speed(st, SpeedLaw.volume_preserving())
    assert abs(np.sum(vp * w)) < 1e-12
    h2 = speed(st, SpeedLaw.squared_volume_preserving())
    assert abs(np.sum(h2 * w)) < 1e-12
    assert np.allclose(h2 - (H**2 - np.sum(H**2 * w) / w.sum()), 0)


def test_power_one_equals_mcf():
    st = geometry_state(perturbed_icosphere(1.0, 2, 0.1, seed=2))
    assert np.array_equal(SpeedLaw.power(1).values(st), SpeedLaw.mcf().values(st))


def test_step_does_not_mutate_and_moves_inward():
    s = icosphere(1.0, 2)
    before = s.vertices.copy()
    out = step(s, SpeedLaw.mcf(), 1e-3)
    assert np.array_equal(s.vertices, before)
    r = np.linalg.norm(out.vertices, axis=1)
    assert np.all(r < 1.0)
    # r' = -H = -2 for the unit sphere
    assert np.allclose(r, 1 - 2e-3, atol=2e-6)
    with pytest.raises(ValueError):
        step(s, SpeedLaw.mcf(), 0.0)


def test_oversized_step_is_rejected():
    c = regular_polygon(16)
    with pytest.raises(StepRejected):
        step(c, SpeedLaw.mcf(), 2.0)


def test_adaptive_dt():
    st = geometry_state(icosphere(1.0, 3))
    law = SpeedLaw.mcf()
    H = st.mean_curvature
    dt = adaptive_dt(st, law, 0.25)
    # gamma = 1: the advective term max|H| / L dominates
    assert dt == pytest.approx(0.25 * st.min_edge**2 * st.length_scale / H.max(), rel=1e-12)
    assert adaptive_dt(st, law, 0.5) == pytest.approx(2 * dt)
    # squared law: gamma = 2, competing terms H^2 / L and 2 H
    dt2 = adaptive_dt(st, SpeedLaw.power(2), 0.25)
    bound = max(H.max() ** 2 / st.length_scale, 2 * H.max())
    assert dt2 == pytest.approx(0.25 * st.min_edge**2 / (2 * bound), rel=1e-12)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            adaptive_dt(st, law, bad)
    # stationary: volume-preserving flow on a round sphere is nearly at rest
    stat = adaptive_dt(geometry_state(regular_polygon(32)), SpeedLaw.volume_preserving(), 0.25)
    assert stat == pytest.approx(0.25 * geometry_state(regular_polygon(32)).min_edge ** 2)


def test_circle_shrinks_like_the_exact_solution():
    tr = evolve(regular_polygon(128), SpeedLaw.mcf(), np.zeros(128), 0.3)
    assert not tr.truncated
    t = tr.column("t")
    r = tr.column("area") / (2 * np.pi)
    assert np.max(np.abs(r / np.sqrt(1 - 2 * t) - 1)) < 2e-3
    assert tr.rows[-1]["t"] == pytest.approx(0.3, abs=1e-14)
    assert tr.rows[-1]["dt"] is None
    # convex data stays convex; H_min nondecreasing
    assert np.all(np.diff(tr.column("H_min")) >= -1e-9)


def test_volume_preserving_flow_keeps_volume():
    m = perturbed_icosphere(1.0, 2, 0.1, seed=0)
    tr = evolve(m, SpeedLaw.volume_preserving(), np.zeros(m.n_vertices), 0.05)
    v = tr.column("volume")
    assert abs(v[-1] / v[0] - 1) < 1e-3
    # area decreases towards the round sphere
    assert tr.column("area")[-1] < tr.column("area")[0]


def test_singularity_guard_truncates():
    tr = evolve(icosphere(1.0, 2), SpeedLaw.mcf(), np.zeros(162), 0.3)
    assert tr.truncated and tr.reason
    assert tr.meta["t_final"] < 0.25


def test_height_ceiling():
    tr = evolve(icosphere(1.0, 2), SpeedLaw.mcf(), np.zeros(162), 0.3, h_ceiling=4.0)
    assert tr.truncated and "exceeds" in tr.reason
    # H = 2 / sqrt(1 - 4 t) reaches 4 at t = 3/16
    assert tr.meta["t_final"] == pytest.approx(3 / 16, abs=5e-3)


def test_observer_cadence():
    calls = []

    def obs(t, mesh, state):
        calls.append(t)
        return {"lambda": float(len(calls))}

    tr = evolve(regular_polygon(32), SpeedLaw.mcf(), np.zeros(32), 0.05, [obs], cadence=7)
    steps = [r["step"] for r in tr.rows if r.get("lambda") is not None]
    assert steps[:-1] == list(range(0, tr.rows[-1]["step"], 7))
    assert steps[-1] == tr.rows[-1]["step"]
    with pytest.raises(ValueError):
        evolve(regular_polygon(32), SpeedLaw.mcf(), np.zeros(32), 0.05, cadence=0)
    with pytest.raises(ValueError):
        evolve(regular_polygon(32), SpeedLaw.mcf(), np.zeros(32), -1.0)


def test_trace_csv(tmp_path):
    tr = evolve(regular_polygon(32), SpeedLaw.mcf(), np.zeros(32), 0.05)
    assert len(tr.rows) > 4
    p = tmp_path / "t.csv"
    tr.to_csv(p)
    rows, header = read_trace_csv(p)
    assert header == list(TRACE_COLUMNS)
    assert len(rows) == len(tr.rows)
    assert rows[0]["lambda"] is None
    assert rows[3]["area"] == tr.rows[3]["area"]  # 17 digits round-trip exactly


def test_evolve_is_deterministic(tmp_path):
    m = perturbed_icosphere(1.0, 2, 0.05, seed=3)
    for name in ("a", "b"):
        evolve(m, SpeedLaw.mcf(), np.zeros(m.n_vertices), 0.02).to_csv(tmp_path / name)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
