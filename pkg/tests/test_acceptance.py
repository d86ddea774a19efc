"""Acceptance criteria 1-11, one test per criterion.

Each test prints a PASS/FAIL line; the lines are also collected into the
pytest terminal summary. Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import filecmp
import textwrap

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from flowspectra.cli import main
from flowspectra.mesh import icosphere, regular_polygon
from flowspectra.monotonicity import (
    check_area_identity,
    check_example_rate,
    check_metric_comparison,
    check_theorem_hk,
    check_theorem_psi_phi,
    check_theorem_tt1,
    check_variation,
)
from flowspectra.oracles import sphere_at
from flowspectra.spectral import assemble, first_eigenpair
from flowspectra.mesh import geometry_state


def report(number: int, title: str, checks: dict[str, bool], detail: str) -> None:
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    if failed:
        line += f" (failed: {', '.join(failed)})"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def _max_rel(a, b):
    return float(np.max(np.abs(np.asarray(a) / np.asarray(b) - 1.0)))


def test_c01_sphere_trace_fidelity(sphere_trace):
    tr = sphere_trace.trace
    ts, lam = tr.sampled("lambda")
    lam_err = _max_rel(lam, [sphere_at(1.0, 2, t).lam for t in ts])
    t = tr.column("t")
    r = np.sqrt(tr.column("area") / (4 * np.pi))
    r_err = _max_rel(r, np.sqrt(1 - 4 * t))
    report(1, "sphere trace fidelity", {
        "lambda<=2%": lam_err <= 0.02,
        "r<=0.5%": r_err <= 0.005,
        "runtime<=60s": sphere_trace.seconds <= 60,
        "reached t_end": not tr.truncated and abs(t[-1] - 0.2) < 1e-12,
    }, f"lambda err {lam_err:.2e}, r err {r_err:.2e}, {len(ts)} samples, {sphere_trace.seconds:.1f}s")


def test_c02_circle_trace_fidelity(circle_trace):
    tr = circle_trace.trace
    ts, lam = tr.sampled("lambda")
    err = _max_rel(lam, 1.0 / (1.0 - 2.0 * ts))
    report(2, "circle trace fidelity", {
        "lambda<=1%": err <= 0.01,
        "runtime<=10s": circle_trace.seconds <= 10,
        "reached t_end": not tr.truncated,
    }, f"lambda err {err:.2e}, {len(ts)} samples, {circle_trace.seconds:.1f}s")


def test_c03_variation_formula(sphere_trace, circle_trace, perturbed_weighted_trace):
    vs = check_variation(sphere_trace.trace, 0.05)
    vc = check_variation(circle_trace.trace, 0.05)
    vp = check_variation(perturbed_weighted_trace.trace, 0.08)
    e = [v.details["max_relative_error"] for v in (vs, vc, vp)]
    report(3, "variation formula vs finite differences", {
        "sphere<=5%": vs.conclusion_holds,
        "circle<=5%": vc.conclusion_holds,
        "perturbed phi=z/2 <=8%": vp.conclusion_holds,
    }, f"max rel err sphere {e[0]:.2e}, circle {e[1]:.2e}, perturbed {e[2]:.2e}")


def test_c04_example_rate(sphere_trace):
    tr = sphere_trace.trace
    v = check_example_rate(tr, 0.05)
    first = tr.rows[0]
    ratio0 = first["rhs_variation"] / first["lambda"]
    report(4, "sphere rate identity", {
        "ratio within 5%": v.conclusion_holds,
        "t=0 value 8.0+-0.4": abs(first["rhs_variation"] - 8.0) <= 0.4,
    }, f"max rel err {v.details['max_relative_error']:.2e}, rhs(0) {first['rhs_variation']:.4f}, "
       f"rhs/lambda(0) {ratio0:.4f}")


def test_c05_pinched_monotonicity(sphere_trace, circle_trace):
    vs = check_theorem_tt1(sphere_trace.trace, 1e-6)
    vc = check_theorem_tt1(circle_trace.trace, 1e-6)
    report(5, "pinched MCF eigenvalue monotonicity", {
        "sphere hypothesis": vs.hypothesis_holds,
        "sphere conclusion": vs.conclusion_holds,
        "circle hypothesis": vc.hypothesis_holds,
        "circle conclusion": vc.conclusion_holds,
    }, f"eps*(0) sphere {vs.details['eps_star_0']:.5f}, circle {vc.details['eps_star_0']:.5f}; "
       f"violations {vs.max_violation:.1e}, {vc.max_violation:.1e}")


def test_c06_psi_phi_quantities(h2vp_trace):
    tr = h2vp_trace.trace
    v = check_theorem_psi_phi(tr, 1e-6, "text")
    vsym = check_theorem_psi_phi(tr, 1e-6, "symmetric")
    d = v.details
    report(6, "psi/phi monotone quantities under H^2 volume-preserving flow", {
        "hypothesis": v.hypothesis_holds,
        "Q_up nondecreasing": d["q_up_violation"] == 0.0,
        "Q_down nonincreasing": d["q_down_violation"] == 0.0,
        "lower bound C1 exp(-C2 t)": d["lower_bound_ok"],
        "upper bound C3": d["upper_bound_ok"],
        "symmetric variant": vsym.conclusion_holds,
    }, f"C1 {d['C1']:.4f}, C2 {d['C2']:.4f}, C3 {d['C3']:.4f}, {v.samples} samples")


def test_c07_power_flow_ratios(power2_trace):
    v = check_theorem_hk(power2_trace.trace, 1e-6, spread_tol=1e-2)
    d = v.details
    report(7, "H^2 flow keeps curvature ratios and lambda monotone", {
        "hypothesis": v.hypothesis_holds,
        "spread <= initial + 1e-2": d["spread_max"] <= d["spread_0"] + 1e-2,
        "lambda nondecreasing": d["lambda_violation"] == 0.0,
    }, f"spread {d['spread_0']:.2e} -> max {d['spread_max']:.2e}")


def test_c08_area_identity(sphere_trace, circle_trace):
    vs = check_area_identity(sphere_trace.trace, 0.05)
    vc = check_area_identity(circle_trace.trace, 0.05)
    report(8, "area rate identity", {
        "sphere<=5%": vs.conclusion_holds,
        "circle<=5%": vc.conclusion_holds,
    }, f"max rel err sphere {vs.details['max_relative_error']:.2e}, "
       f"circle {vc.details['max_relative_error']:.2e}")


def test_c09_spectral_correctness():
    checks, notes = {}, []
    for name, mesh, exact, tol in (
        ("icosphere", icosphere(1.0, 4), 2.0, 0.01),
        ("256-gon", regular_polygon(256, 1.0), 1.0, 0.001),
    ):
        st = geometry_state(mesh)
        ops = assemble(mesh, st, np.zeros(mesh.n_vertices))
        pair = first_eigenpair(ops)
        f, m = pair.vector, ops.mass_diag
        checks[f"{name} lambda"] = abs(pair.value / exact - 1) <= tol
        checks[f"{name} residual"] = pair.residual <= 1e-8
        checks[f"{name} f.M1"] = abs(f @ m) <= 1e-10
        checks[f"{name} f.Mf"] = abs(f @ (m * f) - 1) <= 1e-10
        lam_c = first_eigenpair(assemble(mesh, st, np.full(mesh.n_vertices, 1.7))).value
        checks[f"{name} constant phi"] = abs(lam_c - pair.value) <= 1e-12 * pair.value
        notes.append(f"{name} lambda {pair.value:.6f} res {pair.residual:.1e}")
    report(9, "spectral correctness", checks, "; ".join(notes))


def test_c10_metric_comparison():
    checks, notes = {}, []
    for name, mesh in (("icosphere", icosphere(1.0, 4)), ("256-gon", regular_polygon(256))):
        phi = np.zeros(mesh.n_vertices)
        for eps in (0.05, 0.1, 0.3):
            v = check_metric_comparison(mesh, phi, eps)
            checks[f"{name} eps={eps}"] = v.conclusion_holds
            # both sides in closed form: lambda(c g) = lambda(g) / c
            for s in v.details["scalings"]:
                checks[f"{name} eps={eps} c={s['c']:.3f} scaling law"] = (
                    abs(s["lambda2"] / s["lambda2_closed_form"] - 1) <= 1e-9
                )
        notes.append(f"{name} bound(0.3) {v.details['bound']:.3f}")
    report(10, "metric comparison inequality", checks, "; ".join(notes))


def test_c11_determinism(tmp_path):
    text = textwrap.dedent("""
        [geometry]
        generator = polygon
        vertices = 256
        [flow]
        law = mcf
        [run]
        t_end = 0.4
        cadence = 200
        output = {out}
    """)
    paths = []
    for tag in ("a", "b"):
        cfg = tmp_path / f"{tag}.ini"
        cfg.write_text(text.format(out=tmp_path / tag))
        assert main(["evolve", str(cfg)]) == 0
        paths.append(tmp_path / tag / "trace.csv")
    same = filecmp.cmp(paths[0], paths[1], shallow=False)
    report(11, "determinism", {"byte-identical trace.csv": same},
           f"{paths[0].stat().st_size} bytes compared")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
