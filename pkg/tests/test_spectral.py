import json

import numpy as np
import pytest
import scipy.linalg
from numpy.polynomial import legendre as leg

from flowspectra.mesh import geometry_state, icosphere, perturbed_icosphere, regular_polygon
from flowspectra.spectral import (
    EigenSolverError,
    assemble,
    first_eigenpair,
    rayleigh,
    write_eigenpair,
)


def _ops(mesh, phi=None):
    phi = np.zeros(mesh.n_vertices) if phi is None else phi
    return assemble(mesh, geometry_state(mesh), phi)


def _sphere_weighted_reference(degree=24):
    """Smallest nonzero eigenvalue on the unit sphere with weight exp(-z).

    Separation in longitude: f = g(u) cos(m * phi), u = cos(theta). In the
    m = 1 sector g = sqrt(1 - u^2) p(u); both sectors are solved by
    Rayleigh-Ritz over polynomials p of the given degree, with Gauss-Legendre
    quadrature exact for the polynomial parts.
    """
    u, wq = leg.leggauss(80)
    wq = wq * np.exp(-u)
    eye = np.eye(degree + 1)
    vals = np.array([leg.legval(u, e) for e in eye])
    ders = np.array([leg.legval(u, leg.legder(e)) for e in eye])
    out = {}
    # m = 0: energy (1-u^2) p'^2, mass p^2; drop the constant
    A = (ders * (1 - u**2) * wq) @ ders.T
    B = (vals * wq) @ vals.T
    out[0] = scipy.linalg.eigh(A, B, eigvals_only=True)[1]
    # m = 1: energy (-u p + (1-u^2) p')^2 + p^2, mass (1-u^2) p^2
    G = -u * vals + (1 - u**2) * ders
    A = (G * wq) @ G.T + (vals * wq) @ vals.T
    B = (vals * (1 - u**2) * wq) @ vals.T
    out[1] = scipy.linalg.eigh(A, B, eigvals_only=True)[0]
    return out


def test_reference_reduces_to_round_sphere_without_weight():
    # sanity of the sector reduction: drop the weight and recover l(l+1)
    u, wq = leg.leggauss(40)
    vals = np.array([u**k for k in range(8)])
    ders = np.array([k * u ** max(k - 1, 0) for k in range(8)])
    G = -u * vals + (1 - u**2) * ders
    A = (G * wq) @ G.T + (vals * wq) @ vals.T
    B = (vals * (1 - u**2) * wq) @ vals.T
    ev = scipy.linalg.eigh(A, B, eigvals_only=True)
    assert ev[:3] == pytest.approx([2.0, 6.0, 12.0], rel=1e-9)


def test_circle_eigenpair():
    c = regular_polygon(256)
    ops = _ops(c)
    pair = first_eigenpair(ops)
    # exact discrete value for the regular polygon with these operators
    h = 2 * np.sin(np.pi / 256)
    exact = (2 - 2 * np.cos(2 * np.pi / 256)) / h**2
    assert pair.value == pytest.approx(exact, rel=1e-10)
    assert pair.value == pytest.approx(1.0, abs=1e-3)
    # eigenfunction is a first harmonic a cos + b sin
    th = np.arctan2(c.vertices[:, 1], c.vertices[:, 0])
    basis = np.column_stack([np.cos(th), np.sin(th)])
    coef, *_ = np.linalg.lstsq(basis, pair.vector, rcond=None)
    assert np.linalg.norm(basis @ coef - pair.vector) < 1e-6 * np.linalg.norm(pair.vector)


def test_eigenpair_invariants():
    mesh = perturbed_icosphere(1.0, 3, 0.05, seed=2)
    phi = 0.5 * mesh.vertices[:, 0]
    ops = _ops(mesh, phi)
    pair = first_eigenpair(ops)
    m = ops.mass_diag
    assert pair.residual <= 1e-8
    assert abs(pair.vector @ m) <= 1e-10
    assert abs(pair.vector @ (m * pair.vector) - 1) <= 1e-10
    assert rayleigh(ops, pair.vector) == pytest.approx(pair.value, rel=1e-12)
    f = pair.vector
    assert f[np.argmax(np.abs(f))] > 0


def test_rayleigh_variational_bound():
    mesh = perturbed_icosphere(1.0, 2, 0.05, seed=4)
    ops = _ops(mesh, mesh.vertices[:, 2])
    lam = first_eigenpair(ops).value
    rng = np.random.default_rng(7)
    m = ops.mass_diag
    for _ in range(100):
        f = rng.standard_normal(ops.n)
        f -= (m @ f) / m.sum()
        assert rayleigh(ops, f) >= lam * (1 - 1e-12)
    assert rayleigh(ops, np.ones(ops.n)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        rayleigh(ops, np.zeros(ops.n))


@pytest.mark.parametrize("c", [-3.0, 0.4, 5.0])
def test_constant_weight_invariance(c):
    mesh = icosphere(1.0, 3)
    base = first_eigenpair(_ops(mesh)).value
    shifted = first_eigenpair(_ops(mesh, np.full(mesh.n_vertices, c))).value
    assert shifted == pytest.approx(base, rel=1e-12)


def test_sphere_spectrum_converges():
    errs = [abs(first_eigenpair(_ops(icosphere(1.0, L))).value - 2.0) for L in (2, 3, 4)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-5


def test_weighted_sphere_against_reference():
    ref = _sphere_weighted_reference()
    lam_ref = min(ref.values())
    # the m = 1 sector (x and y harmonics) carries the first eigenvalue
    assert ref[1] < ref[0]
    assert lam_ref == pytest.approx(2.148765, abs=2e-6)
    vals = []
    for L in (3, 4, 5):
        mesh = icosphere(1.0, L)
        vals.append(first_eigenpair(_ops(mesh, mesh.vertices[:, 2])).value)
    errs = [abs(v - lam_ref) for v in vals]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] / lam_ref < 5e-5
    # Richardson with the observed second-order rate
    rich = vals[2] + (vals[2] - vals[1]) / 3
    assert rich == pytest.approx(lam_ref, rel=2e-5)
    # the weight raises the eigenvalue above the round value 2
    assert vals[1] > 2.0


def test_non_convergence_reports_residual():
    with pytest.raises(EigenSolverError) as info:
        first_eigenpair(_ops(perturbed_icosphere(1.0, 2, 0.1, seed=1)), block=2, tol=1e-15, maxiter=3)
    assert info.value.residual > 0


def test_assemble_rejects_wrong_weight_length():
    mesh = icosphere(1.0, 1)
    with pytest.raises(ValueError):
        assemble(mesh, geometry_state(mesh), np.zeros(5))


def test_warm_start_follows_given_branch():
    mesh = icosphere(1.0, 3)
    ops = _ops(mesh)
    z = mesh.vertices[:, 2]
    pair = first_eigenpair(ops, z)
    # the degenerate l = 1 eigenspace: warm start keeps the z-harmonic
    corr = abs(np.corrcoef(pair.vector, z)[0, 1])
    assert corr > 0.999


def test_write_eigenpair(tmp_path):
    pair = first_eigenpair(_ops(regular_polygon(16)))
    write_eigenpair(pair, tmp_path / "f.csv", tmp_path / "f.json")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "vertex,f" and len(lines) == 17
    assert float(lines[1].split(",")[1]) == pair.vector[0]
    info = json.loads((tmp_path / "f.json").read_text())
    assert info["lambda"] == pair.value and info["iterations"] == pair.iterations
