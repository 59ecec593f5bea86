import numpy as np
import pytest
from scipy import constants

from sheetforce.currents import CurrentBasis, CurrentPotential, SurfaceCurrent, current_from_potential
from sheetforce.geometry import GeometryError, circular_torus, evaluate_grid
from sheetforce.magnetics import (
    NormalFieldOperator, PlasmaBoundary, biot_savart, check_separation, chi_B, chi_B_gradient,
    field_samples,
)

from conftest import R0, random_potential

G = 1e6


@pytest.fixture(scope="module")
def solenoid(torus64):
    return current_from_potential(torus64, CurrentPotential.zeros(4, G=G))


@pytest.fixture(scope="module")
def inner_boundary():
    return PlasmaBoundary(evaluate_grid(circular_torus(R0, 0.15), 24, 24))


def test_zero_current_gives_zero_field(torus16):
    B = biot_savart(torus16, SurfaceCurrent.zeros(torus16.shape), [[1.0, 0, 0], [0, 0, 2.0]])
    assert not np.any(B)


def test_solenoid_interior_and_exterior(torus64, solenoid):
    expected = constants.mu_0 * G / (2 * np.pi * R0)
    B_in = biot_savart(torus64, solenoid, [[R0, 0, 0]])[0]
    assert abs(np.linalg.norm(B_in) - expected) <= 0.02 * expected
    assert abs(B_in[1]) == pytest.approx(np.linalg.norm(B_in), rel=1e-6)  # toroidal at ζ=0
    for p in ([0, 0, 0], [2.0, 0, 0], [0, 0, 1.0]):
        assert np.linalg.norm(biot_savart(torus64, solenoid, [p])[0]) < 0.02 * expected


def test_field_samples_wrap_points(torus16):
    cur = current_from_potential(torus16, CurrentPotential.zeros(1, G=G))
    pts = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    samples = field_samples(pts, biot_savart(torus16, cur, pts))
    assert len(samples) == 2 and np.all(np.isfinite(samples[1].B))


def test_node_collision_names_node(torus16):
    cur = current_from_potential(torus16, CurrentPotential.zeros(1, G=G))
    with pytest.raises(GeometryError, match=r"\(2, 3\)"):
        biot_savart(torus16, cur, [torus16.points[2, 3]])


def test_far_field_decay(torus32):
    cur = current_from_potential(torus32, random_potential(2, seed=3))
    d = np.array([20.0, 40.0, 80.0])
    B = np.linalg.norm(biot_savart(torus32, cur, np.outer(d, [0.3, 0.5, 0.8])), axis=1)
    assert B[1] <= B[0] / 4 * 1.1 and B[2] <= B[1] / 4 * 1.1


def test_chi_B_trivial_cases(torus16, inner_boundary):
    zero = SurfaceCurrent.zeros(torus16.shape)
    assert chi_B(torus16, zero, inner_boundary) == 0.0
    one = PlasmaBoundary(inner_boundary.grid, 1.0)
    assert chi_B(torus16, zero, one) == pytest.approx(inner_boundary.grid.area, rel=1e-14)


def test_chi_B_solenoid_tangent_to_coaxial_plasma(torus64, solenoid, inner_boundary):
    expected = constants.mu_0 * G / (2 * np.pi * R0)
    value = chi_B(torus64, solenoid, inner_boundary)
    assert value / inner_boundary.grid.area < (0.02 * expected) ** 2


def test_intersecting_surfaces_rejected(torus16):
    touching = PlasmaBoundary(evaluate_grid(circular_torus(R0, 0.3), 16, 16))
    with pytest.raises(GeometryError, match="intersect"):
        check_separation(torus16, touching.grid)
    with pytest.raises(GeometryError):
        chi_B(torus16, SurfaceCurrent.zeros(torus16.shape), touching)


def test_operator_matches_direct_chi_B(problem):
    pot = random_potential(4, G=problem.G, seed=2)
    op = NormalFieldOperator(CurrentBasis(problem.coil, 4), problem.boundary)
    direct = chi_B(problem.coil, current_from_potential(problem.coil, pot), problem.boundary)
    assert op.chi2(pot) == pytest.approx(direct, rel=1e-12)


def test_chi_B_gradient_finite_differences(small_problem):
    coil, bnd = small_problem.coil, small_problem.boundary
    pot = random_potential(2, G=small_problem.G, seed=8)
    g = chi_B_gradient(coil, pot, bnd)
    for k in (0, 5, pot.n_dof - 1):
        h = 50.0
        e = np.zeros(pot.n_dof)
        e[k] = h
        cp = current_from_potential(coil, pot.with_coefficients(pot.coefficients + e))
        cm = current_from_potential(coil, pot.with_coefficients(pot.coefficients - e))
        fd = (chi_B(coil, cp, bnd) - chi_B(coil, cm, bnd)) / (2 * h)
        assert abs(fd - g[k]) <= 1e-6 * abs(g[k])


def test_zero_problem_has_zero_gradient(small_problem):
    pot = CurrentPotential.zeros(2)
    assert not np.any(chi_B_gradient(small_problem.coil, pot, small_problem.boundary))


def test_gradient_affine_in_coefficients(small_problem):
    op = NormalFieldOperator(CurrentBasis(small_problem.coil, 2), small_problem.boundary)
    pot = random_potential(2, G=small_problem.G, seed=1)
    g_const = op.gradient(pot.with_coefficients(np.zeros(pot.n_dof)))
    g1 = op.gradient(pot)
    g2 = op.gradient(pot.with_coefficients(2 * pot.coefficients))
    assert np.allclose(g2 - g_const, 2 * (g1 - g_const), rtol=0,
                       atol=1e-10 * np.abs(g2 - g_const).max())


def test_hessian_is_psd(small_problem):
    op = NormalFieldOperator(CurrentBasis(small_problem.coil, 2), small_problem.boundary)
    H = op.normal_matrix()
    rng = np.random.default_rng(0)
    for _ in range(10):
        v = rng.normal(size=H.shape[0])
        assert v @ H @ v >= -1e-10 * np.abs(H).max() * (v @ v)
    assert np.allclose(H, H.T)
