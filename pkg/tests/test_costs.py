import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sheetforce.costs import (
    Objective, ObjectiveSpec, ce_cost, chi_F_L2, chi_grad_j, chi_j, f_e, f_e_derivative,
    lp_force_cost, total_cost_and_gradient,
)
from sheetforce.currents import CurrentPotential, SurfaceCurrent, current_from_potential
from sheetforce.magnetics import chi_B

from conftest import random_potential

C0, C1 = 5e6, 1e7


def test_chi_j_trivial_and_area(torus32):
    assert chi_j(torus32, SurfaceCurrent.zeros(torus32.shape)) == 0.0
    t = torus32.d_theta_r / np.linalg.norm(torus32.d_theta_r, axis=-1)[..., None]
    unit = SurfaceCurrent(t, np.zeros(torus32.shape + (3, 3)))
    assert chi_j(torus32, unit) == pytest.approx(4 * np.pi ** 2 * 0.3, abs=1e-10)
    assert chi_j(torus32, 2 * unit) == pytest.approx(4 * chi_j(torus32, unit), rel=1e-14)


def test_chi_grad_j_properties(torus32):
    cur = current_from_potential(torus32, CurrentPotential.zeros(2, G=1e6))
    value = chi_grad_j(torus32, cur)
    assert np.isfinite(value) and value > 0
    assert chi_grad_j(torus32, 3 * cur) == pytest.approx(9 * value, rel=1e-14)


def test_rough_potential_has_larger_gradient_cost(torus32):
    smooth = CurrentPotential.zeros(4)
    smooth.phi_sin[smooth.phi_sin.size // 2] = 1.0  # low mode
    rough = CurrentPotential.zeros(4)
    rough.phi_sin[-1] = 1.0  # (k, l) = (4, 4)
    js = current_from_potential(torus32, smooth)
    jr = current_from_potential(torus32, rough)
    # equalise χ²_j, then compare χ²_∇j
    jr = jr * np.sqrt(chi_j(torus32, js) / chi_j(torus32, jr))
    assert chi_grad_j(torus32, jr) > chi_grad_j(torus32, js)


def test_lp_cost(torus32):
    assert lp_force_cost(np.zeros(torus32.points.shape), torus32, 2) == 0.0
    c = 3.0e6
    const = c * torus32.normal
    assert lp_force_cost(const, torus32, 2) == pytest.approx(c * np.sqrt(torus32.area), rel=1e-12)
    assert chi_F_L2(const, torus32) == pytest.approx(c * c * torus32.area, rel=1e-12)
    peaked = np.zeros(torus32.points.shape)
    peaked[..., 2] = 1e5
    peaked[7, 9, 2] = 8e6
    area = torus32.area
    norm2 = lp_force_cost(peaked, torus32, 2) / area ** 0.5
    norm6 = lp_force_cost(peaked, torus32, 6) / area ** (1 / 6)
    assert abs(norm6 - 8e6) < abs(norm2 - 8e6)
    with pytest.raises(ValueError):
        lp_force_cost(peaked, torus32, 0)


def test_f_e_values():
    assert f_e(4e6, C0, C1) == 0.0
    assert f_e(7.5e6, C0, C1) == pytest.approx(1.25e13, rel=1e-15)
    assert f_e(C1, C0, C1) == np.inf
    assert f_e(C1 * (1 - 1e-9), C0, C1) > 1e20
    assert f_e(C0, C0, C1) == 0.0


def test_f_e_shape_and_derivative():
    w = np.linspace(0, C1 * 0.999, 2001)
    v = f_e(w, C0, C1)
    above = w > C0
    assert np.all(v[~above] == 0)
    assert np.all(np.diff(v[above]) > 0)
    # C¹ at c0 and derivative consistent with finite differences
    assert f_e_derivative(C0, C0, C1) == 0.0
    for x in (5.5e6, 7.5e6, 9.5e6):
        h = 1.0
        fd = (f_e(x + h, C0, C1) - f_e(x - h, C0, C1)) / (2 * h)
        assert f_e_derivative(x, C0, C1) == pytest.approx(fd, rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 0.999), st.floats(0, 0.999))
def test_f_e_monotone(a, b):
    wa, wb = sorted((a * C1, b * C1))
    assert f_e(wa, C0, C1) <= f_e(wb, C0, C1)


def test_ce_cost_cases(torus32):
    low = np.zeros(torus32.points.shape)
    low[..., 0] = 4e6
    assert ce_cost(low, torus32, C0, C1) == (0.0, False)
    one = low.copy()
    one[3, 4, 0] = 7.5e6
    value, ruptured = ce_cost(one, torus32, C0, C1)
    assert not ruptured
    assert value == pytest.approx(1.25e13 * torus32.weights[3, 4], rel=1e-14)
    one[5, 5, 0] = C1
    value, ruptured = ce_cost(one, torus32, C0, C1)
    assert ruptured and value == np.inf


@pytest.mark.parametrize("kwargs", [
    {"lambda1": -1.0}, {"gamma": float("nan")}, {"c0": 2e7}, {"force_metric": "Linf"}, {"p": 0},
])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        ObjectiveSpec(**kwargs)


def test_breakdown_invariants(small_problem):
    spec = ObjectiveSpec(lambda1=1e-16, lambda2=1e-18, gamma=1e-17)
    obj = small_problem.objective(spec)
    pot = random_potential(2, G=small_problem.G, seed=3)
    bd, _ = obj.evaluate(pot.coefficients)
    expected = bd.chi2_B + 1e-16 * bd.chi2_j + 1e-18 * bd.chi2_gradj + 1e-17 * bd.chi2_F
    assert bd.total == pytest.approx(expected, rel=1e-14)
    assert min(bd.chi2_B, bd.chi2_j, bd.chi2_gradj, bd.chi2_F) >= 0
    plain, _ = obj.with_spec(ObjectiveSpec()).evaluate(pot.coefficients)
    assert plain.total == plain.chi2_B


def test_regcoil_reduction(small_problem):
    lam = 1.5e-16
    pot = random_potential(2, G=small_problem.G, seed=5)
    bd, _ = total_cost_and_gradient(small_problem.coil, pot, small_problem.boundary,
                                    ObjectiveSpec(lambda1=lam))
    cur = current_from_potential(small_problem.coil, pot)
    direct = chi_B(small_problem.coil, cur, small_problem.boundary) + lam * chi_j(small_problem.coil, cur)
    assert bd.total == pytest.approx(direct, rel=1e-12)


def test_quadratic_system_gives_gradient(small_problem):
    spec = ObjectiveSpec(lambda1=1e-15, lambda2=1e-17)
    obj = small_problem.objective(spec)
    H, g0 = obj.quadratic_system()
    c = random_potential(2, seed=1).coefficients
    _, g = obj.evaluate(c)
    assert np.allclose(H @ c + g0, g, rtol=0, atol=1e-10 * np.abs(g).max())
    assert np.allclose(np.diag(H), obj.quadratic_diagonal(), rtol=1e-12)


@pytest.mark.parametrize("spec", [
    ObjectiveSpec(gamma=1e-16, force_metric="L2"),
    ObjectiveSpec(gamma=1e-16, force_metric="Lp", p=6),
    ObjectiveSpec(lambda1=1e-19, lambda2=1e-19, gamma=1e-15, force_metric="Ce"),
])
def test_gradient_finite_differences(small_problem, spec):
    obj = small_problem.objective(spec)
    c = random_potential(2, seed=4, scale=1e5).coefficients
    bd, g = obj.evaluate(c)
    assert not bd.ruptured and bd.max_force > C0
    rng = np.random.default_rng(0)
    for _ in range(4):
        d = rng.normal(size=c.size)
        h = 1e-3 * np.linalg.norm(c) / np.linalg.norm(d)
        fd = (obj.evaluate(c + h * d, False)[0].total - obj.evaluate(c - h * d, False)[0].total) / (2 * h)
        assert fd == pytest.approx(g @ d, rel=1e-5)


def test_ruptured_state_has_no_gradient(small_problem):
    obj = small_problem.objective(ObjectiveSpec(gamma=1e-16, force_metric="Ce"))
    c = random_potential(2, seed=4, scale=3e5).coefficients
    bd, g = obj.evaluate(c)
    assert bd.ruptured and bd.total == np.inf and g is None


def test_unknown_metric_rejected(small_problem):
    obj = small_problem.objective()
    with pytest.raises(ValueError):
        obj.evaluate(np.zeros(obj.n_dof), metric="Linf")
