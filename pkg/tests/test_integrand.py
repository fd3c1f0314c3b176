import math

import numpy as np
import pytest

from pyslide.errors import IntegrandError, SingularEvaluationError
from pyslide.integrand import (
    DoubleWell,
    Integrand,
    boundary_catalog,
    catalog,
    catalog_names,
    check_H2,
    matrix_norm,
)


def _point(n=2, m=5, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, m)), rng.normal(size=m), rng.uniform(0.5, 1.5, size=(n, m))


def test_catalog_lists_every_integrand():
    assert set(catalog_names()) >= {"dirichlet", "allen_cahn", "abs_example", "weighted_dirichlet",
                                     "fractional_extension", "oned_example", "oned_example2", "two_phase_smoothed"}
    with pytest.raises(IntegrandError, match="dirichlet"):
        catalog("membrane")


def test_dirichlet_closed_forms():
    f = catalog("dirichlet")
    p, z, x = _point()
    np.testing.assert_allclose(f.value(p, z, x), 0.5 * np.sum(p ** 2, axis=0))
    np.testing.assert_allclose(f.grad_p(p, z, x), p)
    H = f.hess_pp(p, z, x)
    assert H.shape == (2, 2, 5)
    np.testing.assert_allclose(H[0, 0], 1.0)
    np.testing.assert_allclose(H[0, 1], 0.0)


def test_allen_cahn_wells():
    f = catalog("allen_cahn")
    p = np.zeros((1, 3))
    z = np.array([-1.0, 0.0, 1.0])
    np.testing.assert_allclose(f.value(p, z, p), [0.0, 0.25, 0.0])
    np.testing.assert_allclose(f.grad_z(p, z, p), 0.0, atol=1e-15)
    np.testing.assert_allclose(f.hess_zz(p, z, p), [2.0, -1.0, 2.0])


def test_double_well_profile_solves_the_ode():
    well = DoubleWell(lower=0.0, upper=2.0, scale=3.0)
    s = np.linspace(-3.0, 3.0, 2001)
    h = s[1] - s[0]
    u = well.profile(s)
    second = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h ** 2
    np.testing.assert_allclose(second, well.derivative(u[1:-1]), atol=1e-4)
    np.testing.assert_allclose(well.profile_derivative(s), np.gradient(u, h), atol=1e-4)
    with pytest.raises(IntegrandError):
        DoubleWell(lower=1.0, upper=1.0)


def test_finite_difference_fill_in():
    quartic = Integrand("quartic", value=lambda p, z, x: np.sum(p ** 4, axis=0) + z ** 3)
    p, z, x = _point(seed=3)
    np.testing.assert_allclose(quartic.grad_p(p, z, x), 4.0 * p ** 3, rtol=1e-6, atol=1e-8)
    H = quartic.hess_pp(p, z, x)
    np.testing.assert_allclose(H[0, 0], 12.0 * p[0] ** 2, rtol=1e-4, atol=1e-4)
    np.testing.assert_allclose(H[0, 1], 0.0, atol=1e-4)
    np.testing.assert_allclose(quartic.hess_zz(p, z, x), 6.0 * z, rtol=1e-4, atol=1e-4)


def test_validate_hessian():
    p, z, x = _point()
    catalog("oned_example2").validate_hessian(p[:1], z, x[:1])
    concave = Integrand("concave", value=lambda p, z, x: -np.sum(p ** 2, axis=0))
    with pytest.raises(IntegrandError, match="semidefinite"):
        concave.validate_hessian(p, z, x)


def test_add_linear_keeps_second_derivatives():
    f = catalog("allen_cahn")
    g = f.add_linear([0.5, -2.0])
    p, z, x = _point()
    np.testing.assert_allclose(g.value(p, z, x) - f.value(p, z, x), 0.5 * p[0] - 2.0 * p[1])
    np.testing.assert_allclose(g.grad_p(p, z, x) - f.grad_p(p, z, x), [[0.5] * 5, [-2.0] * 5])
    np.testing.assert_array_equal(g.hess_pp(p, z, x), f.hess_pp(p, z, x))


def test_singular_weights():
    with pytest.raises(IntegrandError, match="'s'"):
        catalog("weighted_dirichlet")
    with pytest.raises(IntegrandError):
        catalog("fractional_extension", {"s": 1.5})
    f = catalog("fractional_extension", {"s": 0.25})
    assert f.singular_weight
    p = np.ones((2, 1))
    assert f.value(p, np.zeros(1), np.array([[4.0], [0.0]]))[0] == pytest.approx(2.0 * 4.0 ** 0.5)
    with pytest.raises(SingularEvaluationError):
        f.value(p, np.zeros(1), np.array([[0.0], [1.0]]))


def test_matrix_norms():
    H = np.zeros((2, 2, 1))
    H[0, 0], H[1, 1] = 3.0, -4.0
    assert matrix_norm(H)[0] == pytest.approx(4.0)
    assert matrix_norm(H, "frobenius")[0] == pytest.approx(5.0)
    with pytest.raises(IntegrandError):
        matrix_norm(H, "nuclear")


def test_check_H2_on_quadratic_integrand():
    f = catalog("dirichlet")
    samples = [([0.0, 2.0], [0.5, -0.5], 0.0, [0.0, 0.0]), ([1.0, -1.0], [0.3, 0.2], 0.1, [1.0, 1.0])]
    report = check_H2(f, samples)
    assert report.ratio == pytest.approx(1.0)
    with pytest.raises(IntegrandError, match="exceeds"):
        check_H2(f, [([0.0, 1.0], [1.0, 0.0], 0.0, [0.0, 0.0])])
    with pytest.raises(IntegrandError):
        check_H2(f, [])


def test_boundary_catalog():
    g = boundary_catalog("quadratic", {"c": 2.0})
    z = np.array([0.5, -1.0])
    np.testing.assert_allclose(g.value(z, None), [0.5, 2.0])
    np.testing.assert_allclose(g.grad_z(z, None), [2.0, -4.0])
    well = boundary_catalog("double_well")
    assert well.value(np.array(1.0), None) == pytest.approx(0.0)
    with pytest.raises(IntegrandError):
        boundary_catalog("cubic")


def test_two_phase_records_width():
    f = catalog("two_phase_smoothed", {"width": 0.2})
    assert f.params["width"] == 0.2
    z = np.array([0.0])
    assert f.value(np.zeros((1, 1)), z, z)[0] == pytest.approx(0.5)
    assert math.isclose(f.grad_z(np.zeros((1, 1)), z, z)[0], 2.5)
