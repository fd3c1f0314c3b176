import math

import numpy as np
import pytest

from pyslide.deformation import CutoffProfile, lipschitz_norm, slide_field
from pyslide.errors import GridError, ParameterError
from pyslide.experiments import (
    ExperimentReport,
    ImprovementConfig,
    StabilityProbeConfig,
    build_comparison,
    exa2_profile,
    exa_profile,
    example_abs,
    example_exa,
    example_exa2,
    lemma1_improvement,
    monotonicity_check,
    one_dimensionality,
    random_fourier_field,
    scale_to_lipschitz,
    single_deformation_check,
    stability_probe,
    tanh_profile,
)
from pyslide.field import Grid, ScalarField, from_function
from pyslide.integrand import catalog
from pyslide.parallel import worker_scope

DIRICHLET = catalog("dirichlet")


def test_plateau_profiles():
    np.testing.assert_allclose(exa_profile([-math.pi, 0.0, 1.0, math.pi]), [0.0, 1.0, 1.0, 0.0], atol=1e-15)
    assert exa2_profile(math.pi + 1.0) == pytest.approx(-1.0)
    assert exa2_profile(-math.pi - 0.5) == pytest.approx(-0.5)


def test_tanh_profile_defaults_to_the_last_axis(square_grid, interface):
    np.testing.assert_allclose(tanh_profile(square_grid).values, interface.values)
    np.testing.assert_allclose(tanh_profile(square_grid, axis=1, rate=1.0).values[0], math.tanh(-3.0))


def test_random_fourier_field_stays_inside_its_box(square_grid):
    psi = random_fourier_field(square_grid, np.random.default_rng(7), [-1.0, -1.0], [1.0, 1.0])
    x = square_grid.mesh()
    outside = np.any(np.abs(x) > 1.0 - 0.1 + 1e-9, axis=0)
    assert np.all(psi.values[outside] == 0.0)
    assert psi.max_abs() > 0
    again = random_fourier_field(square_grid, np.random.default_rng(7), [-1.0, -1.0], [1.0, 1.0])
    np.testing.assert_array_equal(psi.values, again.values)
    with pytest.raises(ParameterError):
        random_fourier_field(square_grid, np.random.default_rng(7), [1.0, 1.0], [-1.0, -1.0])


def test_scale_to_lipschitz(square_grid):
    psi = random_fourier_field(square_grid, np.random.default_rng(3), [-2.0, -2.0], [2.0, 2.0])
    assert lipschitz_norm(scale_to_lipschitz(psi, 0.2)) == pytest.approx(0.2)
    zero = ScalarField.zeros(square_grid)
    assert scale_to_lipschitz(zero, 0.2) is zero


def test_comparison_field_lies_above():
    grid = Grid.box([-5.0, -5.0], [5.0, 5.0], 0.1)
    u = tanh_profile(grid)
    v = build_comparison(u, CutoffProfile(4.0, 0.3))
    assert np.all(v.values >= u.values)
    assert np.any(v.values > u.values)


@pytest.mark.parametrize("kwargs", [
    dict(a=(0.0, 1.0), b=(0.0, 1.0)),
    dict(a=(0.0, -1.0), b=(0.0, 1.0)),
    dict(a=(0.0, 1.0), b=(0.0, -1.0), alpha=1.5),
    dict(a=(0.0, 1.0), b=(0.0, -1.0, 0.0)),
    dict(a=(0.0, 1.0), b=(0.0, -1.0), R=0.0),
])
def test_improvement_config_validation(kwargs):
    with pytest.raises(ParameterError):
        ImprovementConfig(**kwargs)


def test_corner_improvement_cuts_the_corner():
    grid = Grid.box([-4.0, -2.0], [4.0, 2.0], 0.05)
    result = lemma1_improvement(ImprovementConfig((0.0, 1.0), (0.0, -1.0), R=2.0), DIRICHLET, grid)
    assert result.boundary_agrees
    assert result.delta == pytest.approx(-4.0, abs=0.1)
    assert result.energy_improved - result.energy_corner == pytest.approx(result.delta, abs=1e-9)
    assert result.error_estimate < 0.1
    with pytest.raises(ParameterError):
        lemma1_improvement(ImprovementConfig((0.0, 0.0, 1.0), (0.0, 0.0, -1.0)), DIRICHLET, grid)


@pytest.mark.parametrize("kwargs", [
    dict(R=2.0, t=0.6, delta=0.5),
    dict(R=2.0, t=0.1, klass="diagonal"),
    dict(R=2.0, t=0.1, energy_method="exact"),
    dict(R=2.0, t=0.1, klass="horizontal+vertical", energy_method="chain"),
    dict(R=2.0, t=0.1, samples=0),
    dict(R=2.0, t=0.1, max_pieces=3),
])
def test_probe_config_validation(kwargs):
    with pytest.raises(ParameterError):
        StabilityProbeConfig(**kwargs)


def test_probe_of_a_linear_field_is_nonnegative(square_grid):
    u = from_function(square_grid, lambda x: 0.5 * x[0] + x[1])
    cfg = StabilityProbeConfig(R=2.5, t=0.1, samples=6, seed=11)
    report = stability_probe(u, DIRICHLET, cfg)
    assert report.label == "empirical"
    assert report.min_ratio >= -1e-10
    assert report.passed(1e-8)
    assert report.rows().shape == (6, 2)
    with worker_scope(4):
        again = stability_probe(u, DIRICHLET, cfg)
    np.testing.assert_array_equal(again.ratios, report.ratios)


def test_chain_and_difference_methods_agree_on_linear_fields(square_grid):
    u = from_function(square_grid, lambda x: x[1])
    base = dict(R=2.5, t=0.1, samples=3, seed=5, max_pieces=1)
    diff = stability_probe(u, DIRICHLET, StabilityProbeConfig(**base))
    chain = stability_probe(u, DIRICHLET, StabilityProbeConfig(energy_method="chain", **base))
    np.testing.assert_allclose(chain.ratios, diff.ratios, rtol=1e-8, atol=1e-8)


def test_abs_example_passes():
    report = example_abs(R=2.0, h=0.01, N=4)
    assert report.passed
    assert report.metrics["E_u"] == pytest.approx(4.0)
    assert report.metrics["E_v"] == pytest.approx(16.0 / 9.0, abs=1e-3)
    assert report.summary.startswith("abs PASS")


def test_exa_example_report():
    report = example_exa(R=3.0, delta=0.5, N=3, h=0.01)
    assert report.rows.shape == (3, 4)
    assert report.label == "empirical"
    assert report.metrics["deformation_ok"]
    assert report.metrics["lambda"] == pytest.approx((math.pi / (3.0 - math.pi / 2.0 + 0.5)) ** 2)
    with pytest.raises(ParameterError):
        example_exa(R=4.0, delta=0.5)
    with pytest.raises(ParameterError):
        example_exa(R=3.0, delta=2.0)


def test_exa2_monotonicity_facts():
    report = example_exa2(delta=0.5, N=2, h=0.01)
    assert report.metrics["short_monotone"]
    assert report.metrics["long_monotone_fails"]
    assert report.metrics["translation_crosses"]
    with pytest.raises(ParameterError):
        example_exa2(delta=0.5, R=3.0)


def test_report_csv(tmp_path):
    report = ExperimentReport("demo", True, ("a", "b"), np.array([[1.0, 2.0]]), {"x": 0.5}, "empirical")
    assert report.summary == "demo PASS x=0.500 [empirical]"
    path = report.to_csv(tmp_path / "demo.csv")
    assert path.read_text().splitlines() == ["a,b", "1,2"]


def test_one_dimensional_direction_of_an_interface(interface):
    fit = one_dimensionality(interface, (1, 2))
    assert not fit.degenerate
    assert fit.direction[1] > 0.999
    assert fit.residual < 1e-6


def test_one_dimensionality_edge_cases(square_grid):
    fit = one_dimensionality(ScalarField.zeros(square_grid), (1, 2))
    assert fit.degenerate
    with pytest.raises(ParameterError):
        one_dimensionality(ScalarField.zeros(square_grid), (1, 1))
    with pytest.raises(ParameterError):
        one_dimensionality(ScalarField.zeros(square_grid), (1, 3))


def test_monotonicity_patterns(square_grid, interface):
    assert np.all(monotonicity_check(interface, 2).pattern == 1)
    assert np.all(monotonicity_check(interface, 1).pattern == 0)
    wavy = from_function(square_grid, lambda x: np.sin(2.0 * x[1]))
    report = monotonicity_check(wavy, 2)
    assert report.violations == square_grid.extent[0]
    half = Grid.box([0.0, -2.0], [2.0, 2.0], 0.1, k=2)
    with pytest.raises(GridError):
        monotonicity_check(ScalarField.zeros(half), 1)


def test_comparison_field_takes_either_branch():
    grid = Grid.box([-5.0, -5.0], [5.0, 5.0], 0.1)
    u = from_function(grid, lambda x: np.sin(x[1]) + 0.3 * x[0])
    c = CutoffProfile(4.0, 0.3)
    v = build_comparison(u, c)
    slid = slide_field(u, c, -1)
    assert np.all(v.values >= u.values)
    assert np.all((v.values == u.values) | (v.values == slid.values))
    np.testing.assert_array_equal(build_comparison(u, c.with_t(0.0)).values, u.values)


def test_improvement_ignores_a_null_lagrangian():
    grid = Grid.box([-4.0, -2.0], [4.0, 2.0], 0.1)
    cfg = ImprovementConfig((0.0, 1.0), (0.0, -1.0), R=2.0)
    plain = lemma1_improvement(cfg, DIRICHLET, grid)
    shifted = lemma1_improvement(cfg, DIRICHLET.add_linear([0.4, -0.7]), grid)
    assert shifted.delta == pytest.approx(plain.delta, abs=1e-10 * max(1.0, abs(plain.delta)))


def test_single_deformation_check_compares_both_columns():
    rows = np.array([[0.0, 0.25, 0.25], [1.0, 0.5, 0.5 + 1e-12]])
    ok, gap = single_deformation_check(rows, 2.0)
    assert ok
    assert gap < 1e-11
    ok, gap = single_deformation_check(np.array([[0.0, 0.3, 0.2]]), 2.0)
    assert not ok
    assert gap == pytest.approx(0.1)
    assert not single_deformation_check(np.array([[0.0, -1e-6, -1e-6]]), 2.0)[0]


def test_abs_example_reports_the_identity_gap():
    report = example_abs(R=2.0, h=0.01, N=4)
    assert report.details["identity_gap"] <= 1e-8


def test_diagonal_interface_is_one_dimensional(square_grid):
    u = from_function(square_grid, lambda x: np.tanh((x[0] + x[1]) / 2.0))
    fit = one_dimensionality(u, (1, 2))
    np.testing.assert_allclose(fit.direction, [math.sqrt(0.5)] * 2, atol=0.01)
    assert fit.residual <= 1e-3


def test_radial_field_is_not_one_dimensional(square_grid):
    u = from_function(square_grid, lambda x: x[0] ** 2 + x[1] ** 2)
    assert one_dimensionality(u, (1, 2)).residual >= 0.1
