"""Acceptance criteria of the toolkit, each one returning an :class:`ExperimentReport`."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Callable, List, Mapping, Optional, Union

import numpy as np

from .deformation import CutoffProfile, cutoff_derivative, cutoff_value, ell, theta
from .energy import energy, energy_identity_check, second_variation_Q
from .experiments import ExperimentReport, StabilityProbeConfig, random_fourier_field, stability_probe
from .field import Grid, ScalarField, from_function, gradient, load_field, radial_plateau
from .integrand import DoubleWell, catalog
from .log import verbose_log
from .parallel import map_samples
from .solver import heteroclinic_1d

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CONTINUITY_TOLERANCE = 1e-12
DERIVATIVE_TOLERANCE = 1e-8
IDENTITY_RATIO = (1.7, 2.3)
Q_KERNEL_TOLERANCE = 1e-4
Q_SCALING_TOLERANCE = 1e-12
PROBE_EPSILON = 1e-3


def _run_config(data: Mapping[str, Any], out: Path) -> ExperimentReport:
    from .api import EXPERIMENTS, ExperimentConfig

    cfg = ExperimentConfig.from_mapping(dict(data, out=str(out)))
    return EXPERIMENTS[cfg.experiment].runner(cfg)


def _renamed(report: ExperimentReport, name: str) -> ExperimentReport:
    return ExperimentReport(name, report.passed, report.header, report.rows, dict(report.metrics), report.label,
                            dict(report.details))


def abs_energies(seed: int = 0, out: Optional[Path] = None) -> ExperimentReport:
    """``E_2(|t|) = 4`` and ``E_2(v) = 16/9`` while no single deformation helps."""

    data = {"experiment": "abs", "seed": seed, "params": {"R": 2.0, "h": 1e-3, "N": 100}}
    return _renamed(_run_config(data, out or Path(".")), "criterion-1")


def cutoff_algebra(seed: int = 0, out: Optional[Path] = None) -> ExperimentReport:
    """Breakpoint continuity, derivative against finite differences and the half-log identity."""

    rows = []
    cases = [(0, 10.0), (0, 1e3), (0, 1e6), (1, 10.0), (1, 1e3), (1, 1e6), (2, 1e3), (2, 1e6)]
    for k, R in cases:
        c = CutoffProfile(R, 0.0, k)
        inner = c.inner_radius
        near_inner = cutoff_value(c, inner * (1.0 + 1e-14))
        near_outer = cutoff_value(c, R * (1.0 - 1e-14))
        jump_inner = max(abs(cutoff_value(c, inner) - 1.0), abs(near_inner - 1.0))
        jump_outer = max(abs(cutoff_value(c, R)), abs(near_outer))
        s = np.geomspace(inner * 1.01, R * 0.99, 25)
        step = 1e-6 * s
        fd = (np.asarray(cutoff_value(c, s + step)) - np.asarray(cutoff_value(c, s - step))) / (2.0 * step)
        exact = np.asarray(cutoff_derivative(c, s))
        derivative_error = float(np.max(np.abs(fd - exact) / np.maximum(1.0, np.abs(exact))))
        rows.append([k, R, jump_inner, jump_outer, derivative_error, float("nan")])
    for k in (0, 1, 2):
        R = 1e6
        target = ell(k + 1, R) / 2.0
        gap = abs(ell(k + 1, theta(k, R)) - target) / max(1.0, abs(target))
        rows.append([k, R, float("nan"), float("nan"), float("nan"), gap])
    table = np.array(rows)
    continuity = float(np.nanmax(table[:, 2:4]))
    derivative = float(np.nanmax(table[:, 4]))
    identity = float(np.nanmax(table[:, 5]))
    passed = continuity <= CONTINUITY_TOLERANCE and derivative <= DERIVATIVE_TOLERANCE and identity <= 1e-12
    metrics = {"continuity": continuity, "derivative": derivative, "identity": identity}
    return ExperimentReport("criterion-2", passed,
                            ("k", "R", "jump_inner", "jump_outer", "derivative_error", "identity_error"),
                            table, metrics)


def lattice_identity(seed: int = 0, out: Optional[Path] = None) -> ExperimentReport:
    """Residual of ``E(max) + E(min) - E(a) - E(b)`` for two crossing linears halves with ``h``."""

    f = catalog("dirichlet")
    a, b = np.array([1.0, 1.5]), np.array([0.0, -0.5])
    rows = []
    for h in (0.04, 0.02, 0.01):
        grid = Grid.box([-1.2, -1.2], [1.2, 1.2], h)
        ua = from_function(grid, lambda x: np.tensordot(a, x, 1))
        ub = from_function(grid, lambda x: np.tensordot(b, x, 1))
        rows.append([h, energy_identity_check(ua, ub, f, 1.0)])
    table = np.array(rows)
    ratios = table[:-1, 1] / table[1:, 1]
    lo, hi = IDENTITY_RATIO
    passed = bool(np.all((ratios >= lo) & (ratios <= hi)))
    metrics = {"ratio_min": float(np.min(ratios)), "ratio_max": float(np.max(ratios))}
    return ExperimentReport("criterion-3", passed, ("h", "residual"), table, metrics)


def sliding_decay(seed: int = 0, out: Optional[Path] = None) -> ExperimentReport:
    """Normalized second difference of the planar Allen-Cahn interface decreases like ``1/log R``."""

    data = {
        "experiment": "slide",
        "seed": seed,
        "integrand": {"name": "allen_cahn"},
        "grid": {"lower": [-10.0, -10.0], "upper": [10.0, 10.0], "spacing": 0.2},
        "field": {"kind": "tanh", "axis": 2},
        "radii": [10.0, 30.0, 100.0, 300.0],
        "cutoff": {"t": 0.1, "k": 0},
        "params": {"grid_per_radius": True, "horizontal_cells": 150, "vertical_spacing": 0.2},
        "assert": {"decreasing": True, "log_factor": 5.0},
    }
    return _renamed(_run_config(data, out or Path(".")), "criterion-4")


def growth_exponents(seed: int = 0, out: Optional[Path] = None) -> ExperimentReport:
    """Linear growth for the planar interface, cubic growth and a failed check for a 3D linear field."""

    interface = {
        "experiment": "growth",
        "seed": seed,
        "integrand": {"name": "allen_cahn"},
        "grid": {"lower": [-33.0, -33.0], "upper": [33.0, 33.0], "spacing": 0.1},
        "field": {"kind": "tanh", "axis": 2},
        "radii": [4.0, 8.0, 16.0, 32.0],
        "assert": {"exponent": [0.85, 1.15], "growth_passes": True},
    }
    linear = {
        "experiment": "growth",
        "seed": seed,
        "integrand": {"name": "dirichlet"},
        "grid": {"lower": [-8.5] * 3, "upper": [8.5] * 3, "spacing": 0.25},
        "field": {"kind": "linear", "gradient": [0.3, -0.2, 1.0]},
        "radii": [2.0, 4.0, 6.0, 8.0],
        "assert": {"exponent": [2.85, 3.15], "growth_passes": False},
    }
    first = _run_config(interface, out or Path("."))
    second = _run_config(linear, out or Path("."))
    rows = np.vstack([np.column_stack([np.full(len(r.rows), i + 1.0), r.rows]) for i, r in enumerate((first, second))])
    metrics = {"interface_exponent": first.metrics["exponent"], "interface_passes": first.metrics["growth_passes"],
               "linear_exponent": second.metrics["exponent"], "linear_passes": second.metrics["growth_passes"]}
    return ExperimentReport("criterion-5", first.passed and second.passed, ("case", "r", "a_r", "E_r", "ratio"),
                            rows, metrics)


def second_variation(seed: int = 0, out: Optional[Path] = None) -> ExperimentReport:
    """Translation kernel of the 1D heteroclinic, exact quadratic scaling and positivity for Dirichlet."""

    f = catalog("allen_cahn")
    u = heteroclinic_1d(DoubleWell(), 12.0, 1e-3)
    grid = u.grid
    du = gradient(u).components[0]
    g = ScalarField(grid, du * radial_plateau(grid, 8.0, 11.0).values)
    eta = 11.5
    mass = 2.0 * energy(u, catalog("dirichlet"))
    kernel = second_variation_Q(g, u, f, eta)
    scaling = 0.0
    for lam in (-1.0, 0.5, 3.0):
        scaled = second_variation_Q(g * lam, u, f, eta)
        scaling = max(scaling, abs(scaled - lam ** 2 * kernel) / max(1.0, abs(lam ** 2 * kernel)))

    dirichlet = catalog("dirichlet")
    square = Grid.box([-2.0, -2.0], [2.0, 2.0], 0.05)
    zero = ScalarField.zeros(square)

    def positive(index: int) -> float:
        rng = np.random.default_rng([seed, index])
        return second_variation_Q(random_fourier_field(square, rng, [-1.0, -1.0], [1.0, 1.0]), zero, dirichlet, 1.5)

    samples = np.array(map_samples(positive, 200))
    verbose_log("second variation: kernel %.3e, min random %.3e", kernel, float(samples.min()))
    kernel_ok = abs(kernel) <= Q_KERNEL_TOLERANCE * mass
    passed = kernel_ok and scaling <= Q_SCALING_TOLERANCE and bool(np.all(samples >= 0.0))
    rows = np.column_stack([np.arange(len(samples)), samples])
    metrics = {"Q_kernel": kernel, "kernel_bound": Q_KERNEL_TOLERANCE * mass, "scaling": scaling,
               "Q_min": float(samples.min())}
    return ExperimentReport("criterion-6", passed, ("sample", "Q"), rows, metrics)


def corner_improvement(seed: int = 0, out: Optional[Path] = None) -> ExperimentReport:
    """Cutting the corner ``max{x_2, -x_2}`` lowers the Dirichlet energy beyond the quadrature error."""

    data = {
        "experiment": "improve",
        "seed": seed,
        "integrand": {"name": "dirichlet"},
        "grid": {"lower": [-13.0, -3.0], "upper": [13.0, 3.0], "spacing": 0.05},
        "params": {"a": [0.0, 1.0], "b": [0.0, -1.0], "alpha": 0.5, "R": 10.0},
        "assert": {"error_factor": 10.0},
    }
    return _renamed(_run_config(data, out or Path(".")), "criterion-7")


def plateau_probes(seed: int = 0, out: Optional[Path] = None) -> ExperimentReport:
    """Both plateau examples: the vertical probe and the bounded deformation probe."""

    exa = _run_config({"experiment": "exa", "seed": seed, "params": {"R": 3.0, "delta": 0.5, "N": 500}},
                      out or Path("."))
    exa2 = _run_config({"experiment": "exa2", "seed": seed, "params": {"delta": 0.5, "N": 300}}, out or Path("."))
    rows = np.vstack([np.column_stack([np.full(len(exa.rows), 1.0), exa.rows[:, [0, 2]]]),
                      np.column_stack([np.full(len(exa2.rows), 2.0), exa2.rows])])
    metrics = {"exa_min_ratio": exa.metrics["min_ratio"], "exa2_min_ratio": exa2.metrics["min_ratio"],
               "long_monotone_fails": exa2.metrics["long_monotone_fails"]}
    return ExperimentReport("criterion-8", exa.passed and exa2.passed, ("example", "sample", "ratio"), rows,
                            metrics, "empirical")


def solver_pipeline(seed: int = 0, out: Optional[Path] = None) -> ExperimentReport:
    """Allen-Cahn flow from monotone data, then the monotonicity, profile and stability checks."""

    out = out or Path(".")
    data = {
        "experiment": "solve",
        "seed": seed,
        "integrand": {"name": "allen_cahn"},
        "grid": {"lower": [-5.0, -10.0], "upper": [5.0, 10.0], "spacing": 0.25},
        "field": {"kind": "step", "axis": 2, "amplitude": 0.9, "face": 1.0},
        "flow": {"boundary": ["zero-flux", "fixed"], "tol": 1e-8},
        "params": {"monotone_axis": 2, "axes": [1, 2]},
        "assert": {"residual": 1e-6, "violations": 0, "onedim_residual": 1e-2, "direction": [0.0, 1.0],
                   "angle_deg": 1.0},
    }
    solved = _run_config(data, out)
    u = load_field(out / "solve_field.txt")
    probe = stability_probe(u, catalog("allen_cahn"),
                            StabilityProbeConfig(R=4.5, t=0.05, seed=seed, klass="horizontal+vertical"))
    metrics = dict(solved.metrics, probe_min_ratio=probe.min_ratio)
    passed = solved.passed and probe.passed(PROBE_EPSILON)
    return ExperimentReport("criterion-9", passed, solved.header, solved.rows, metrics)


CRITERIA: List[Callable[..., ExperimentReport]] = [
    abs_energies,
    cutoff_algebra,
    lattice_identity,
    sliding_decay,
    growth_exponents,
    second_variation,
    corner_improvement,
    plateau_probes,
    solver_pipeline,
]


def run_criteria(seed: int = 0, out: PathLike = Path("results") / "accept-all") -> List[ExperimentReport]:
    """Run every criterion in order and write ``criterion-<k>.csv`` for each."""

    out = Path(out)
    reports = []
    for index, criterion in enumerate(CRITERIA, start=1):
        logger.info("criterion %d: %s", index, criterion.__name__)
        report = criterion(seed, out)
        report.to_csv(out / f"criterion-{index}.csv")
        reports.append(report)
        logger.info("%s", report.summary)
    return reports
