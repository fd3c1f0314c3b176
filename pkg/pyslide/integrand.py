"""Energy integrands ``F(p, z, x)`` with the derivatives the variations need.

Array convention used by every evaluator: ``p`` and ``x`` have shape
``(n, *S)``, ``z`` has shape ``S``. Scalars returned by ``value``/``grad_z``/
``hess_zz`` have shape ``S``, ``grad_p``/``hess_pz`` have shape ``(n, *S)``
and ``hess_pp`` has shape ``(n, n, *S)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import IntegrandError, SingularEvaluationError

logger = logging.getLogger(__name__)

Evaluator = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
BoundaryEvaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]

# Step of the centered differences that stand in for missing derivatives.
FD_STEP = 1e-5
SYMMETRY_TOLERANCE = 1e-12


def _unit(n: int, axis: int, like: np.ndarray) -> np.ndarray:
    e = np.zeros((n,) + (1,) * (like.ndim - 1))
    e[axis] = 1.0
    return e


def _identity(n: int, shape: Tuple[int, ...], scale=1.0) -> np.ndarray:
    eye = np.eye(n).reshape((n, n) + (1,) * len(shape))
    return eye * (np.ones(shape) * scale)


@dataclass(frozen=True)
class DoubleWell:
    """``W(z) = scale/4 (z - lower)^2 (z - upper)^2``, wells at ``lower`` and ``upper``."""

    lower: float = -1.0
    upper: float = 1.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not self.lower < self.upper:
            raise IntegrandError(f"double well needs lower < upper, got {self.lower}, {self.upper}")
        if self.scale <= 0:
            raise IntegrandError(f"double well scale must be positive, got {self.scale}")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def potential(self, z):
        return 0.25 * self.scale * (z - self.lower) ** 2 * (z - self.upper) ** 2

    def derivative(self, z):
        total = self.lower + self.upper
        return 0.5 * self.scale * (z - self.lower) * (z - self.upper) * (2.0 * z - total)

    def second_derivative(self, z):
        total = self.lower + self.upper
        return 0.5 * self.scale * ((2.0 * z - total) ** 2 + 2.0 * (z - self.lower) * (z - self.upper))

    @property
    def profile_rate(self) -> float:
        return float(np.sqrt(self.scale / 2.0) * 0.5 * (self.upper - self.lower))

    def profile(self, s):
        """Heteroclinic connection of ``u'' = W'(u)`` centered at ``s = 0``."""

        half = 0.5 * (self.upper - self.lower)
        return self.midpoint + half * np.tanh(self.profile_rate * np.asarray(s, dtype=float))

    def profile_derivative(self, s):
        half = 0.5 * (self.upper - self.lower)
        return half * self.profile_rate / np.cosh(self.profile_rate * np.asarray(s, dtype=float)) ** 2


@dataclass(frozen=True)
class Integrand:
    """``F(p, z, x)`` plus first and second derivatives.

    Derivatives left as ``None`` are replaced by centered finite differences
    of step ``fd_step``. ``n`` is ``None`` for integrands valid in any
    dimension. ``smooth`` marks where the p-Hessian is meaningful.
    """

    name: str
    value: Evaluator
    grad_p: Optional[Evaluator] = None
    grad_z: Optional[Evaluator] = None
    hess_pp: Optional[Evaluator] = None
    hess_pz: Optional[Evaluator] = None
    hess_zz: Optional[Evaluator] = None
    smooth: Optional[Evaluator] = None
    n: Optional[int] = None
    singular_weight: bool = False
    params: Mapping[str, Any] = field(default_factory=dict)
    fd_step: float = FD_STEP

    def __post_init__(self) -> None:
        h = self.fd_step
        F = self.value
        if self.grad_p is None:
            object.__setattr__(self, "grad_p", _fd_grad_p(F, h))
        if self.grad_z is None:
            object.__setattr__(self, "grad_z", _fd_grad_z(F, h))
        if self.hess_pp is None:
            object.__setattr__(self, "hess_pp", _fd_hess_pp(self.grad_p, h))
        if self.hess_pz is None:
            object.__setattr__(self, "hess_pz", _fd_grad_z(self.grad_p, h))
        if self.hess_zz is None:
            object.__setattr__(self, "hess_zz", _fd_grad_z(self.grad_z, h))
        if self.smooth is None:
            object.__setattr__(self, "smooth", lambda p, z, x: np.ones(np.shape(z), dtype=bool))

    def hessian_norm(self, p, z, x, norm: str = "spectral") -> np.ndarray:
        """Matrix norm of ``F_pp``, shape ``S``."""

        H = np.asarray(self.hess_pp(p, z, x), dtype=float)
        return matrix_norm(H, norm)

    def validate_hessian(self, p, z, x) -> None:
        """Check symmetry everywhere and positive semidefiniteness in the smooth domain."""

        H = np.asarray(self.hess_pp(p, z, x), dtype=float)
        asym = np.max(np.abs(H - np.swapaxes(H, 0, 1))) if H.size else 0.0
        if asym > SYMMETRY_TOLERANCE:
            raise IntegrandError(f"{self.name}: F_pp asymmetric by {asym:.3e}")
        mask = np.asarray(self.smooth(p, z, x), dtype=bool)
        if not np.any(mask):
            return
        stacked = np.moveaxis(H, (0, 1), (-2, -1))[mask]
        sym = 0.5 * (stacked + np.swapaxes(stacked, -1, -2))
        lowest = np.linalg.eigvalsh(sym)[..., 0]
        scale = np.maximum(1.0, np.abs(sym).max(axis=(-1, -2)))
        if np.any(lowest < -1e-12 * scale):
            raise IntegrandError(f"{self.name}: F_pp not positive semidefinite (min eigenvalue {lowest.min():.3e})")

    def add_linear(self, p0: Sequence[float]) -> "Integrand":
        """``F(p, z, x) + p0 · p``; leaves every second derivative unchanged."""

        vec = np.asarray(p0, dtype=float)
        base_value, base_grad = self.value, self.grad_p

        def value(p, z, x):
            return base_value(p, z, x) + np.tensordot(vec, p, axes=(0, 0))

        def grad_p(p, z, x):
            return base_grad(p, z, x) + vec.reshape((-1,) + (1,) * (np.ndim(p) - 1))

        return replace(self, name=f"{self.name}+linear", value=value, grad_p=grad_p)


def matrix_norm(H: np.ndarray, norm: str = "spectral") -> np.ndarray:
    if norm == "spectral":
        stacked = np.moveaxis(H, (0, 1), (-2, -1))
        sym = 0.5 * (stacked + np.swapaxes(stacked, -1, -2))
        return np.max(np.abs(np.linalg.eigvalsh(sym)), axis=-1)
    if norm == "frobenius":
        return np.sqrt(np.sum(H ** 2, axis=(0, 1)))
    raise IntegrandError(f"unknown matrix norm {norm!r}; use 'spectral' or 'frobenius'")


def _fd_grad_p(F: Evaluator, h: float) -> Evaluator:
    def grad_p(p, z, x):
        p = np.asarray(p, dtype=float)
        n = p.shape[0]
        parts = []
        for axis in range(n):
            e = _unit(n, axis, p) * h
            parts.append((F(p + e, z, x) - F(p - e, z, x)) / (2 * h))
        return np.stack(parts)

    return grad_p


def _fd_grad_z(G: Evaluator, h: float) -> Evaluator:
    def grad_z(p, z, x):
        z = np.asarray(z, dtype=float)
        return (np.asarray(G(p, z + h, x)) - np.asarray(G(p, z - h, x))) / (2 * h)

    return grad_z


def _fd_hess_pp(grad_p: Evaluator, h: float) -> Evaluator:
    def hess_pp(p, z, x):
        p = np.asarray(p, dtype=float)
        n = p.shape[0]
        cols = []
        for axis in range(n):
            e = _unit(n, axis, p) * h
            cols.append((grad_p(p + e, z, x) - grad_p(p - e, z, x)) / (2 * h))
        H = np.stack(cols, axis=1)
        return 0.5 * (H + np.swapaxes(H, 0, 1))

    return hess_pp


def _sq(p: np.ndarray) -> np.ndarray:
    return np.sum(np.asarray(p, dtype=float) ** 2, axis=0)


def _zeros_z(p, z, x):
    return np.zeros(np.shape(z))


def _zeros_p(p, z, x):
    return np.zeros(np.shape(p))


def _power_weight(exponent: float, name: str) -> Callable[[np.ndarray], np.ndarray]:
    def weight(x):
        x1 = np.asarray(x, dtype=float)[0]
        if np.any(x1 <= 0):
            raise SingularEvaluationError(f"{name}: weight x_1^{exponent:g} evaluated at x_1 <= 0")
        return x1 ** exponent

    return weight


def _quadratic_integrand(name: str, coefficient: float, params, weight=None, singular=False,
                         potential=None) -> Integrand:
    """``c·w(x)|p|^2 + V(z)`` with every derivative in closed form."""

    w = weight if weight is not None else (lambda x: 1.0)
    V, dV, ddV = potential if potential is not None else (None, None, None)

    def value(p, z, x):
        out = coefficient * w(x) * _sq(p)
        return out + V(z) if V is not None else out

    def grad_p(p, z, x):
        return 2.0 * coefficient * w(x) * np.asarray(p, dtype=float)

    def grad_z(p, z, x):
        return dV(np.asarray(z, dtype=float)) if dV is not None else np.zeros(np.shape(z))

    def hess_pp(p, z, x):
        p = np.asarray(p, dtype=float)
        return _identity(p.shape[0], p.shape[1:], 2.0 * coefficient * w(x))

    def hess_zz(p, z, x):
        if ddV is None:
            return np.zeros(np.shape(z))
        return ddV(np.asarray(z, dtype=float)) * np.ones(np.shape(z))

    return Integrand(
        name=name,
        value=value,
        grad_p=grad_p,
        grad_z=grad_z,
        hess_pp=hess_pp,
        hess_pz=_zeros_p,
        hess_zz=hess_zz,
        singular_weight=singular,
        params=dict(params),
    )


def _exponent_s(name: str, params: Mapping[str, Any]) -> float:
    if "s" not in params:
        raise IntegrandError(f"{name} needs the exponent parameter 's'")
    s = float(params["s"])
    if not 0.0 < s < 1.0:
        raise IntegrandError(f"{name}: exponent s must lie in (0, 1), got {s}")
    return s


def _double_well(params: Mapping[str, Any]) -> DoubleWell:
    return DoubleWell(
        lower=float(params.get("lower", -1.0)),
        upper=float(params.get("upper", 1.0)),
        scale=float(params.get("scale", 1.0)),
    )


def _build_dirichlet(params):
    return _quadratic_integrand("dirichlet", 0.5, params)


def _build_abs_example(params):
    return _quadratic_integrand("abs_example", 1.0, params)


def _build_allen_cahn(params):
    well = _double_well(params)
    return _quadratic_integrand(
        "allen_cahn", 0.5, params,
        potential=(well.potential, well.derivative, well.second_derivative),
    )


def _build_weighted_dirichlet(params):
    s = _exponent_s("weighted_dirichlet", params)
    return _quadratic_integrand(
        "weighted_dirichlet", 1.0, params,
        weight=_power_weight(1.0 - s, "weighted_dirichlet"), singular=True,
    )


def _build_fractional_extension(params):
    s = _exponent_s("fractional_extension", params)
    return _quadratic_integrand(
        "fractional_extension", 1.0, params,
        weight=_power_weight(1.0 - 2.0 * s, "fractional_extension"), singular=True,
    )


def _build_oned_example(params):
    return _quadratic_integrand(
        "oned_example", 1.0, params,
        potential=(lambda z: -z ** 2, lambda z: -2.0 * z, lambda z: -2.0),
    )


def _build_oned_example2(params):
    return _quadratic_integrand(
        "oned_example2", 1.0, params,
        potential=(
            lambda z: -np.maximum(z, 0.0) ** 2,
            lambda z: -2.0 * np.maximum(z, 0.0),
            lambda z: np.where(z > 0, -2.0, 0.0),
        ),
    )


def _build_two_phase_smoothed(params):
    width = float(params.get("width", 0.1))
    if width <= 0:
        raise IntegrandError(f"two_phase_smoothed: smoothing width must be positive, got {width}")

    def heaviside(z):
        return 0.5 * (1.0 + np.tanh(z / width))

    def d_heaviside(z):
        return 0.5 / width / np.cosh(z / width) ** 2

    def dd_heaviside(z):
        return -np.tanh(z / width) / width ** 2 / np.cosh(z / width) ** 2

    built = _quadratic_integrand(
        "two_phase_smoothed", 1.0, params, potential=(heaviside, d_heaviside, dd_heaviside)
    )
    return replace(built, params={**dict(params), "width": width})


_CATALOG: Dict[str, Callable[[Mapping[str, Any]], Integrand]] = {
    "dirichlet": _build_dirichlet,
    "abs_example": _build_abs_example,
    "allen_cahn": _build_allen_cahn,
    "weighted_dirichlet": _build_weighted_dirichlet,
    "fractional_extension": _build_fractional_extension,
    "oned_example": _build_oned_example,
    "oned_example2": _build_oned_example2,
    "two_phase_smoothed": _build_two_phase_smoothed,
}


def catalog_names() -> List[str]:
    return sorted(_CATALOG)


def catalog(name: str, params: Optional[Mapping[str, Any]] = None) -> Integrand:
    """Build a named integrand from the catalog."""

    try:
        builder = _CATALOG[name]
    except KeyError:
        raise IntegrandError(f"unknown integrand {name!r}; valid names: {', '.join(catalog_names())}") from None
    integrand = builder(dict(params or {}))
    logger.debug("built integrand %s with %s", name, dict(params or {}))
    return integrand


@dataclass(frozen=True)
class BoundaryIntegrand:
    """Boundary term ``G(z, x)`` on the trace ``{x_1 = 0}``."""

    name: str
    value: BoundaryEvaluator
    grad_z: Optional[BoundaryEvaluator] = None
    fd_step: float = FD_STEP

    def __post_init__(self) -> None:
        if self.grad_z is None:
            G, h = self.value, self.fd_step
            object.__setattr__(
                self, "grad_z", lambda z, x: (np.asarray(G(z + h, x)) - np.asarray(G(z - h, x))) / (2 * h)
            )


def boundary_catalog(name: str, params: Optional[Mapping[str, Any]] = None) -> BoundaryIntegrand:
    params = dict(params or {})
    c = float(params.get("c", 1.0))
    if name == "constant":
        return BoundaryIntegrand(name, lambda z, x: c * np.ones(np.shape(z)), lambda z, x: np.zeros(np.shape(z)))
    if name == "linear":
        return BoundaryIntegrand(name, lambda z, x: c * np.asarray(z, dtype=float), lambda z, x: c * np.ones(np.shape(z)))
    if name == "quadratic":
        return BoundaryIntegrand(name, lambda z, x: c * np.asarray(z, dtype=float) ** 2, lambda z, x: 2 * c * np.asarray(z, dtype=float))
    if name == "double_well":
        well = _double_well(params)
        return BoundaryIntegrand(name, lambda z, x: well.potential(np.asarray(z, dtype=float)),
                                 lambda z, x: well.derivative(np.asarray(z, dtype=float)))
    if name == "smoothed_heaviside":
        width = float(params.get("width", 0.1))
        if width <= 0:
            raise IntegrandError(f"smoothed_heaviside: width must be positive, got {width}")
        return BoundaryIntegrand(
            name,
            lambda z, x: 0.5 * (1.0 + np.tanh(np.asarray(z, dtype=float) / width)),
            lambda z, x: 0.5 / width / np.cosh(np.asarray(z, dtype=float) / width) ** 2,
        )
    raise IntegrandError(
        f"unknown boundary integrand {name!r}; valid names: constant, double_well, linear, quadratic, smoothed_heaviside"
    )


@dataclass(frozen=True)
class H2Report:
    """Worst Hessian growth ratio over a sample set."""

    ratio: float
    index: int
    ratios: np.ndarray = field(repr=False)


def check_H2(f: Integrand, samples: Sequence[Tuple[Sequence[float], Sequence[float], float, Sequence[float]]],
             norm: str = "spectral") -> H2Report:
    """Empirical constant of ``|F_pp(p+q)| <= C |F_pp(p)|`` for ``|q| <= |p_n|/2``."""

    if not samples:
        raise IntegrandError("check_H2 needs at least one sample")
    ratios = []
    for i, (p, q, z, x) in enumerate(samples):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        x = np.asarray(x, dtype=float)
        zz = np.asarray(float(z))
        if np.linalg.norm(q) > 0.5 * abs(p[-1]) * (1 + 1e-15):
            raise IntegrandError(f"sample {i}: |q| = {np.linalg.norm(q):g} exceeds |p_n|/2 = {0.5 * abs(p[-1]):g}")
        for point in (p, p + q):
            if not bool(f.smooth(point, zz, x)):
                raise IntegrandError(f"sample {i}: Hessian requested outside the smoothness domain")
        top = float(f.hessian_norm(p + q, zz, x, norm))
        bottom = float(f.hessian_norm(p, zz, x, norm))
        ratios.append(np.inf if bottom == 0 else top / bottom)
    arr = np.asarray(ratios)
    worst = int(np.argmax(arr))
    return H2Report(float(arr[worst]), worst, arr)
