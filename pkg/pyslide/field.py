"""Scalar and vector fields on rectangular grids.

A :class:`Grid` discretizes a truncation of ``Omega = U x R^(n-k+1)``: axes
``1..k-1`` are bounded (they live in ``U``) and axes ``k..n`` are
translation-invariant. Fields are immutable; every operation returns a new
field.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Callable, List, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import FieldError, GridError, HullError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
PointFunction = Callable[[np.ndarray], Union[np.ndarray, float]]

# Slack for hull membership, in index units.
HULL_TOLERANCE = 1e-9


def _as_tuple(values, n: int, cast) -> tuple:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.size == 1 and n > 1:
        arr = np.repeat(arr, n)
    if arr.size != n:
        raise GridError(f"expected {n} per-axis values, got {arr.size}")
    return tuple(cast(v) for v in arr)


@dataclass(frozen=True)
class Grid:
    """Node-centered rectangular grid with a bounded/invariant axis split at ``k``."""

    origin: Tuple[float, ...]
    spacing: Tuple[float, ...]
    extent: Tuple[int, ...]
    k: int = 1

    def __post_init__(self) -> None:
        n = len(np.atleast_1d(self.extent))
        if n not in (1, 2, 3):
            raise GridError(f"grid dimension must be 1, 2 or 3, got {n}")
        object.__setattr__(self, "extent", _as_tuple(self.extent, n, int))
        object.__setattr__(self, "origin", _as_tuple(self.origin, n, float))
        object.__setattr__(self, "spacing", _as_tuple(self.spacing, n, float))
        if any(not np.isfinite(h) or h <= 0 for h in self.spacing):
            raise GridError(f"spacing must be positive, got {self.spacing}")
        if any(m < 2 for m in self.extent):
            raise GridError(f"extent must be at least 2 per axis, got {self.extent}")
        if not 1 <= int(self.k) <= n:
            raise GridError(f"split index k must lie in 1..{n}, got {self.k}")
        object.__setattr__(self, "k", int(self.k))

    @classmethod
    def box(
        cls,
        lower: Sequence[float],
        upper: Sequence[float],
        spacing: Union[float, Sequence[float]],
        k: int = 1,
        cell_centered: bool = False,
    ) -> "Grid":
        """Grid covering ``[lower, upper]`` with spacing close to ``spacing``.

        The spacing is adjusted so the nodes hit both ends exactly. With
        ``cell_centered`` the nodes sit at cell midpoints instead, which keeps
        them half a cell away from the box faces.
        """

        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        if lo.shape != hi.shape:
            raise GridError("lower and upper must have the same length")
        h = np.broadcast_to(np.asarray(spacing, dtype=float), lo.shape)
        if np.any(hi <= lo):
            raise GridError(f"empty box {lo} .. {hi}")
        if np.any(h <= 0):
            raise GridError(f"spacing must be positive, got {h}")
        cells = np.maximum(np.rint((hi - lo) / h).astype(int), 1)
        step = (hi - lo) / cells
        if cell_centered:
            return cls(tuple(lo + step / 2), tuple(step), tuple(np.maximum(cells, 2)), k)
        return cls(tuple(lo), tuple(step), tuple(cells + 1), k)

    @property
    def n(self) -> int:
        return len(self.extent)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.extent

    @property
    def size(self) -> int:
        return int(np.prod(self.extent))

    @property
    def upper(self) -> Tuple[float, ...]:
        return tuple(o + h * (m - 1) for o, h, m in zip(self.origin, self.spacing, self.extent))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def invariant_axes(self) -> Tuple[int, ...]:
        """Zero-based indices of the translation-invariant axes."""

        return tuple(range(self.k - 1, self.n))

    def axes(self) -> List[np.ndarray]:
        return [o + h * np.arange(m) for o, h, m in zip(self.origin, self.spacing, self.extent)]

    def mesh(self) -> np.ndarray:
        """Node coordinates, shape ``(n, *extent)``."""

        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def radius(self) -> np.ndarray:
        return np.sqrt(np.sum(self.mesh() ** 2, axis=0))

    def covers_ball(self, R: float) -> bool:
        """True if ``Omega ∩ B_R`` lies inside the grid hull.

        Invariant axes must reach ``[-R, R]``; bounded axes only need to
        reach ``R`` from their own lower face.
        """

        slack = HULL_TOLERANCE * max(1.0, abs(R))
        for axis, (lo, hi) in enumerate(zip(self.origin, self.upper)):
            if hi < R - slack:
                return False
            if axis in self.invariant_axes and lo > -R + slack:
                return False
        return True

    def require_ball(self, R: float) -> None:
        if not self.covers_ball(R):
            raise HullError(
                f"grid hull {self.origin}..{self.upper} does not cover Omega ∩ B_{R:g}"
            )

    def header(self) -> str:
        parts = [str(self.n)]
        parts += [repr(float(h)) for h in self.spacing]
        parts += [repr(float(o)) for o in self.origin]
        parts += [str(m) for m in self.extent]
        parts.append(str(self.k))
        return " ".join(parts)

    @classmethod
    def from_header(cls, line: str) -> "Grid":
        tokens = line.split()
        try:
            n = int(tokens[0])
            spacing = [float(t) for t in tokens[1:1 + n]]
            origin = [float(t) for t in tokens[1 + n:1 + 2 * n]]
            extent = [int(t) for t in tokens[1 + 2 * n:1 + 3 * n]]
            k = int(tokens[1 + 3 * n])
        except (IndexError, ValueError) as exc:
            raise GridError(f"malformed field header: {line!r}") from exc
        return cls(tuple(origin), tuple(spacing), tuple(extent), k)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real value per grid node, stored as a read-only array of shape ``grid.extent``."""

    grid: Grid
    values: np.ndarray = dataclass_field(repr=False)

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=float)
        if arr.size != self.grid.size:
            raise FieldError(f"expected {self.grid.size} values, got {arr.size}")
        arr = arr.reshape(self.grid.extent)
        if not np.all(np.isfinite(arr)):
            raise FieldError("field values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.extent))

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def _other_values(self, other) -> np.ndarray:
        if isinstance(other, ScalarField):
            _require_same_grid(self, other)
            return other.values
        return np.asarray(other, dtype=float)

    def __add__(self, other) -> "ScalarField":
        return self.with_values(self.values + self._other_values(other))

    __radd__ = __add__

    def __sub__(self, other) -> "ScalarField":
        return self.with_values(self.values - self._other_values(other))

    def __rsub__(self, other) -> "ScalarField":
        return self.with_values(self._other_values(other) - self.values)

    def __mul__(self, scalar: float) -> "ScalarField":
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "ScalarField":
        return self.with_values(-self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    """``n`` components per node, array of shape ``(n, *grid.extent)``."""

    grid: Grid
    components: np.ndarray = dataclass_field(repr=False)

    def __post_init__(self) -> None:
        arr = np.array(self.components, dtype=float)
        expected = (self.grid.n,) + self.grid.extent
        if arr.size != int(np.prod(expected)):
            raise FieldError(f"expected {np.prod(expected)} components, got {arr.size}")
        arr = arr.reshape(expected)
        if not np.all(np.isfinite(arr)):
            raise FieldError("vector field components must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "components", arr)

    def norm_squared(self) -> np.ndarray:
        return np.sum(self.components ** 2, axis=0)

    def divergence(self) -> ScalarField:
        total = np.zeros(self.grid.extent)
        for axis in range(self.grid.n):
            total += _axis_derivative(self.components[axis], self.grid, axis)
        return ScalarField(self.grid, total)


def _require_same_grid(u: ScalarField, v: ScalarField) -> None:
    if u.grid != v.grid:
        raise GridError("fields live on different grids")


def _edge_order(grid: Grid) -> int:
    return 2 if min(grid.extent) >= 3 else 1


def _axis_derivative(values: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    return np.gradient(values, grid.spacing[axis], axis=axis, edge_order=_edge_order(grid))


def from_function(grid: Grid, f: PointFunction) -> ScalarField:
    """Sample ``f`` at every node.

    ``f`` receives the node coordinates as one array of shape
    ``(n, *extent)`` and may return a scalar or an array broadcastable to the
    grid shape.
    """

    with np.errstate(all="ignore"):
        raw = np.asarray(f(grid.mesh()), dtype=float)
    values = np.broadcast_to(raw, grid.extent)
    if not np.all(np.isfinite(values)):
        raise FieldError("function is not finite on every grid node")
    return ScalarField(grid, values)


def gradient(u: ScalarField) -> VectorField:
    """Centered differences inside, second order one-sided differences at the faces."""

    grid = u.grid
    parts = [_axis_derivative(u.values, grid, axis) for axis in range(grid.n)]
    return VectorField(grid, np.stack(parts))


def pointwise_max(u: ScalarField, v: ScalarField) -> ScalarField:
    _require_same_grid(u, v)
    return u.with_values(np.maximum(u.values, v.values))


def pointwise_min(u: ScalarField, v: ScalarField) -> ScalarField:
    _require_same_grid(u, v)
    return u.with_values(np.minimum(u.values, v.values))


def _index_coordinates(grid: Grid, points: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] != grid.n:
        raise FieldError(f"points must have {grid.n} coordinates, got shape {pts.shape}")
    origin = np.asarray(grid.origin)
    spacing = np.asarray(grid.spacing)
    idx = (pts - origin) / spacing
    top = np.asarray(grid.extent, dtype=float) - 1.0
    outside = np.any((idx < -HULL_TOLERANCE) | (idx > top + HULL_TOLERANCE) | ~np.isfinite(idx), axis=1)
    if np.any(outside):
        first = pts[np.argmax(outside)]
        raise HullError(f"{int(outside.sum())} point(s) outside the grid hull, e.g. {first}")
    return np.clip(idx, 0.0, top)


def sample_points(u: ScalarField, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation at ``points`` of shape ``(m, n)``."""

    idx = _index_coordinates(u.grid, points)
    return map_coordinates(u.values, idx.T, order=1, mode="nearest")


def sample(u: ScalarField, x: Sequence[float]) -> float:
    return float(sample_points(u, np.asarray(x, dtype=float).reshape(1, -1))[0])


def _corners(n: int) -> List[Tuple[int, ...]]:
    return list(itertools.product((0, 1), repeat=n))


def interpolant_gradient(u: ScalarField, points: np.ndarray) -> np.ndarray:
    """Gradient of the multilinear interpolant at ``points``; returns ``(m, n)``."""

    grid = u.grid
    idx = _index_coordinates(grid, points)
    top = np.asarray(grid.extent) - 2
    base = np.minimum(np.floor(idx).astype(int), top)
    frac = idx - base
    result = np.zeros_like(idx)
    for corner in _corners(grid.n):
        node = tuple((base[:, i] + corner[i]) for i in range(grid.n))
        value = u.values[node]
        weights = [frac[:, i] if corner[i] else 1.0 - frac[:, i] for i in range(grid.n)]
        for axis in range(grid.n):
            term = value * ((1.0 if corner[axis] else -1.0) / grid.spacing[axis])
            for other in range(grid.n):
                if other != axis:
                    term = term * weights[other]
            result[:, axis] += term
    return result


def radial_plateau(grid: Grid, inner: float, outer: float) -> ScalarField:
    """1 on ``B_inner``, 0 outside ``B_outer``, cosine taper in between."""

    if not 0 <= inner < outer:
        raise FieldError(f"need 0 <= inner < outer, got {inner}, {outer}")
    r = grid.radius()
    ramp = np.clip((r - inner) / (outer - inner), 0.0, 1.0)
    return ScalarField(grid, 0.5 * (1.0 + np.cos(np.pi * ramp)))


def save_field(u: ScalarField, path: PathLike) -> Path:
    """Write the header line and one value per line, 17 significant digits."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, u.values.ravel(), fmt="%.17g", header=u.grid.header(), comments="")
    logger.debug("saved field %s to %s", u.grid.extent, path)
    return path


def load_field(path: PathLike) -> ScalarField:
    path = Path(path)
    with path.open() as handle:
        grid = Grid.from_header(handle.readline())
    values = np.loadtxt(path, skiprows=1, ndmin=1)
    return ScalarField(grid, values)
