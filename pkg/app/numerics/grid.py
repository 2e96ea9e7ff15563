"""
Torus arithmetic and periodic grids on [0, 2pi)^m.

Angles are radians; integrals use the normalized measure dz/(2pi) per
coordinate, so the quadrature weight of a node is 1/G^m.
"""
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Tuple, Union

import numpy as np

TWO_PI = 2.0 * math.pi

ArrayLike = Union[float, np.ndarray]


def wrap(angle: ArrayLike) -> ArrayLike:
    """Reduce an angle (or array of angles) into [0, 2pi)."""
    arr = np.asarray(angle, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("wrap() received a non-finite angle")
    out = np.mod(arr, TWO_PI)
    # np.mod rounds tiny negative inputs up to exactly 2pi
    out = np.where(out >= TWO_PI, 0.0, out)
    if out.ndim == 0:
        return float(out)
    return out


def torus_distance(z1: ArrayLike, z2: ArrayLike) -> ArrayLike:
    """
    Euclidean norm of the per-coordinate geodesic distances.

    Both arguments carry the coordinates on their last axis and broadcast
    against each other on the leading axes.
    """
    a = np.atleast_1d(np.asarray(z1, dtype=float))
    b = np.atleast_1d(np.asarray(z2, dtype=float))
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"Dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    delta = np.abs(np.mod(a - b, TWO_PI))
    delta = np.minimum(delta, TWO_PI - delta)
    dist = np.sqrt(np.sum(delta * delta, axis=-1))
    if dist.ndim == 0:
        return float(dist)
    return dist


@dataclass(frozen=True)
class TorusPoint:
    """A point x = (y, z) of T^d; the last ``split_index`` coordinates are z."""

    coords: np.ndarray
    split_index: int

    def __post_init__(self):
        coords = np.atleast_1d(np.array(self.coords, dtype=float))
        if coords.ndim != 1:
            raise ValueError("TorusPoint coordinates must be a flat vector")
        if not 1 <= self.split_index <= coords.size:
            raise ValueError(
                f"split_index must lie in [1, {coords.size}], got {self.split_index}"
            )
        coords = np.asarray(wrap(coords), dtype=float)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @classmethod
    def from_yz(cls, y, z) -> "TorusPoint":
        y = np.atleast_1d(np.asarray(y, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        return cls(np.concatenate([y, z]), z.size)

    @property
    def d(self) -> int:
        return self.coords.size

    @property
    def m(self) -> int:
        return self.split_index

    @property
    def y(self) -> np.ndarray:
        return self.coords[: self.d - self.m]

    @property
    def z(self) -> np.ndarray:
        return self.coords[self.d - self.m:]


@dataclass(frozen=True)
class PeriodicGrid:
    """Regular grid of G nodes per dimension over T^m, nodes at j*2pi/G."""

    dims: int
    nodes_per_dim: int = 64

    def __post_init__(self):
        if self.dims < 1:
            raise ValueError(f"Grid dimension must be >= 1, got {self.dims}")
        if self.nodes_per_dim < 1:
            raise ValueError(f"Grid needs at least one node per dimension, got {self.nodes_per_dim}")

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.nodes_per_dim,) * self.dims

    @property
    def size(self) -> int:
        return self.nodes_per_dim ** self.dims

    @property
    def spacing(self) -> float:
        return TWO_PI / self.nodes_per_dim

    @property
    def weight(self) -> float:
        return 1.0 / self.size

    @cached_property
    def axis(self) -> np.ndarray:
        axis = np.arange(self.nodes_per_dim) * self.spacing
        axis.setflags(write=False)
        return axis

    def points(self) -> np.ndarray:
        """Node coordinates as a (G^m, m) array in C order of ``shape``."""
        mesh = np.meshgrid(*([self.axis] * self.dims), indexing="ij")
        return np.stack([component.reshape(-1) for component in mesh], axis=-1)

    def wavenumbers(self) -> Tuple[np.ndarray, ...]:
        """Integer wavenumbers per axis, shaped to broadcast against ``shape``."""
        return self._wavenumbers

    @cached_property
    def _wavenumbers(self) -> Tuple[np.ndarray, ...]:
        k = np.fft.fftfreq(self.nodes_per_dim, d=1.0 / self.nodes_per_dim)
        k.setflags(write=False)
        out = []
        for axis in range(self.dims):
            view = [1] * self.dims
            view[axis] = self.nodes_per_dim
            out.append(k.reshape(view))
        return tuple(out)

    def cell_index(self, z: np.ndarray) -> np.ndarray:
        """Flat index of the node-centred cell containing each point of z (..., m)."""
        z = np.asarray(z, dtype=float)
        idx = np.rint(np.mod(z, TWO_PI) / self.spacing).astype(np.int64) % self.nodes_per_dim
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.shape)


@dataclass(frozen=True)
class GridFunction:
    """
    Scalar or m-vector samples on a PeriodicGrid.

    Scalar values have shape ``grid.shape``; vector values are stored
    component-major with shape ``(m,) + grid.shape``.
    """

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        scalar_shape = self.grid.shape
        vector_shape = (self.grid.dims,) + scalar_shape
        if values.shape not in (scalar_shape, vector_shape):
            raise ValueError(
                f"GridFunction values have shape {values.shape}; expected {scalar_shape} or {vector_shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("GridFunction values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: PeriodicGrid, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        """
        Sample ``fn`` at the nodes. ``fn`` maps a (N, m) array of points to
        (N,) scalars or (N, m) vectors.
        """
        raw = np.asarray(fn(grid.points()), dtype=float)
        if raw.ndim == 1:
            return cls(grid, raw.reshape(grid.shape))
        return cls(grid, raw.T.reshape((grid.dims,) + grid.shape))

    @property
    def is_vector(self) -> bool:
        return self.values.shape != self.grid.shape

    def magnitude(self) -> np.ndarray:
        """Pointwise |f| (Euclidean norm over components for vector fields)."""
        if self.is_vector:
            return np.sqrt(np.sum(self.values ** 2, axis=0))
        return np.abs(self.values)


def lp_norm(f: GridFunction, p: float = 2.0) -> float:
    """
    Grid L^p norm w.r.t. the normalized measure; ``p=math.inf`` or "max"
    gives the max norm.
    """
    mags = f.magnitude()
    if mags.size == 0:
        raise ValueError("lp_norm() of an empty grid")
    if p == "max" or (isinstance(p, (int, float)) and math.isinf(p)):
        return float(np.max(mags))
    p = float(p)
    if p < 1.0:
        raise ValueError(f"lp_norm() needs p >= 1, got {p}")
    return float(np.mean(mags ** p) ** (1.0 / p))


def total_variation_to_uniform(masses: np.ndarray) -> float:
    """Half the l1 distance between cell masses and the uniform distribution."""
    masses = np.asarray(masses, dtype=float).reshape(-1)
    if masses.size == 0:
        raise ValueError("Histogram has no cells")
    return float(0.5 * np.sum(np.abs(masses - 1.0 / masses.size)))
