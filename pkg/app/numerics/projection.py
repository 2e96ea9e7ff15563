"""
Helmholtz projection onto gradients of zero-mean functions on T^m.

The bias A solving  Laplace(A) = div F  is obtained mode by mode,

    A_hat(k) = -i k.F_hat(k) / |k|^2,   A_hat(0) = 0,

with the +-G/2 (Nyquist) entries of the differentiation symbol set to zero so
that differentiation stays real and skew-symmetric.
"""
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Literal, Union

import numpy as np

from .grid import TWO_PI, GridFunction, PeriodicGrid, lp_norm

EvaluationMode = Literal["spectral", "linear"]


@lru_cache(maxsize=64)
def derivative_symbols(grid: PeriodicGrid) -> tuple:
    """Per-axis wavenumbers with the Nyquist entry zeroed, broadcast against ``grid.shape``."""
    out = []
    for k in grid.wavenumbers():
        k = k.copy()
        if grid.nodes_per_dim % 2 == 0:
            k[np.abs(k) == grid.nodes_per_dim // 2] = 0.0
        k.setflags(write=False)
        out.append(k)
    return tuple(out)


@lru_cache(maxsize=64)
def _laplace_symbol(grid: PeriodicGrid) -> np.ndarray:
    ksq = np.zeros(grid.shape)
    for k in derivative_symbols(grid):
        ksq = ksq + k * k
    ksq.setflags(write=False)
    return ksq


@dataclass(frozen=True, eq=False)
class BiasFunction:
    """
    Zero-mean scalar bias on a PeriodicGrid, held by its DFT coefficients
    (numpy ``fftn`` convention, zero mode fixed at 0).
    """

    grid: PeriodicGrid
    coefficients: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coefficients, dtype=complex)
        if coeffs.shape != self.grid.shape:
            raise ValueError(f"Coefficients have shape {coeffs.shape}, grid has {self.grid.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("BiasFunction coefficients must be finite")
        coeffs[(0,) * self.grid.dims] = 0.0
        coeffs.setflags(write=False)
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def from_values(cls, grid: PeriodicGrid, values: np.ndarray) -> "BiasFunction":
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"Values have shape {values.shape}, grid has {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("BiasFunction values must be finite")
        return cls(grid, np.fft.fftn(values))

    @classmethod
    def from_function(cls, grid: PeriodicGrid, fn: Callable[[np.ndarray], np.ndarray]) -> "BiasFunction":
        return cls.from_values(grid, np.asarray(fn(grid.points()), dtype=float).reshape(grid.shape))

    @classmethod
    def zero(cls, grid: PeriodicGrid) -> "BiasFunction":
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @cached_property
    def values(self) -> np.ndarray:
        values = np.real(np.fft.ifftn(self.coefficients))
        values.setflags(write=False)
        return values

    def as_grid_function(self) -> GridFunction:
        return GridFunction(self.grid, self.values)

    @cached_property
    def _series(self):
        # Nonzero modes only: (wavenumbers (n, m), derivative symbols (n, m), scaled coefficients (n,))
        mask = self.coefficients != 0
        ks = np.stack([np.broadcast_to(k, self.grid.shape)[mask] for k in self.grid.wavenumbers()], axis=-1)
        kd = np.stack([np.broadcast_to(k, self.grid.shape)[mask] for k in derivative_symbols(self.grid)], axis=-1)
        return ks, kd, self.coefficients[mask] / self.grid.size

    def _check_same_grid(self, other: "BiasFunction"):
        if not isinstance(other, BiasFunction):
            return NotImplemented
        if other.grid != self.grid:
            raise ValueError("BiasFunction arithmetic needs a common grid")
        return None

    def __add__(self, other: "BiasFunction") -> "BiasFunction":
        if self._check_same_grid(other) is NotImplemented:
            return NotImplemented
        return BiasFunction(self.grid, self.coefficients + other.coefficients)

    def __sub__(self, other: "BiasFunction") -> "BiasFunction":
        if self._check_same_grid(other) is NotImplemented:
            return NotImplemented
        return BiasFunction(self.grid, self.coefficients - other.coefficients)

    def __mul__(self, factor: float) -> "BiasFunction":
        return BiasFunction(self.grid, self.coefficients * float(factor))

    __rmul__ = __mul__


def project_gradient(F: GridFunction) -> BiasFunction:
    """Zero-mean A whose gradient is the L^2 projection of F onto gradients."""
    grid = F.grid
    components = F.values if F.is_vector else F.values[None, ...]
    if components.shape[0] != grid.dims:
        raise ValueError(f"Vector field has {components.shape[0]} components on a {grid.dims}-dim grid")

    divergence_hat = np.zeros(grid.shape, dtype=complex)
    for k, component in zip(derivative_symbols(grid), components):
        divergence_hat += k * np.fft.fftn(component)
    ksq = _laplace_symbol(grid)
    coeffs = np.zeros(grid.shape, dtype=complex)
    nonzero = ksq > 0
    coeffs[nonzero] = -1j * divergence_hat[nonzero] / ksq[nonzero]
    return BiasFunction(grid, coeffs)


def gradient_of(A: BiasFunction) -> GridFunction:
    """Spectral gradient at the nodes, shape (m,) + grid.shape."""
    comps = [np.real(np.fft.ifftn(1j * k * A.coefficients)) for k in derivative_symbols(A.grid)]
    return GridFunction(A.grid, np.stack(comps))


def _as_points(A: BiasFunction, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        z = z[None]
    if z.shape[-1] != A.grid.dims:
        raise ValueError(f"Evaluation points must be {A.grid.dims}-dimensional, got shape {z.shape}")
    return z


def _interpolate(grid: PeriodicGrid, table: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation of ``table`` (..., *grid.shape) at points z (n, m)."""
    G = grid.nodes_per_dim
    scaled = np.mod(z, TWO_PI) / grid.spacing
    base = np.floor(scaled).astype(np.int64)
    frac = scaled - base
    out = 0.0
    for corner in range(1 << grid.dims):
        weight = np.ones(z.shape[0])
        index = []
        for j in range(grid.dims):
            upper = (corner >> j) & 1
            weight = weight * (frac[:, j] if upper else 1.0 - frac[:, j])
            index.append((base[:, j] + upper) % G)
        out = out + table[(Ellipsis,) + tuple(index)] * weight
    return out


def eval_bias_gradient(A: BiasFunction, z, mode: EvaluationMode = "spectral") -> np.ndarray:
    """
    grad A at off-grid points z (..., m); returns (..., m).

    ``spectral`` sums the trigonometric series of the stored band;
    ``linear`` interpolates the nodal spectral gradient.
    """
    points = _as_points(A, z)
    flat = points.reshape(-1, A.grid.dims)
    if mode == "spectral":
        ks, kd, coeffs = A._series
        if coeffs.size == 0:
            grad = np.zeros_like(flat)
        else:
            phase = np.exp(1j * (flat @ ks.T))
            grad = np.real((phase * coeffs) @ (1j * kd))
    elif mode == "linear":
        grad = _interpolate(A.grid, gradient_of(A).values, flat).T
    else:
        raise ValueError(f"Unknown evaluation mode '{mode}'")
    return grad.reshape(points.shape)


def eval_bias(A: BiasFunction, z, mode: EvaluationMode = "spectral") -> Union[float, np.ndarray]:
    """A at off-grid points z (..., m); returns (...)."""
    points = _as_points(A, z)
    flat = points.reshape(-1, A.grid.dims)
    if mode == "spectral":
        ks, _, coeffs = A._series
        values = np.zeros(flat.shape[0]) if coeffs.size == 0 else np.real(np.exp(1j * (flat @ ks.T)) @ coeffs)
    elif mode == "linear":
        values = _interpolate(A.grid, A.values, flat)
    else:
        raise ValueError(f"Unknown evaluation mode '{mode}'")
    values = values.reshape(points.shape[:-1])
    return float(values) if values.ndim == 0 else values


def eval_bias_and_gradient(A: BiasFunction, z, mode: EvaluationMode = "spectral"):
    """(A(z), grad A(z)) from one phase evaluation; shapes (...) and (..., m)."""
    points = _as_points(A, z)
    flat = points.reshape(-1, A.grid.dims)
    if mode == "spectral":
        ks, kd, coeffs = A._series
        if coeffs.size == 0:
            values = np.zeros(flat.shape[0])
            grad = np.zeros_like(flat)
        else:
            phase = np.exp(1j * (flat @ ks.T))
            values = np.real(phase @ coeffs)
            grad = np.real((phase * coeffs) @ (1j * kd))
    elif mode == "linear":
        values = _interpolate(A.grid, A.values, flat)
        grad = _interpolate(A.grid, gradient_of(A).values, flat).T
    else:
        raise ValueError(f"Unknown evaluation mode '{mode}'")
    return values.reshape(points.shape[:-1]), grad.reshape(points.shape)


def sobolev_norm(A: BiasFunction, p: float = 2.0) -> float:
    """W^{1,p} norm (||A||_p^p + ||grad A||_p^p)^{1/p} on the grid, p in [2, inf)."""
    p = float(p)
    if math.isinf(p) or math.isnan(p):
        raise ValueError("sobolev_norm() supports finite p only")
    if p < 2.0:
        raise ValueError(f"sobolev_norm() needs p >= 2, got {p}")
    value_part = lp_norm(A.as_grid_function(), p) ** p
    grad_part = lp_norm(gradient_of(A), p) ** p
    return float((value_part + grad_part) ** (1.0 / p))
