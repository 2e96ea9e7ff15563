import math
from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .numerics.observables import get_observable


class PotentialFamily(str, Enum):
    SEPARABLE = "separable"
    COUPLED_WELL = "coupled_well"
    Z_ONLY = "z_only"


# Cosine terms (amplitude attribute, (k_y, k_z)) of the two-dimensional families
_BASE_TERMS: Dict[PotentialFamily, List[Tuple[str, Tuple[int, int]]]] = {
    PotentialFamily.SEPARABLE: [("a", (1, 0)), ("b", (0, 1))],
    PotentialFamily.COUPLED_WELL: [("a", (0, 2)), ("b", (-1, 1)), ("c", (1, 0))],
    PotentialFamily.Z_ONLY: [("b", (0, 1))],
}


class PotentialSpec(BaseModel):
    """
    Builtin trigonometric test potential V(y, z) = sum_k a_k cos(k . x).

    separable:     a cos(y) + b cos(z)
    coupled_well:  a cos(2z) + b cos(z - y) + c cos(y)
    z_only:        b cos(z)

    ``extension`` appends a third coordinate carrying e*cos(.): "y" makes it an
    extra orthogonal coordinate (d=3, m=1), "z" an extra reaction coordinate
    (d=3, m=2).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    family: PotentialFamily = Field(PotentialFamily.COUPLED_WELL, description="Potential family")
    a: float = Field(2.0, description="First amplitude")
    b: float = Field(1.0, description="Second amplitude")
    c: float = Field(0.5, description="Third amplitude")
    extension: Optional[Literal["y", "z"]] = Field(None, description="Product extension to d=3")
    e: float = Field(0.0, description="Amplitude of the extension factor")

    @property
    def d(self) -> int:
        return 2 if self.extension is None else 3

    @property
    def m(self) -> int:
        return 2 if self.extension == "z" else 1

    def cosine_terms(self) -> Tuple[np.ndarray, np.ndarray]:
        """Amplitudes (T,) and integer frequency vectors (T, d) over x = (y, z)."""
        amps, freqs = [], []
        for attr, (ky, kz) in _BASE_TERMS[self.family]:
            amps.append(getattr(self, attr))
            if self.extension is None:
                freqs.append((ky, kz))
            elif self.extension == "y":
                freqs.append((ky, 0, kz))
            else:
                freqs.append((ky, kz, 0))
        if self.extension == "y":
            amps.append(self.e)
            freqs.append((0, 1, 0))
        elif self.extension == "z":
            amps.append(self.e)
            freqs.append((0, 0, 1))
        return np.asarray(amps, dtype=float), np.asarray(freqs, dtype=float)

    def gradient_bound(self) -> float:
        """Upper bound sum |a_k| |k| on max |grad V| over the torus."""
        amps, freqs = self.cosine_terms()
        return float(np.sum(np.abs(amps) * np.linalg.norm(freqs, axis=1)))


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    potential: PotentialSpec = Field(default_factory=PotentialSpec)
    epsilon: float = Field(0.2, gt=0.0, le=1.0)
    grid_nodes: int = Field(64, ge=4)
    step: float = Field(1e-3, gt=0.0, description="Euler-Maruyama time step h")
    n_steps: int = Field(100_000, ge=1)
    bias_refresh_stride: int = Field(1, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    initial_point: Optional[Tuple[float, ...]] = None
    observables: Tuple[str, ...] = ("one", "cos_z", "sin_z")
    snapshot_stride: int = Field(1000, ge=1)
    replica_count: int = Field(1, ge=1)
    bias_mode: Literal["adaptive", "frozen"] = "adaptive"
    freeze_after: Optional[float] = Field(None, ge=0.0, description="Time after which the bias stops refreshing")
    evaluation: Literal["spectral", "linear"] = "spectral"
    batch_count: int = Field(20, ge=2)

    @field_validator("observables")
    @classmethod
    def known_observables(cls, names):
        for name in names:
            get_observable(name)
        return names

    @model_validator(mode="after")
    def check_consistency(self):
        bound = self.potential.gradient_bound()
        if self.step * bound >= math.pi / 2:
            raise ValueError(
                f"step * max|grad V| = {self.step * bound:.4g} must stay below pi/2; reduce the step"
            )
        if self.initial_point is not None and len(self.initial_point) != self.potential.d:
            raise ValueError(
                f"initial_point has {len(self.initial_point)} coordinates, potential needs {self.potential.d}"
            )
        return self

    @property
    def start(self) -> Tuple[float, ...]:
        if self.initial_point is None:
            return (0.0,) * self.potential.d
        return self.initial_point


class GridSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    nodes: int = Field(64, ge=4, le=4096, description="Nodes per reaction-coordinate dimension")
    y_nodes: int = Field(256, ge=32, description="Quadrature nodes per orthogonal dimension")
    dense_nodes: int = Field(512, ge=32, description="Resolution of the full-dimensional oracle")


class KernelSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epsilon: float = Field(0.2, gt=0.0, le=1.0)


class SimulationSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    step: float = Field(1e-3, gt=0.0)
    n_steps: int = Field(100_000, ge=1)
    bias_refresh_stride: int = Field(1, ge=1)
    snapshot_stride: int = Field(1000, ge=1)
    replica_count: int = Field(1, ge=1)
    initial_point: Optional[List[float]] = None
    observables: List[str] = Field(default_factory=lambda: ["one", "cos_z", "sin_z"])
    bias_mode: Literal["adaptive", "frozen"] = "adaptive"
    freeze_after: Optional[float] = Field(None, ge=0.0)
    evaluation: Literal["spectral", "linear"] = "spectral"
    batch_count: int = Field(20, ge=2)


def _check_epsilons(values: List[float]) -> List[float]:
    for eps in values:
        if not 0.0 < eps <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {eps}")
    return values


class FixedPointSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epsilons: List[float] = Field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05, 0.025], min_length=1)
    tol: float = Field(1e-12, gt=0.0)
    max_iter: int = Field(500, ge=1)
    starts: int = Field(10, ge=1, description="Random Picard starts in the uniqueness probe")
    start_radius: float = Field(3.0, gt=0.0)
    contraction_radius: float = Field(1.0, gt=0.0)
    contraction_trials: int = Field(20, ge=1)

    @field_validator("epsilons")
    @classmethod
    def epsilon_range(cls, values):
        return _check_epsilons(values)


class FlowSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    horizon: float = Field(20.0, gt=0.0)
    dt: float = Field(0.01, gt=0.0)
    start: Literal["uniform", "fixed_point"] = "uniform"
    fit_start: float = Field(1.0, ge=0.0)
    fit_end: float = Field(10.0, gt=0.0)
    record_stride: int = Field(10, ge=1)


class VerifySection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sobolev_p: List[float] = Field(default_factory=lambda: [2.0, 4.0], min_length=1)
    epsilons: List[float] = Field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05], min_length=1)
    random_trials: int = Field(100, ge=1)
    force_bound_states: int = Field(1000, ge=1)
    oracle_samples: int = Field(5, ge=1)

    @field_validator("epsilons")
    @classmethod
    def epsilon_range(cls, values):
        return _check_epsilons(values)

    @field_validator("sobolev_p")
    @classmethod
    def sobolev_range(cls, values):
        for p in values:
            if not (2.0 <= p < math.inf):
                raise ValueError(f"Sobolev exponent must lie in [2, inf), got {p}")
        return values


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, ge=0, lt=2 ** 64)
    out_dir: Optional[Path] = None
    threads: int = Field(1, ge=1)
    potential: PotentialSpec = Field(default_factory=PotentialSpec)
    grid: GridSection = Field(default_factory=GridSection)
    kernel: KernelSection = Field(default_factory=KernelSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    fixed_point: FixedPointSection = Field(default_factory=FixedPointSection)
    flow: FlowSection = Field(default_factory=FlowSection)
    verify: VerifySection = Field(default_factory=VerifySection)

    @model_validator(mode="after")
    def simulation_consistent(self):
        try:
            self.sim_config()
        except ValidationError as e:
            raise ValueError(f"simulation settings are inconsistent: {e}") from None
        return self

    def sim_config(self) -> SimConfig:
        sim = self.simulation
        return SimConfig(
            potential=self.potential,
            epsilon=self.kernel.epsilon,
            grid_nodes=self.grid.nodes,
            step=sim.step,
            n_steps=sim.n_steps,
            bias_refresh_stride=sim.bias_refresh_stride,
            seed=self.seed,
            initial_point=None if sim.initial_point is None else tuple(sim.initial_point),
            observables=tuple(sim.observables),
            snapshot_stride=sim.snapshot_stride,
            replica_count=sim.replica_count,
            bias_mode=sim.bias_mode,
            freeze_after=sim.freeze_after,
            evaluation=sim.evaluation,
            batch_count=sim.batch_count,
        )


class OracleResult(BaseModel):
    potential: PotentialSpec
    nodes: int
    y_nodes: int
    z: List[List[float]] = Field(..., description="Node coordinates")
    a_star: List[float]
    a_star_bar: List[float] = Field(..., description="Zero-mean free energy")
    grad_a_star: List[List[float]] = Field(..., description="Mean force per node")
    z_marginal: List[float] = Field(..., description="Density of the reaction coordinate under mu_star")
    mean_a_star: float


class FixedPointRow(BaseModel):
    epsilon: float
    grid_nodes: int
    converged: bool
    iterations: Optional[int] = None
    update_l2: Optional[float] = None
    update_c0: Optional[float] = None
    error_w12: Optional[float] = None
    error_w14: Optional[float] = None
    error_c0: Optional[float] = None
    contraction_estimate: Optional[float] = None
    message: Optional[str] = None


class FixedPointSweepResult(BaseModel):
    potential: PotentialSpec
    rows: List[FixedPointRow]
    slope_w12: Optional[float] = Field(None, description="Log-log slope of the W^{1,2} error vs epsilon")
    all_failed: bool = False


class FlowResult(BaseModel):
    epsilon: float
    grid_nodes: int
    dt: float
    horizon: float
    times: List[float]
    distances: List[float]
    masses: List[float]
    rate: Optional[float] = None
    r_squared: Optional[float] = None
    final_distance: float
    contraction_estimate: Optional[float] = None
    rate_lower_bound: Optional[float] = None


class ObservableEstimateModel(BaseModel):
    value: float
    stderr: Optional[float] = None


class SimulationSummary(BaseModel):
    epsilon: float
    n_steps: int
    step: float
    replica_count: int
    final_time: float
    estimates: Dict[str, ObservableEstimateModel]
    flat_histogram_distance: float
    final_error_c0: Optional[float] = None
    final_error_w12: Optional[float] = None
    reference_c0_norm: Optional[float] = None
    max_bias_gradient: float


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str = ""
    values: Dict[str, float] = Field(default_factory=dict)


class VerifyReport(BaseModel):
    passed: bool
    checks: List[CheckResult]
