import math
from dataclasses import dataclass, field, fields as dataclass_fields
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import gamma as gamma_fn

from kslab.errors import DomainError


PROFILES = ("gaussian", "uniform_ball", "lane_emden_stationary", "liouville",
            "power_tail", "barenblatt")


def sphere_area(d: int) -> float:
    """Area of the unit sphere in R^d."""
    return 2.0 * math.pi**(d / 2.0) / float(gamma_fn(d / 2.0))


def critical_exponent(d: int) -> float:
    return 2.0 - 2.0 / d


@dataclass(frozen=True)
class RadialGrid:
    """Uniform cell-centered mesh on [0, r_max] for radial functions on R^d."""
    d: int
    r_max: float
    n_cells: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise DomainError(f"dimension must be an integer >= 2, got {self.d}")
        if not (self.r_max > 0 and math.isfinite(self.r_max)):
            raise DomainError(f"r_max must be positive, got {self.r_max}")
        if int(self.n_cells) != self.n_cells or self.n_cells < 8:
            raise DomainError(f"n_cells must be an integer >= 8, got {self.n_cells}")

    @cached_property
    def dr(self) -> float:
        return self.r_max / self.n_cells

    @cached_property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.dr

    @cached_property
    def faces(self) -> np.ndarray:
        # n_cells + 1 faces, faces[0] = 0, faces[-1] = r_max
        return np.arange(self.n_cells + 1) * self.dr

    @cached_property
    def sigma(self) -> float:
        return sphere_area(self.d)

    @cached_property
    def omega(self) -> float:
        return self.sigma / self.d

    @cached_property
    def weights(self) -> np.ndarray:
        """Midpoint quadrature weights sigma_d * r_i^(d-1) * dr."""
        return self.sigma * self.centers**(self.d - 1) * self.dr


@dataclass(frozen=True)
class RadialField:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_cells,):
            raise DomainError(
                f"field has {values.size} values for {self.grid.n_cells} cells")
        if not np.all(np.isfinite(values)):
            raise DomainError("field values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def r(self) -> np.ndarray:
        return self.grid.centers

    def with_values(self, values: np.ndarray) -> "RadialField":
        return RadialField(self.grid, values)


@dataclass(frozen=True)
class FreeEnergyBreakdown:
    entropy_or_lm: float
    interaction: float
    total: float


@dataclass(frozen=True)
class MomentsRecord:
    mass: float
    second_moment: float
    log_moment: float


@dataclass(frozen=True)
class DeltaResult:
    laplacian_v: RadialField
    delta: float
    index: int

    @property
    def radius(self) -> float:
        return float(self.laplacian_v.r[self.index])


@dataclass(frozen=True)
class ShootingSolution:
    d: int
    gamma: float
    r: np.ndarray
    f: np.ndarray
    fprime: np.ndarray
    R: float
    radial_mass: float
    r_start: float
    dense: Any = field(default=None, repr=False, compare=False)

    @property
    def q(self) -> float:
        return self.d / (self.d - 2.0)

    def boundary_mass(self) -> float:
        """-R^(d-1) f'(R), the flux form of the radial mass."""
        return float(-self.R**(self.d - 1) * self.fprime[-1])

    def f_at(self, r: np.ndarray) -> np.ndarray:
        """f on [0, R] from the dense output, the plateau or the start series."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        inner = r <= self.r_start
        if self.gamma > 0:
            out[inner] = 1.0
        else:
            a4 = self.q / (8.0 * self.d * (self.d + 2.0))
            out[inner] = 1.0 - r[inner]**2 / (2.0 * self.d) + a4 * r[inner]**4
        if np.any(~inner):
            out[~inner] = self.dense(np.minimum(r[~inner], self.R))[0]
        return out

    def dump_rows(self) -> List[Tuple[float, float, float]]:
        return list(zip(self.r.tolist(), self.f.tolist(), self.fprime.tolist()))


@dataclass(frozen=True)
class VariationSolution:
    r: np.ndarray
    w: np.ndarray
    wprime: np.ndarray
    dM_dgamma: float


@dataclass(frozen=True)
class AdjointSolution:
    r: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    sign_switch: Optional[float]


@dataclass(frozen=True)
class MassCurveRow:
    gamma: float
    M: float
    R: float


@dataclass(frozen=True)
class SmallMassConstants:
    d: int
    M: float
    C0: float
    C1: float
    threshold_ok: bool
    coefficient: float


@dataclass(frozen=True)
class InequalityReport:
    inequality: str
    lhs: float
    rhs: float
    margin: float
    passed: bool
    location: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        record = {
            "inequality": self.inequality,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "pass": self.passed,
        }
        if self.location is not None:
            record["location"] = self.location
        return record


class SolverConfig(BaseModel):
    """Parameters of one radial Keller-Segel run. Flags and JSON keys match these names."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    d: int = Field(ge=2)
    m: float = Field(description="Diffusion exponent, fixed to 2 - 2/d")
    r_max: float = Field(default=10.0, gt=0)
    n_cells: int = Field(default=1024, ge=8)
    chi: int = Field(default=1, description="0 = pure diffusion, 1 = full Keller-Segel")
    t_end: float = Field(default=1.0, gt=0)
    cfl_safety: float = Field(default=0.45, gt=0, le=1)
    output_stride: int = Field(default=100, ge=1)
    max_steps: int = Field(default=20_000_000, ge=1)

    profile: str = Field(default="gaussian")
    mass: Optional[float] = Field(default=None, gt=0)
    width: float = Field(default=1.0, gt=0)
    radius: float = Field(default=1.0, gt=0)
    lam: float = Field(default=1.0, gt=0)
    beta: float = Field(default=4.0, gt=0)
    t0: float = Field(default=0.01, gt=0)

    floor_rel: float = Field(default=1e-14, gt=0)
    snapshot_times: List[float] = Field(default_factory=list)
    h_lambda_lambda: float = Field(default=1.0, gt=0)
    tail_r_lo: Optional[float] = Field(default=None, gt=0)
    tail_r_hi: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="before")
    @classmethod
    def fix_exponent(cls, data: Any) -> Any:
        if not isinstance(data, dict) or data.get("d") is None:
            return data
        try:
            d = float(data["d"])
        except (TypeError, ValueError):
            raise ValueError(f"d must be an integer >= 2, got {data['d']!r}")
        if d != int(d) or d < 2:
            raise ValueError(f"d must be an integer >= 2, got {data['d']!r}")
        expected = critical_exponent(int(d))
        given = data.get("m")
        if given is None:
            return {**data, "m": expected}
        if abs(float(given) - expected) > 1e-12:
            raise ValueError(f"m is fixed by d: expected {expected}, got {given}")
        return data

    @field_validator("chi", mode="before")
    @classmethod
    def check_chi(cls, v):
        if float(v) not in (0.0, 1.0):
            raise ValueError("chi must be 0 or 1")
        return int(float(v))

    @field_validator("profile", mode="before")
    @classmethod
    def check_profile(cls, v):
        name = str(v).strip().lower().replace("-", "_")
        if name not in PROFILES:
            raise ValueError(f"unknown profile '{v}', expected one of {', '.join(PROFILES)}")
        return name

    @model_validator(mode="after")
    def check_profile_params(self) -> "SolverConfig":
        if self.profile == "power_tail" and self.beta <= self.d:
            raise ValueError(f"power_tail needs beta > d for finite mass, got beta={self.beta}")
        if self.profile in ("liouville",) and self.d != 2:
            raise ValueError("liouville profile exists only for d=2")
        if self.profile == "lane_emden_stationary" and self.d < 3:
            raise ValueError("lane_emden_stationary needs d >= 3")
        if self.tail_r_lo is not None and self.tail_r_hi is not None \
                and not self.tail_r_lo < self.tail_r_hi <= self.r_max:
            raise ValueError("tail window must satisfy 0 < tail_r_lo < tail_r_hi <= r_max")
        return self

    def grid(self) -> RadialGrid:
        return RadialGrid(self.d, self.r_max, self.n_cells)

    def tail_window(self) -> Tuple[float, float]:
        lo = self.tail_r_lo if self.tail_r_lo is not None else 0.25 * self.r_max
        hi = self.tail_r_hi if self.tail_r_hi is not None else 0.5 * self.r_max
        return lo, hi


@dataclass
class SolverState:
    t: float
    rho: RadialField
    steps: int = 0
    last_dt: float = 0.0


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mass: float
    linf: float
    delta: float
    t_linf: float
    t_delta: float
    entropy_or_lm: float
    interaction: float
    free_energy: float
    m2: float
    log_moment: float
    q_of_u: float
    h_lambda: float
    tail_beta: float
    dt: float

    @classmethod
    def columns(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in dataclass_fields(cls))

    def as_row(self) -> Tuple[float, ...]:
        return tuple(getattr(self, name) for name in self.columns())


@dataclass(frozen=True)
class BlowupReport:
    flagged: bool
    channel: Optional[str] = None
    evidence: Dict[str, float] = field(default_factory=dict)
    channels: Tuple[str, ...] = ()

    @property
    def terminal(self) -> bool:
        """Pointwise growth or dt collapse; a shrinking second moment alone does not stop a run."""
        return "linf" in self.channels or "dt" in self.channels


@dataclass(frozen=True)
class EntropyDecayReport:
    sup_shifted_entropy: float
    c0: float
    fitted_slope: float
    holds: bool


@dataclass
class RunResult:
    config: SolverConfig
    records: List[DiagnosticsRecord]
    final_state: SolverState
    blowup: BlowupReport
    snapshots: List[Tuple[float, RadialField]] = field(default_factory=list)


@dataclass(frozen=True)
class SuiteCheck:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "pass": self.passed, "value": self.value,
                "tolerance": self.tolerance, "detail": self.detail}


@dataclass(frozen=True)
class ExperimentConfig:
    """A subcommand with its fully resolved parameters and output directory."""
    command: str
    params: Any
    output_dir: Path

    def to_dict(self) -> Dict[str, Any]:
        return {"command": self.command, "params": self.params.model_dump(mode="json"),
                "output_dir": str(self.output_dir)}
