from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from app.lab.errors import ConfigError, NonFiniteField, ShapeMismatch

# Number of outermost grid layers on bounded axes kept out of norms and verdicts
BOUNDARY_LAYERS = 2


@dataclass(frozen=True, eq=False)
class Chart:
    extents: Tuple[Tuple[float, float], ...]
    periodic: Tuple[bool, ...]
    resolution: Tuple[int, ...]

    def __post_init__(self):
        n = len(self.extents)
        if n < 1:
            raise ConfigError("chart needs at least one axis", rule="chart-dimension")
        if len(self.periodic) != n or len(self.resolution) != n:
            raise ConfigError("chart extents, topology and resolution differ in length", rule="chart-shape")
        for (a, b), res in zip(self.extents, self.resolution):
            if not b > a:
                raise ConfigError(f"empty chart extent [{a}, {b}]", rule="chart-extent")
            if res < 8:
                raise ConfigError(f"chart resolution {res} below 8", rule="chart-resolution")

    @property
    def n(self) -> int:
        return len(self.extents)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.resolution)

    @cached_property
    def spacing(self) -> Tuple[float, ...]:
        """Grid step per axis"""
        steps = []
        for (a, b), res, periodic in zip(self.extents, self.resolution, self.periodic):
            steps.append((b - a) / res if periodic else (b - a) / (res - 1))
        return tuple(steps)

    def axis(self, i: int) -> np.ndarray:
        a, _ = self.extents[i]
        return a + self.spacing[i] * np.arange(self.resolution[i])

    @cached_property
    def points(self) -> np.ndarray:
        """Grid coordinates, shape resolution + (n,)"""
        mesh = np.meshgrid(*[self.axis(i) for i in range(self.n)], indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def interior(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        for i, periodic in enumerate(self.periodic):
            if periodic:
                continue
            index = [slice(None)] * self.n
            index[i] = slice(0, BOUNDARY_LAYERS)
            mask[tuple(index)] = False
            index[i] = slice(-BOUNDARY_LAYERS, None)
            mask[tuple(index)] = False
        return mask

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def min_spacing(self) -> float:
        return float(min(self.spacing))

    def quadrature_weights(self) -> np.ndarray:
        """Midpoint weights on periodic axes, trapezoidal on bounded ones"""
        weights = np.ones(self.shape)
        for i, periodic in enumerate(self.periodic):
            if periodic:
                continue
            w = np.ones(self.resolution[i])
            w[0] = w[-1] = 0.5
            shape = [1] * self.n
            shape[i] = self.resolution[i]
            weights = weights * w.reshape(shape)
        return weights * self.cell_volume

    def contains(self, x: Sequence[float]) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            return False
        return all(periodic or a - 1e-12 <= xi <= b + 1e-12 for xi, (a, b), periodic in zip(x, self.extents, self.periodic))

    def with_resolution(self, resolution: int) -> "Chart":
        return Chart(self.extents, self.periodic, tuple([resolution] * self.n))

    def describe(self) -> Dict[str, Any]:
        return {"extents": [list(e) for e in self.extents], "periodic": list(self.periodic), "resolution": list(self.resolution)}


def _require_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        bad = int(np.size(values) - np.count_nonzero(np.isfinite(values)))
        raise NonFiniteField(f"{what} has {bad} non-finite entries")


@dataclass(frozen=True, eq=False)
class ScalarField:
    chart: Chart
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        if self.values.shape != self.chart.shape:
            raise ShapeMismatch(f"field shape {self.values.shape} does not match chart {self.chart.shape}")
        _require_finite(self.values, "scalar field")

    def interior_values(self) -> np.ndarray:
        return self.values[self.chart.interior]


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    chart: Chart
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.times),) + self.chart.shape:
            raise ShapeMismatch(f"space-time shape {self.values.shape} does not match {len(self.times)} x {self.chart.shape}")
        _require_finite(self.values, "space-time field")
        if len(self.times) > 1:
            steps = np.diff(self.times)
            if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
                raise ShapeMismatch("time grid must be strictly increasing and uniform")

    def __len__(self) -> int:
        return len(self.times)

    def frame(self, k: int) -> ScalarField:
        return ScalarField(self.chart, self.values[k], float(self.times[k]))

    def frames(self):
        for k in range(len(self.times)):
            yield self.frame(k)


@dataclass
class DiffReport:
    operator: str
    case: str
    levels: List[int]
    max_errors: List[float]
    l2_errors: List[float]
    orders: List[float]

    @property
    def exact(self) -> bool:
        return max(self.max_errors) <= 1e-12

    @property
    def order(self) -> Optional[float]:
        """Order across the finest doubling; None when the operator is exact"""
        if self.exact or not self.orders:
            return None
        return self.orders[-1]

    def summary(self) -> Dict[str, Any]:
        return {
            "operator": self.operator,
            "case": self.case,
            "levels": self.levels,
            "max_errors": self.max_errors,
            "l2_errors": self.l2_errors,
            "orders": self.orders,
            "order": "exact" if self.exact else self.order,
        }


@dataclass
class CurvatureReport:
    times: List[float]
    points: np.ndarray
    christoffel: np.ndarray
    ricci: np.ndarray
    hess_f: np.ndarray
    ric_fm: np.ndarray
    lambda_min: np.ndarray
    dtg_min: np.ndarray
    k: float
    h: float
    m: float

    def local_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Pointwise k and h implied by each sample"""
        if np.isinf(self.m):
            k_local = np.maximum(0.0, -self.lambda_min)
        elif self.m > 1:
            k_local = np.maximum(0.0, -self.lambda_min / (self.m - 1))
        else:
            k_local = np.where(self.lambda_min >= 0, 0.0, np.inf)
        h_local = np.maximum(0.0, -0.5 * self.dtg_min)
        return k_local, h_local

    def summary(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "h": self.h,
            "m": "inf" if np.isinf(self.m) else self.m,
            "lambda_min": float(np.min(self.lambda_min)),
            "samples": int(self.lambda_min.size),
            "times": self.times,
        }


@dataclass
class SolveResult:
    u: SpaceTimeField
    step_times: np.ndarray
    min_trace: np.ndarray
    max_trace: np.ndarray
    dt_trace: np.ndarray
    clamp_trace: np.ndarray
    wall_time: float
    p: float
    floor: float
    nonlinearity: Any = None

    @property
    def floor_activations(self) -> int:
        return int(np.sum(self.clamp_trace))

    @property
    def flagged(self) -> bool:
        return self.floor_activations > 0

    def summary(self) -> Dict[str, Any]:
        return {
            "steps": int(len(self.dt_trace)),
            "frames": int(len(self.u)),
            "final_time": float(self.u.times[-1]),
            "min_u": float(np.min(self.min_trace)) if len(self.min_trace) else float(np.min(self.u.values)),
            "max_u": float(np.max(self.max_trace)) if len(self.max_trace) else float(np.max(self.u.values)),
            "floor_activations": self.floor_activations,
        }


@dataclass
class EstimateReport:
    theorem: str
    times: np.ndarray
    rhs: np.ndarray
    breakdown: Dict[str, np.ndarray]
    lhs: Optional[np.ndarray] = None
    sample_points: Optional[np.ndarray] = None
    sample_times: Optional[np.ndarray] = None
    ratios: Optional[np.ndarray] = None
    sample_rhs: Optional[np.ndarray] = None
    c_star: Optional[float] = None
    c_fixed: Optional[float] = None
    passed: Optional[bool] = None
    argsup: Optional[Dict[str, Any]] = None

    def summary(self) -> Dict[str, Any]:
        return {
            "theorem": self.theorem,
            "c_star": self.c_star,
            "c_fixed": self.c_fixed,
            "passed": self.passed,
            "argsup": self.argsup,
            "samples": 0 if self.ratios is None else int(self.ratios.size),
            "rhs_min": float(np.min(self.rhs)) if self.rhs.size else None,
            "terms": {name: float(np.max(values)) for name, values in self.breakdown.items()},
        }


@dataclass
class ResidualReport:
    lemma: str
    levels: List[int] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)
    orders: List[float] = field(default_factory=list)
    slack_min: Optional[float] = None
    argmin: Optional[Dict[str, Any]] = None
    tolerance: Optional[float] = None
    passed: Optional[bool] = None
    extras: Dict[str, Any] = field(default_factory=dict)
    slack: Optional[np.ndarray] = None
    slack_points: Optional[np.ndarray] = None
    slack_times: Optional[np.ndarray] = None

    @property
    def order(self) -> Optional[float]:
        return self.orders[-1] if self.orders else None

    def summary(self) -> Dict[str, Any]:
        return {
            "lemma": self.lemma,
            "levels": self.levels,
            "residuals": self.residuals,
            "orders": self.orders,
            "slack_min": self.slack_min,
            "argmin": self.argmin,
            "tolerance": self.tolerance,
            "passed": self.passed,
            **self.extras,
        }


@dataclass
class SignReport:
    theorem: str
    beta: float
    samples: np.ndarray
    values: np.ndarray
    sign_min: float
    holds: bool
    equivalence_error: float
    nonlinearity_min: float

    def summary(self) -> Dict[str, Any]:
        return {
            "theorem": self.theorem,
            "beta": self.beta,
            "samples": int(self.samples.size),
            "sign_min": self.sign_min,
            "holds": self.holds,
            "equivalence_error": self.equivalence_error,
            "nonlinearity_min": self.nonlinearity_min,
        }


@dataclass
class AncientTrajectory:
    t: np.ndarray
    u: np.ndarray
    violation_time: Optional[float]
    bound: Optional[float]


@dataclass
class GrowthReport:
    theorem: str
    exponent: float
    radii: np.ndarray
    sup_values: np.ndarray
    quotients: np.ndarray
    limit_quotients: Dict[str, np.ndarray]
    slope: float
    passed: bool

    def summary(self) -> Dict[str, Any]:
        return {
            "theorem": self.theorem,
            "exponent": self.exponent,
            "quotients": [float(q) for q in self.quotients],
            "slope": self.slope,
            "passed": self.passed,
            "limit_quotients": {k: [float(x) for x in v] for k, v in self.limit_quotients.items()},
        }


@dataclass
class LiouvilleVerdict:
    theorem: str
    sign_min: float
    sign_holds: bool
    positivity_holds: bool
    violation_time: Optional[float]
    trajectory_t: np.ndarray
    trajectory_u: np.ndarray
    verdict: str
    notes: List[str] = field(default_factory=list)

    def summary(self) -> Dict[str, Any]:
        return {
            "theorem": self.theorem,
            "sign_min": self.sign_min,
            "sign_holds": self.sign_holds,
            "positivity_holds": self.positivity_holds,
            "violation_time": self.violation_time,
            "verdict": self.verdict,
            "notes": self.notes,
        }


@dataclass
class CheckResult:
    name: str
    kind: str
    passed: bool
    summary: Dict[str, Any]
    tables: Dict[str, Dict[str, list]] = field(default_factory=dict)
    series: Dict[str, Dict[str, list]] = field(default_factory=dict)


@dataclass
class RunManifest:
    scenario: str
    scenario_hash: str
    seed: int
    versions: Dict[str, str]
    verdicts: Dict[str, bool]
    timings: Dict[str, float]
    artifacts: List[str]

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario,
            "scenario_hash": self.scenario_hash,
            "seed": self.seed,
            "versions": self.versions,
            "verdicts": self.verdicts,
            "passed": self.passed,
            "timings": self.timings,
            "artifacts": self.artifacts,
        }


# API request/response models
class ValidateResponse(BaseModel):
    name: str
    valid: bool
    checks: int
    errors: List[str] = []


class RunResponse(BaseModel):
    scenario: str
    scenario_hash: str
    passed: bool
    verdicts: Dict[str, bool]
    artifacts: List[str]
    output_dir: str


class RunSummary(BaseModel):
    id: int
    scenario: str
    scenario_hash: str
    seed: int
    passed: bool
    checks: int
    output_dir: str
    created_at: str
