import json
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.lab import catalog
from app.lab.evolution import CUTOFF_PROFILES, IDENTITY_CASES
from app.lab.fields import FIELD_CASES, OPERATORS
from app.lab.errors import ConfigError, ExponentOutOfRange

ESTIMATE_THEOREMS = ("T2-local", "T2-global", "T2-static", "T6-local", "T6-global", "T6-static")
COROLLARY_TAGS = ("C10-general", "C10-kt")
LEMMA_KINDS = (
    "pressure-evolution",
    "w-evolution",
    "product-rule",
    "superflow-inequality",
    "optimized-w-general",
    "optimized-w-optimal",
    "H-identity",
    "H-inequality",
    "H-optimized",
    "H-optimum",
    "gamma-optimum",
    "omega-optimum",
    "matrix-lemma",
    "cutoff",
    "cutoff-composition",
    "maximum-point",
    "laplacian-comparison",
    "curvature",
    "bochner",
    "convergence",
    "barenblatt",
    "mass",
    "ode-reduction",
)
LIOUVILLE_THEOREMS = ("T2-ancient", "T6-ancient")
FIELD_KINDS = ("bochner", "convergence")
STEPPERS = ("rk2", "explicit-rk2", "rk4", "explicit-rk4")
RULE_TAG = re.compile(r"\[rule: ([\w-]+)\]")


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GeometrySection(Section):
    metric: str = "flat"
    metric_params: Dict[str, Any] = {}
    potential: str = "zero"
    potential_params: Dict[str, Any] = {}
    m: Union[float, Literal["inf"]] = "inf"
    extents: List[Tuple[float, float]] = [(0.0, 2 * np.pi)]
    periodic: List[bool] = [True]
    resolution: int = 64

    @field_validator("metric")
    @classmethod
    def known_metric(cls, v: str) -> str:
        return catalog.require_tag(v, sorted(catalog.METRICS), "metric")

    @field_validator("potential")
    @classmethod
    def known_potential(cls, v: str) -> str:
        return catalog.require_tag(v, catalog.POTENTIALS, "potential")

    @field_validator("resolution")
    @classmethod
    def fine_enough(cls, v: int) -> int:
        if v < 8:
            raise ValueError(f"resolution {v} below 8 [rule: chart-resolution]")
        return v

    @model_validator(mode="after")
    def consistent_axes(self) -> "GeometrySection":
        if len(self.extents) != len(self.periodic):
            raise ValueError("extents and periodic differ in length [rule: chart-shape]")
        if self.m_value < self.n:
            raise ValueError(f"m = {self.m} below n = {self.n} [rule: m-at-least-n]")
        return self

    @property
    def n(self) -> int:
        return len(self.extents)

    @property
    def m_value(self) -> float:
        return np.inf if self.m == "inf" else float(self.m)


class SolverSection(Section):
    p: float
    nonlinearity: str = "zero"
    nonlinearity_params: Dict[str, Any] = {}
    initial: str = "static-sine"
    initial_params: Dict[str, Any] = {}
    t_start: float = 0.0
    t_end: float = 0.5
    stepper: str = "rk4"
    safety: float = 0.4
    floor: float = 1e-10
    stride: int = 8
    form: Literal["divergence", "coefficient"] = "divergence"
    levels: List[int] = []

    @field_validator("p")
    @classmethod
    def slow_diffusion(cls, v: float) -> float:
        if not v > 1:
            raise ValueError(f"p = {v} outside p > 1 [rule: slow-diffusion]")
        return v

    @field_validator("nonlinearity")
    @classmethod
    def known_nonlinearity(cls, v: str) -> str:
        return catalog.require_tag(v, catalog.NONLINEARITIES, "nonlinearity")

    @field_validator("initial")
    @classmethod
    def known_profile(cls, v: str) -> str:
        return catalog.require_tag(v, catalog.PROFILES, "profile")

    @field_validator("stepper")
    @classmethod
    def known_stepper(cls, v: str) -> str:
        return catalog.require_tag(v.lower(), STEPPERS, "stepper")


class EstimateSection(Section):
    name: str
    theorem: str
    beta: Union[float, Literal["midpoint"]] = "midpoint"
    x0: List[float]
    t0: Optional[float] = None
    R: float
    T: float
    mode: Literal["calibrate", "fixed"] = "calibrate"
    C: Optional[float] = None
    k: Optional[float] = None
    h: Optional[float] = None
    golden: bool = False

    @field_validator("theorem")
    @classmethod
    def known_theorem(cls, v: str) -> str:
        if v not in ESTIMATE_THEOREMS:
            raise ValueError(f"unknown theorem '{v}' [rule: catalog-tag]")
        return v

    @model_validator(mode="after")
    def fixed_needs_c(self) -> "EstimateSection":
        if self.mode == "fixed" and self.C is None and not self.golden:
            raise ValueError("fixed mode needs C or a golden value [rule: c-mode]")
        if not (self.R > 0 and self.T > 0):
            raise ValueError("cylinder needs R > 0 and T > 0 [rule: cylinder]")
        return self


class CorollarySection(Section):
    name: str
    tag: str
    s: float = 2.0
    a: float = 0.0
    gamma: str = "zero"
    gamma_params: Dict[str, Any] = {}
    kappa: Union[float, Literal["auto"]] = 0.0

    @field_validator("tag")
    @classmethod
    def known_tag(cls, v: str) -> str:
        if v not in COROLLARY_TAGS:
            raise ValueError(f"unknown corollary '{v}' [rule: catalog-tag]")
        return v

    @field_validator("gamma")
    @classmethod
    def known_gamma(cls, v: str) -> str:
        return catalog.require_tag(v, catalog.GAMMA_AUX, "auxiliary gamma")

    @field_validator("s")
    @classmethod
    def s_at_least_two(cls, v: float) -> float:
        if v < 2:
            raise ValueError(f"s = {v} below 2 [rule: s-at-least-2]")
        return v


class LemmaSection(Section):
    """One lemma-level check; fields not used by ``kind`` keep their defaults"""

    name: str
    kind: str
    case: Optional[str] = None
    source: Literal["manufactured", "solver"] = "manufactured"
    beta: Optional[float] = None
    eps: Optional[float] = None
    s: float = 2.0
    q: Optional[float] = None
    zeta: str = "one"
    zeta_params: Dict[str, Any] = {}
    gamma: str = "zero"
    gamma_params: Dict[str, Any] = {}
    kappa: Union[float, Literal["auto"]] = 0.0
    x0: Optional[List[float]] = None
    R: Optional[float] = None
    T: Optional[float] = None
    t0: Optional[float] = None
    tau: Optional[float] = None
    a: float = 0.75
    profile: str = "exp-flat"
    pairs: int = 20
    dimensions: List[int] = [2, 3, 4]
    trials: int = 10_000
    steps: int = 200
    lattice: int = 100
    operator: Optional[str] = None
    levels: List[int] = []
    p: Optional[float] = None
    tolerance: Optional[float] = None

    @field_validator("kind")
    @classmethod
    def known_kind(cls, v: str) -> str:
        if v not in LEMMA_KINDS:
            raise ValueError(f"unknown lemma check '{v}' [rule: catalog-tag]")
        return v

    @field_validator("s")
    @classmethod
    def s_at_least_two(cls, v: float) -> float:
        if v < 2:
            raise ValueError(f"s = {v} below 2 [rule: s-at-least-2]")
        return v

    @field_validator("a")
    @classmethod
    def smoothing_exponent(cls, v: float) -> float:
        if not 0 < v < 1:
            raise ValueError(f"a = {v} outside (0, 1) [rule: cutoff]")
        return v

    @field_validator("zeta")
    @classmethod
    def known_time_weight(cls, v: str) -> str:
        return catalog.require_tag(v, catalog.TIME_WEIGHTS, "time weight")

    @field_validator("gamma")
    @classmethod
    def known_gamma(cls, v: str) -> str:
        return catalog.require_tag(v, catalog.GAMMA_AUX, "auxiliary gamma")

    @field_validator("profile")
    @classmethod
    def known_cutoff_profile(cls, v: str) -> str:
        return catalog.require_tag(v, CUTOFF_PROFILES, "cutoff profile")

    @field_validator("operator")
    @classmethod
    def known_operator(cls, v: Optional[str]) -> Optional[str]:
        return v if v is None else catalog.require_tag(v, OPERATORS, "operator")

    @model_validator(mode="after")
    def known_case(self) -> "LemmaSection":
        if self.case is not None:
            known = FIELD_CASES if self.kind in FIELD_KINDS else IDENTITY_CASES
            catalog.require_tag(self.case, list(known), "analytic case" if self.kind in FIELD_KINDS else "identity case")
        return self


class LiouvilleSection(Section):
    name: str
    theorem: str
    p: float
    m: float
    beta: Optional[float] = None
    nonlinearity: str = "constant"
    nonlinearity_params: Dict[str, Any] = {}
    u0: float = 1.0
    a: Optional[float] = None
    t_back: Optional[float] = None
    ladder: List[Tuple[float, float]] = []
    growth: Optional[Literal["log", "power", "constant"]] = None
    radii: List[float] = [10.0, 100.0, 1000.0, 10000.0]
    expect: Literal["no-ancient-solution", "hypotheses-not-met", "inconclusive"] = "no-ancient-solution"
    expect_growth: Optional[bool] = None

    @field_validator("theorem")
    @classmethod
    def known_theorem(cls, v: str) -> str:
        if v not in LIOUVILLE_THEOREMS:
            raise ValueError(f"unknown Liouville theorem '{v}' [rule: catalog-tag]")
        return v

    @field_validator("nonlinearity")
    @classmethod
    def known_nonlinearity(cls, v: str) -> str:
        return catalog.require_tag(v, catalog.NONLINEARITIES, "nonlinearity")

    @field_validator("m")
    @classmethod
    def finite_m(cls, v: float) -> float:
        if not np.isfinite(v) or v < 1:
            raise ValueError(f"m = {v} must be finite and at least 1 [rule: finite-m]")
        return v


class Scenario(Section):
    name: str
    description: str = ""
    seed: int = 0
    output_dir: Optional[str] = None
    golden_set: Optional[str] = None
    geometry: GeometrySection = Field(default_factory=GeometrySection)
    solver: Optional[SolverSection] = None
    estimates: List[EstimateSection] = []
    corollaries: List[CorollarySection] = []
    lemmas: List[LemmaSection] = []
    liouville: List[LiouvilleSection] = []
    tolerances: Dict[str, float] = {}

    @model_validator(mode="after")
    def solver_for_estimates(self) -> "Scenario":
        if (self.estimates or self.corollaries) and self.solver is None:
            raise ValueError("estimates and corollaries need a solver section [rule: solver-section]")
        solver_kinds = {"maximum-point", "mass", "ode-reduction"}
        for lemma in self.lemmas:
            if (lemma.kind in solver_kinds or lemma.source == "solver") and self.solver is None:
                raise ValueError(f"lemma check '{lemma.name}' needs a solver section [rule: solver-section]")
        names = [c.name for c in self.estimates + self.corollaries + self.lemmas + self.liouville]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValueError(f"duplicate check names {duplicates} [rule: unique-names]")
        return self

    @property
    def golden_name(self) -> str:
        """Golden file stem; a regression scenario can share the frozen values of another"""
        return self.golden_set or self.name

    @property
    def n_checks(self) -> int:
        return len(self.estimates) + len(self.corollaries) + len(self.lemmas) + len(self.liouville)


def check_ranges(scenario: Scenario) -> None:
    """Exponent rules enforced before any compute"""
    from app.lab.estimates import beta_admissible_range, corollary_limit, resolve_beta, t6_limit

    m = scenario.geometry.m_value
    for est in scenario.estimates:
        p = scenario.solver.p
        if est.theorem.startswith("T2"):
            resolve_beta(p, m, est.beta)
        elif not (1 < p < t6_limit(m)):
            raise ExponentOutOfRange(
                f"{est.name}: p = {p} outside (1, 1 + 1/sqrt(m-1)) for m = {m}", rule="t6-exponent-range"
            )
    for cor in scenario.corollaries:
        if not np.isfinite(m):
            raise ExponentOutOfRange(f"{cor.name}: closed-manifold bounds need a finite m", rule="c10-exponent-range")
        s = cor.s if cor.tag == "C10-general" else 2.0
        limit = corollary_limit(s, m)
        if not (1 < scenario.solver.p <= limit):
            raise ExponentOutOfRange(f"{cor.name}: p = {scenario.solver.p} above {limit:.12g}", rule="c10-exponent-range")
    for case in scenario.liouville:
        if case.theorem == "T2-ancient":
            span = beta_admissible_range(case.p, case.m)
            if case.beta is None or not span.contains(case.beta):
                raise ExponentOutOfRange(f"{case.name}: beta = {case.beta} outside the admissible interval", rule="beta-interval")
        elif not (1 < case.p < t6_limit(case.m)):
            raise ExponentOutOfRange(f"{case.name}: p = {case.p} outside (1, 1 + 1/sqrt(m-1))", rule="t6-exponent-range")


def _field_path(error: Dict[str, Any]) -> str:
    return ".".join(str(part) for part in error.get("loc", ())) or "<root>"


def _first_rule(errors: List[Dict[str, Any]]) -> str:
    for err in errors:
        match = RULE_TAG.search(err["msg"])
        if match:
            return match.group(1)
    return "schema"


def parse_scenario(data: Dict[str, Any]) -> Scenario:
    try:
        scenario = Scenario.model_validate(data)
    except ValidationError as e:
        errors = e.errors()
        details = "; ".join(f"{_field_path(err)}: {err['msg']}" for err in errors)
        raise ConfigError(f"invalid scenario: {details}", rule=_first_rule(errors)) from e
    check_ranges(scenario)
    return scenario


def load_scenario(path: Union[str, Path]) -> Tuple[Scenario, str]:
    """Parsed scenario plus the raw text it came from"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file {path} not found", rule="scenario-file")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}", rule="json") from e
    return parse_scenario(data), text
