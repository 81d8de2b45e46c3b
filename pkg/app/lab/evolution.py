"""
Evolution checks for the pressure v, the gradient quantity w = |grad v|^2 / v^beta
and the functional H = zeta |grad v|^s / v^q + Gamma(v).

Identities are checked as residuals under grid refinement, inequalities as
scale-relative slack fields. The module also carries the space-time cutoff,
the maximum-point replay, the weighted Laplacian comparison, the matrix
variational bound and the closed-form optima of the two quadratic forms.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy
from joblib import Parallel, delayed
from scipy.optimize import minimize

from app.lab import catalog
from app.lab.catalog import GammaAux, TimeWeight
from app.lab.errors import (
    BadWindow,
    ConfigError,
    DegenerateDimension,
    EmptyCylinder,
    HypothesisViolated,
    NonPositiveV,
    UnknownCase,
)
from app.lab.estimates import EstimateContext, corollary_limit, sigma_from_nonlinearity, superflow_margin, t6_limit
from app.lab.fields import (
    FieldCase,
    differential,
    form_on,
    hessian_values,
    laplacian_values,
    observed_orders,
    pairing,
)
from app.lab.geometry import GeometryContext, Region, certify_lower_bounds, model_for
from app.lab.solver import ManufacturedCase, NonlinearitySpec, time_derivative
from app.models.models import ResidualReport, ScalarField, SpaceTimeField

logger = logging.getLogger(__name__)

IDENTITY_FLOOR = 1.9
COMPOSED_FLOOR = 1.5
EXACT_RESIDUAL = 1e-10
SLACK_TOL = 1e-6
SUPERFLOW_TOL = 1e-9

LEMMAS = (
    "pressure-evolution",
    "w-evolution",
    "superflow-inequality",
    "product-rule",
    "optimized-w-general",
    "optimized-w-optimal",
    "H-identity",
    "H-inequality",
    "H-optimized",
    "H-optimum",
    "gamma-optimum",
    "matrix-lemma",
    "cutoff",
    "cutoff-composition",
    "maximum-point",
    "laplacian-comparison",
)


# ---------------------------------------------------------------------------
# pressure jets
# ---------------------------------------------------------------------------


class PressureJet:
    """Pressure v at one time with v_t, Sigma, Sigma_x and Sigma_v on one grid"""

    def __init__(
        self,
        ctx: GeometryContext,
        t: float,
        p: float,
        v: np.ndarray,
        v_t: np.ndarray,
        sigma: np.ndarray,
        sigma_x: np.ndarray,
        sigma_v: np.ndarray,
    ):
        low = float(np.min(v))
        if not low > 0:
            raise NonPositiveV(f"pressure reaches {low:.3g} at t={t:.6g}")
        self.ctx = ctx
        self.grid = ctx.on_grid(t)
        self.t = float(t)
        self.p = p
        self.v = v
        self.v_t = v_t
        self.sigma = sigma
        self.sigma_x = sigma_x
        self.sigma_v = sigma_v

    @classmethod
    def manufactured(cls, case: ManufacturedCase, t: float) -> "PressureJet":
        points = case.ctx.chart.points
        return cls(
            case.ctx,
            t,
            case.p,
            case.v(points, t),
            case.v_t(points, t),
            case.sigma(points, t),
            case.sigma_x(points, t),
            np.zeros(case.ctx.chart.shape),
        )

    @classmethod
    def from_frames(cls, ctx: GeometryContext, v: SpaceTimeField, spec: NonlinearitySpec, p: float) -> List["PressureJet"]:
        """Jets for every stored frame of a solver run; v_t by fourth-order time differences"""
        dt = float(v.times[1] - v.times[0]) if len(v.times) > 1 else 0.0
        v_t = time_derivative(v.values, dt)
        jets = []
        for k, t in enumerate(v.times):
            sigma, sigma_x, sigma_v = sigma_from_nonlinearity(spec, p, float(t), ctx.chart.points, v.values[k])
            jets.append(cls(ctx, float(t), p, v.values[k], v_t[k], sigma, sigma_x, sigma_v))
        return jets

    @property
    def m(self) -> float:
        return self.ctx.m

    @cached_property
    def dv(self) -> np.ndarray:
        return differential(self.grid, self.v)

    @cached_property
    def grad_sq(self) -> np.ndarray:
        return np.maximum(pairing(self.grid, self.dv, self.dv), 0.0)

    @cached_property
    def lap(self) -> np.ndarray:
        return laplacian_values(self.grid, self.v)

    @cached_property
    def hess_sq(self) -> np.ndarray:
        return hessian_values(self.grid, self.v)[1]

    @cached_property
    def dimension_term(self) -> np.ndarray:
        """<grad f, grad v>^2 / (m - n), zero for m = infinity"""
        m, n = self.ctx.m, self.ctx.n
        if np.isinf(m):
            return np.zeros_like(self.v)
        if m == n:
            if np.max(np.abs(self.grid.df)) > 1e-10:
                raise DegenerateDimension("m = n needs a spatially constant potential")
            return np.zeros_like(self.v)
        return pairing(self.grid, self.grid.df, self.dv) ** 2 / (m - n)

    @cached_property
    def flow_form(self) -> np.ndarray:
        """[1/2 dg/dt + (p-1) v Ric_f^m](grad v, grad v)"""
        tensor = 0.5 * self.grid.dt_g + (self.p - 1) * self.v[..., None, None] * self.grid.ric_fm
        return form_on(self.grid, tensor, self.dv)

    @cached_property
    def grad_sq_t(self) -> np.ndarray:
        """d/dt |grad v|^2 = 2 <grad v, grad v_t> - (dg/dt)(grad v, grad v)"""
        return 2 * pairing(self.grid, self.dv, differential(self.grid, self.v_t)) - form_on(
            self.grid, self.grid.dt_g, self.dv
        )

    @cached_property
    def grad_sigma(self) -> np.ndarray:
        """Total spatial differential of Sigma(t, x, v(x, t))"""
        return self.sigma_x + self.sigma_v[..., None] * self.dv

    @cached_property
    def cross_sigma_x(self) -> np.ndarray:
        return pairing(self.grid, self.dv, self.sigma_x)

    def pair(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return pairing(self.grid, differential(self.grid, a), differential(self.grid, b))

    def pair_v(self, values: np.ndarray) -> np.ndarray:
        return pairing(self.grid, self.dv, differential(self.grid, values))

    def L(self, values: np.ndarray, values_t: np.ndarray) -> np.ndarray:
        """(d/dt - (p-1) v Delta_f) applied to a field given with its time derivative"""
        return values_t - (self.p - 1) * self.v * laplacian_values(self.grid, values)

    def margin(self, kappa: float) -> np.ndarray:
        return superflow_margin(self.ctx, ScalarField(self.ctx.chart, self.v, self.t), self.p, kappa).values


# ---------------------------------------------------------------------------
# manufactured identity cases
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityCase:
    geometry: FieldCase
    p: float = 2.0
    beta: float = 0.0
    eps: float = 0.0
    s: float = 2.0
    q: Optional[float] = None
    zeta: str = "one"
    zeta_params: Dict[str, Any] = field(default_factory=dict)
    gamma: str = "zero"
    gamma_params: Dict[str, Any] = field(default_factory=dict)
    kappa: float = 0.0
    times: Tuple[float, ...] = (0.0, 0.5)
    levels: Tuple[int, ...] = (64, 128, 256)
    u_profile: Optional[str] = None
    u_params: Dict[str, Any] = field(default_factory=dict)
    w_profile: Optional[str] = None
    w_params: Dict[str, Any] = field(default_factory=dict)

    @property
    def m(self) -> float:
        return self.geometry.m

    def manufactured(self, resolution: int) -> ManufacturedCase:
        ctx = self.geometry.context(resolution)
        return ManufacturedCase(ctx, self.geometry.profile_expr(), self.p, self.geometry.profile)

    def jets(self, resolution: int) -> List[PressureJet]:
        case = self.manufactured(resolution)
        case.check_positive(self.times)
        return [PressureJet.manufactured(case, t) for t in self.times]

    def h_params(self) -> "HParams":
        return HParams(
            s=self.s,
            q=self.beta if self.q is None else self.q,
            eps=self.eps,
            zeta=catalog.time_weight(self.zeta, self.zeta_params),
            gamma=catalog.gamma_aux(self.gamma, self.p, self.gamma_params),
            kappa=self.kappa,
        )

    def with_changes(self, **changes) -> "IdentityCase":
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return IdentityCase(**values)


TWO_PI = 2 * np.pi
_TORUS_1D = ((0.0, TWO_PI),)
_TORUS_2D = ((0.0, TWO_PI), (0.0, TWO_PI))

IDENTITY_CASES: Dict[str, IdentityCase] = {
    "constant": IdentityCase(FieldCase("flat", "constant", _TORUS_1D, (True,), m=2.0, profile_params={"value": 2.0})),
    "exp-time": IdentityCase(
        FieldCase("flat", "exp-time", _TORUS_1D, (True,), m=2.0, profile_params={"scale": 2.0, "rate": -0.5})
    ),
    "decay-sine": IdentityCase(FieldCase("flat", "decay-sine", _TORUS_1D, (True,), m=2.0), beta=-1.0),
    "static-sine": IdentityCase(
        FieldCase("flat", "static-sine", _TORUS_1D, (True,), m=2.0, profile_params={"amp": 0.5}), beta=-1.0
    ),
    "weighted-sine": IdentityCase(
        FieldCase(
            "flat",
            "sine-product",
            _TORUS_2D,
            (True, True),
            potential="sine",
            m=3.0,
            potential_params={"amplitude": 0.3},
            profile_params={"amp": 0.5},
        ),
        p=1.5,
        beta=-0.5,
        levels=(32, 64, 128),
    ),
    "sphere": IdentityCase(
        FieldCase(
            "round-sphere",
            "static-cosine",
            ((0.1, np.pi - 0.1), (0.0, TWO_PI)),
            (False, True),
            m=2.0,
        ),
        beta=-1.0,
        times=(0.0,),
        levels=(32, 64, 128),
    ),
    "product": IdentityCase(
        FieldCase("flat", "constant", _TORUS_1D, (True,), m=2.0, profile_params={"value": 3.0}),
        u_profile="static-sine",
        w_profile="static-cosine",
    ),
}


def identity_case(tag: str, **overrides) -> IdentityCase:
    if tag not in IDENTITY_CASES:
        raise UnknownCase(f"unknown identity case '{tag}'; known: {', '.join(IDENTITY_CASES)}")
    case = IDENTITY_CASES[tag]
    return case.with_changes(**overrides) if overrides else case


JetSource = Union[IdentityCase, Sequence[PressureJet]]


def _jets(source: JetSource) -> List[PressureJet]:
    if isinstance(source, IdentityCase):
        return source.jets(source.levels[-1])
    jets = list(source)
    if not jets:
        raise EmptyCylinder("no pressure frames to check")
    return jets


def _require_finite_m(m: float, what: str) -> None:
    if np.isinf(m):
        raise ConfigError(f"{what} needs a finite m", rule="finite-m")


# ---------------------------------------------------------------------------
# report helpers
# ---------------------------------------------------------------------------


def _refinement(
    lemma: str,
    case: IdentityCase,
    assemble: Callable[[PressureJet], Tuple[np.ndarray, np.ndarray]],
    floor: float,
) -> ResidualReport:
    residuals = []
    for level in case.levels:
        worst = 0.0
        for jet in case.jets(level):
            lhs, rhs = assemble(jet)
            interior = jet.ctx.chart.interior
            worst = max(worst, float(np.max(np.abs(lhs - rhs)[interior])))
        residuals.append(worst)
    orders = observed_orders(residuals, list(case.levels))
    exact = residuals[-1] <= EXACT_RESIDUAL
    passed = exact or bool(orders and orders[-1] >= floor)
    logger.info("%s: residuals %s orders %s (%s)", lemma, residuals, orders, "pass" if passed else "fail")
    return ResidualReport(
        lemma=lemma,
        levels=list(case.levels),
        residuals=residuals,
        orders=orders,
        tolerance=floor,
        passed=passed,
        extras={"exact": exact, "order_floor": floor},
    )


def _slack_report(
    lemma: str,
    jets: Sequence[PressureJet],
    assemble: Callable[[PressureJet], Tuple[np.ndarray, np.ndarray]],
    tolerance: float,
    extras: Optional[Dict[str, Any]] = None,
) -> ResidualReport:
    """Slack = RHS - LHS, judged relative to max(|LHS|, |RHS|, 1) on interior samples"""
    slacks, worst = [], None
    for jet in jets:
        lhs, rhs = assemble(jet)
        slack = rhs - lhs
        scale = np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
        relative = np.where(jet.ctx.chart.interior, slack / scale, np.inf)
        index = np.unravel_index(int(np.argmin(relative)), relative.shape)
        if worst is None or relative[index] < worst[0]:
            worst = (float(relative[index]), float(slack[index]), jet, index)
        slacks.append(slack)
    relative_min, slack_min, jet, index = worst
    passed = relative_min >= -tolerance
    if not passed:
        logger.warning("%s: slack %.3e below tolerance at t=%.6g", lemma, relative_min, jet.t)
    else:
        logger.info("%s: min relative slack %.3e", lemma, relative_min)
    return ResidualReport(
        lemma=lemma,
        slack_min=slack_min,
        argmin={"t": jet.t, "x": [float(c) for c in jet.ctx.chart.points[index]]},
        tolerance=tolerance,
        passed=passed,
        extras={"relative_slack_min": relative_min, **(extras or {})},
        slack=np.stack(slacks),
        slack_points=jets[0].ctx.chart.points,
        slack_times=np.array([j.t for j in jets]),
    )


def require_superflow(jets: Sequence[PressureJet], kappa: float) -> float:
    """Smallest super-flow margin over the jets; raises when the inequality fails"""
    lowest = np.inf
    for jet in jets:
        margin = jet.margin(kappa)
        interior = jet.ctx.chart.interior
        index = np.unravel_index(int(np.argmin(np.where(interior, margin, np.inf))), margin.shape)
        if margin[index] < -SUPERFLOW_TOL * max(1.0, abs(kappa)):
            x = [float(c) for c in jet.ctx.chart.points[index]]
            raise HypothesisViolated(
                f"super-flow inequality fails with kappa={kappa}: margin {margin[index]:.3g} at x={x}, t={jet.t:.6g}",
                rule="superflow",
                x=x,
                t=jet.t,
            )
        lowest = min(lowest, float(margin[index]))
    return lowest


# ---------------------------------------------------------------------------
# pressure, w and product-rule identities
# ---------------------------------------------------------------------------


def pressure_terms(jet: PressureJet) -> Tuple[np.ndarray, np.ndarray]:
    lhs = jet.v_t - (jet.p - 1) * jet.v * jet.lap
    return lhs, jet.grad_sq + jet.sigma


def check_pressure_evolution(case: IdentityCase) -> ResidualReport:
    return _refinement("pressure-evolution", case, pressure_terms, IDENTITY_FLOOR)


def w_parts(jet: PressureJet, beta: float) -> Tuple[np.ndarray, np.ndarray]:
    """w and its time derivative"""
    v, G = jet.v, jet.grad_sq
    w = G / v**beta
    w_t = jet.grad_sq_t / v**beta - beta * G * jet.v_t / v ** (beta + 1)
    return w, w_t


def w_identity_terms(jet: PressureJet, beta: float, eps: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """L[w] - eps <grad v, grad w> and the right-hand side of its exact evolution"""
    p, v, G = jet.p, jet.v, jet.grad_sq
    w, w_t = w_parts(jet, beta)
    vb = v**beta
    lhs = jet.L(w, w_t) - eps * jet.pair_v(w)
    cross_G = jet.pair_v(G)
    rhs = (
        -2 * jet.flow_form / vb
        + 2 * (p - 1) / vb * (G * jet.lap - v * jet.hess_sq - v * jet.dimension_term)
        + 2 * (1 + beta * (p - 1)) * cross_G / vb
        - beta * G * jet.sigma / (vb * v)
        - beta * (1 + (p - 1) * (beta + 1)) * G**2 / (vb * v)
        + 2 * pairing(jet.grid, jet.dv, jet.grad_sigma) / vb
    )
    rhs = rhs - eps * (cross_G / vb - beta * G**2 / (vb * v))
    return lhs, rhs


def check_w_evolution(case: IdentityCase, beta: Optional[float] = None, eps: Optional[float] = None) -> ResidualReport:
    beta = case.beta if beta is None else beta
    eps = case.eps if eps is None else eps
    return _refinement("w-evolution", case, lambda jet: w_identity_terms(jet, beta, eps), COMPOSED_FLOOR)


def _closed_form_pair(expr: sympy.Expr, n: int) -> Tuple[Callable, Callable]:
    return catalog.compile_scalar(expr, n), catalog.compile_scalar(sympy.diff(expr, catalog.TIME), n)


def check_product_rule(case: IdentityCase) -> ResidualReport:
    """u L[uw] = uw L[u] - 2(p-1) v [<grad u, grad(uw)> - |grad u|^2 w] + u^2 L[w]"""
    if case.u_profile is None or case.w_profile is None:
        raise ConfigError("product rule needs both u and w profiles", rule="product-fields")
    n = len(case.geometry.extents)
    u_fn, u_t_fn = _closed_form_pair(catalog.profile_expression(case.u_profile, n, case.u_params), n)
    w_fn, w_t_fn = _closed_form_pair(catalog.profile_expression(case.w_profile, n, case.w_params), n)

    def assemble(jet: PressureJet) -> Tuple[np.ndarray, np.ndarray]:
        points = jet.ctx.chart.points
        u, u_t = u_fn(points, jet.t), u_t_fn(points, jet.t)
        w, w_t = w_fn(points, jet.t), w_t_fn(points, jet.t)
        uw = u * w
        lhs = u * jet.L(uw, u_t * w + u * w_t)
        grad_u_sq = jet.pair(u, u)
        rhs = uw * jet.L(u, u_t) - 2 * (jet.p - 1) * jet.v * (jet.pair(u, uw) - grad_u_sq * w) + u**2 * jet.L(w, w_t)
        return lhs, rhs

    return _refinement("product-rule", case, assemble, IDENTITY_FLOOR)


# ---------------------------------------------------------------------------
# quadratic forms and their optima
# ---------------------------------------------------------------------------


def gamma_quadratic(beta: float, eps: float, p: float, m: float) -> float:
    a = p - 1
    return (eps - 2 * (1 + a * beta) - a) ** 2 + (m - 1) * a**2 - 2 * a * beta * (1 + a * (beta + 1) - eps)


def gamma_optimum(p: float, m: float) -> Tuple[float, float, float]:
    """(beta*, eps*, Gamma*) = (-1/(p-1), p, (m-1)(p-1)^2 - 1)"""
    return -1.0 / (p - 1), float(p), (m - 1) * (p - 1) ** 2 - 1.0


def omega_quadratic(q: float, eps: float, s: float, p: float, m: float) -> float:
    a = p - 1
    return (eps - 2 * (q * a + 1) - a) ** 2 + a**2 * (m - 1) - 4 * a / s * q * (q * a + p - eps)


def omega_optimum(s: float, p: float, m: float) -> Tuple[float, float, float]:
    """(q*, eps*, Omega*) = (-s/[2(s-1)(p-1)], p, -1/(s-1) + (p-1)^2 (m-1))"""
    return -s / (2 * (s - 1) * (p - 1)), float(p), -1.0 / (s - 1) + (p - 1) ** 2 * (m - 1)


def numeric_minimum(fun: Callable[[np.ndarray], float]) -> Tuple[np.ndarray, float]:
    result = minimize(fun, x0=np.zeros(2), method="BFGS", options={"gtol": 1e-10, "maxiter": 500})
    return result.x, float(result.fun)


def default_lattice(kind: str, size: int = 100, seed: int = 0) -> List[Tuple[float, ...]]:
    rng = np.random.default_rng(seed)
    p = rng.uniform(1.02, 2.5, size)
    m = rng.uniform(1.0, 6.0, size)
    if kind == "gamma":
        return [(float(a), float(b)) for a, b in zip(p, m)]
    s = rng.uniform(2.0, 5.0, size)
    return [(float(c), float(a), float(b)) for c, a, b in zip(s, p, m)]


def optimum_lattice(kind: str, points: Optional[Sequence[Tuple[float, ...]]] = None, tolerance: float = 1e-9) -> ResidualReport:
    """Closed-form optimum against scipy minimisation, plus the sign/threshold equivalence"""
    if kind not in ("gamma", "omega"):
        raise UnknownCase(f"unknown quadratic '{kind}'")
    points = list(points) if points is not None else default_lattice(kind)
    worst, mismatches = 0.0, []
    for point in points:
        if kind == "gamma":
            p, m = point
            _, _, closed = gamma_optimum(p, m)
            _, numeric = numeric_minimum(lambda x: gamma_quadratic(x[0], x[1], p, m))
            sign_ok = (closed < 0) == (p < t6_limit(m))
        else:
            s, p, m = point
            _, _, closed = omega_optimum(s, p, m)
            _, numeric = numeric_minimum(lambda x: omega_quadratic(x[0], x[1], s, p, m))
            sign_ok = (closed <= 0) == (p <= corollary_limit(s, m))
        worst = max(worst, abs(numeric - closed))
        if not sign_ok:
            mismatches.append(list(point))
    passed = worst <= tolerance and not mismatches
    logger.info("%s optimum over %d points: max gap %.3e, %d sign mismatches", kind, len(points), worst, len(mismatches))
    return ResidualReport(
        lemma=f"{kind}-optimum",
        residuals=[worst],
        tolerance=tolerance,
        passed=passed,
        extras={"points": len(points), "sign_mismatches": mismatches},
    )


# ---------------------------------------------------------------------------
# inequalities for w
# ---------------------------------------------------------------------------


def superflow_terms(jet: PressureJet, beta: float, kappa: float) -> Tuple[np.ndarray, np.ndarray]:
    p, v, m = jet.p, jet.v, jet.m
    w, w_t = w_parts(jet, beta)
    lhs = jet.L(w, w_t)
    coefficient = (p - 1) * (beta**2 - (p - 2) / (p - 1) * beta + m / 2)
    rhs = (
        2 * kappa * w
        + 2 * (1 + beta * (p - 1)) * jet.pair_v(w)
        + coefficient * v ** (beta - 1) * w**2
        + 2 * jet.cross_sigma_x / v**beta
        + (2 * jet.sigma_v - beta * jet.sigma / v) * w
    )
    return lhs, rhs


def check_superflow_inequality(
    source: JetSource, kappa: float, beta: Optional[float] = None, tolerance: float = SLACK_TOL
) -> ResidualReport:
    jets = _jets(source)
    if beta is None:
        if not isinstance(source, IdentityCase):
            raise ConfigError("beta is required for solver frames", rule="beta-interval")
        beta = source.beta
    _require_finite_m(jets[0].m, "the super-flow inequality for w")
    margin = require_superflow(jets, kappa)
    return _slack_report(
        "superflow-inequality",
        jets,
        lambda jet: superflow_terms(jet, beta, kappa),
        tolerance,
        {"kappa": kappa, "beta": beta, "superflow_margin_min": margin},
    )


def optimized_w_terms(jet: PressureJet, beta: float, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """The eps-shifted inequality, valid for any beta and eps without a flow hypothesis"""
    p, v, m = jet.p, jet.v, jet.m
    w, w_t = w_parts(jet, beta)
    vb = v**beta
    lhs = jet.L(w, w_t) - eps * jet.pair_v(w)
    rhs = (
        gamma_quadratic(beta, eps, p, m) / (2 * (p - 1)) * v ** (beta - 1) * w**2
        - 2 * jet.flow_form / vb
        + 2 * jet.cross_sigma_x / vb
        + (2 * jet.sigma_v - beta * jet.sigma / v) * w
    )
    return lhs, rhs


def optimal_w_terms(jet: PressureJet, kappa: float) -> Tuple[np.ndarray, np.ndarray]:
    """The same inequality at beta = -1/(p-1), eps = p with the super-flow substitution"""
    p, v, m = jet.p, jet.v, jet.m
    beta, eps, value = gamma_optimum(p, m)
    w, w_t = w_parts(jet, beta)
    lhs = jet.L(w, w_t) - eps * jet.pair_v(w)
    rhs = (
        value / (2 * (p - 1)) * w**2 / v ** (p / (p - 1))
        + 2 * kappa * w
        + 2 * v ** (1 / (p - 1)) * jet.cross_sigma_x
        + (2 * jet.sigma_v + jet.sigma / ((p - 1) * v)) * w
    )
    return lhs, rhs


def check_optimized_w_inequality(
    source: JetSource,
    kappa: float = 0.0,
    mode: str = "optimal",
    beta: Optional[float] = None,
    eps: Optional[float] = None,
    tolerance: float = SLACK_TOL,
) -> ResidualReport:
    jets = _jets(source)
    _require_finite_m(jets[0].m, "the optimized w inequality")
    p, m = jets[0].p, jets[0].m
    if mode == "general":
        if isinstance(source, IdentityCase):
            beta = source.beta if beta is None else beta
            eps = source.eps if eps is None else eps
        if beta is None or eps is None:
            raise ConfigError("the general mode needs beta and eps", rule="beta-interval")
        return _slack_report(
            "optimized-w-general",
            jets,
            lambda jet: optimized_w_terms(jet, beta, eps),
            tolerance,
            {"beta": beta, "eps": eps, "gamma": gamma_quadratic(beta, eps, p, m)},
        )
    if mode != "optimal":
        raise UnknownCase(f"unknown mode '{mode}' for the optimized w inequality")
    margin = require_superflow(jets, kappa)
    beta_star, eps_star, value = gamma_optimum(p, m)
    gap = 0.0
    for jet in jets:
        general = optimized_w_terms(jet, beta_star, eps_star)
        optimal = optimal_w_terms(jet, kappa)
        difference = (general[1] - general[0]) - (optimal[1] - optimal[0])
        scale = np.maximum(1.0, np.abs(optimal[1]))
        gap = max(gap, float(np.max((difference / scale)[jet.ctx.chart.interior])))
    return _slack_report(
        "optimized-w-optimal",
        jets,
        lambda jet: optimal_w_terms(jet, kappa),
        tolerance,
        {
            "kappa": kappa,
            "gamma_star": value,
            "beta_star": beta_star,
            "superflow_margin_min": margin,
            "general_minus_optimal_max": gap,
        },
    )


# ---------------------------------------------------------------------------
# the H functional
# ---------------------------------------------------------------------------


@dataclass
class HParams:
    s: float = 2.0
    q: float = 0.0
    eps: float = 0.0
    zeta: TimeWeight = field(default_factory=lambda: catalog.time_weight("one"))
    gamma: GammaAux = field(default_factory=lambda: catalog.gamma_aux("zero", 2.0))
    kappa: float = 0.0

    def __post_init__(self):
        if self.s < 2:
            raise ConfigError(f"s = {self.s} below 2", rule="s-at-least-2")


def h_functional_terms(jet: PressureJet, params: HParams) -> Dict[str, np.ndarray]:
    """LHS L[H] - eps <grad v, grad H> with the exact right-hand side and the flow bound"""
    p, v, m, t = jet.p, jet.v, jet.m, jet.t
    s, q, eps, kappa = params.s, params.q, params.eps, params.kappa
    G = jet.grad_sq
    z, dz = float(params.zeta(t)), float(params.zeta.derivative(t))
    top = G ** (s / 2)
    lower = np.ones_like(G) if s == 2 else G ** ((s - 2) / 2)
    vq = v**q
    g0, g1, g2 = params.gamma.value(v), params.gamma.d1(v), params.gamma.d2(v)

    H = z * top / vq + g0
    H_t = dz * top / vq + z * ((s / 2) * lower * jet.grad_sq_t / vq - q * top * jet.v_t / (vq * v)) + g1 * jet.v_t
    lhs = jet.L(H, H_t) - eps * jet.pair_v(H)

    bracket = (
        s * (p - 1) * (G * jet.lap - v * jet.hess_sq - v * jet.dimension_term)
        + s * (q * (p - 1) + 1 - eps / 2) * jet.pair_v(G)
        - q * (q * (p - 1) + p - eps) * G**2 / v
    )
    lower_coupling = np.zeros_like(G) if s == 2 else jet.pair(lower, G)
    tail = -(p - 1) * v * g2 * G + g1 * ((1 - eps) * G + jet.sigma)
    identity = (
        dz * top / vq
        - s * z * lower / vq * jet.flow_form
        + z * lower / vq * bracket
        - z * s * (p - 1) / 2 * v ** (1 - q) * lower_coupling
        + s * z * lower / vq * pairing(jet.grid, jet.dv, jet.grad_sigma)
        - q * z * top / vq * jet.sigma / v
        + tail
    )
    inequality = None
    if np.isfinite(m):
        inequality = (
            (dz + s * kappa * z + z * (s * jet.sigma_v - q * jet.sigma / v)) * top / vq
            + s * z / (4 * (p - 1)) * omega_quadratic(q, eps, s, p, m) * G ** ((s + 2) / 2) / (vq * v)
            + s * z * lower / vq * jet.cross_sigma_x
            + tail
        )
    return {"lhs": lhs, "identity": identity, "inequality": inequality}


def optimized_h_terms(jet: PressureJet, params: HParams) -> Tuple[np.ndarray, np.ndarray]:
    """H with q = q*, eps = p and the printed optimized bound"""
    p, v, m, t, s, kappa = jet.p, jet.v, jet.m, jet.t, params.s, params.kappa
    q_star, eps_star, _ = omega_optimum(s, p, m)
    terms = h_functional_terms(jet, HParams(s, q_star, eps_star, params.zeta, params.gamma, kappa))
    G = jet.grad_sq
    z, dz = float(params.zeta(t)), float(params.zeta.derivative(t))
    e = s / (2 * (s - 1) * (p - 1))
    lower = np.ones_like(G) if s == 2 else G ** ((s - 2) / 2)
    g1, g2 = params.gamma.d1(v), params.gamma.d2(v)
    rhs = (
        (dz + s * kappa * z + s * z * (jet.sigma_v + jet.sigma / v / (2 * (s - 1) * (p - 1)))) * v**e * G ** (s / 2)
        + s * z * ((s - 1) * (m - 1) * (p - 1) ** 2 - 1) / (4 * (s - 1) * (p - 1)) * v ** (e - 1) * G ** ((s + 2) / 2)
        + s * z * jet.cross_sigma_x * v**e * lower
        + g1 * jet.sigma
        - (p - 1) * (g1 + v * g2) * G
    )
    return terms["lhs"], rhs


def _h_sides(params: HParams, key: str) -> Callable[[PressureJet], Tuple[np.ndarray, np.ndarray]]:
    def assemble(jet: PressureJet) -> Tuple[np.ndarray, np.ndarray]:
        terms = h_functional_terms(jet, params)
        return terms["lhs"], terms[key]

    return assemble


def check_H_functional(
    source: Optional[JetSource],
    mode: str = "identity",
    params: Optional[HParams] = None,
    p: Optional[float] = None,
    m: Optional[float] = None,
    tolerance: float = SLACK_TOL,
) -> ResidualReport:
    if params is None:
        params = source.h_params() if isinstance(source, IdentityCase) else HParams()
    if mode == "optimum":
        if isinstance(source, IdentityCase):
            p, m = source.p, source.m
        if p is None or m is None:
            raise ConfigError("the optimum mode needs p and m", rule="h-optimum")
        _require_finite_m(m, "the H optimum")
        q_star, eps_star, closed = omega_optimum(params.s, p, m)
        direct = omega_quadratic(q_star, eps_star, params.s, p, m)
        _, numeric = numeric_minimum(lambda x: omega_quadratic(x[0], x[1], params.s, p, m))
        gaps = [abs(direct - closed), abs(numeric - closed)]
        return ResidualReport(
            lemma="H-optimum",
            residuals=gaps,
            tolerance=1e-9,
            passed=gaps[0] <= 1e-12 and gaps[1] <= 1e-9,
            extras={"q_star": q_star, "eps_star": eps_star, "omega_star": closed, "numeric": numeric},
        )
    if mode == "identity":
        if not isinstance(source, IdentityCase):
            raise ConfigError("the identity mode refines a manufactured case", rule="identity-case")
        return _refinement(
            "H-identity",
            source,
            _h_sides(params, "identity"),
            COMPOSED_FLOOR,
        )
    jets = _jets(source)
    _require_finite_m(jets[0].m, "the H inequality")
    margin = require_superflow(jets, params.kappa)
    if mode == "inequality":
        return _slack_report(
            "H-inequality",
            jets,
            _h_sides(params, "inequality"),
            tolerance,
            {"s": params.s, "q": params.q, "eps": params.eps, "superflow_margin_min": margin},
        )
    if mode == "optimized":
        q_star, _, omega_star = omega_optimum(params.s, jets[0].p, jets[0].m)
        return _slack_report(
            "H-optimized",
            jets,
            lambda jet: optimized_h_terms(jet, params),
            tolerance,
            {"s": params.s, "q_star": q_star, "omega_star": omega_star, "superflow_margin_min": margin},
        )
    raise UnknownCase(f"unknown H-functional mode '{mode}'")


# ---------------------------------------------------------------------------
# matrix variational bound
# ---------------------------------------------------------------------------


def _ascend(a: float, b: float, n: int, trials: int, steps: int, seed: np.random.SeedSequence) -> float:
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((trials, n, n))
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    A /= np.linalg.norm(A, axis=(1, 2), keepdims=True)
    e = rng.standard_normal((trials, n))
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    eye = np.eye(n)
    for _ in range(steps):
        Ae = np.einsum("kij,kj->ki", A, e)
        value = a * np.einsum("ki,ki->k", e, Ae) + b * np.trace(A, axis1=1, axis2=2)
        step = 4 * a * value[:, None] * Ae
        step -= np.einsum("ki,ki->k", step, e)[:, None] * e
        size = np.linalg.norm(step, axis=1, keepdims=True)
        e = e + 0.1 * step / np.where(size > 0, size, 1.0)
        e /= np.linalg.norm(e, axis=1, keepdims=True)

        phi = a * np.einsum("ki,kj->kij", e, e) + b * eye
        value = np.einsum("kij,kij->k", phi, A)
        phi_sq = np.einsum("kij,kij->k", phi, phi)
        rate = np.where(phi_sq > 0, value / np.where(phi_sq > 0, phi_sq, 1.0), 0.0)
        A = A + rate[:, None, None] * (phi - value[:, None, None] * A)
        A /= np.linalg.norm(A, axis=(1, 2), keepdims=True)
    value = a * np.einsum("ki,kij,kj->k", e, A, e) + b * np.trace(A, axis1=1, axis2=2)
    return float(np.max(value**2))


def matrix_lemma_bruteforce(
    a: float, b: float, n: int, trials: int = 10_000, steps: int = 200, seed: int = 0, jobs: int = 1
) -> Tuple[float, float]:
    """(empirical max, (a+b)^2 + (n-1) b^2) of [(aA + b tr(A) I)(e,e)/|A|]^2"""
    if n < 1:
        raise ConfigError("matrix dimension must be at least 1", rule="matrix-dimension")
    if trials < 1000:
        raise ConfigError(f"{trials} trials below the 1000 minimum", rule="matrix-trials")
    chunks = max(1, int(jobs))
    sizes = [trials // chunks + (1 if i < trials % chunks else 0) for i in range(chunks)]
    seeds = np.random.SeedSequence(seed).spawn(chunks)
    results = Parallel(n_jobs=chunks)(
        delayed(_ascend)(a, b, n, size, steps, child) for size, child in zip(sizes, seeds) if size > 0
    )
    closed = (a + b) ** 2 + (n - 1) * b**2
    return float(max(results)), float(closed)


def matrix_lemma_check(
    pairs: Sequence[Tuple[float, float]],
    dimensions: Sequence[int] = (2, 3, 4),
    trials: int = 10_000,
    steps: int = 200,
    seed: int = 0,
    jobs: int = 1,
) -> ResidualReport:
    rows = []
    passed = True
    for k, (a, b) in enumerate(pairs):
        for n in dimensions:
            empirical, closed = matrix_lemma_bruteforce(a, b, n, trials, steps, seed + k, jobs)
            above = empirical - closed
            below = closed - empirical
            ok = above <= 1e-9 and below <= 1e-6 * (1 + closed)
            passed &= ok
            rows.append({"a": a, "b": b, "n": n, "empirical": empirical, "closed": closed, "passed": ok})
    worst = max((abs(r["empirical"] - r["closed"]) for r in rows), default=0.0)
    return ResidualReport(lemma="matrix-lemma", residuals=[worst], tolerance=1e-6, passed=passed, extras={"rows": rows})


# ---------------------------------------------------------------------------
# cutoff profile
# ---------------------------------------------------------------------------

CUTOFF_PROFILES = ("exp-flat", "quintic")


def _flat_step(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Smooth step from 1 at x <= 0 to 0 at x >= 1 with every derivative vanishing at both ends"""
    x = np.asarray(x, dtype=float)
    inner = (x > 0) & (x < 1)
    xs = np.where(inner, x, 0.5)
    y = 1 - xs
    a, b = np.exp(-1 / y), np.exp(-1 / xs)
    da, db = -a / y**2, b / xs**2
    d2a, d2b = a * (1 - 2 * y) / y**4, b * (1 - 2 * xs) / xs**4
    total = a + b
    numer = da * b - a * db
    step = a / total
    first = numer / total**2
    second = ((d2a * b - a * d2b) * total - 2 * numer * (da + db)) / total**3
    outside = np.where(x <= 0, 1.0, 0.0)
    return np.where(inner, step, outside), np.where(inner, first, 0.0), np.where(inner, second, 0.0)


def _quintic_step(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    step = 1 - x**3 * (10 - 15 * x + 6 * x**2)
    first = -30 * x**2 * (1 - x) ** 2
    second = -60 * x * (1 - x) * (1 - 2 * x)
    return step, first, second


_STEPS = {"exp-flat": _flat_step, "quintic": _quintic_step}


@dataclass
class CutoffSpec:
    R: float
    T: float
    t0: float
    tau: float
    a: float = 0.75
    profile: str = "exp-flat"
    c: Optional[float] = None
    c_a: Optional[float] = None

    def __post_init__(self):
        if not (self.R > 0 and self.T > 0):
            raise ConfigError("cutoff needs R > 0 and T > 0", rule="cutoff")
        if not (self.t0 - self.T < self.tau <= self.t0):
            raise BadWindow(f"tau = {self.tau} outside ({self.t0 - self.T}, {self.t0}]", rule="cutoff-window")
        if not 0 < self.a < 1:
            raise ConfigError(f"smoothing exponent a = {self.a} outside (0, 1)", rule="cutoff")
        if self.profile not in _STEPS:
            raise ConfigError(f"unknown cutoff profile '{self.profile}'", rule="catalog-tag")

    @property
    def rise(self) -> float:
        return self.tau - self.t0 + self.T

    def radial(self, rho) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        half = self.R / 2
        step, first, second = _STEPS[self.profile]((np.asarray(rho, dtype=float) - half) / half)
        return step, first / half, second / half**2

    def temporal(self, t) -> Tuple[np.ndarray, np.ndarray]:
        step, first, _ = _STEPS[self.profile]((np.asarray(t, dtype=float) - (self.t0 - self.T)) / self.rise)
        return 1 - step, -first / self.rise

    def __call__(self, rho, t) -> Dict[str, np.ndarray]:
        """eta-bar with its rho, rho-rho and t derivatives"""
        phi, d_phi, d2_phi = self.radial(rho)
        psi, d_psi = self.temporal(t)
        return {"eta": phi * psi, "d_rho": d_phi * psi, "d_rhorho": d2_phi * psi, "d_t": phi * d_psi}

    def measure(self, samples: int = 10_000) -> "CutoffSpec":
        """Realised c and c_a over a sample lattice"""
        rho, t = self.lattice(samples)
        parts = self(rho, t)
        eta = parts["eta"]
        live = eta > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            c_ratio = np.abs(parts["d_t"][live]) / np.sqrt(eta[live]) * self.rise
            weight = eta[live] ** self.a
            ca_ratio = np.maximum(self.R * np.abs(parts["d_rho"][live]), self.R**2 * np.abs(parts["d_rhorho"][live])) / weight
        self.c = float(np.max(c_ratio)) if c_ratio.size else 0.0
        self.c_a = float(np.max(ca_ratio)) if ca_ratio.size else 0.0
        # the quintic step vanishes to third order only, so phi'' / phi^a blows up at the edge
        if self.profile == "quintic" and self.a > 1.0 / 3.0:
            self.c_a = np.inf
        return self

    def lattice(self, samples: int) -> Tuple[np.ndarray, np.ndarray]:
        side = max(2, int(round(np.sqrt(samples))))
        rho = np.linspace(0.0, 1.25 * self.R, side)
        t = np.linspace(self.t0 - self.T, self.t0, side)
        return np.meshgrid(rho, t, indexing="ij")


def build_cutoff(
    R: float,
    T: float,
    t0: float = 0.0,
    tau: Optional[float] = None,
    a: float = 0.75,
    profile: str = "exp-flat",
    samples: int = 10_000,
) -> CutoffSpec:
    tau = t0 - T / 2 if tau is None else tau
    return CutoffSpec(R, T, t0, tau, a, profile).measure(samples)


def check_cutoff(spec: CutoffSpec, samples: int = 10_000) -> ResidualReport:
    rho, t = spec.lattice(samples)
    parts = spec(rho, t)
    eta, d_rho = parts["eta"], parts["d_rho"]
    core = rho <= spec.R / 2
    spec.measure(samples)
    properties = {
        "bounded": bool(np.all((eta >= -1e-15) & (eta <= 1 + 1e-15))),
        "support": bool(np.all(eta[rho >= spec.R] == 0.0)),
        "plateau": bool(np.all(np.abs(eta[core & (t >= spec.tau)] - 1.0) <= 1e-14)),
        "flat-core": bool(np.all(d_rho[core] == 0.0)),
        "initial-zero": bool(np.all(spec(rho[:, 0], np.full(rho.shape[0], spec.t0 - spec.T))["eta"] == 0.0)),
        "radial-monotone": bool(np.all(d_rho <= 1e-15)),
        "c-finite": bool(np.isfinite(spec.c)),
        "c_a-finite": bool(np.isfinite(spec.c_a)),
    }
    passed = all(properties.values())
    logger.info("cutoff %s a=%.3g: c=%.4g c_a=%.4g (%s)", spec.profile, spec.a, spec.c, spec.c_a, passed)
    return ResidualReport(
        lemma="cutoff",
        passed=passed,
        extras={"properties": properties, "c": spec.c, "c_a": spec.c_a, "samples": int(eta.size), "profile": spec.profile},
    )


def check_cutoff_composition(
    ctx: GeometryContext,
    cutoff: CutoffSpec,
    x0: Sequence[float],
    t: Optional[float] = None,
    levels: Optional[Sequence[int]] = None,
) -> ResidualReport:
    """Chain-rule bullets for eta(x, t) = eta-bar(rho(x, t), t) on the grid"""
    t = (cutoff.t0 - cutoff.T + cutoff.tau) / 2 if t is None else t
    levels = list(levels) if levels else [ctx.chart.resolution[0]]
    residuals, time_residuals = [], []
    for level in levels:
        level_ctx = ctx.with_chart(ctx.chart.with_resolution(level))
        model = model_for(level_ctx, x0)
        for (a, b), periodic in zip(level_ctx.chart.extents, level_ctx.chart.periodic):
            if periodic and cutoff.R >= 0.5 * (b - a) * np.sqrt(float(model.params.get("scale", 1.0))) - 4 * level_ctx.chart.min_spacing:
                raise ConfigError("cutoff radius reaches the cut locus of the torus", rule="cutoff-radius")
        grid = level_ctx.on_grid(t)
        points = level_ctx.chart.points
        rho, d_rho_t = model(points, t)
        parts = cutoff(rho, t)
        eta = parts["eta"]
        d_eta = differential(grid, eta)
        d_rho = differential(grid, rho)
        gradient_gap = np.sqrt(np.maximum(pairing(grid, d_eta - parts["d_rho"][..., None] * d_rho, d_eta - parts["d_rho"][..., None] * d_rho), 0.0))
        chain_lap = parts["d_rhorho"] * pairing(grid, d_rho, d_rho) + parts["d_rho"] * laplacian_values(grid, rho)
        laplacian_gap = np.abs(laplacian_values(grid, eta) - chain_lap)
        interior = level_ctx.chart.interior
        residuals.append(float(max(np.max(gradient_gap[interior]), np.max(laplacian_gap[interior]))))

        delta = 1e-3 * cutoff.T
        shifted = [cutoff(model(points, t + k * delta)[0], t + k * delta)["eta"] for k in (-2, -1, 1, 2)]
        dt_eta = (shifted[0] - 8 * shifted[1] + 8 * shifted[2] - shifted[3]) / (12 * delta)
        chain_t = parts["d_rho"] * d_rho_t + parts["d_t"]
        time_residuals.append(float(np.max(np.abs(dt_eta - chain_t)[interior])))
    orders = observed_orders(residuals, levels) if len(levels) > 1 else []
    decreasing = all(b <= a for a, b in zip(residuals, residuals[1:]))
    return ResidualReport(
        lemma="cutoff-composition",
        levels=levels,
        residuals=residuals,
        orders=orders,
        tolerance=1e-6,
        passed=decreasing and max(time_residuals) <= 1e-6,
        extras={"time_residuals": time_residuals, "t": t},
    )


# ---------------------------------------------------------------------------
# maximum point of the localised function
# ---------------------------------------------------------------------------


def replay_maximum_point(ectx: EstimateContext, cutoff: CutoffSpec, beta: Optional[float] = None) -> ResidualReport:
    """Discrete argmax of eta * w over the cylinder and its first/second-order conditions"""
    if ectx.rho is None:
        raise EmptyCylinder("maximum-point replay needs a model distance")
    beta = (ectx.beta if ectx.beta is not None else -1.0 / (ectx.p - 1)) if beta is None else beta
    w = ectx.grad_sq / ectx.v**beta
    shape = (-1,) + (1,) * ectx.ctx.n
    eta = cutoff(ectx.rho, ectx.times.reshape(shape))["eta"]
    localised = eta * w
    mask = ectx.cylinder_mask(ectx.cylinder.R)
    if not np.any(mask):
        raise EmptyCylinder("no samples inside the cylinder")
    masked = np.where(mask, localised, -np.inf)
    index = np.unravel_index(int(np.argmax(masked)), masked.shape)
    value = float(masked[index])
    frame, spot = index[0], index[1:]
    t1 = float(ectx.times[frame])
    x1 = [float(c) for c in ectx.ctx.chart.points[spot]]
    extras: Dict[str, Any] = {"value": value, "t": t1, "x": x1, "beta": beta}
    if value <= 0.0:
        extras["case"] = "trivial"
        return ResidualReport(lemma="maximum-point", passed=True, extras=extras)
    if t1 <= ectx.cylinder.t_start + 1e-12:
        extras["case"] = "initial-time"
        logger.warning("maximum of eta*w sits on the initial slice with value %.3g", value)
        return ResidualReport(lemma="maximum-point", passed=False, extras=extras)

    grid = ectx.ctx.on_grid(t1)
    F = localised[frame]
    h = ectx.ctx.chart.min_spacing
    dF = differential(grid, F)
    grad_norm = float(np.sqrt(max(pairing(grid, dF, dF)[spot], 0.0)))
    hess_norm = float(np.sqrt(max(hessian_values(grid, F)[1][spot], 0.0)))
    lap = laplacian_values(grid, F)
    d_lap = differential(grid, lap)
    lap_slope = float(np.sqrt(max(pairing(grid, d_lap, d_lap)[spot], 0.0)))
    grad_tol = h * hess_norm + 1e-10 * value
    lap_tol = h * lap_slope + 1e-8 * max(value, hess_norm)
    forward = True if frame == 0 else bool(localised[frame][spot] >= localised[frame - 1][spot])
    extras.update(
        {
            "case": "final-time" if frame == len(ectx.times) - 1 else "interior",
            "grad_norm": grad_norm,
            "grad_tol": grad_tol,
            "laplacian": float(lap[spot]),
            "lap_tol": lap_tol,
            "dt_nonnegative": forward,
        }
    )
    passed = grad_norm <= grad_tol and lap[spot] <= lap_tol and forward
    return ResidualReport(lemma="maximum-point", passed=bool(passed), extras=extras)


# ---------------------------------------------------------------------------
# weighted Laplacian comparison
# ---------------------------------------------------------------------------


def comparison_bound(rho: np.ndarray, m: float, k: float) -> np.ndarray:
    if k > 0:
        root = np.sqrt(k)
        return (m - 1) * root / np.tanh(root * rho)
    return (m - 1) / rho


def check_laplacian_comparison(
    ctx: GeometryContext,
    x0: Sequence[float],
    k: Optional[float] = None,
    t: float = 0.0,
    inner_radius: float = 0.5,
    margin_cells: int = 4,
    tolerance: float = 1e-4,
) -> ResidualReport:
    """Delta_f rho <= (m-1) sqrt(k) coth(sqrt(k) rho) away from the base point and the cut locus"""
    _require_finite_m(ctx.m, "the Laplacian comparison")
    model = model_for(ctx, x0)
    if k is None:
        k = certify_lower_bounds(ctx, Region(t, t)).k
    chart = ctx.chart
    grid = ctx.on_grid(t)
    rho, _ = model(chart.points, t)
    lap = laplacian_values(grid, rho)
    delta = chart.points - np.asarray(model.base)
    mask = chart.interior & (rho >= inner_radius)
    for i, ((a, b), periodic) in enumerate(zip(chart.extents, chart.periodic)):
        if periodic:
            period = b - a
            wrapped = delta[..., i] - period * np.round(delta[..., i] / period)
            mask &= np.abs(wrapped) < period / 2 - margin_cells * chart.spacing[i]
    if model.model == "round-sphere":
        radius = float(model.params.get("radius", 1.0))
        mask &= rho < radius * (np.pi - margin_cells * chart.min_spacing)
    if not np.any(mask):
        raise EmptyCylinder("no samples between the base point and the cut locus")
    bound = comparison_bound(np.where(mask, rho, 1.0), ctx.m, k)
    slack = bound - lap
    scale = np.maximum(1.0, np.maximum(np.abs(bound), np.abs(lap)))
    relative = np.where(mask, slack / scale, np.inf)
    index = np.unravel_index(int(np.argmin(relative)), relative.shape)
    return ResidualReport(
        lemma="laplacian-comparison",
        slack_min=float(slack[index]),
        argmin={"x": [float(c) for c in chart.points[index]], "rho": float(rho[index])},
        tolerance=tolerance,
        passed=bool(relative[index] >= -tolerance),
        extras={"k": k, "m": ctx.m, "relative_slack_min": float(relative[index]), "samples": int(np.sum(mask))},
        slack=np.where(mask, slack, np.nan),
    )
