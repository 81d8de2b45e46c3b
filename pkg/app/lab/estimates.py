"""
Estimate engine.

Pressure transform, the Sigma machinery built from a nonlinearity, admissible
exponent ranges, the right-hand sides of the local/global/static gradient
estimates of both families, calibration of the constant C, the super-flow
margin and the closed-manifold corollary bounds.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from app.lab.catalog import GammaAux
from app.lab.errors import (
    ConfigError,
    EmptyCylinder,
    ExponentOutOfRange,
    HypothesisViolated,
    NonPositiveInput,
    UnknownCase,
)
from app.lab.fields import differential, pairing
from app.lab.geometry import GeometryContext, ModelDistance, generalized_eigenvalues, model_for
from app.lab.solver import NonlinearitySpec
from app.models.models import EstimateReport, ResidualReport, ScalarField, SpaceTimeField

logger = logging.getLogger(__name__)

THEOREMS = ("T2-local", "T2-global", "T2-static", "T6-local", "T6-global", "T6-static")
COROLLARIES = ("C10-general", "C10-kt")
# Open-interval endpoints are rejected this close to the threshold
EDGE_TOL = 1e-12
HYPOTHESIS_TOL = 1e-9


def pressure_transform(u: SpaceTimeField, p: float) -> SpaceTimeField:
    if np.min(u.values) <= 0:
        raise NonPositiveInput(f"pressure transform needs u > 0 (min {np.min(u.values):.3g})")
    return SpaceTimeField(u.chart, u.times, p * u.values ** (p - 1) / (p - 1))


def u_from_pressure(v: np.ndarray, p: float) -> np.ndarray:
    return ((p - 1) * v / p) ** (1.0 / (p - 1))


def sigma_from_nonlinearity(
    spec: NonlinearitySpec, p: float, t: float, x: np.ndarray, v: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(Sigma, Sigma_x covector, Sigma_v) at pressure v"""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise NonPositiveInput("Sigma needs a positive pressure")
    u = u_from_pressure(v, p)
    nonlinear = spec(x, t, u)
    scale = p * u ** (p - 2)
    sigma = scale * nonlinear
    sigma_v = (p - 2) * nonlinear / u + spec.partial_u(x, t, u)
    sigma_x = scale[..., None] * spec.partial_x(x, t, u)
    return sigma, sigma_x, sigma_v


def sigma_frames(spec: NonlinearitySpec, p: float, v: SpaceTimeField) -> Dict[str, np.ndarray]:
    points = v.chart.points
    parts = [sigma_from_nonlinearity(spec, p, t, points, values) for t, values in zip(v.times, v.values)]
    return {
        "sigma": np.stack([s for s, _, _ in parts]),
        "sigma_x": np.stack([sx for _, sx, _ in parts]),
        "sigma_v": np.stack([sv for _, _, sv in parts]),
    }


def sigma_arrays(sigma: Dict[str, Any]) -> Dict[str, np.ndarray]:
    """Plain arrays from either sigma_frames output or a manufactured case"""
    return {
        key: np.asarray(sigma[key].values if isinstance(sigma[key], SpaceTimeField) else sigma[key], dtype=float)
        for key in ("sigma", "sigma_x", "sigma_v")
    }


# ---------------------------------------------------------------------------
# exponent ranges
# ---------------------------------------------------------------------------


def t2_limit(m: float) -> float:
    return 1.0 + 1.0 / (np.sqrt(2.0 * m) + 1.0)


def t6_limit(m: float) -> float:
    return np.inf if m <= 1 else 1.0 + 1.0 / np.sqrt(m - 1.0)


def corollary_limit(s: float, m: float) -> float:
    return np.inf if (s - 1) * (m - 1) <= 0 else 1.0 + 1.0 / np.sqrt((s - 1.0) * (m - 1.0))


@dataclass(frozen=True)
class BetaRange:
    beta1: float
    beta2: float
    midpoint: float

    def contains(self, beta: float) -> bool:
        return self.beta1 < beta < self.beta2


def beta_admissible_range(p: float, m: float) -> BetaRange:
    """Roots of beta^2 + (2-p)/(p-1) beta + m/2 = 0 and the midpoint choice"""
    if not np.isfinite(m):
        raise ExponentOutOfRange("the first estimate family needs a finite m", rule="t2-exponent-range")
    if not (1 < p < t2_limit(m) - EDGE_TOL):
        raise ExponentOutOfRange(
            f"p = {p} outside (1, 1 + 1/(sqrt(2m)+1)) = (1, {t2_limit(m):.12g}) for m = {m}",
            rule="t2-exponent-range",
        )
    b = (2 - p) / (p - 1)
    c = m / 2
    disc = b * b - 4 * c
    if disc <= 0:
        raise ExponentOutOfRange(f"no admissible beta for p = {p}, m = {m}", rule="t2-exponent-range")
    q = -0.5 * (b + np.copysign(np.sqrt(disc), b))
    roots = sorted([q, c / q])
    return BetaRange(float(roots[0]), float(roots[1]), float(-b / 2))


def resolve_beta(p: float, m: float, beta: Any = "midpoint") -> float:
    span = beta_admissible_range(p, m)
    if beta is None or beta == "midpoint":
        return span.midpoint
    beta = float(beta)
    if not span.contains(beta):
        raise ExponentOutOfRange(
            f"beta = {beta} outside the open interval ({span.beta1:.12g}, {span.beta2:.12g})", rule="beta-interval"
        )
    return beta


def w_field(v: SpaceTimeField, beta: float, ctx: GeometryContext) -> SpaceTimeField:
    if np.min(v.values) <= 0:
        raise NonPositiveInput("w needs a positive pressure")
    frames = []
    for t, values in zip(v.times, v.values):
        grid = ctx.on_grid(t)
        dv = differential(grid, values)
        frames.append(pairing(grid, dv, dv) / values**beta)
    return SpaceTimeField(v.chart, v.times, np.stack(frames))


# ---------------------------------------------------------------------------
# super-flow
# ---------------------------------------------------------------------------


def superflow_margin(ctx: GeometryContext, v: ScalarField, p: float, kappa: float) -> ScalarField:
    """Smallest eigenvalue of 1/2 dg/dt + (p-1) v Ric_f^m + kappa g relative to g"""
    grid = ctx.on_grid(v.time)
    form = 0.5 * grid.dt_g + (p - 1) * v.values[..., None, None] * grid.ric_fm + kappa * grid.g
    return ScalarField(v.chart, generalized_eigenvalues(form, grid.g)[..., 0], v.time)


def superflow_constant(k: float, h: float, sup_u: float, p: float, m: float) -> float:
    """kappa = h + p (sup u)^{p-1} (m-1) k, which makes the super-flow inequality hold"""
    factor = 1.0 if np.isinf(m) else (m - 1.0)
    return float(h + p * sup_u ** (p - 1) * factor * k)


# ---------------------------------------------------------------------------
# cylinders and estimate contexts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cylinder:
    x0: Tuple[float, ...]
    t0: float
    R: float
    T: float

    def __post_init__(self):
        if not (self.R > 0 and self.T > 0):
            raise ConfigError(f"cylinder needs R > 0 and T > 0 (R={self.R}, T={self.T})", rule="cylinder")

    @property
    def t_start(self) -> float:
        return self.t0 - self.T


class EstimateContext:
    """Pressure frames restricted to the cylinder window, with Sigma fields and curvature constants"""

    def __init__(
        self,
        ctx: GeometryContext,
        v: SpaceTimeField,
        p: float,
        cylinder: Cylinder,
        sigma: np.ndarray,
        sigma_x: np.ndarray,
        sigma_v: np.ndarray,
        k: float = 0.0,
        h: float = 0.0,
        beta: Optional[float] = None,
        kappa: Optional[float] = None,
        model: Optional[ModelDistance] = None,
    ):
        window = (v.times >= cylinder.t_start - EDGE_TOL) & (v.times <= cylinder.t0 + EDGE_TOL)
        if not np.any(window):
            raise EmptyCylinder(f"no stored frame inside [{cylinder.t_start:.6g}, {cylinder.t0:.6g}]")
        if np.min(v.values[window]) <= 0:
            raise NonPositiveInput("estimate context needs v > 0 on the cylinder")
        self.ctx = ctx
        self.p = p
        self.m = ctx.m
        self.beta = beta
        self.cylinder = cylinder
        self.k = k
        self.h = h
        self.kappa = kappa
        self.times = v.times[window]
        self.v = v.values[window]
        self.sigma = sigma[window]
        self.sigma_v = sigma_v[window]
        grad_sq, sx_norm = [], []
        for t, values, sx in zip(self.times, self.v, sigma_x[window]):
            grid = ctx.on_grid(t)
            dv = differential(grid, values)
            grad_sq.append(np.maximum(pairing(grid, dv, dv), 0.0))
            sx_norm.append(np.sqrt(np.maximum(pairing(grid, sx, sx), 0.0)))
        self.grad_sq = np.stack(grad_sq)
        self.sigma_x_norm = np.stack(sx_norm)
        self.interior = np.broadcast_to(ctx.chart.interior, self.v.shape)
        self.model = model
        self.rho = None
        if model is not None:
            self.rho = np.stack([model(ctx.chart.points, t)[0] for t in self.times])

    @property
    def after_start(self) -> np.ndarray:
        return self.times > self.cylinder.t_start + EDGE_TOL

    def cylinder_mask(self, radius: float) -> np.ndarray:
        if self.rho is None:
            raise EmptyCylinder("local estimates need a model distance for cylinder membership")
        return self.interior & (self.rho <= radius + EDGE_TOL)

    def region(self, variant: str) -> Tuple[np.ndarray, np.ndarray]:
        """(sup region Q_{R,T}, sample region Q_{R/2,T} with t > t0 - T)"""
        if variant == "global":
            sup_mask = self.interior.copy()
            sample_mask = self.interior.copy()
        else:
            sup_mask = self.cylinder_mask(self.cylinder.R)
            sample_mask = self.cylinder_mask(self.cylinder.R / 2)
        sample_mask = sample_mask & self.after_start.reshape((-1,) + (1,) * self.ctx.n)
        if not np.any(sup_mask) or not np.any(sample_mask):
            raise EmptyCylinder(f"cylinder around {self.cylinder.x0} holds no grid samples")
        return sup_mask, sample_mask

    @property
    def M(self) -> float:
        sup_mask, _ = self.region("local" if self.rho is not None else "global")
        return float(np.max(self.v[sup_mask]))


def estimate_context(
    ctx: GeometryContext,
    v: SpaceTimeField,
    p: float,
    cylinder: Cylinder,
    spec: Optional[NonlinearitySpec] = None,
    sigma: Optional[Dict[str, np.ndarray]] = None,
    k: float = 0.0,
    h: float = 0.0,
    beta: Optional[float] = None,
    kappa: Optional[float] = None,
    local: bool = True,
) -> EstimateContext:
    if sigma is None:
        if spec is None:
            raise ConfigError("an estimate context needs a nonlinearity or precomputed Sigma fields")
        sigma = sigma_frames(spec, p, v)
    sigma = sigma_arrays(sigma)
    model = model_for(ctx, cylinder.x0) if local else None
    return EstimateContext(
        ctx, v, p, cylinder, sigma["sigma"], sigma["sigma_x"], sigma["sigma_v"], k, h, beta, kappa, model
    )


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------


def _positive_part(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _sup(values: np.ndarray, mask: np.ndarray) -> float:
    return float(np.max(values[mask])) if np.any(mask) else 0.0


def hsz_rhs(theorem: str, ectx: EstimateContext) -> EstimateReport:
    """Right-hand side without C, term by term, plus LHS samples on the half cylinder"""
    if theorem not in THEOREMS:
        raise UnknownCase(f"unknown theorem '{theorem}'; known: {', '.join(THEOREMS)}")
    family, variant = theorem.split("-")
    p, m, k, h = ectx.p, ectx.m, ectx.k, ectx.h
    R, T, t0 = ectx.cylinder.R, ectx.cylinder.T, ectx.cylinder.t0
    sup_mask, sample_mask = ectx.region(variant)
    v, sigma, sigma_v, sx = ectx.v, ectx.sigma, ectx.sigma_v, ectx.sigma_x_norm
    M = float(np.max(v[sup_mask]))
    times = ectx.times[ectx.after_start]
    time_factor = 1.0 / np.sqrt(times - t0 + T)
    ones = np.ones_like(times)

    if family == "T2":
        beta = ectx.beta
        if beta is None:
            raise ConfigError("the first estimate family needs beta", rule="beta-interval")
        resolve_beta(p, m, beta)
        low, high = M ** ((1 - beta) / 2), M ** (1 - beta / 2)
        sx_term = _sup(sx / v ** ((3 * beta - 2) / 2), sup_mask) ** (1.0 / 3.0)
        sv_term = _sup(v ** ((1 - beta) / 2) * np.sqrt(_positive_part(2 * sigma_v - beta * sigma / v)), sup_mask)
        lhs = np.sqrt(ectx.grad_sq) / v ** (beta / 2)
    else:
        if not (1 < p < t6_limit(m) - EDGE_TOL):
            raise ExponentOutOfRange(
                f"p = {p} outside (1, 1 + 1/sqrt(m-1)) = (1, {t6_limit(m):.12g}) for m = {m}",
                rule="t6-exponent-range",
            )
        low, high = M ** (p / (2 * (p - 1))), M ** (1 + 1 / (2 * (p - 1)))
        sx_term = _sup(v ** ((2 * p + 1) / (2 * (p - 1))) * sx, sup_mask) ** (1.0 / 3.0)
        sv_term = _sup(
            v ** (p / (2 * (p - 1))) * np.sqrt(_positive_part(2 * sigma_v + sigma / ((p - 1) * v))), sup_mask
        )
        lhs = v ** (1 / (2 * (p - 1))) * np.sqrt(ectx.grad_sq)

    breakdown: Dict[str, np.ndarray] = {}
    if variant != "static":
        breakdown["sqrt_h"] = np.sqrt(h) * low * ones
    if variant == "global":
        breakdown["curvature"] = np.sqrt(k) * high * ones
    else:
        breakdown["curvature"] = (k**0.25 / np.sqrt(R) + 1.0 / R + np.sqrt(k)) * high * ones
    breakdown["time"] = low * time_factor
    breakdown["sigma_x"] = sx_term * ones
    breakdown["sigma_v"] = sv_term * ones
    rhs = sum(breakdown.values())

    sample_mask = sample_mask[ectx.after_start]
    lhs = lhs[ectx.after_start]
    frame_index = np.nonzero(sample_mask)[0]
    points = ectx.ctx.chart.points
    sample_points = np.broadcast_to(points, sample_mask.shape + (ectx.ctx.n,))[sample_mask]
    return EstimateReport(
        theorem=theorem,
        times=times,
        rhs=rhs,
        breakdown=breakdown,
        lhs=lhs[sample_mask],
        sample_points=sample_points,
        sample_times=times[frame_index],
        sample_rhs=rhs[frame_index],
        argsup={"M": M},
    )


def verify_estimate(ectx: EstimateContext, report: EstimateReport, mode: str = "calibrate", C: Optional[float] = None) -> EstimateReport:
    if report.lhs is None or report.lhs.size == 0:
        raise EmptyCylinder(f"{report.theorem}: no samples on the half cylinder")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(report.sample_rhs > 0, report.lhs / report.sample_rhs, np.where(report.lhs > 0, np.inf, 0.0))
    best = int(np.argmax(ratios))
    report.ratios = ratios
    report.c_star = float(ratios[best])
    report.argsup = {
        **(report.argsup or {}),
        "x": [float(c) for c in report.sample_points[best]],
        "t": float(report.sample_times[best]),
        "lhs": float(report.lhs[best]),
        "rhs": float(report.sample_rhs[best]),
    }
    if mode == "calibrate":
        report.passed = bool(np.isfinite(report.c_star))
    elif mode == "fixed":
        if C is None:
            raise ConfigError("fixed C mode needs a value for C", rule="c-mode")
        report.c_fixed = float(C)
        report.passed = bool(report.c_star <= C * (1 + 1e-12))
    else:
        raise ConfigError(f"unknown C mode '{mode}'", rule="c-mode")
    logger.info("%s: C* = %.6g (%s)", report.theorem, report.c_star, "pass" if report.passed else "fail")
    return report


def liouville_rhs(M: np.ndarray, R: np.ndarray, beta: float, C: float = 1.0) -> np.ndarray:
    """C [M^{1-beta/2}/R + M^{(1-beta)/2}/sqrt(T)] with T = R^2, the static global bound with k = 0"""
    M, R = np.asarray(M, dtype=float), np.asarray(R, dtype=float)
    return C * (M ** (1 - beta / 2) / R + M ** ((1 - beta) / 2) / R)


# ---------------------------------------------------------------------------
# closed-manifold corollaries
# ---------------------------------------------------------------------------


def _hypothesis(name: str, values: np.ndarray, sign: str, bound: float, times: np.ndarray, chart) -> Dict[str, Any]:
    excess = values - bound if sign == "<=" else bound - values
    scale = np.maximum(1.0, np.abs(values))
    worst = np.unravel_index(int(np.argmax(excess / scale)), excess.shape)
    holds = bool(np.all(excess <= HYPOTHESIS_TOL * scale))
    return {
        "bullet": name,
        "holds": holds,
        "worst": float(excess[worst]),
        "t": float(times[worst[0]]),
        "x": [float(c) for c in chart.points[worst[1:]]],
    }


def corollary_bound_check(
    tag: str,
    ctx: GeometryContext,
    v: SpaceTimeField,
    p: float,
    sigma: Dict[str, np.ndarray],
    s: float = 2.0,
    a: float = 0.0,
    gamma: Optional[GammaAux] = None,
    kappa: float = 0.0,
    tolerance: float = 1e-6,
) -> ResidualReport:
    """Slack of the maximum-principle bounds on a closed chart; hypotheses are checked first"""
    if tag not in COROLLARIES:
        raise UnknownCase(f"unknown corollary '{tag}'; known: {', '.join(COROLLARIES)}")
    if not all(ctx.chart.periodic):
        raise ConfigError("closed-manifold corollaries need a fully periodic chart", rule="closed-chart")
    m = ctx.m
    if not np.isfinite(m):
        raise ExponentOutOfRange("closed-manifold corollaries need a finite m", rule="c10-exponent-range")
    s_eff = s if tag == "C10-general" else 2.0
    if s_eff < 2:
        raise ConfigError(f"s = {s} below 2", rule="s-at-least-2")
    limit = corollary_limit(s_eff, m)
    if not (1 < p <= limit + EDGE_TOL):
        raise ExponentOutOfRange(f"p = {p} outside (1, {limit:.12g}]", rule="c10-exponent-range")

    sigma = sigma_arrays(sigma)
    times = v.times - v.times[0]
    values = v.values
    sig, sig_v = sigma["sigma"], sigma["sigma_v"]
    grad_sq, cross, margin = [], [], []
    for t, vals, sx in zip(v.times, values, sigma["sigma_x"]):
        grid = ctx.on_grid(t)
        dv = differential(grid, vals)
        grad_sq.append(np.maximum(pairing(grid, dv, dv), 0.0))
        cross.append(pairing(grid, dv, sx))
        margin.append(superflow_margin(ctx, ScalarField(ctx.chart, vals, t), p, kappa).values)
    grad_sq, cross, margin = np.stack(grad_sq), np.stack(cross), np.stack(margin)

    checks = [
        _hypothesis("superflow", margin, ">=", 0.0, v.times, ctx.chart),
        _hypothesis("<grad v, Sigma_x> <= 0", cross, "<=", 0.0, v.times, ctx.chart),
    ]
    if tag == "C10-general":
        if gamma is None:
            raise ConfigError("C10-general needs an auxiliary Gamma(v)", rule="gamma-aux")
        g1, g2 = gamma.d1(values), gamma.d2(values)
        checks += [
            _hypothesis("Gamma' Sigma <= 0", g1 * sig, "<=", 0.0, v.times, ctx.chart),
            _hypothesis("Gamma' + v Gamma'' >= 0", g1 + values * g2, ">=", 0.0, v.times, ctx.chart),
            _hypothesis(
                "Sigma_v + Sigma/[2(s-1)(p-1)v] <= a",
                sig_v + sig / (2 * (s - 1) * (p - 1) * values),
                "<=",
                a,
                v.times,
                ctx.chart,
            ),
        ]
    else:
        checks += [
            _hypothesis("Sigma <= 0", sig, "<=", 0.0, v.times, ctx.chart),
            _hypothesis("Sigma_v + Sigma/[2(p-1)v] <= 0", sig_v + sig / (2 * (p - 1) * values), "<=", 0.0, v.times, ctx.chart),
        ]
    failed = [c for c in checks if not c["holds"]]
    if failed:
        first = failed[0]
        raise HypothesisViolated(
            f"{tag}: hypothesis '{first['bullet']}' fails by {first['worst']:.3g} at x={first['x']}, t={first['t']:.6g}",
            rule="corollary-hypothesis",
            bullet=first["bullet"],
            x=first["x"],
            t=first["t"],
        )

    shape = (-1,) + (1,) * ctx.n
    t_b = times.reshape(shape)
    if tag == "C10-general":
        exponent = s / (2 * (s - 1) * (p - 1))
        g_star = values**exponent * grad_sq ** (s / 2)
        gamma_v = gamma.value(values)
        start = float(np.max(g_star[0] + gamma_v[0]))
        bound = np.exp(s * (kappa + a) * t_b) * (start - gamma_v)
        slack = bound - g_star
        scale = np.maximum(1.0, np.maximum(np.abs(bound), np.abs(g_star)))
    else:
        power = values ** (p / (p - 1))
        bound = (p - 1) * (float(np.max(power[0])) - power)
        lhs = p * p * t_b / (1 + 2 * kappa * t_b) * values ** (1 / (p - 1)) * grad_sq
        slack = bound - lhs
        scale = np.maximum(1.0, np.maximum(np.abs(bound), np.abs(lhs)))

    relative = slack / scale
    worst = np.unravel_index(int(np.argmin(relative)), relative.shape)
    report = ResidualReport(
        lemma=tag,
        slack_min=float(slack[worst]),
        argmin={"t": float(v.times[worst[0]]), "x": [float(c) for c in ctx.chart.points[worst[1:]]]},
        tolerance=tolerance,
        passed=bool(relative[worst] >= -tolerance),
        extras={"hypotheses": checks, "relative_slack_min": float(relative[worst])},
        slack=slack,
        slack_times=v.times,
    )
    logger.info("%s: min slack %.3e (%s)", tag, report.slack_min, "pass" if report.passed else "fail")
    return report
