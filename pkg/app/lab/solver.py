"""
Explicit Runge-Kutta solver for du/dt = Delta_f u^p + N(t, x, u) and the
manufactured-pressure cases used by the identity checks.
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import sympy
from scipy.integrate import solve_ivp

from app.lab import catalog
from app.lab.errors import (
    BlowUp,
    ConfigError,
    NonFiniteField,
    NonPositiveInput,
    NonPositiveV,
    ShapeMismatch,
    StepCollapse,
)
from app.lab.fields import differential, laplacian_values, pairing
from app.lab.geometry import GeometryContext
from app.lab.stencils import d1
from app.models.models import Chart, ScalarField, SolveResult, SpaceTimeField

logger = logging.getLogger(__name__)

STEPPERS = {"rk2": "rk2", "explicit-rk2": "rk2", "rk4": "rk4", "explicit-rk4": "rk4"}
# Real-axis stability limits of the explicit schemes
STABILITY = {"rk2": 2.0, "rk4": 2.78}
# Largest eigenvalue scales of the fourth-order second and first derivative stencils
D2_SPECTRAL = 16.0 / 3.0
D1_SPECTRAL = 1.372
MIN_STEP = 1e-14


class NonlinearitySpec:
    """N(t, x, u) from the catalog with closed-form partials in u and x"""

    def __init__(self, tag: str, params: Optional[Dict[str, Any]], n: int):
        self.tag = tag
        self.params = dict(params or {})
        self.n = n
        self.expr = catalog.nonlinearity_expression(tag, n, self.params)
        coords = catalog.COORDS[:n]
        self._value = catalog.compile_scalar(self.expr, n, extra=(catalog.U,))
        self._d_u = catalog.compile_scalar(sympy.diff(self.expr, catalog.U), n, extra=(catalog.U,))
        self._d_x = [catalog.compile_scalar(sympy.diff(self.expr, c), n, extra=(catalog.U,)) for c in coords]
        self.spatially_constant = not (self.expr.free_symbols & set(coords))
        self.autonomous = self.spatially_constant and not self.expr.has(catalog.TIME)
        self.check_consistency()

    def __call__(self, points, t, u):
        return self._value(points, t, np.asarray(u, dtype=float))

    def partial_u(self, points, t, u):
        return self._d_u(points, t, np.asarray(u, dtype=float))

    def partial_x(self, points, t, u):
        return np.stack([d(points, t, np.asarray(u, dtype=float)) for d in self._d_x], axis=-1)

    def check_consistency(self, tol: float = 1e-6) -> None:
        """Closed-form dN/du against central differences at log-spaced u"""
        u = np.logspace(-2, 2, 25)
        points = np.zeros((u.size, self.n))
        h = 1e-6 * u
        fd = (self(points, 0.0, u + h) - self(points, 0.0, u - h)) / (2 * h)
        exact = self.partial_u(points, 0.0, u)
        bad = np.abs(fd - exact) > tol * np.maximum(1.0, np.abs(exact))
        if np.any(bad):
            raise ConfigError(
                f"nonlinearity '{self.tag}': dN/du disagrees with finite differences at u={u[bad][0]:.3g}",
                rule="nonlinearity-derivative",
            )

    def describe(self) -> Dict[str, Any]:
        return {"tag": self.tag, "params": self.params}


@dataclass
class SolverConfig:
    p: float
    t_start: float = 0.0
    t_end: float = 1.0
    stepper: str = "rk2"
    dt_policy: str = "cfl"
    safety: float = 0.4
    dt: Optional[float] = None
    floor: float = 1e-10
    stride: int = 8
    cap: float = 1e12
    form: str = "divergence"

    def __post_init__(self):
        if not self.p > 1:
            raise ConfigError(f"p = {self.p} outside the slow-diffusion range p > 1", rule="slow-diffusion")
        if self.stepper.lower() not in STEPPERS:
            raise ConfigError(f"unknown stepper '{self.stepper}'", rule="catalog-tag")
        self.stepper = STEPPERS[self.stepper.lower()]
        if self.dt_policy not in ("cfl", "fixed"):
            raise ConfigError(f"unknown time-step policy '{self.dt_policy}'", rule="catalog-tag")
        if self.dt_policy == "fixed" and not (self.dt and self.dt > 0):
            raise ConfigError("fixed time-step policy needs dt > 0", rule="fixed-dt")
        if not 0 < self.safety <= 1:
            raise ConfigError(f"safety factor {self.safety} outside (0, 1]", rule="cfl-safety")
        if not self.floor > 0:
            raise ConfigError("positivity floor must be positive", rule="positivity-floor")
        if not self.t_end > self.t_start:
            raise ConfigError(f"empty time window [{self.t_start}, {self.t_end}]", rule="time-window")
        if self.stride < 1:
            raise ConfigError("storage stride must be at least 1", rule="stride")


def _rhs_values(ctx, values, spec, p, t, floor, form):
    grid = ctx.on_grid(t)
    u = np.maximum(values, floor)
    rhs = laplacian_values(grid, u**p, form) + spec(ctx.chart.points, t, u)
    if not np.all(np.isfinite(rhs)):
        raise NonFiniteField(f"right-hand side non-finite at t={t:.6g}")
    return rhs


def step_rhs(
    ctx: GeometryContext,
    u: ScalarField,
    spec: NonlinearitySpec,
    p: float,
    t: float,
    floor: float = 1e-10,
    form: str = "coefficient",
) -> ScalarField:
    return ScalarField(u.chart, _rhs_values(ctx, u.values, spec, p, t, floor, form), t)


def stable_step(ctx: GeometryContext, values: np.ndarray, spec: NonlinearitySpec, cfg: SolverConfig, t: float) -> float:
    grid = ctx.on_grid(t)
    u = np.maximum(values, cfg.floor)
    dx = ctx.chart.min_spacing
    diffusion = float(np.max(cfg.p * u ** (cfg.p - 1) * grid.ginv_lambda_max))
    drift = float(np.max(np.linalg.norm(grid.drift, axis=-1) * cfg.p * u ** (cfg.p - 1)))
    bound = cfg.safety * dx * dx / max(diffusion + dx * drift, 1e-300)
    stab = cfg.safety * STABILITY[cfg.stepper] * dx * dx / max(
        ctx.n * D2_SPECTRAL * diffusion + dx * D1_SPECTRAL * drift, 1e-300
    )
    reaction = float(np.max(np.abs(spec.partial_u(ctx.chart.points, t, u))))
    dt = min(bound, stab)
    if reaction > 0:
        dt = min(dt, cfg.safety * STABILITY[cfg.stepper] / reaction)
    return dt


def _advance(ctx, values, spec, cfg, t, dt, frozen):
    def rhs(w, s):
        r = _rhs_values(ctx, w, spec, cfg.p, s, cfg.floor, cfg.form)
        if frozen is not None:
            r[frozen] = 0.0
        return r

    if cfg.stepper == "rk2":
        k1 = rhs(values, t)
        k2 = rhs(values + dt * k1, t + dt)
        return values + 0.5 * dt * (k1 + k2)
    k1 = rhs(values, t)
    k2 = rhs(values + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = rhs(values + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = rhs(values + dt * k3, t + dt)
    return values + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def solve(ctx: GeometryContext, u0: ScalarField, spec: NonlinearitySpec, cfg: SolverConfig) -> SolveResult:
    """Advance u0 over [t_start, t_end]; frames are uniform and include both endpoints"""
    if u0.values.shape != ctx.chart.shape:
        raise ShapeMismatch("initial data does not live on the solver chart")
    if np.min(u0.values) < cfg.floor:
        raise NonPositiveInput(f"initial data min {np.min(u0.values):.3g} below the floor {cfg.floor:.3g}")
    started = time.perf_counter()
    span = cfg.t_end - cfg.t_start
    values = np.array(u0.values, dtype=float)
    frozen = ~ctx.chart.interior if not ctx.chart.interior.all() else None

    if cfg.dt_policy == "fixed":
        dt0 = cfg.dt
    else:
        dt0 = stable_step(ctx, values, spec, cfg, cfg.t_start)
    n_frames = max(1, math.ceil(span / (cfg.stride * dt0) - 1e-9))
    frame_dt = span / n_frames

    frames = [values.copy()]
    step_times: List[float] = []
    min_trace: List[float] = []
    max_trace: List[float] = []
    dt_trace: List[float] = []
    clamp_trace: List[int] = []
    t = cfg.t_start
    for k in range(n_frames):
        frame_end = cfg.t_start + (k + 1) * frame_dt
        if cfg.dt_policy == "fixed":
            substeps = cfg.stride
        else:
            substeps = max(1, math.ceil(frame_dt / stable_step(ctx, values, spec, cfg, t) - 1e-9))
        dt = frame_dt / substeps
        if dt < MIN_STEP:
            raise StepCollapse(f"time step {dt:.3e} collapsed below {MIN_STEP:.0e} at t={t:.6g}")
        for j in range(substeps):
            values = _advance(ctx, values, spec, cfg, t, dt, frozen)
            t = frame_end if j == substeps - 1 else t + dt
            if not np.all(np.isfinite(values)):
                raise NonFiniteField(f"solution became non-finite at t={t:.6g}")
            top = float(np.max(values))
            if top > cfg.cap:
                raise BlowUp(f"max u = {top:.3e} exceeds cap {cfg.cap:.1e} at t={t:.6g}")
            low = values < cfg.floor
            clamps = int(np.count_nonzero(low))
            if clamps:
                values[low] = cfg.floor
            step_times.append(t)
            min_trace.append(float(np.min(values)))
            max_trace.append(top)
            dt_trace.append(dt)
            clamp_trace.append(clamps)
        frames.append(values.copy())
        logger.debug("frame %d/%d at t=%.6g (dt=%.3e)", k + 1, n_frames, t, dt)

    times = cfg.t_start + frame_dt * np.arange(n_frames + 1)
    times[-1] = cfg.t_end
    result = SolveResult(
        u=SpaceTimeField(ctx.chart, times, np.stack(frames)),
        step_times=np.array(step_times),
        min_trace=np.array(min_trace),
        max_trace=np.array(max_trace),
        dt_trace=np.array(dt_trace),
        clamp_trace=np.array(clamp_trace, dtype=int),
        wall_time=time.perf_counter() - started,
        p=cfg.p,
        floor=cfg.floor,
        nonlinearity=spec,
    )
    logger.info(
        "solve: %d steps, %d frames, last dt=%.3e, clamps=%d, %.2fs",
        len(dt_trace),
        n_frames + 1,
        dt_trace[-1],
        result.floor_activations,
        result.wall_time,
    )
    if result.flagged:
        logger.warning("positivity floor activated %d times", result.floor_activations)
    return result


def weighted_mass(ctx: GeometryContext, values: np.ndarray, t: float = 0.0) -> float:
    return float(np.sum(ctx.chart.quadrature_weights() * ctx.on_grid(t).density * values))


def initial_field(ctx: GeometryContext, profile: str, params: Optional[Dict[str, Any]], t: float, floor: float) -> ScalarField:
    """Catalog profile at time t, floored at the positivity floor"""
    expr = catalog.profile_expression(profile, ctx.n, params)
    values = catalog.compile_scalar(expr, ctx.n)(ctx.chart.points, t)
    return ScalarField(ctx.chart, np.maximum(values, floor), t)


def barenblatt_constants(n: int, p: float) -> Dict[str, float]:
    alpha = n / (n * (p - 1) + 2)
    return {"alpha": alpha, "beta": alpha / n, "k": alpha * (p - 1) / (2 * p * n)}


# ---------------------------------------------------------------------------
# manufactured pressures
# ---------------------------------------------------------------------------


class ManufacturedCase:
    """Closed-form pressure v(t, x) with Sigma := L[v] - |grad v|^2 so the pressure equation holds exactly.

    Sigma is treated as a function of (t, x) only: Sigma_v = 0 and Sigma_x is the
    total spatial gradient of Sigma.
    """

    def __init__(self, ctx: GeometryContext, v_expr: sympy.Expr, p: float, tag: str = "custom"):
        if ctx.symbolic is None:
            raise ConfigError("manufactured cases need an analytic geometry", rule="analytic-geometry")
        self.ctx = ctx
        self.p = p
        self.tag = tag
        n = ctx.n
        sym = ctx.symbolic
        self.v_expr = v_expr
        self.v_t_expr = sympy.diff(v_expr, catalog.TIME)
        self.sigma_expr = self.v_t_expr - (p - 1) * v_expr * sym.f_laplacian(v_expr) - sym.gradient_sq(v_expr)
        self.v = catalog.compile_scalar(v_expr, n)
        self.v_t = catalog.compile_scalar(self.v_t_expr, n)
        self.sigma = catalog.compile_scalar(self.sigma_expr, n)
        self._sigma_x = [catalog.compile_scalar(sympy.diff(self.sigma_expr, c), n) for c in catalog.COORDS[:n]]

    def sigma_x(self, points, t) -> np.ndarray:
        return np.stack([d(points, t) for d in self._sigma_x], axis=-1)

    def check_positive(self, times) -> None:
        for t in np.atleast_1d(times):
            low = float(np.min(self.v(self.ctx.chart.points, t)))
            if not low > 0:
                raise NonPositiveV(f"manufactured pressure '{self.tag}' reaches {low:.3g} at t={t:.6g}")

    def u_values(self, t: float) -> np.ndarray:
        v = self.v(self.ctx.chart.points, t)
        return ((self.p - 1) * v / self.p) ** (1.0 / (self.p - 1))

    def sigma_discrete(self, t: float) -> np.ndarray:
        """Sigma assembled with the grid operators and the exact time derivative"""
        grid = self.ctx.on_grid(t)
        v = self.v(self.ctx.chart.points, t)
        dv = differential(grid, v)
        return self.v_t(self.ctx.chart.points, t) - (self.p - 1) * v * laplacian_values(grid, v) - pairing(grid, dv, dv)

    def fields(self, times) -> Dict[str, Any]:
        times = np.asarray(times, dtype=float)
        pts = self.ctx.chart.points
        self.check_positive(times)
        return {
            "u": SpaceTimeField(self.ctx.chart, times, np.stack([self.u_values(t) for t in times])),
            "v": SpaceTimeField(self.ctx.chart, times, np.stack([self.v(pts, t) for t in times])),
            "sigma": SpaceTimeField(self.ctx.chart, times, np.stack([self.sigma(pts, t) for t in times])),
            "sigma_x": np.stack([self.sigma_x(pts, t) for t in times]),
            "sigma_v": np.zeros((len(times),) + self.ctx.chart.shape),
        }


def manufacture(
    ctx: GeometryContext, v_tag: str, p: float, params: Optional[Dict[str, Any]] = None, times=(0.0,)
) -> Dict[str, Any]:
    """u, Sigma, Sigma_x and Sigma_v (identically zero) for a catalog pressure"""
    case = ManufacturedCase(ctx, catalog.profile_expression(v_tag, ctx.n, params), p, v_tag)
    out = case.fields(times)
    out["case"] = case
    return out


def time_derivative(frames: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order differences along the leading (time) axis of stored frames"""
    if frames.shape[0] < 6:
        raise ShapeMismatch("time differentiation needs at least six stored frames")
    return d1(frames, 0, dt, False)


def ode_reference(spec: NonlinearitySpec, u0: float, t_start: float, t_end: float) -> Callable:
    """du/dt = N(u) for spatially constant data, integrated with scipy"""
    point = np.zeros((1, spec.n))
    sol = solve_ivp(
        lambda t, y: spec(point, t, y)[:1],
        (t_start, t_end),
        [u0],
        rtol=1e-11,
        atol=1e-13,
        dense_output=True,
    )
    return lambda t: sol.sol(t)[0]


# ---------------------------------------------------------------------------
# sanity checks used by scenarios
# ---------------------------------------------------------------------------


def mass_drift(ctx: GeometryContext, result: SolveResult) -> float:
    """Largest relative change of the weighted mass over the stored frames"""
    masses = np.array([weighted_mass(ctx, values, t) for t, values in zip(result.u.times, result.u.values)])
    return float(np.max(np.abs(masses - masses[0])) / max(abs(masses[0]), 1e-300))


def barenblatt_error(
    p: float = 2.0,
    resolution: int = 512,
    half_width: float = 6.0,
    t_start: float = 1.0,
    t_end: float = 2.0,
    C: float = 1.0,
    stepper: str = "rk4",
) -> Dict[str, float]:
    """Relative L1 distance to the closed-form Barenblatt profile after advancing on a bounded line"""
    chart = Chart(((-half_width, half_width),), (False,), (resolution,))
    ctx = GeometryContext.from_catalog(chart, "flat", "zero", np.inf)
    params = {"p": p, "C": C}
    cfg = SolverConfig(p=p, t_start=t_start, t_end=t_end, stepper=stepper, stride=64)
    spec = NonlinearitySpec("zero", {}, 1)
    result = solve(ctx, initial_field(ctx, "barenblatt", params, t_start, cfg.floor), spec, cfg)
    exact = catalog.compile_scalar(catalog.profile_expression("barenblatt", 1, params), 1)(chart.points, t_end)
    weights = chart.quadrature_weights()
    final = result.u.values[-1]
    error = float(np.sum(weights * np.abs(final - exact)) / np.sum(weights * exact))
    logger.info("barenblatt p=%.3g N=%d: relative L1 error %.3e", p, resolution, error)
    return {"l1_error": error, "floor_activations": float(result.floor_activations), "steps": float(len(result.dt_trace))}


def ode_reduction_error(ctx: GeometryContext, result: SolveResult) -> Dict[str, float]:
    """Spatially constant runs against the scipy ODE reference and their spatial spread"""
    spec = result.nonlinearity
    if spec is None or not spec.autonomous:
        raise ConfigError("ODE reduction needs an autonomous N(u)", rule="autonomous-nonlinearity")
    u = result.u
    reference = ode_reference(spec, float(np.mean(u.values[0])), float(u.times[0]), float(u.times[-1]))
    expected = np.array([reference(t) for t in u.times])
    means = u.values.reshape(len(u.times), -1).mean(axis=1)
    spread = float(np.max(np.ptp(u.values.reshape(len(u.times), -1), axis=1)))
    error = float(np.max(np.abs(means - expected) / np.maximum(1.0, np.abs(expected))))
    return {"ode_error": error, "spatial_spread": spread}
