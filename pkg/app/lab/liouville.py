"""
Liouville probes for ancient solutions: sign hypotheses on N(u), the
spatially constant ODE reduction run backwards in time, the growth gate on
sup v over a ladder of radii, and the combined verdict.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from app.lab.errors import ConfigError, ExponentOutOfRange, InsufficientLadder, StiffBlowup
from app.lab.estimates import beta_admissible_range, liouville_rhs, sigma_from_nonlinearity, t6_limit
from app.lab.solver import NonlinearitySpec
from app.models.models import AncientTrajectory, GrowthReport, LiouvilleVerdict, SignReport

logger = logging.getLogger(__name__)

LIOUVILLE_THEOREMS = ("T2-ancient", "T6-ancient")
SIGN_TOL = 1e-12
EQUIVALENCE_TOL = 1e-10


def _require_theorem(tag: str) -> None:
    if tag not in LIOUVILLE_THEOREMS:
        raise ConfigError(f"unknown Liouville theorem '{tag}'; known: {', '.join(LIOUVILLE_THEOREMS)}", rule="catalog-tag")


def effective_beta(tag: str, p: float, beta: Optional[float]) -> float:
    """beta for T2, the optimal -1/(p-1) for T6"""
    _require_theorem(tag)
    if tag == "T6-ancient":
        return -1.0 / (p - 1)
    if beta is None:
        raise ConfigError("T2-ancient needs beta", rule="beta-interval")
    return float(beta)


def growth_exponent(tag: str, p: float, beta: Optional[float] = None) -> float:
    """Allowed growth of u: 2/[(p-1)(2-beta)] for T2, 2/(2p-1) for T6"""
    if tag == "T6-ancient":
        return 2.0 / (2 * p - 1)
    return 2.0 / ((p - 1) * (2 - effective_beta(tag, p, beta)))


def gate_exponent(tag: str, p: float, beta: Optional[float] = None) -> float:
    """Power of R dividing sup v in the growth gate"""
    beta = effective_beta(tag, p, beta)
    return 1.0 / (1 - beta / 2) if tag == "T2-ancient" else (p - 1) / (p - 0.5)


@dataclass
class LiouvilleCase:
    theorem: str
    p: float
    m: float
    nonlinearity: NonlinearitySpec
    beta: Optional[float] = None
    u0: float = 1.0
    a: Optional[float] = None
    t_back: Optional[float] = None

    def __post_init__(self):
        _require_theorem(self.theorem)
        if self.theorem == "T2-ancient":
            span = beta_admissible_range(self.p, self.m)
            if self.beta is None or not span.contains(self.beta):
                raise ExponentOutOfRange(
                    f"beta = {self.beta} outside ({span.beta1:.12g}, {span.beta2:.12g})", rule="beta-interval"
                )
        elif not (1 < self.p < t6_limit(self.m)):
            raise ExponentOutOfRange(
                f"p = {self.p} outside (1, 1 + 1/sqrt(m-1)) for m = {self.m}", rule="t6-exponent-range"
            )
        if not self.u0 > 0:
            raise ConfigError("the ODE start value u0 must be positive", rule="positive-u0")
        if not self.nonlinearity.autonomous:
            raise ConfigError("Liouville probes need N = N(u)", rule="autonomous-nonlinearity")

    @property
    def growth_exponent(self) -> float:
        return growth_exponent(self.theorem, self.p, self.beta)


def default_samples(count: int = 1000) -> np.ndarray:
    return np.logspace(-6, 6, count)


def _evaluate(spec: NonlinearitySpec, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    points = np.zeros(u.shape + (spec.n,))
    return spec(points, 0.0, u), spec.partial_u(points, 0.0, u)


def check_sign_hypothesis(
    tag: str,
    spec: NonlinearitySpec,
    p: float,
    beta: Optional[float] = None,
    samples: Optional[np.ndarray] = None,
) -> SignReport:
    """[2(2-p) + beta(p-1)] N - 2u N_u >= 0 (T2) or (3-2p) N - 2u N_u >= 0 (T6) on u samples"""
    beta = effective_beta(tag, p, beta)
    u = default_samples() if samples is None else np.asarray(samples, dtype=float)
    if np.any(u <= 0):
        raise ConfigError("sign samples must be positive", rule="positive-samples")
    value, d_u = _evaluate(spec, u)
    values = (2 * (2 - p) + beta * (p - 1)) * value - 2 * u * d_u

    v = p * u ** (p - 1) / (p - 1)
    points = np.zeros(u.shape + (spec.n,))
    sigma, _, sigma_v = sigma_from_nonlinearity(spec, p, 0.0, points, v)
    lhs = 2 * sigma_v - beta * sigma / v
    rhs = (2 * (p - 2) - beta * (p - 1)) * value / u + 2 * d_u
    scale = np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    equivalence = float(np.max(np.abs(lhs - rhs) / scale))

    sign_min = float(np.min(values))
    holds = sign_min >= -SIGN_TOL
    logger.info("%s sign hypothesis for %s at beta=%.6g: min %.3e (%s)", tag, spec.tag, beta, sign_min, holds)
    return SignReport(
        theorem=tag,
        beta=beta,
        samples=u,
        values=values,
        sign_min=sign_min,
        holds=holds,
        equivalence_error=equivalence,
        nonlinearity_min=float(np.min(value)),
    )


def sweep_beta(spec: NonlinearitySpec, p: float, m: float, count: int = 21) -> List[Tuple[float, float]]:
    """(beta, sign_min) over the open admissible interval"""
    span = beta_admissible_range(p, m)
    betas = np.linspace(span.beta1, span.beta2, count + 2)[1:-1]
    return [(float(b), check_sign_hypothesis("T2-ancient", spec, p, b).sign_min) for b in betas]


def ancient_ode(spec: NonlinearitySpec, u0: float, t_back: float, a: Optional[float] = None) -> AncientTrajectory:
    """du/dt = N(u) from u(0) = u0 backwards to t_back, stopping where u reaches zero"""
    if not u0 > 0:
        raise ConfigError("u0 must be positive", rule="positive-u0")
    if not t_back < 0:
        raise ConfigError("t_back must be negative", rule="backward-window")
    point = np.zeros((1, spec.n))

    def hits_zero(t, y):
        return y[0]

    hits_zero.terminal = True
    hits_zero.direction = 0

    sol = solve_ivp(
        lambda t, y: spec(point, t, y)[:1],
        (0.0, t_back),
        [u0],
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
        events=hits_zero,
        dense_output=True,
    )
    if sol.status == -1:
        raise StiffBlowup(f"backward integration failed at t={sol.t[-1]:.6g}: {sol.message}", t=float(sol.t[-1]))
    violation = float(sol.t_events[0][0]) if sol.t_events[0].size else None
    bound = -u0 / a if a is not None and a > 0 else None
    if violation is not None:
        logger.info("backward trajectory from u0=%.6g reaches zero at t=%.10g", u0, violation)
    return AncientTrajectory(t=sol.t, u=sol.y[0], violation_time=violation, bound=bound)


def growth_gate(
    tag: str,
    p: float,
    beta: Optional[float],
    ladder: Sequence[Tuple[float, float]],
    C: float = 1.0,
) -> GrowthReport:
    """M(R) R^{-1/(1-beta/2)} -> 0 (T2) or M(R) R^{-(p-1)/(p-1/2)} -> 0 (T6) over a ladder of radii"""
    beta = effective_beta(tag, p, beta)
    if len(ladder) < 3:
        raise InsufficientLadder(f"growth gate needs at least 3 radii, got {len(ladder)}")
    table = np.asarray(sorted(ladder), dtype=float)
    radii, sup_values = table[:, 0], table[:, 1]
    if np.any(radii <= 0) or np.any(sup_values < 0):
        raise ConfigError("growth ladder needs R > 0 and M >= 0", rule="growth-ladder")
    exponent = gate_exponent(tag, p, beta)
    quotients = sup_values * radii ** (-exponent)
    positive = quotients > 0
    if np.sum(positive) >= 2:
        slope = float(np.polyfit(np.log(radii[positive]), np.log(quotients[positive]), 1)[0])
    else:
        slope = -np.inf
    passed = bool(slope < -1e-6 and quotients[-1] < quotients[0]) or not np.any(positive)
    limits = {
        "first": C * sup_values ** (1 - beta / 2) / radii,
        "second": C * sup_values ** ((1 - beta) / 2) / radii,
    }
    limits["bound"] = liouville_rhs(sup_values, radii, beta, C)
    logger.info("%s growth gate: exponent %.6g, log-slope %.4g (%s)", tag, exponent, slope, passed)
    return GrowthReport(
        theorem=tag,
        exponent=exponent,
        radii=radii,
        sup_values=sup_values,
        quotients=quotients,
        limit_quotients=limits,
        slope=slope,
        passed=passed,
    )


def liouville_verdict(case: LiouvilleCase, samples: Optional[np.ndarray] = None) -> LiouvilleVerdict:
    sign = check_sign_hypothesis(case.theorem, case.nonlinearity, case.p, case.beta, samples)
    notes = []
    if case.a is not None:
        a = case.a
        positivity = a > 0 and sign.nonlinearity_min >= a
    else:
        a = sign.nonlinearity_min
        positivity = a > 0
    if sign.equivalence_error > EQUIVALENCE_TOL:
        notes.append(f"algebraic equivalence off by {sign.equivalence_error:.3e}")
    t_back = case.t_back if case.t_back is not None else (-2.0 * case.u0 / a if a > 0 else -10.0)
    trajectory = ancient_ode(case.nonlinearity, case.u0, t_back, a if a > 0 else None)

    if not (sign.holds and positivity):
        verdict = "hypotheses-not-met"
    elif trajectory.violation_time is not None:
        verdict = "no-ancient-solution"
    else:
        verdict = "inconclusive"
    if case.theorem == "T2-ancient":
        notes.append(f"sign hypothesis checked at beta = {sign.beta:.12g} only")
    if trajectory.bound is not None and trajectory.violation_time is not None:
        notes.append(f"violation at {trajectory.violation_time:.10g}, lower bound -u0/a = {trajectory.bound:.10g}")
    logger.info("%s verdict for %s: %s", case.theorem, case.nonlinearity.tag, verdict)
    return LiouvilleVerdict(
        theorem=case.theorem,
        sign_min=sign.sign_min,
        sign_holds=sign.holds,
        positivity_holds=positivity,
        violation_time=trajectory.violation_time,
        trajectory_t=trajectory.t,
        trajectory_u=trajectory.u,
        verdict=verdict,
        notes=notes,
    )
