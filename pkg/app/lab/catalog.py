"""
Parameterized catalog of closed-form inputs.

Every metric, potential, space-time profile, nonlinearity, time weight and
auxiliary function the lab accepts is built here as a sympy expression and
compiled with ``lambdify``.  Symbolic derivatives come for free, and the
``SymbolicGeometry`` helper provides the exact operators that serve as
oracles for the discrete ones.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy
from scipy.interpolate import CubicSpline

from app.lab.errors import ConfigError

logger = logging.getLogger(__name__)

MAX_DIMENSION = 4
COORDS: Tuple[sympy.Symbol, ...] = sympy.symbols(f"x0:{MAX_DIMENSION}", real=True)
TIME = sympy.Symbol("t", real=True)
U = sympy.Symbol("u", positive=True)
V = sympy.Symbol("v", positive=True)


def compile_scalar(expr: sympy.Expr, n: int, extra: Sequence[sympy.Symbol] = ()) -> Callable:
    """Compile ``expr(x0..x{n-1}, t, *extra)`` into a broadcasting numpy evaluator.

    The evaluator takes ``points`` with trailing axis n, a time (scalar or
    array broadcastable to the point batch) and the extra arrays.
    """
    args = list(COORDS[:n]) + [TIME] + list(extra)
    fn = sympy.lambdify(args, expr, modules="numpy")

    def evaluate(points, t, *extra_values):
        points = np.asarray(points, dtype=float)
        shapes = [points.shape[:-1], np.shape(t)] + [np.shape(e) for e in extra_values]
        batch = np.broadcast_shapes(*shapes)
        coords = [points[..., i] for i in range(n)]
        with np.errstate(all="ignore"):
            out = fn(*coords, np.asarray(t, dtype=float), *extra_values)
        return np.array(np.broadcast_to(np.asarray(out, dtype=float), batch))

    return evaluate


def compile_tensor(components: np.ndarray, n: int) -> Callable:
    """Compile an object array of sympy expressions into an evaluator returning batch + shape"""
    shape = components.shape
    flat = [compile_scalar(sympy.sympify(c), n) for c in components.ravel()]

    def evaluate(points, t):
        values = [fn(points, t) for fn in flat]
        batch = values[0].shape
        return np.stack(values, axis=-1).reshape(batch + shape)

    return evaluate


def _spatially_constant(expr: sympy.Expr, n: int) -> bool:
    return not (sympy.sympify(expr).free_symbols & set(COORDS[:n]))


def _param(params: Dict[str, Any], name: str, default: Any) -> Any:
    return params.get(name, default)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _metric_flat(n: int, params: Dict[str, Any]) -> sympy.Matrix:
    return sympy.Float(_param(params, "scale", 1.0)) * sympy.eye(n)


def _metric_conformal_flat(n: int, params: Dict[str, Any]) -> sympy.Matrix:
    rate = sympy.Float(_param(params, "rate", -0.5))
    return sympy.exp(2 * rate * TIME) * sympy.eye(n)


def _metric_round_sphere(n: int, params: Dict[str, Any]) -> sympy.Matrix:
    if n != 2:
        raise ConfigError("round-sphere metric needs a 2-dimensional (theta, phi) chart", rule="sphere-chart")
    radius = sympy.Float(_param(params, "radius", 1.0))
    theta = COORDS[0]
    return sympy.diag(radius**2, radius**2 * sympy.sin(theta) ** 2)


def _metric_hyperbolic(n: int, params: Dict[str, Any]) -> sympy.Matrix:
    if n < 2:
        raise ConfigError("hyperbolic half-space metric needs n >= 2", rule="hyperbolic-chart")
    return sympy.eye(n) / COORDS[n - 1] ** 2


def _metric_conformal_periodic(n: int, params: Dict[str, Any]) -> sympy.Matrix:
    amplitude = sympy.Float(_param(params, "amplitude", 0.2))
    bump = sympy.sin(COORDS[0])
    if n >= 2:
        bump = bump * sympy.cos(COORDS[1])
    return sympy.exp(2 * amplitude * bump) * sympy.eye(n)


METRICS: Dict[str, Callable[[int, Dict[str, Any]], sympy.Matrix]] = {
    "flat": _metric_flat,
    "conformal-flat": _metric_conformal_flat,
    "round-sphere": _metric_round_sphere,
    "hyperbolic": _metric_hyperbolic,
    "conformal-periodic": _metric_conformal_periodic,
}


def metric_expression(tag: str, n: int, params: Optional[Dict[str, Any]] = None) -> sympy.Matrix:
    if tag not in METRICS:
        raise ConfigError(f"unknown metric tag '{tag}'", rule="catalog-tag")
    return METRICS[tag](n, params or {})


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------


def _potential(tag: str, n: int, params: Dict[str, Any]) -> sympy.Expr:
    axis = int(_param(params, "axis", 0))
    if axis >= n:
        raise ConfigError(f"axis {axis} outside a {n}-dimensional chart", rule="catalog-axis")
    x = COORDS[axis]
    if tag == "zero":
        return sympy.Integer(0)
    if tag == "constant":
        return sympy.Float(_param(params, "value", 1.0))
    if tag == "linear":
        return sympy.Float(_param(params, "slope", 1.0)) * x
    if tag == "quadratic":
        scale = sympy.Float(_param(params, "scale", 1.0))
        return scale * sum(c**2 for c in COORDS[:n]) / 2
    if tag == "sine":
        amplitude = sympy.Float(_param(params, "amplitude", 0.3))
        wavenumber = sympy.Float(_param(params, "wavenumber", 1.0))
        return amplitude * sympy.sin(wavenumber * x)
    if tag == "time-linear":
        return sympy.Float(_param(params, "rate", 1.0)) * TIME
    raise ConfigError(f"unknown potential tag '{tag}'", rule="catalog-tag")


POTENTIALS = ("zero", "constant", "linear", "quadratic", "sine", "time-linear")


def potential_expression(tag: str, n: int, params: Optional[Dict[str, Any]] = None) -> sympy.Expr:
    return _potential(tag, n, params or {})


# ---------------------------------------------------------------------------
# space-time profiles (initial data, manufactured pressures, test fields)
# ---------------------------------------------------------------------------


def _profile(tag: str, n: int, params: Dict[str, Any]) -> sympy.Expr:
    axis = int(_param(params, "axis", 0))
    if axis >= n:
        raise ConfigError(f"axis {axis} outside a {n}-dimensional chart", rule="catalog-axis")
    x = COORDS[axis]
    base = sympy.Float(_param(params, "base", 2.0))
    amp = sympy.Float(_param(params, "amp", 1.0))
    if tag == "constant":
        return sympy.Float(_param(params, "value", 1.0))
    if tag == "exp-time":
        return sympy.Float(_param(params, "scale", 1.0)) * sympy.exp(sympy.Float(_param(params, "rate", -1.0)) * TIME)
    if tag == "decay-sine":
        rate = sympy.Float(_param(params, "rate", 1.0))
        return sympy.exp(-rate * TIME) * (base + amp * sympy.sin(x))
    if tag == "static-sine":
        return base + amp * sympy.sin(x)
    if tag == "static-cosine":
        return base + amp * sympy.cos(x)
    if tag == "cosine":
        return amp * sympy.cos(x)
    if tag == "sine":
        return amp * sympy.sin(x)
    if tag == "sine-product":
        if n < 2:
            raise ConfigError("sine-product needs n >= 2", rule="catalog-axis")
        return base + amp * sympy.sin(COORDS[0]) * sympy.cos(COORDS[1])
    if tag == "travelling-sine":
        speed = sympy.Float(_param(params, "speed", 0.5))
        return base + amp * sympy.sin(x - speed * TIME)
    if tag == "linear":
        return sympy.Float(_param(params, "offset", 0.0)) + sympy.Float(_param(params, "slope", 1.0)) * x
    if tag == "quadratic":
        return sympy.Float(_param(params, "scale", 1.0)) * sum(c**2 for c in COORDS[:n]) / 2
    if tag == "product":
        if n < 2:
            raise ConfigError("product profile needs n >= 2", rule="catalog-axis")
        return COORDS[0] * COORDS[1]
    if tag == "bump":
        center = list(_param(params, "center", [0.0] * n))
        width = sympy.Float(_param(params, "width", 0.5))
        height = sympy.Float(_param(params, "height", 1.0))
        r2 = sum((COORDS[i] - sympy.Float(center[i])) ** 2 for i in range(n))
        return sympy.Float(_param(params, "base", 1.0)) + height * sympy.exp(-r2 / width**2)
    if tag == "barenblatt":
        p = sympy.Float(_param(params, "p", 2.0))
        mass = sympy.Float(_param(params, "C", 1.0))
        alpha = n / (n * (p - 1) + 2)
        spread = alpha / n
        k = alpha * (p - 1) / (2 * p * n)
        r2 = sum(c**2 for c in COORDS[:n])
        core = mass - k * r2 * TIME ** (-2 * spread)
        return sympy.Piecewise((TIME ** (-alpha) * core ** (1 / (p - 1)), core > 0), (0, True))
    raise ConfigError(f"unknown profile tag '{tag}'", rule="catalog-tag")


PROFILES = (
    "constant",
    "exp-time",
    "decay-sine",
    "static-sine",
    "static-cosine",
    "cosine",
    "sine",
    "sine-product",
    "travelling-sine",
    "linear",
    "quadratic",
    "product",
    "bump",
    "barenblatt",
)


def profile_expression(tag: str, n: int, params: Optional[Dict[str, Any]] = None) -> sympy.Expr:
    return _profile(tag, n, params or {})


# ---------------------------------------------------------------------------
# nonlinearities N(t, x, u)
# ---------------------------------------------------------------------------


def coefficient_expression(spec: Any, n: int) -> sympy.Expr:
    """A coefficient A(t,x): a plain number or a small tagged dictionary"""
    if isinstance(spec, (int, float)):
        return sympy.Float(spec)
    if not isinstance(spec, dict) or "tag" not in spec:
        raise ConfigError(f"bad coefficient {spec!r}", rule="catalog-tag")
    tag = spec["tag"]
    if tag == "constant":
        return sympy.Float(spec.get("value", 1.0))
    if tag == "sine":
        axis = int(spec.get("axis", 0))
        if axis >= n:
            raise ConfigError(f"axis {axis} outside a {n}-dimensional chart", rule="catalog-axis")
        return sympy.Float(spec.get("base", 0.0)) + sympy.Float(spec.get("amp", 1.0)) * sympy.sin(COORDS[axis])
    if tag == "exp-time":
        return sympy.Float(spec.get("scale", 1.0)) * sympy.exp(sympy.Float(spec.get("rate", -1.0)) * TIME)
    raise ConfigError(f"unknown coefficient tag '{tag}'", rule="catalog-tag")


def nonlinearity_expression(tag: str, n: int, params: Optional[Dict[str, Any]] = None) -> sympy.Expr:
    params = params or {}
    if tag == "zero":
        return sympy.Integer(0)
    if tag == "constant":
        return coefficient_expression(params.get("a", 1.0), n)
    if tag == "linear":
        return coefficient_expression(params.get("a", 1.0), n) * U
    if tag == "log":
        return coefficient_expression(params.get("A", 1.0), n) * U * sympy.log(U)
    if tag == "one-plus-square":
        a = coefficient_expression(params.get("a", 1.0), n)
        b = coefficient_expression(params.get("b", 1.0), n)
        return a + b * U**2
    if tag == "yamabe":
        alpha = float(params.get("alpha", 1.0))
        beta = float(params.get("beta", -1.0))
        _check_power_exponents([alpha], [beta])
        a = coefficient_expression(params.get("A", 1.0), n)
        b = coefficient_expression(params.get("B", 1.0), n)
        return a * U ** sympy.Float(alpha) + b * U ** sympy.Float(beta)
    if tag == "power-sum":
        alphas = [float(e) for e in params.get("alphas", [])]
        betas = [float(e) for e in params.get("betas", [])]
        a_coeffs = list(params.get("A", [1.0] * len(alphas)))
        b_coeffs = list(params.get("B", [1.0] * len(betas)))
        if len(a_coeffs) != len(alphas) or len(b_coeffs) != len(betas):
            raise ConfigError("power-sum coefficient and exponent lists differ in length", rule="power-sum-shape")
        _check_power_exponents(alphas, betas)
        expr = sympy.Integer(0)
        for coeff, alpha in zip(a_coeffs, alphas):
            expr += coefficient_expression(coeff, n) * U ** sympy.Float(alpha)
        for coeff, beta in zip(b_coeffs, betas):
            expr += coefficient_expression(coeff, n) * U ** sympy.Float(beta)
        return expr
    raise ConfigError(f"unknown nonlinearity tag '{tag}'", rule="catalog-tag")


def _check_power_exponents(alphas: Sequence[float], betas: Sequence[float]) -> None:
    if any(a < 0 for a in alphas) or any(b > 0 for b in betas):
        raise ConfigError("power exponents need alpha_j >= 0 and beta_j <= 0", rule="power-sum-exponents")


NONLINEARITIES = ("zero", "constant", "linear", "log", "one-plus-square", "yamabe", "power-sum")


# ---------------------------------------------------------------------------
# time weights zeta(t) and auxiliary functions Gamma(v)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeWeight:
    """zeta(t) with its derivative"""

    tag: str
    expr: sympy.Expr
    value: Callable = field(repr=False, compare=False)
    derivative: Callable = field(repr=False, compare=False)

    def __call__(self, t):
        return self.value(t)


def time_weight(tag: str, params: Optional[Dict[str, Any]] = None) -> TimeWeight:
    params = params or {}
    kappa = sympy.Float(params.get("kappa", 0.0))
    if tag == "one":
        expr = sympy.Integer(1)
    elif tag == "exp-decay":
        s = sympy.Float(params.get("s", 2.0))
        a = sympy.Float(params.get("a", 0.0))
        expr = sympy.exp(-s * (kappa + a) * TIME)
    elif tag == "kt":
        expr = TIME / (1 + 2 * kappa * TIME)
    else:
        raise ConfigError(f"unknown time weight '{tag}'", rule="catalog-tag")
    value = sympy.lambdify(TIME, expr, modules="numpy")
    derivative = sympy.lambdify(TIME, sympy.diff(expr, TIME), modules="numpy")
    return TimeWeight(
        tag=tag,
        expr=expr,
        value=lambda t: np.asarray(value(np.asarray(t, dtype=float)), dtype=float) + 0.0 * np.asarray(t, dtype=float),
        derivative=lambda t: np.asarray(derivative(np.asarray(t, dtype=float)), dtype=float)
        + 0.0 * np.asarray(t, dtype=float),
    )


class GammaAux:
    """Auxiliary function Gamma(v) with first and second derivatives"""

    def __init__(self, tag: str, value: Callable, d1: Callable, d2: Callable):
        self.tag = tag
        self.value = value
        self.d1 = d1
        self.d2 = d2

    def __call__(self, v):
        return self.value(v)

    @classmethod
    def from_expression(cls, tag: str, expr: sympy.Expr) -> "GammaAux":
        fns = [sympy.lambdify(V, sympy.diff(expr, V, k), modules="numpy") for k in range(3)]

        def wrap(fn):
            return lambda v: np.asarray(fn(np.asarray(v, dtype=float)), dtype=float) + 0.0 * np.asarray(v, dtype=float)

        return cls(tag, *[wrap(fn) for fn in fns])

    @classmethod
    def tabulated(cls, table: Sequence[Sequence[float]]) -> "GammaAux":
        data = np.asarray(table, dtype=float)
        if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 4:
            raise ConfigError("tabulated Gamma needs at least four (v, Gamma) rows", rule="gamma-table")
        order = np.argsort(data[:, 0])
        spline = CubicSpline(data[order, 0], data[order, 1])
        return cls("tabulated", spline, spline.derivative(1), spline.derivative(2))


def gamma_aux(tag: str, p: float, params: Optional[Dict[str, Any]] = None) -> GammaAux:
    params = params or {}
    if tag == "zero":
        return GammaAux.from_expression(tag, sympy.Integer(0) * V)
    if tag == "identity":
        return GammaAux.from_expression(tag, V)
    if tag == "power":
        pp = sympy.Float(p)
        return GammaAux.from_expression(tag, (pp - 1) * V ** (pp / (pp - 1)) / pp**2)
    if tag == "tabulated":
        return GammaAux.tabulated(params.get("table", []))
    raise ConfigError(f"unknown Gamma(v) tag '{tag}'", rule="catalog-tag")


TIME_WEIGHTS = ("one", "exp-decay", "kt")
GAMMA_AUX = ("zero", "identity", "power", "tabulated")


# ---------------------------------------------------------------------------
# symbolic oracle
# ---------------------------------------------------------------------------


class SymbolicGeometry:
    """Exact operators for a catalog metric and potential"""

    def __init__(self, metric: sympy.Matrix, potential: sympy.Expr, n: int):
        self.n = n
        self.coords = COORDS[:n]
        self.g = metric
        self.ginv = metric.inv(method="LU")
        self.sqrt_det = sympy.sqrt(metric.det())
        self.f = potential

    def d(self, expr: sympy.Expr, i: int) -> sympy.Expr:
        return sympy.diff(expr, self.coords[i])

    def inner(self, a: sympy.Expr, b: sympy.Expr) -> sympy.Expr:
        return sum(self.ginv[i, j] * self.d(a, i) * self.d(b, j) for i in range(self.n) for j in range(self.n))

    def gradient_sq(self, w: sympy.Expr) -> sympy.Expr:
        return self.inner(w, w)

    def laplacian(self, w: sympy.Expr) -> sympy.Expr:
        flux = [self.sqrt_det * sum(self.ginv[i, j] * self.d(w, j) for j in range(self.n)) for i in range(self.n)]
        return sum(self.d(flux[i], i) for i in range(self.n)) / self.sqrt_det

    def f_laplacian(self, w: sympy.Expr) -> sympy.Expr:
        return self.laplacian(w) - self.inner(self.f, w)

    def christoffel(self) -> List[List[List[sympy.Expr]]]:
        n = self.n
        return [
            [
                [
                    sum(
                        self.ginv[k, l] * (self.d(self.g[j, l], i) + self.d(self.g[i, l], j) - self.d(self.g[i, j], l))
                        for l in range(n)
                    )
                    / 2
                    for j in range(n)
                ]
                for i in range(n)
            ]
            for k in range(n)
        ]

    def hessian(self, w: sympy.Expr) -> sympy.Matrix:
        gamma = self.christoffel()
        n = self.n
        return sympy.Matrix(
            n,
            n,
            lambda i, j: sympy.diff(w, self.coords[i], self.coords[j])
            - sum(gamma[k][i][j] * self.d(w, k) for k in range(n)),
        )

    def hessian_sq(self, w: sympy.Expr) -> sympy.Expr:
        hess = self.hessian(w)
        mixed = self.ginv * hess * self.ginv * hess
        return mixed.trace()

    def ricci(self) -> sympy.Matrix:
        gamma = self.christoffel()
        n = self.n

        def entry(i, j):
            total = 0
            for k in range(n):
                total += self.d(gamma[k][i][j], k) - self.d(gamma[k][k][j], i)
                for l in range(n):
                    total += gamma[k][i][j] * gamma[l][l][k] - gamma[l][i][k] * gamma[k][l][j]
            return total

        return sympy.Matrix(n, n, entry)

    def bakry_emery(self, m: float) -> sympy.Matrix:
        ric = self.ricci() + self.hessian(self.f)
        if np.isfinite(m) and m > self.n:
            df = sympy.Matrix([self.d(self.f, i) for i in range(self.n)])
            ric = ric - df * df.T / (sympy.Float(m) - self.n)
        return ric


def catalog_listing() -> Dict[str, List[str]]:
    return {
        "metrics": sorted(METRICS),
        "potentials": list(POTENTIALS),
        "profiles": list(PROFILES),
        "nonlinearities": list(NONLINEARITIES),
        "time_weights": list(TIME_WEIGHTS),
        "gamma_aux": list(GAMMA_AUX),
    }


def require_tag(tag: str, known: Sequence[str], what: str) -> str:
    """Schema-side tag check; pydantic turns the ValueError into a field error"""
    if tag not in known:
        raise ValueError(f"unknown {what} '{tag}'; known: {', '.join(known)} [rule: catalog-tag]")
    return tag
