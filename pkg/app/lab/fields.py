"""
Discrete differential operators on chart grids.

The array-level helpers (``differential``, ``pairing``, ``laplacian_values``,
``hessian_values``) take a ``GridGeometry`` and raw values and are shared by
the solver and the evolution checks; the public operations wrap them for
``ScalarField`` inputs and add validation.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import sympy

from app.lab import catalog, stencils
from app.lab.errors import MissingArtifact, NonFiniteField, ShapeMismatch, UnknownCase
from app.lab.geometry import GeometryContext, GridGeometry
from app.models.models import Chart, DiffReport, ScalarField

logger = logging.getLogger(__name__)

DUMP_MAGIC = b"HSZF"
DUMP_DTYPE = b"f8le"


def require_finite(values: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        bad = int(np.size(values) - np.count_nonzero(np.isfinite(values)))
        raise NonFiniteField(f"{what}: {bad} non-finite samples")
    return values


def _check_field(ctx: GeometryContext, w: ScalarField) -> None:
    if w.chart is not ctx.chart and w.chart.shape != ctx.chart.shape:
        raise ShapeMismatch(f"field on grid {w.chart.shape} but geometry on {ctx.chart.shape}")


# ---------------------------------------------------------------------------
# array-level operators
# ---------------------------------------------------------------------------


def differential(grid: GridGeometry, values: np.ndarray) -> np.ndarray:
    """Covector of first partials, trailing axis n"""
    return stencils.partials(values, grid.chart.spacing, grid.chart.periodic)


def raise_index(grid: GridGeometry, covector: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", grid.ginv, covector)


def pairing(grid: GridGeometry, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """g^{ij} a_i b_j for two covectors"""
    return np.einsum("...ij,...i,...j->...", grid.ginv, a, b)


def form_on(grid: GridGeometry, tensor: np.ndarray, covector: np.ndarray) -> np.ndarray:
    """T(grad w, grad w) for a covariant 2-tensor T and the differential of w"""
    vec = raise_index(grid, covector)
    return np.einsum("...ij,...i,...j->...", tensor, vec, vec)


def laplacian_values(grid: GridGeometry, values: np.ndarray, form: str = "coefficient") -> np.ndarray:
    chart = grid.chart
    if form == "coefficient":
        second = stencils.second_partials(values, chart.spacing, chart.periodic)
        first = differential(grid, values)
        return np.einsum("...ij,...ij->...", grid.ginv, second) + np.einsum("...j,...j->...", grid.drift, first)
    if form == "divergence":
        flux = grid.density[..., None] * raise_index(grid, differential(grid, values))
        div = sum(stencils.d1(flux[..., i], i, chart.spacing[i], chart.periodic[i]) for i in range(chart.n))
        return div / grid.density
    raise UnknownCase(f"unknown f-Laplacian form '{form}'")


def hessian_values(grid: GridGeometry, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    chart = grid.chart
    second = stencils.second_partials(values, chart.spacing, chart.periodic)
    hess = second - np.einsum("...kij,...k->...ij", grid.christoffel, differential(grid, values))
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    mixed = grid.ginv @ hess
    return hess, np.einsum("...ij,...ji->...", mixed, mixed)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def gradient(ctx: GeometryContext, w: ScalarField) -> Tuple[np.ndarray, ScalarField]:
    """(grad^i w, |grad w|^2)"""
    _check_field(ctx, w)
    grid = ctx.on_grid(w.time)
    dw = differential(grid, w.values)
    vec = raise_index(grid, dw)
    grad_sq = np.maximum(np.einsum("...i,...i->...", vec, dw), 0.0)
    return require_finite(vec, "gradient"), ScalarField(w.chart, require_finite(grad_sq, "|grad w|^2"), w.time)


def f_laplacian(ctx: GeometryContext, w: ScalarField, form: str = "coefficient") -> ScalarField:
    _check_field(ctx, w)
    values = laplacian_values(ctx.on_grid(w.time), w.values, form)
    return ScalarField(w.chart, require_finite(values, "f-Laplacian"), w.time)


def hessian(ctx: GeometryContext, w: ScalarField) -> Tuple[np.ndarray, ScalarField]:
    _check_field(ctx, w)
    hess, hess_sq = hessian_values(ctx.on_grid(w.time), w.values)
    hess_sq = np.maximum(hess_sq, 0.0)
    return require_finite(hess, "Hessian"), ScalarField(w.chart, require_finite(hess_sq, "|Hess w|^2"), w.time)


def inner(ctx: GeometryContext, a: ScalarField, b: ScalarField) -> ScalarField:
    _check_field(ctx, a)
    grid = ctx.on_grid(a.time)
    values = pairing(grid, differential(grid, a.values), differential(grid, b.values))
    return ScalarField(a.chart, require_finite(values, "<grad a, grad b>"), a.time)


def bochner_residual(ctx: GeometryContext, w: ScalarField) -> Tuple[ScalarField, ScalarField]:
    """(weighted Bochner residual with Ric_f, m-inequality slack with Ric_f^m)"""
    _check_field(ctx, w)
    grid = ctx.on_grid(w.time)
    dw = differential(grid, w.values)
    grad_sq = pairing(grid, dw, dw)
    lap = laplacian_values(grid, w.values)
    _, hess_sq = hessian_values(grid, w.values)
    left = 0.5 * laplacian_values(grid, grad_sq) - pairing(grid, dw, differential(grid, lap))
    residual = left - hess_sq - form_on(grid, grid.ric_f, dw)
    dimension_term = 0.0 if np.isinf(ctx.m) else lap**2 / ctx.m
    slack = left - dimension_term - form_on(grid, grid.ric_fm, dw)
    return (
        ScalarField(w.chart, require_finite(residual, "Bochner residual"), w.time),
        ScalarField(w.chart, require_finite(slack, "Bochner slack"), w.time),
    )


def cauchy_schwarz_slack(ctx: GeometryContext, v: ScalarField) -> ScalarField:
    """|Hess v|^2 + <grad f, grad v>^2/(m-n) - (Delta_f v)^2/m"""
    _check_field(ctx, v)
    grid = ctx.on_grid(v.time)
    dv = differential(grid, v.values)
    _, hess_sq = hessian_values(grid, v.values)
    lap = laplacian_values(grid, v.values)
    if np.isinf(ctx.m):
        slack = hess_sq
    elif ctx.m == ctx.n:
        slack = hess_sq - lap**2 / ctx.m
    else:
        slack = hess_sq + pairing(grid, grid.df, dv) ** 2 / (ctx.m - ctx.n) - lap**2 / ctx.m
    return ScalarField(v.chart, require_finite(slack, "Cauchy-Schwarz slack"), v.time)


def weighted_norms(ctx: GeometryContext, values: np.ndarray, t: float = 0.0) -> Tuple[float, float]:
    """(max, L2 in the weighted measure) over interior samples"""
    chart = ctx.chart
    mask = chart.interior
    interior = np.abs(values[mask])
    if interior.size == 0:
        return 0.0, 0.0
    weights = (chart.quadrature_weights() * ctx.on_grid(t).density)[mask]
    return float(np.max(interior)), float(np.sqrt(np.sum(weights * interior**2)))


def integration_by_parts_defect(ctx: GeometryContext, u: ScalarField, v: ScalarField) -> float:
    """sum u Delta_f v dmu + sum <grad u, grad v> dmu on a closed chart"""
    grid = ctx.on_grid(u.time)
    weights = ctx.chart.quadrature_weights() * grid.density
    lap = laplacian_values(grid, v.values)
    cross = pairing(grid, differential(grid, u.values), differential(grid, v.values))
    return float(np.sum(weights * (u.values * lap + cross)))


# ---------------------------------------------------------------------------
# refinement studies against the symbolic oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldCase:
    metric: str
    profile: str
    extents: Tuple[Tuple[float, float], ...]
    periodic: Tuple[bool, ...]
    potential: str = "zero"
    m: float = np.inf
    metric_params: Dict[str, Any] = field(default_factory=dict)
    potential_params: Dict[str, Any] = field(default_factory=dict)
    profile_params: Dict[str, Any] = field(default_factory=dict)

    def context(self, resolution: int) -> GeometryContext:
        chart = Chart(self.extents, self.periodic, tuple([resolution] * len(self.extents)))
        return GeometryContext.from_catalog(
            chart, self.metric, self.potential, self.m, self.metric_params, self.potential_params
        )

    def profile_expr(self) -> sympy.Expr:
        return catalog.profile_expression(self.profile, len(self.extents), self.profile_params)


TWO_PI = 2 * np.pi
FIELD_CASES: Dict[str, FieldCase] = {
    "sin-x": FieldCase("flat", "sine", ((0.0, TWO_PI),), (True,)),
    "linear-x1": FieldCase("flat", "linear", ((0.0, 1.0), (0.0, 1.0)), (False, False)),
    "sin-x1-2d": FieldCase("flat", "sine", ((0.0, TWO_PI), (0.0, TWO_PI)), (True, True)),
    "weighted-sine": FieldCase(
        "flat",
        "sine-product",
        ((0.0, TWO_PI), (0.0, TWO_PI)),
        (True, True),
        potential="sine",
        m=3.0,
        potential_params={"amplitude": 0.3},
    ),
    "sphere-cos": FieldCase("round-sphere", "cosine", ((0.1, np.pi - 0.1), (0.0, TWO_PI)), (False, True)),
    "conformal-periodic": FieldCase(
        "conformal-periodic",
        "sine-product",
        ((0.0, TWO_PI), (0.0, TWO_PI)),
        (True, True),
        potential="sine",
        m=3.0,
    ),
}

OPERATORS = ("gradient", "hessian", "f_laplacian", "divergence_laplacian", "bochner_residual")


def _discrete_and_exact(op: str, ctx: GeometryContext, w_expr: sympy.Expr) -> Tuple[np.ndarray, np.ndarray]:
    chart, sym = ctx.chart, ctx.symbolic
    w = ScalarField(chart, catalog.compile_scalar(w_expr, chart.n)(chart.points, 0.0))

    def exact(expr):
        return catalog.compile_scalar(expr, chart.n)(chart.points, 0.0)

    if op == "gradient":
        return gradient(ctx, w)[1].values, exact(sym.gradient_sq(w_expr))
    if op == "hessian":
        hess = hessian(ctx, w)[0]
        oracle = catalog.compile_tensor(np.array(sym.hessian(w_expr).tolist(), dtype=object), chart.n)
        return hess, oracle(chart.points, 0.0)
    if op == "f_laplacian":
        return f_laplacian(ctx, w).values, exact(sym.f_laplacian(w_expr))
    if op == "divergence_laplacian":
        return f_laplacian(ctx, w, form="divergence").values, exact(sym.f_laplacian(w_expr))
    if op == "bochner_residual":
        residual = bochner_residual(ctx, w)[0].values
        return residual, np.zeros_like(residual)
    raise UnknownCase(f"unknown operator '{op}'; known: {', '.join(OPERATORS)}")


def observed_orders(errors: Sequence[float], levels: Sequence[int]) -> List[float]:
    """log(e_coarse/e_fine)/log(N_fine/N_coarse) between consecutive levels"""
    orders = []
    for (e0, e1), (n0, n1) in zip(zip(errors, errors[1:]), zip(levels, levels[1:])):
        if e1 <= 0.0:
            orders.append(float("inf"))
        else:
            orders.append(float(np.log(e0 / e1) / np.log(n1 / n0)))
    return orders


def convergence_order(op: str, case: str, levels: Sequence[int]) -> DiffReport:
    if case not in FIELD_CASES:
        raise UnknownCase(f"unknown analytic case '{case}'; known: {', '.join(FIELD_CASES)}")
    if op not in OPERATORS:
        raise UnknownCase(f"unknown operator '{op}'; known: {', '.join(OPERATORS)}")
    if len(levels) < 2:
        raise UnknownCase("a refinement study needs at least two levels")
    spec = FIELD_CASES[case]
    w_expr = spec.profile_expr()
    max_errors, l2_errors = [], []
    for resolution in levels:
        ctx = spec.context(resolution)
        discrete, exact = _discrete_and_exact(op, ctx, w_expr)
        error = np.abs(discrete - exact)
        if error.ndim > ctx.n:
            error = np.max(error.reshape(ctx.chart.shape + (-1,)), axis=-1)
        e_max, e_l2 = weighted_norms(ctx, error)
        max_errors.append(e_max)
        l2_errors.append(e_l2)
    report = DiffReport(op, case, list(levels), max_errors, l2_errors, observed_orders(max_errors, levels))
    logger.info("%s on %s: errors %s order %s", op, case, max_errors, report.order)
    return report


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def field_frame(w: ScalarField) -> pd.DataFrame:
    chart = w.chart
    columns = {f"x{i + 1}": chart.points[..., i].ravel() for i in range(chart.n)}
    columns["value"] = w.values.ravel()
    return pd.DataFrame(columns)


def export_csv(w: ScalarField, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    field_frame(w).to_csv(path, index=False, lineterminator="\r\n", float_format="%.17g")
    return path


def write_dump(values: np.ndarray, path: Path) -> Path:
    """Binary dump: magic, uint32 ndim, uint32 dims, dtype tag, little-endian float64 row-major data"""
    values = np.ascontiguousarray(values, dtype="<f8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = DUMP_MAGIC + np.array([values.ndim, *values.shape], dtype="<u4").tobytes() + DUMP_DTYPE
    path.write_bytes(header + values.tobytes(order="C"))
    return path


def read_dump(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"no field dump at {path}")
    raw = path.read_bytes()
    if raw[:4] != DUMP_MAGIC:
        raise MissingArtifact(f"{path} is not a field dump")
    ndim = int(np.frombuffer(raw, dtype="<u4", count=1, offset=4)[0])
    dims = tuple(int(d) for d in np.frombuffer(raw, dtype="<u4", count=ndim, offset=8))
    offset = 8 + 4 * ndim
    if raw[offset : offset + 4] != DUMP_DTYPE:
        raise MissingArtifact(f"{path} has an unsupported dtype tag")
    data = np.frombuffer(raw, dtype="<f8", offset=offset + 4)
    if data.size != int(np.prod(dims)):
        raise ShapeMismatch(f"{path} holds {data.size} values, header says {dims}")
    return data.reshape(dims).copy()
