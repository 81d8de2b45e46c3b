"""
Geometry kernel.

Time-dependent metrics and potentials on a rectangular chart, the tensors
built from them (Christoffel symbols, Ricci, Hessian of the potential and the
Bakry-Emery m-Ricci tensor), the f-Laplacian coefficients, certified curvature
lower bounds and closed-form distances on the model geometries.

Analytic inputs come from the sympy catalog and are differentiated exactly;
sampled inputs are differentiated with the fourth-order stencils.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import sympy
from scipy.interpolate import RegularGridInterpolator

from app.lab import catalog, stencils
from app.lab.errors import (
    ConfigError,
    DegenerateDimension,
    OutOfChart,
    ShapeMismatch,
    SingularMetric,
    UnsupportedModel,
)
from app.models.models import Chart, CurvatureReport

logger = logging.getLogger(__name__)

# |df| below this counts as a spatially constant potential when m = n
CONSTANT_POTENTIAL_TOL = 1e-10
GRID_CACHE_SIZE = 8


def _interpolator(chart: Chart, data: np.ndarray) -> Callable:
    """Cubic interpolation of grid data with trailing tensor axes; periodic axes wrap"""
    pad = 3
    axes, padded = [], data
    for i, periodic in enumerate(chart.periodic):
        axis = chart.axis(i)
        if periodic:
            width = [(0, 0)] * data.ndim
            width[i] = (pad, pad)
            padded = np.pad(padded, width, mode="wrap")
            h = chart.spacing[i]
            axis = np.concatenate([axis[0] - h * np.arange(pad, 0, -1), axis, axis[-1] + h * np.arange(1, pad + 1)])
        axes.append(axis)
    interp = RegularGridInterpolator(tuple(axes), padded, method="cubic", bounds_error=False, fill_value=None)

    def evaluate(points: np.ndarray) -> np.ndarray:
        points = np.array(points, dtype=float)
        for i, periodic in enumerate(chart.periodic):
            if periodic:
                a, b = chart.extents[i]
                points[..., i] = a + np.mod(points[..., i] - a, b - a)
        return interp(points)

    return evaluate


class MetricField:
    """Symmetric positive-definite g_ij(x,t) with its time and space derivatives.

    ``dg[..., a, b, c]`` is the partial of g_bc along x_a and ``d2g[..., a, b, c, d]``
    the second partial of g_cd along x_a, x_b.
    """

    def __init__(
        self,
        n: int,
        g: Callable,
        dt_g: Callable,
        dg: Callable,
        d2g: Callable,
        static: bool,
        source: str,
        tag: Optional[str] = None,
        params: Optional[Dict[str, Any]] = None,
        expr: Optional[sympy.Matrix] = None,
        grid: Optional[Dict[str, np.ndarray]] = None,
    ):
        self.n = n
        self.g = g
        self.dt_g = dt_g
        self.dg = dg
        self.d2g = d2g
        self.static = static
        self.source = source
        self.tag = tag
        self.params = dict(params or {})
        self.expr = expr
        self.grid = grid

    @classmethod
    def from_catalog(cls, tag: str, n: int, params: Optional[Dict[str, Any]] = None) -> "MetricField":
        expr = catalog.metric_expression(tag, n, params)
        coords = catalog.COORDS[:n]
        entries = np.empty((n, n), dtype=object)
        dt = np.empty((n, n), dtype=object)
        first = np.empty((n, n, n), dtype=object)
        second = np.empty((n, n, n, n), dtype=object)
        for b in range(n):
            for c in range(n):
                entries[b, c] = expr[b, c]
                dt[b, c] = sympy.diff(expr[b, c], catalog.TIME)
                for a in range(n):
                    first[a, b, c] = sympy.diff(expr[b, c], coords[a])
                    for d in range(n):
                        second[a, d, b, c] = sympy.diff(expr[b, c], coords[a], coords[d])
        static = not expr.has(catalog.TIME)
        return cls(
            n,
            catalog.compile_tensor(entries, n),
            catalog.compile_tensor(dt, n),
            catalog.compile_tensor(first, n),
            catalog.compile_tensor(second, n),
            static=static,
            source="analytic",
            tag=tag,
            params=params,
            expr=expr,
        )

    @classmethod
    def sampled(cls, chart: Chart, values: np.ndarray) -> "MetricField":
        """Static metric given by samples on the chart grid"""
        n = chart.n
        values = np.asarray(values, dtype=float)
        if values.shape != chart.shape + (n, n):
            raise ShapeMismatch(f"sampled metric shape {values.shape} does not match {chart.shape + (n, n)}")
        if not np.allclose(values, np.swapaxes(values, -1, -2), atol=1e-14):
            raise SingularMetric("sampled metric is not symmetric")
        dg = stencils.grid_partials(values, chart.spacing, chart.periodic, tensor_rank=2)
        d2g = stencils.grid_partials(dg, chart.spacing, chart.periodic, tensor_rank=3)
        d2g = 0.5 * (d2g + np.swapaxes(d2g, -4, -3))
        grid = {"g": values, "dg": dg, "d2g": d2g}
        interps = {name: _interpolator(chart, data) for name, data in grid.items()}

        def zero_dt(points, t):
            return np.zeros(np.broadcast_shapes(np.shape(points)[:-1], np.shape(t)) + (n, n))

        return cls(
            n,
            lambda points, t: interps["g"](points),
            zero_dt,
            lambda points, t: interps["dg"](points),
            lambda points, t: interps["d2g"](points),
            static=True,
            source="sampled",
            grid=grid,
        )

    def as_sampled(self, chart: Chart, t: float = 0.0) -> "MetricField":
        return MetricField.sampled(chart, self.g(chart.points, t))


class Potential:
    """Weight potential f(x,t); the measure is e^{-f} dv_g"""

    def __init__(
        self,
        n: int,
        f: Callable,
        dt_f: Callable,
        df: Callable,
        d2f: Callable,
        source: str,
        tag: Optional[str] = None,
        params: Optional[Dict[str, Any]] = None,
        expr: Optional[sympy.Expr] = None,
        grid: Optional[Dict[str, np.ndarray]] = None,
    ):
        self.n = n
        self.f = f
        self.dt_f = dt_f
        self.df = df
        self.d2f = d2f
        self.source = source
        self.tag = tag
        self.params = dict(params or {})
        self.expr = expr
        self.grid = grid

    @classmethod
    def from_catalog(cls, tag: str, n: int, params: Optional[Dict[str, Any]] = None) -> "Potential":
        expr = catalog.potential_expression(tag, n, params)
        coords = catalog.COORDS[:n]
        first = np.array([sympy.diff(expr, c) for c in coords], dtype=object)
        second = np.empty((n, n), dtype=object)
        for a in range(n):
            for b in range(n):
                second[a, b] = sympy.diff(expr, coords[a], coords[b])
        return cls(
            n,
            catalog.compile_scalar(expr, n),
            catalog.compile_scalar(sympy.diff(expr, catalog.TIME), n),
            catalog.compile_tensor(first, n),
            catalog.compile_tensor(second, n),
            source="analytic",
            tag=tag,
            params=params,
            expr=expr,
        )

    @classmethod
    def sampled(cls, chart: Chart, values: np.ndarray) -> "Potential":
        values = np.asarray(values, dtype=float)
        if values.shape != chart.shape:
            raise ShapeMismatch(f"sampled potential shape {values.shape} does not match {chart.shape}")
        df = stencils.partials(values, chart.spacing, chart.periodic)
        d2f = stencils.second_partials(values, chart.spacing, chart.periodic)
        grid = {"f": values, "df": df, "d2f": d2f}
        interps = {name: _interpolator(chart, data) for name, data in grid.items()}
        return cls(
            chart.n,
            lambda points, t: interps["f"](points),
            lambda points, t: np.zeros(np.broadcast_shapes(np.shape(points)[:-1], np.shape(t))),
            lambda points, t: interps["df"](points),
            lambda points, t: interps["d2f"](points),
            source="sampled",
            grid=grid,
        )

    @property
    def static(self) -> bool:
        return self.expr is None or not self.expr.has(catalog.TIME)


# ---------------------------------------------------------------------------
# batched tensor algebra shared by the pointwise and grid paths
# ---------------------------------------------------------------------------


def _check_positive(g: np.ndarray) -> np.ndarray:
    """Cholesky factor of g; raises SingularMetric when g is not positive-definite"""
    if not np.all(np.isfinite(g)):
        raise SingularMetric("metric has non-finite entries")
    try:
        return np.linalg.cholesky(g)
    except np.linalg.LinAlgError as e:
        raise SingularMetric(f"metric is not positive-definite: {str(e)}")


def _christoffel(ginv: np.ndarray, dg: np.ndarray) -> np.ndarray:
    lowered = dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1)
    return 0.5 * np.einsum("...kl,...ijl->...kij", ginv, lowered)


def _inverse_derivative(ginv: np.ndarray, dg: np.ndarray) -> np.ndarray:
    return -np.einsum("...bc,...acd,...de->...abe", ginv, dg, ginv)


def _christoffel_derivative(ginv: np.ndarray, dg: np.ndarray, d2g: np.ndarray) -> np.ndarray:
    """Partial of Gamma^k_ij along x_a, indexed [..., a, k, i, j]"""
    lowered = dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1)
    lowered_d = d2g + np.swapaxes(d2g, -3, -2) - np.moveaxis(d2g, -3, -1)
    dginv = _inverse_derivative(ginv, dg)
    return 0.5 * (
        np.einsum("...akl,...ijl->...akij", dginv, lowered) + np.einsum("...kl,...aijl->...akij", ginv, lowered_d)
    )


def _ricci(gamma: np.ndarray, dgamma: np.ndarray) -> np.ndarray:
    ric = (
        np.einsum("...kkij->...ij", dgamma)
        - np.einsum("...illj->...ij", dgamma)
        + np.einsum("...kij,...llk->...ij", gamma, gamma)
        - np.einsum("...lik,...klj->...ij", gamma, gamma)
    )
    return 0.5 * (ric + np.swapaxes(ric, -1, -2))


def _covariant_hessian(d2w: np.ndarray, gamma: np.ndarray, dw: np.ndarray) -> np.ndarray:
    hess = d2w - np.einsum("...kij,...k->...ij", gamma, dw)
    return 0.5 * (hess + np.swapaxes(hess, -1, -2))


def _bakry_emery(ric: np.ndarray, hess_f: np.ndarray, df: np.ndarray, m: float, n: int) -> np.ndarray:
    tensor = ric + hess_f
    if np.isinf(m):
        return tensor
    if m == n:
        if np.max(np.abs(df), initial=0.0) > CONSTANT_POTENTIAL_TOL:
            raise DegenerateDimension("m = n requires a spatially constant potential", rule="m-equals-n")
        return tensor
    return tensor - np.einsum("...i,...j->...ij", df, df) / (m - n)


def _drift(ginv: np.ndarray, dg: np.ndarray, df: np.ndarray) -> np.ndarray:
    """First-order coefficients b_j of the f-Laplacian in non-divergence form"""
    dginv = _inverse_derivative(ginv, dg)
    log_volume = 0.5 * np.einsum("...ab,...iab->...i", ginv, dg)
    return (
        np.einsum("...i,...ij->...j", log_volume, ginv)
        + np.einsum("...iij->...j", dginv)
        - np.einsum("...ij,...i->...j", ginv, df)
    )


def jacobi_eigenvalues(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 64) -> np.ndarray:
    """Ascending eigenvalues of a batch of small symmetric matrices by cyclic Jacobi rotations"""
    a = np.array(a, dtype=float, copy=True)
    n = a.shape[-1]
    if n == 1:
        return a[..., 0, :].copy()
    eye = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2, axis=(-2, -1)))
        scale = np.sqrt(np.sum(a**2, axis=(-2, -1)))
        if np.all(off <= tol * np.maximum(scale, np.finfo(float).tiny)):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[..., p, q]
                active = np.abs(apq) > np.finfo(float).tiny
                with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                    theta = (a[..., q, q] - a[..., p, p]) / (2.0 * np.where(active, apq, 1.0))
                    sign = np.where(theta >= 0, 1.0, -1.0)
                    t = sign / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t = np.where(active & np.isfinite(t), t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.broadcast_to(eye, a.shape).copy()
                rot[..., p, p] = c
                rot[..., q, q] = c
                rot[..., p, q] = s
                rot[..., q, p] = -s
                a = np.swapaxes(rot, -1, -2) @ a @ rot
                a[..., p, q] = 0.0
                a[..., q, p] = 0.0
    return np.sort(np.diagonal(a, axis1=-2, axis2=-1), axis=-1)


def generalized_eigenvalues(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Eigenvalues of the symmetric form a relative to g: Cholesky whitening, then Jacobi"""
    chol = _check_positive(g)
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    eye = np.broadcast_to(np.eye(g.shape[-1]), g.shape)
    linv = np.linalg.solve(chol, eye)
    whitened = linv @ a @ np.swapaxes(linv, -1, -2)
    return jacobi_eigenvalues(0.5 * (whitened + np.swapaxes(whitened, -1, -2)))


# ---------------------------------------------------------------------------
# geometry context
# ---------------------------------------------------------------------------


class GridGeometry:
    """Every geometric field the lab needs, sampled on the chart grid at one time"""

    def __init__(self, ctx: "GeometryContext", t: float):
        self.ctx = ctx
        self.chart = ctx.chart
        self.t = t
        points = ctx.chart.points
        metric, potential = ctx.metric, ctx.potential
        if metric.grid is not None:
            self.g = metric.grid["g"]
            self.dg = metric.grid["dg"]
            self.d2g = metric.grid["d2g"]
            self.dt_g = np.zeros_like(self.g)
        else:
            self.g = metric.g(points, t)
            self.dg = metric.dg(points, t)
            self.d2g = metric.d2g(points, t)
            self.dt_g = metric.dt_g(points, t)
        if potential.grid is not None:
            self.f = potential.grid["f"]
            self.df = potential.grid["df"]
            self.d2f = potential.grid["d2f"]
            self.dt_f = np.zeros_like(self.f)
        else:
            self.f = potential.f(points, t)
            self.df = potential.df(points, t)
            self.d2f = potential.d2f(points, t)
            self.dt_f = potential.dt_f(points, t)
        _check_positive(self.g)
        self.ginv = np.linalg.inv(self.g)
        self.sqrt_det = np.sqrt(np.linalg.det(self.g))

    @cached_property
    def christoffel(self) -> np.ndarray:
        return _christoffel(self.ginv, self.dg)

    @cached_property
    def drift(self) -> np.ndarray:
        return _drift(self.ginv, self.dg, self.df)

    @cached_property
    def density(self) -> np.ndarray:
        """Weighted measure density e^{-f} sqrt|g|"""
        return np.exp(-self.f) * self.sqrt_det

    @cached_property
    def ricci(self) -> np.ndarray:
        return _ricci(self.christoffel, _christoffel_derivative(self.ginv, self.dg, self.d2g))

    @cached_property
    def hess_f(self) -> np.ndarray:
        return _covariant_hessian(self.d2f, self.christoffel, self.df)

    def bakry_emery(self, m: Optional[float] = None) -> np.ndarray:
        m = self.ctx.m if m is None else m
        return _bakry_emery(self.ricci, self.hess_f, self.df, m, self.chart.n)

    @cached_property
    def ric_fm(self) -> np.ndarray:
        return self.bakry_emery()

    @cached_property
    def ric_f(self) -> np.ndarray:
        """The m = infinity tensor Ric + Hess f"""
        return self.ricci + self.hess_f

    @cached_property
    def lambda_min(self) -> np.ndarray:
        return generalized_eigenvalues(self.ric_fm, self.g)[..., 0]

    @cached_property
    def dtg_lambda_min(self) -> np.ndarray:
        return generalized_eigenvalues(self.dt_g, self.g)[..., 0]

    @cached_property
    def ginv_lambda_max(self) -> np.ndarray:
        return generalized_eigenvalues(self.ginv, np.broadcast_to(np.eye(self.chart.n), self.g.shape))[..., -1]


class GeometryContext:
    """Chart, metric, potential and synthetic dimension m (np.inf allowed)"""

    def __init__(
        self,
        chart: Chart,
        metric: MetricField,
        potential: Potential,
        m: float,
        symbolic: Optional[catalog.SymbolicGeometry] = None,
    ):
        if metric.n != chart.n or potential.n != chart.n:
            raise ShapeMismatch(f"metric/potential dimension does not match the {chart.n}-dimensional chart")
        m = float(m)
        if not m >= chart.n:
            raise ConfigError(f"synthetic dimension m = {m} below n = {chart.n}", rule="m-at-least-n")
        self.chart = chart
        self.metric = metric
        self.potential = potential
        self.m = m
        self.symbolic = symbolic
        self._grid_cache: "OrderedDict[float, GridGeometry]" = OrderedDict()

    @classmethod
    def from_catalog(
        cls,
        chart: Chart,
        metric_tag: str,
        potential_tag: str = "zero",
        m: float = np.inf,
        metric_params: Optional[Dict[str, Any]] = None,
        potential_params: Optional[Dict[str, Any]] = None,
    ) -> "GeometryContext":
        n = chart.n
        metric = MetricField.from_catalog(metric_tag, n, metric_params)
        potential = Potential.from_catalog(potential_tag, n, potential_params)
        symbolic = catalog.SymbolicGeometry(metric.expr, potential.expr, n)
        return cls(chart, metric, potential, m, symbolic)

    def with_chart(self, chart: Chart) -> "GeometryContext":
        """Same analytic geometry on another chart (refinement studies)"""
        if self.metric.source != "analytic" or self.potential.source != "analytic":
            raise UnsupportedModel("only analytic geometries can be re-gridded")
        return GeometryContext(chart, self.metric, self.potential, self.m, self.symbolic)

    def with_m(self, m: float) -> "GeometryContext":
        return GeometryContext(self.chart, self.metric, self.potential, m, self.symbolic)

    @property
    def n(self) -> int:
        return self.chart.n

    @property
    def static(self) -> bool:
        return self.metric.static and self.potential.static

    def on_grid(self, t: float = 0.0) -> GridGeometry:
        key = 0.0 if self.static else float(t)
        if key in self._grid_cache:
            self._grid_cache.move_to_end(key)
            return self._grid_cache[key]
        grid = GridGeometry(self, key)
        self._grid_cache[key] = grid
        if len(self._grid_cache) > GRID_CACHE_SIZE:
            self._grid_cache.popitem(last=False)
        return grid

    def check_point(self, x: Sequence[float]) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.chart.contains(x):
            raise OutOfChart(f"point {x.tolist()} outside chart extents {self.chart.describe()['extents']}")
        return x

    def local(self, x: Sequence[float], t: float) -> Dict[str, np.ndarray]:
        x = self.check_point(x)
        g = self.metric.g(x, t)
        _check_positive(g)
        return {
            "g": g,
            "ginv": np.linalg.inv(g),
            "dg": self.metric.dg(x, t),
            "d2g": self.metric.d2g(x, t),
            "df": self.potential.df(x, t),
            "d2f": self.potential.d2f(x, t),
        }

    def density(self, points: np.ndarray, t: float) -> np.ndarray:
        g = self.metric.g(points, t)
        return np.exp(-self.potential.f(points, t)) * np.sqrt(np.linalg.det(g))


def christoffel(ctx: GeometryContext, x: Sequence[float], t: float) -> np.ndarray:
    """Gamma^k_ij at one point, indexed [k, i, j]"""
    local = ctx.local(x, t)
    return _christoffel(local["ginv"], local["dg"])


def bakry_emery_ricci(ctx: GeometryContext, x: Sequence[float], t: float) -> np.ndarray:
    local = ctx.local(x, t)
    gamma = _christoffel(local["ginv"], local["dg"])
    ric = _ricci(gamma, _christoffel_derivative(local["ginv"], local["dg"], local["d2g"]))
    hess_f = _covariant_hessian(local["d2f"], gamma, local["df"])
    return _bakry_emery(ric, hess_f, local["df"], ctx.m, ctx.n)


def f_laplacian_coeffs(ctx: GeometryContext, x: Sequence[float], t: float) -> Tuple[np.ndarray, np.ndarray]:
    """(g^ij, b_j) with Delta_f w = g^ij d_i d_j w + b_j d_j w"""
    local = ctx.local(x, t)
    return local["ginv"], _drift(local["ginv"], local["dg"], local["df"])


def curvature_on_grid(ctx: GeometryContext, t: float = 0.0) -> Dict[str, np.ndarray]:
    grid = ctx.on_grid(t)
    return {
        "christoffel": grid.christoffel,
        "ricci": grid.ricci,
        "hess_f": grid.hess_f,
        "ric_fm": grid.ric_fm,
        "lambda_min": grid.lambda_min,
    }


@dataclass(frozen=True)
class Region:
    """Space-time box for certification; ``box`` defaults to the whole chart"""

    t_start: float
    t_end: float
    n_times: int = 1
    box: Optional[Tuple[Tuple[float, float], ...]] = None

    def times(self) -> np.ndarray:
        if self.n_times <= 1 or self.t_end == self.t_start:
            return np.array([self.t_start], dtype=float)
        return np.linspace(self.t_start, self.t_end, self.n_times)

    def mask(self, chart: Chart) -> np.ndarray:
        mask = chart.interior.copy()
        if self.box is None:
            return mask
        if len(self.box) != chart.n:
            raise ShapeMismatch("region box dimension does not match the chart")
        for i, (lo, hi) in enumerate(self.box):
            a, b = chart.extents[i]
            if lo < a - 1e-12 or hi > b + 1e-12 or hi < lo:
                raise OutOfChart(f"region [{lo}, {hi}] leaves chart axis {i} extent [{a}, {b}]")
            coord = chart.points[..., i]
            mask &= (coord >= lo - 1e-12) & (coord <= hi + 1e-12)
        return mask


def bound_from_eigenvalue(lambda_min: float, m: float) -> float:
    """Smallest k >= 0 with lambda_min >= -(m-1)k"""
    if np.isinf(m):
        return max(0.0, -lambda_min)
    if m > 1:
        return max(0.0, -lambda_min / (m - 1))
    return 0.0 if lambda_min >= 0 else np.inf


def certify_lower_bounds(ctx: GeometryContext, region: Region) -> CurvatureReport:
    if region.t_end < region.t_start:
        raise OutOfChart(f"empty time window [{region.t_start}, {region.t_end}]")
    mask = region.mask(ctx.chart)
    times = region.times()
    lam, dtg, pts, gam, ric, hess, rfm = [], [], [], [], [], [], []
    for t in times:
        grid = ctx.on_grid(t)
        lam.append(grid.lambda_min[mask])
        dtg.append(grid.dtg_lambda_min[mask])
        pts.append(np.concatenate([ctx.chart.points[mask], np.full((int(mask.sum()), 1), t)], axis=1))
        gam.append(grid.christoffel[mask])
        ric.append(grid.ricci[mask])
        hess.append(grid.hess_f[mask])
        rfm.append(grid.ric_fm[mask])
    lambda_min = np.concatenate(lam)
    dtg_min = np.concatenate(dtg)
    k = bound_from_eigenvalue(float(np.min(lambda_min)), ctx.m)
    h = max(0.0, -0.5 * float(np.min(dtg_min)))
    logger.info("certified k=%.6g h=%.6g over %d samples", k, h, lambda_min.size)
    return CurvatureReport(
        times=[float(t) for t in times],
        points=np.concatenate(pts),
        christoffel=np.concatenate(gam),
        ricci=np.concatenate(ric),
        hess_f=np.concatenate(hess),
        ric_fm=np.concatenate(rfm),
        lambda_min=lambda_min,
        dtg_min=dtg_min,
        k=k,
        h=h,
        m=ctx.m,
    )


def curvature_frame(report: CurvatureReport) -> pd.DataFrame:
    n = report.points.shape[1] - 1
    k_local, h_local = report.local_bounds()
    columns = {f"x{i + 1}": report.points[:, i] for i in range(n)}
    columns.update({"t": report.points[:, n], "lambda_min": report.lambda_min, "k_local": k_local, "h_local": h_local})
    return pd.DataFrame(columns)


# ---------------------------------------------------------------------------
# model distances
# ---------------------------------------------------------------------------

MODEL_TAGS = ("flat", "conformal-flat", "round-sphere", "hyperbolic")


@dataclass(frozen=True)
class ModelDistance:
    model: str
    base: Tuple[float, ...]
    params: Dict[str, Any] = field(default_factory=dict)
    periods: Tuple[Optional[float], ...] = ()
    chart: Optional[Chart] = None

    def __post_init__(self):
        if self.model not in MODEL_TAGS:
            raise UnsupportedModel(f"no closed-form distance for metric '{self.model}'")

    def _delta(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        delta = x - y
        for i, period in enumerate(self.periods):
            if period:
                delta[..., i] = delta[..., i] - period * np.round(delta[..., i] / period)
        return delta

    def distance(self, x, y, t) -> Tuple[np.ndarray, np.ndarray]:
        """(rho, d rho / dt) between x and y at time t"""
        x = np.asarray(x, dtype=float)
        y = np.broadcast_to(np.asarray(y, dtype=float), x.shape)
        t = np.asarray(t, dtype=float)
        if self.model == "flat":
            scale = float(self.params.get("scale", 1.0))
            rho = np.sqrt(scale) * np.linalg.norm(self._delta(x, y), axis=-1)
            return rho + 0.0 * t, np.zeros(np.broadcast_shapes(rho.shape, t.shape))
        if self.model == "conformal-flat":
            rate = float(self.params.get("rate", -0.5))
            rho = np.exp(rate * t) * np.linalg.norm(self._delta(x, y), axis=-1)
            return rho, rate * rho
        if self.model == "round-sphere":
            radius = float(self.params.get("radius", 1.0))
            cos_d = np.cos(x[..., 0]) * np.cos(y[..., 0]) + np.sin(x[..., 0]) * np.sin(y[..., 0]) * np.cos(
                x[..., 1] - y[..., 1]
            )
            rho = radius * np.arccos(np.clip(cos_d, -1.0, 1.0))
            return rho + 0.0 * t, np.zeros(np.broadcast_shapes(rho.shape, t.shape))
        height_x, height_y = x[..., -1], y[..., -1]
        if np.any(height_x <= 0) or np.any(height_y <= 0):
            raise OutOfChart("hyperbolic half-space needs a positive last coordinate")
        ratio = np.sum((x - y) ** 2, axis=-1) / (2.0 * height_x * height_y)
        rho = np.arccosh(1.0 + ratio)
        return rho + 0.0 * t, np.zeros(np.broadcast_shapes(rho.shape, t.shape))

    def __call__(self, x, t) -> Tuple[np.ndarray, np.ndarray]:
        return self.distance(x, self.base, t)


def model_for(ctx: GeometryContext, base: Sequence[float]) -> ModelDistance:
    tag = ctx.metric.tag
    if tag not in MODEL_TAGS:
        raise UnsupportedModel(f"metric '{tag}' has no closed-form distance")
    base = tuple(float(b) for b in ctx.check_point(base))
    periods = tuple((b - a) if periodic else None for (a, b), periodic in zip(ctx.chart.extents, ctx.chart.periodic))
    return ModelDistance(tag, base, dict(ctx.metric.params), periods, ctx.chart)


def model_distance(model: ModelDistance, x: Sequence[float], t: float) -> Tuple[float, float]:
    if model.chart is not None and not model.chart.contains(x):
        raise OutOfChart(f"point {list(x)} outside the model chart")
    rho, drho = model(np.asarray(x, dtype=float), t)
    return float(rho), float(drho)
