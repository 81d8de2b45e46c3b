"""
Scenario orchestration: geometry certification, the solve, the configured
estimate/lemma/Liouville checks, deterministic reports and frozen goldens.
"""

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import joblib
import numpy as np
import pandas as pd
import scipy
import sympy
from joblib import Parallel, delayed

from app import __version__
from app.lab import catalog, evolution, liouville
from app.lab.errors import ConfigError, HypothesisViolated, LabError, MissingArtifact
from app.lab.estimates import (
    Cylinder,
    corollary_bound_check,
    estimate_context,
    hsz_rhs,
    pressure_transform,
    resolve_beta,
    sigma_frames,
    superflow_constant,
    verify_estimate,
)
from app.lab.fields import convergence_order
from app.lab.geometry import GeometryContext, Region, certify_lower_bounds, curvature_frame
from app.lab.solver import (
    NonlinearitySpec,
    SolverConfig,
    barenblatt_error,
    initial_field,
    mass_drift,
    ode_reduction_error,
    solve,
)
from app.models.models import (
    Chart,
    CheckResult,
    CurvatureReport,
    DiffReport,
    EstimateReport,
    ResidualReport,
    RunManifest,
    SolveResult,
    SpaceTimeField,
)
from app.models.scenario import (
    CorollarySection,
    EstimateSection,
    LemmaSection,
    LiouvilleSection,
    Scenario,
    load_scenario,
)

logger = logging.getLogger(__name__)

REPORT_FORMATS = ("json", "csv", "plotdata")
DEFAULT_TOLERANCES = {
    "slack": evolution.SLACK_TOL,
    "c_star_spread": 0.02,
    "order_floor": 1.9,
    "operator_order": 3.5,
    "barenblatt_l1": 0.02,
    "mass_drift": 1e-8,
    "ode_error": 1e-6,
    "spatial_spread": 1e-10,
}
IDENTITY_DEFAULTS = {
    "pressure-evolution": "decay-sine",
    "w-evolution": "static-sine",
    "product-rule": "product",
    "H-identity": "static-sine",
}


def output_root() -> Path:
    return Path(os.getenv("LAB_OUTPUT_DIR", "runs"))


def golden_root() -> Path:
    return Path(os.getenv("LAB_GOLDEN_DIR", "goldens"))


def versions() -> Dict[str, str]:
    return {
        "lab": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "sympy": sympy.__version__,
        "pandas": pd.__version__,
        "joblib": joblib.__version__,
    }


# ---------------------------------------------------------------------------
# canonical JSON
# ---------------------------------------------------------------------------


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _encode(obj: Any, indent: int, level: int) -> str:
    pad, inner = " " * (indent * level), " " * (indent * (level + 1))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {_encode(obj[k], indent, level + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + _encode(v, indent, level + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        if math.isnan(obj):
            return '"nan"'
        if math.isinf(obj):
            return '"inf"' if obj > 0 else '"-inf"'
        return "%.17g" % obj
    return json.dumps(obj, ensure_ascii=False)


def canonical_json(obj: Any, indent: int = 2) -> str:
    """Sorted keys and 17 significant digits so identical runs give identical bytes"""
    return _encode(_plain(obj), indent, 0) + "\n"


def write_json(path: Path, obj: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj), encoding="utf-8")
    return path


def scenario_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# check results
# ---------------------------------------------------------------------------


def _point_columns(points: np.ndarray) -> Dict[str, list]:
    return {f"x{i + 1}": points[..., i].ravel().tolist() for i in range(points.shape[-1])}


def _histogram(values: np.ndarray, bins: int = 40) -> Dict[str, list]:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return {"x": [], "y": []}
    counts, edges = np.histogram(finite, bins=bins)
    return {"x": (0.5 * (edges[1:] + edges[:-1])).tolist(), "y": counts.tolist()}


def residual_result(name: str, kind: str, report: ResidualReport, points: Optional[np.ndarray] = None) -> CheckResult:
    series, tables = {}, {}
    if report.levels and report.residuals:
        series["residual-vs-level"] = {"x": list(report.levels), "y": list(report.residuals)}
    if report.slack is not None:
        series["slack-histogram"] = _histogram(np.asarray(report.slack, dtype=float))
        grid_points = report.slack_points if report.slack_points is not None else points
        if grid_points is not None and report.slack_times is not None:
            frames = np.asarray(report.slack, dtype=float).reshape(len(report.slack_times), -1)
            flat = grid_points.reshape(-1, grid_points.shape[-1])
            if frames.shape[1] == flat.shape[0]:
                columns = {f"x{i + 1}": np.tile(flat[:, i], len(report.slack_times)).tolist() for i in range(flat.shape[1])}
                columns["t"] = np.repeat(report.slack_times, flat.shape[0]).tolist()
                columns["slack"] = frames.ravel().tolist()
                tables["slack"] = columns
    return CheckResult(name, kind, bool(report.passed), report.summary(), tables, series)


def estimate_result(name: str, report: EstimateReport, extra: Optional[Dict[str, Any]] = None) -> CheckResult:
    tables = {
        "samples": {
            **_point_columns(report.sample_points),
            "t": report.sample_times.tolist(),
            "lhs": report.lhs.tolist(),
            "rhs": report.sample_rhs.tolist(),
            "ratio": report.ratios.tolist(),
        }
    }
    per_time = [float(np.max(report.ratios[report.sample_times == t], initial=0.0)) for t in report.times]
    series = {"ratio-vs-t": {"x": report.times.tolist(), "y": per_time}}
    summary = report.summary()
    if extra:
        summary.update(extra.get("summary", {}))
        series.update(extra.get("series", {}))
    passed = bool(report.passed) and bool(summary.get("spread_ok", True))
    return CheckResult(name, "estimate", passed, summary, tables, series)


def diff_result(name: str, kind: str, report: DiffReport, floor: float) -> CheckResult:
    passed = report.exact or (report.order is not None and report.order >= floor)
    summary = {**report.summary(), "order_floor": floor}
    series = {"error-vs-level": {"x": list(report.levels), "y": list(report.max_errors)}}
    return CheckResult(name, kind, bool(passed), summary, {}, series)


# ---------------------------------------------------------------------------
# run state
# ---------------------------------------------------------------------------


@dataclass
class RunState:
    scenario: Scenario
    seed: int
    jobs: int
    ctx: GeometryContext
    curvature: CurvatureReport
    goldens: Dict[str, float] = field(default_factory=dict)
    spec: Optional[NonlinearitySpec] = None
    result: Optional[SolveResult] = None
    v: Optional[SpaceTimeField] = None
    sigma: Optional[Dict[str, np.ndarray]] = None
    levels: Dict[int, Tuple[GeometryContext, SpaceTimeField, Dict[str, np.ndarray]]] = field(default_factory=dict)

    @property
    def p(self) -> float:
        return self.scenario.solver.p

    def tolerance(self, key: str) -> float:
        return float(self.scenario.tolerances.get(key, DEFAULT_TOLERANCES[key]))

    def solve_at(self, ctx: GeometryContext) -> Tuple[SolveResult, SpaceTimeField, Dict[str, np.ndarray]]:
        sv = self.scenario.solver
        cfg = SolverConfig(
            p=sv.p,
            t_start=sv.t_start,
            t_end=sv.t_end,
            stepper=sv.stepper,
            safety=sv.safety,
            floor=sv.floor,
            stride=sv.stride,
            form=sv.form,
        )
        u0 = initial_field(ctx, sv.initial, sv.initial_params, sv.t_start, sv.floor)
        result = solve(ctx, u0, self.spec, cfg)
        v = pressure_transform(result.u, sv.p)
        return result, v, sigma_frames(self.spec, sv.p, v)

    def at_level(self, resolution: int) -> Tuple[GeometryContext, SpaceTimeField, Dict[str, np.ndarray]]:
        if resolution not in self.levels:
            ctx = self.ctx.with_chart(self.ctx.chart.with_resolution(resolution))
            _, v, sigma = self.solve_at(ctx)
            self.levels[resolution] = (ctx, v, sigma)
        return self.levels[resolution]


def build_context(scenario: Scenario) -> GeometryContext:
    geo = scenario.geometry
    chart = Chart(tuple(tuple(e) for e in geo.extents), tuple(geo.periodic), tuple([geo.resolution] * geo.n))
    return GeometryContext.from_catalog(chart, geo.metric, geo.potential, geo.m_value, geo.metric_params, geo.potential_params)


def prepare(scenario: Scenario, seed: int, jobs: int, goldens: Optional[Dict[str, float]] = None) -> RunState:
    ctx = build_context(scenario)
    window = (scenario.solver.t_start, scenario.solver.t_end) if scenario.solver else (0.0, 0.0)
    curvature = certify_lower_bounds(ctx, Region(window[0], window[1], n_times=5 if scenario.solver else 1))
    state = RunState(scenario, seed, jobs, ctx, curvature, goldens or {})
    if scenario.solver is not None:
        sv = scenario.solver
        state.spec = NonlinearitySpec(sv.nonlinearity, sv.nonlinearity_params, ctx.n)
        state.result, state.v, state.sigma = state.solve_at(ctx)
        state.levels[scenario.geometry.resolution] = (ctx, state.v, state.sigma)
        if state.result.flagged:
            logger.warning("solution touched the positivity floor; estimate checks assume u > 0")
    return state


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------


def _estimate_c_star(state: RunState, est: EstimateSection, ctx, v, sigma, mode: str, C: Optional[float]) -> EstimateReport:
    sv = state.scenario.solver
    t0 = sv.t_end if est.t0 is None else est.t0
    cylinder = Cylinder(tuple(est.x0), t0, est.R, est.T)
    beta = resolve_beta(sv.p, ctx.m, est.beta) if est.theorem.startswith("T2") else None
    k = state.curvature.k if est.k is None else est.k
    h = state.curvature.h if est.h is None else est.h
    local = not est.theorem.endswith("global")
    ectx = estimate_context(ctx, v, sv.p, cylinder, sigma=sigma, k=k, h=h, beta=beta, local=local)
    return verify_estimate(ectx, hsz_rhs(est.theorem, ectx), mode, C)


def run_estimate(state: RunState, est: EstimateSection) -> CheckResult:
    C = est.C
    if est.mode == "fixed" and C is None:
        C = state.goldens[est.name]
    report = _estimate_c_star(state, est, state.ctx, state.v, state.sigma, est.mode, C)
    extra = None
    levels = state.scenario.solver.levels
    if len(levels) >= 2:
        c_levels = []
        for level in sorted(levels):
            ctx, v, sigma = state.at_level(level)
            c_levels.append(_estimate_c_star(state, est, ctx, v, sigma, "calibrate", None).c_star)
        top, previous = c_levels[-1], c_levels[-2]
        spread = abs(top - previous) / max(abs(top), 1e-300)
        extra = {
            "summary": {"c_star_levels": c_levels, "spread": spread, "spread_ok": spread <= state.tolerance("c_star_spread")},
            "series": {"C*-vs-resolution": {"x": sorted(levels), "y": c_levels}},
        }
    return estimate_result(est.name, report, extra)


def resolve_kappa(state: RunState, kappa: Union[float, str]) -> float:
    """A number, or "auto" for h + p (sup u)^{p-1} (m-1) k from the certificate and the solve"""
    if kappa != "auto":
        return float(kappa)
    if state.result is None:
        raise ConfigError("kappa = auto needs a solver section", rule="solver-section")
    sup_u = float(np.max(state.result.u.values))
    return superflow_constant(state.curvature.k, state.curvature.h, sup_u, state.p, state.ctx.m)


def _failed_check(name: str, kind: str, error: LabError) -> CheckResult:
    logger.warning("check %s: %s: %s", name, type(error).__name__, error)
    summary = {"error": str(error), "error_type": type(error).__name__, "rule": error.rule}
    return CheckResult(name, kind, False, {**summary, **error.context})


def run_corollary(state: RunState, cor: CorollarySection) -> CheckResult:
    gamma = catalog.gamma_aux(cor.gamma, state.p, cor.gamma_params) if cor.tag == "C10-general" else None
    try:
        report = corollary_bound_check(
            cor.tag,
            state.ctx,
            state.v,
            state.p,
            state.sigma,
            s=cor.s,
            a=cor.a,
            gamma=gamma,
            kappa=resolve_kappa(state, cor.kappa),
            tolerance=state.tolerance("slack"),
        )
    except HypothesisViolated as e:
        return _failed_check(cor.name, "corollary", e)
    return residual_result(cor.name, "corollary", report, state.ctx.chart.points)


def _identity_case(lemma: LemmaSection) -> evolution.IdentityCase:
    tag = lemma.case or IDENTITY_DEFAULTS.get(lemma.kind, "static-sine")
    overrides = {
        name: getattr(lemma, name)
        for name in ("beta", "eps", "q", "p")
        if getattr(lemma, name) is not None
    }
    overrides.update(
        s=lemma.s,
        zeta=lemma.zeta,
        zeta_params=lemma.zeta_params,
        gamma=lemma.gamma,
        gamma_params=lemma.gamma_params,
        kappa=lemma.kappa,
    )
    if lemma.levels:
        overrides["levels"] = tuple(lemma.levels)
    return evolution.identity_case(tag, **overrides)


def _jet_source(state: RunState, lemma: LemmaSection):
    if lemma.source == "solver":
        return evolution.PressureJet.from_frames(state.ctx, state.v, state.spec, state.p)
    return _identity_case(lemma)


def _h_params(state: RunState, lemma: LemmaSection, p: float) -> evolution.HParams:
    return evolution.HParams(
        s=lemma.s,
        q=lemma.q if lemma.q is not None else (lemma.beta or 0.0),
        eps=lemma.eps or 0.0,
        zeta=catalog.time_weight(lemma.zeta, lemma.zeta_params),
        gamma=catalog.gamma_aux(lemma.gamma, p, lemma.gamma_params),
        kappa=lemma.kappa,
    )


def _cutoff(lemma: LemmaSection, t0: float) -> evolution.CutoffSpec:
    if lemma.R is None or lemma.T is None:
        raise ConfigError(f"{lemma.name}: cutoff checks need R and T", rule="cutoff")
    return evolution.build_cutoff(lemma.R, lemma.T, t0, lemma.tau, lemma.a, lemma.profile)


def run_lemma(state: RunState, lemma: LemmaSection) -> CheckResult:
    try:
        resolved = lemma.model_copy(update={"kappa": resolve_kappa(state, lemma.kappa)})
        return _run_lemma(state, resolved)
    except HypothesisViolated as e:
        return _failed_check(lemma.name, lemma.kind, e)


def _run_lemma(state: RunState, lemma: LemmaSection) -> CheckResult:
    kind = lemma.kind
    slack_tol = lemma.tolerance or state.tolerance("slack")
    points = state.ctx.chart.points
    if kind in ("pressure-evolution", "w-evolution", "product-rule"):
        case = _identity_case(lemma)
        check = {
            "pressure-evolution": evolution.check_pressure_evolution,
            "w-evolution": evolution.check_w_evolution,
            "product-rule": evolution.check_product_rule,
        }[kind]
        return residual_result(lemma.name, kind, check(case))
    if kind == "H-identity":
        return residual_result(lemma.name, kind, evolution.check_H_functional(_identity_case(lemma), "identity"))
    if kind in ("superflow-inequality", "optimized-w-general", "optimized-w-optimal", "H-inequality", "H-optimized"):
        source = _jet_source(state, lemma)
        if kind == "superflow-inequality":
            report = evolution.check_superflow_inequality(source, lemma.kappa, lemma.beta, slack_tol)
        elif kind.startswith("optimized-w"):
            mode = kind.rsplit("-", 1)[1]
            report = evolution.check_optimized_w_inequality(source, lemma.kappa, mode, lemma.beta, lemma.eps, slack_tol)
        else:
            mode = "inequality" if kind == "H-inequality" else "optimized"
            params = None if lemma.source == "manufactured" else _h_params(state, lemma, state.p)
            report = evolution.check_H_functional(source, mode, params, tolerance=slack_tol)
        return residual_result(lemma.name, kind, report)
    if kind == "H-optimum":
        p = lemma.p if lemma.p is not None else state.p
        report = evolution.check_H_functional(None, "optimum", evolution.HParams(s=lemma.s), p=p, m=state.ctx.m)
        return residual_result(lemma.name, kind, report)
    if kind in ("gamma-optimum", "omega-optimum"):
        quadratic = kind.split("-")[0]
        lattice = evolution.default_lattice(quadratic, lemma.lattice, state.seed)
        return residual_result(lemma.name, kind, evolution.optimum_lattice(quadratic, lattice))
    if kind == "matrix-lemma":
        rng = np.random.default_rng(state.seed)
        pairs = [tuple(pair) for pair in rng.uniform(-2.0, 2.0, (lemma.pairs, 2))]
        report = evolution.matrix_lemma_check(pairs, lemma.dimensions, lemma.trials, lemma.steps, state.seed, state.jobs)
        return residual_result(lemma.name, kind, report)
    if kind == "cutoff":
        return residual_result(lemma.name, kind, evolution.check_cutoff(_cutoff(lemma, lemma.t0 or 0.0)))
    if kind == "cutoff-composition":
        cutoff = _cutoff(lemma, lemma.t0 or 0.0)
        report = evolution.check_cutoff_composition(state.ctx, cutoff, lemma.x0 or [0.0] * state.ctx.n, levels=lemma.levels or None)
        return residual_result(lemma.name, kind, report)
    if kind == "maximum-point":
        t0 = state.scenario.solver.t_end if lemma.t0 is None else lemma.t0
        cutoff = _cutoff(lemma, t0)
        cylinder = Cylinder(tuple(lemma.x0 or [0.0] * state.ctx.n), t0, lemma.R, lemma.T)
        ectx = estimate_context(
            state.ctx, state.v, state.p, cylinder, sigma=state.sigma, k=state.curvature.k, h=state.curvature.h, beta=lemma.beta
        )
        return residual_result(lemma.name, kind, evolution.replay_maximum_point(ectx, cutoff, lemma.beta))
    if kind == "laplacian-comparison":
        report = evolution.check_laplacian_comparison(
            state.ctx, lemma.x0 or [0.0] * state.ctx.n, tolerance=lemma.tolerance or 1e-4
        )
        return residual_result(lemma.name, kind, report, points)
    if kind == "curvature":
        report = state.curvature
        passed = bool(np.isfinite(report.k) and np.isfinite(report.h))
        frame = curvature_frame(report)
        return CheckResult(lemma.name, kind, passed, report.summary(), {"curvature": frame.to_dict(orient="list")})
    if kind in ("bochner", "convergence"):
        op = "bochner_residual" if kind == "bochner" else (lemma.operator or "f_laplacian")
        floor = lemma.tolerance or (state.tolerance("order_floor") if kind == "bochner" else state.tolerance("operator_order"))
        report = convergence_order(op, lemma.case or "sin-x1-2d", lemma.levels or [16, 32, 64])
        return diff_result(lemma.name, kind, report, floor)
    if kind == "barenblatt":
        resolution = lemma.levels[0] if lemma.levels else 512
        stats = barenblatt_error(p=lemma.p or 2.0, resolution=resolution)
        passed = stats["l1_error"] <= (lemma.tolerance or state.tolerance("barenblatt_l1"))
        return CheckResult(lemma.name, kind, passed, stats)
    if kind == "mass":
        drift = mass_drift(state.ctx, state.result)
        limit = lemma.tolerance or state.tolerance("mass_drift")
        return CheckResult(lemma.name, kind, drift <= limit, {"mass_drift": drift, "tolerance": limit})
    if kind == "ode-reduction":
        stats = ode_reduction_error(state.ctx, state.result)
        passed = stats["ode_error"] <= state.tolerance("ode_error") and stats["spatial_spread"] <= state.tolerance(
            "spatial_spread"
        )
        return CheckResult(lemma.name, kind, passed, stats)
    raise ConfigError(f"unknown lemma check '{kind}'", rule="catalog-tag")


def _synthetic_ladder(case: LiouvilleSection, exponent: float) -> List[Tuple[float, float]]:
    radii = np.asarray(case.radii, dtype=float)
    if case.growth == "log":
        values = np.log(radii)
    elif case.growth == "power":
        values = radii**exponent
    else:
        values = np.ones_like(radii)
    return list(zip(radii.tolist(), values.tolist()))


def run_liouville(state: RunState, case: LiouvilleSection) -> CheckResult:
    spec = NonlinearitySpec(case.nonlinearity, case.nonlinearity_params, 1)
    probe = liouville.LiouvilleCase(case.theorem, case.p, case.m, spec, case.beta, case.u0, case.a, case.t_back)
    verdict = liouville.liouville_verdict(probe)
    summary = verdict.summary()
    series = {"trajectory": {"x": verdict.trajectory_t.tolist(), "y": verdict.trajectory_u.tolist()}}
    summary["expect"] = case.expect
    passed = verdict.verdict == case.expect
    ladder = list(case.ladder)
    if case.growth is not None:
        ladder = _synthetic_ladder(case, liouville.gate_exponent(case.theorem, case.p, case.beta))
    if ladder:
        gate = liouville.growth_gate(case.theorem, case.p, case.beta, ladder)
        summary["growth"] = gate.summary()
        series["growth-quotient"] = {"x": gate.radii.tolist(), "y": gate.quotients.tolist()}
        if case.expect_growth is not None:
            passed = passed and gate.passed == case.expect_growth
    return CheckResult(case.name, "liouville", passed, summary, {}, series)


# ---------------------------------------------------------------------------
# run / validate / report / goldens
# ---------------------------------------------------------------------------


def validate(path: Union[str, Path]) -> Scenario:
    scenario, _ = load_scenario(path)
    logger.info("scenario '%s' valid with %d checks", scenario.name, scenario.n_checks)
    return scenario


def golden_path(scenario: Scenario) -> Path:
    return golden_root() / f"{scenario.golden_name}.json"


def load_goldens(scenario: Scenario) -> Dict[str, float]:
    path = golden_path(scenario)
    if not path.exists():
        return {}
    return {k: float(v) for k, v in json.loads(path.read_text(encoding="utf-8")).items()}


def require_goldens(scenario: Scenario, goldens: Dict[str, float]) -> None:
    """Fixed-mode checks without their own C must find a frozen value before any compute"""
    for est in scenario.estimates:
        if est.mode == "fixed" and est.C is None and est.name not in goldens:
            raise MissingArtifact(f"no golden C* for '{est.name}' in {golden_path(scenario)}", rule="golden")


def freeze_goldens(scenario: Scenario, results: List[CheckResult], goldens: Dict[str, float]) -> Optional[Path]:
    """Record C* of golden calibrate checks on their first verified run; frozen values are never replaced here"""
    if not all(r.passed for r in results):
        return None
    by_name = {r.name: r for r in results}
    fresh = {
        e.name: by_name[e.name].summary["c_star"]
        for e in scenario.estimates
        if e.golden and e.mode == "calibrate" and e.name not in goldens
    }
    if not fresh:
        return None
    target = golden_path(scenario)
    logger.info("freezing %d golden values into %s", len(fresh), target)
    return write_json(target, {**goldens, **fresh})


Task = Tuple[str, str, Callable[[], CheckResult]]


def _tasks(state: RunState) -> List[Task]:
    sc = state.scenario
    tasks: List[Task] = []
    tasks += [(e.name, "estimate", lambda e=e: run_estimate(state, e)) for e in sc.estimates]
    tasks += [(c.name, "corollary", lambda c=c: run_corollary(state, c)) for c in sc.corollaries]
    tasks += [(lm.name, lm.kind, lambda lm=lm: run_lemma(state, lm)) for lm in sc.lemmas]
    tasks += [(lv.name, "liouville", lambda lv=lv: run_liouville(state, lv)) for lv in sc.liouville]
    return tasks


def execute(state: RunState) -> Tuple[List[CheckResult], Dict[str, float]]:
    # level solves are shared between estimate checks
    for level in sorted(state.scenario.solver.levels) if state.scenario.solver and state.scenario.estimates else []:
        state.at_level(level)

    # a check that raises is recorded as failed; the rest of the run still reports
    def timed(name: str, kind: str, task: Callable[[], CheckResult]) -> Tuple[CheckResult, float]:
        started = time.perf_counter()
        try:
            result = task()
        except LabError as e:
            result = _failed_check(name, kind, e)
        except Exception:
            logger.error("check '%s' raised", name)
            raise
        return result, time.perf_counter() - started

    tasks = _tasks(state)
    outcomes = Parallel(n_jobs=state.jobs, prefer="threads")(delayed(timed)(name, kind, task) for name, kind, task in tasks)
    results = [result for result, _ in outcomes]
    timings = {name: elapsed for (name, _, _), (_, elapsed) in zip(tasks, outcomes)}
    for result in results:
        logger.info("check %s (%s): %s", result.name, result.kind, "pass" if result.passed else "FAIL")
    return results, timings


def build_report(state: RunState, results: List[CheckResult]) -> Dict[str, Any]:
    report: Dict[str, Any] = {
        "scenario": state.scenario.name,
        "seed": state.seed,
        "geometry": state.curvature.summary(),
        "checks": {
            r.name: {"kind": r.kind, "passed": r.passed, "summary": r.summary, "tables": r.tables, "series": r.series}
            for r in results
        },
    }
    if state.result is not None:
        report["solver"] = state.result.summary()
    return report


def run_directory(scenario: Scenario, out: Optional[Union[str, Path]] = None) -> Path:
    if out:
        return Path(out)
    return Path(scenario.output_dir) if scenario.output_dir else output_root() / scenario.name


def run(
    path: Union[str, Path],
    out: Optional[Union[str, Path]] = None,
    seed: Optional[int] = None,
    jobs: int = 1,
    force_calibrate: bool = False,
) -> RunManifest:
    scenario, text = load_scenario(path)
    return run_scenario(scenario, text, out, seed, jobs, force_calibrate)


def run_scenario(
    scenario: Scenario,
    text: str,
    out: Optional[Union[str, Path]] = None,
    seed: Optional[int] = None,
    jobs: int = 1,
    force_calibrate: bool = False,
) -> RunManifest:
    if force_calibrate:
        scenario = scenario.model_copy(
            update={"estimates": [e.model_copy(update={"mode": "calibrate"}) for e in scenario.estimates]}
        )
    seed = scenario.seed if seed is None else int(seed)
    out_dir = run_directory(scenario, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    logger.info("running scenario '%s' (seed %d, %d jobs) into %s", scenario.name, seed, jobs, out_dir)

    goldens = load_goldens(scenario)
    require_goldens(scenario, goldens)
    state = prepare(scenario, seed, max(1, int(jobs)), goldens)
    setup = time.perf_counter() - started
    results, timings = execute(state)
    freeze_goldens(scenario, results, goldens)
    timings = {"setup": setup, **timings, "total": time.perf_counter() - started}

    report_path = write_json(out_dir / "report.json", build_report(state, results))
    manifest = RunManifest(
        scenario=scenario.name,
        scenario_hash=scenario_hash(text),
        seed=seed,
        versions=versions(),
        verdicts={r.name: r.passed for r in results},
        timings=timings,
        artifacts=[report_path.name, "manifest.json"],
    )
    write_json(out_dir / "manifest.json", manifest.to_dict())
    logger.info("scenario '%s': %d/%d checks passed", scenario.name, sum(manifest.verdicts.values()), len(results))
    return manifest


def read_manifest(path: Union[str, Path]) -> Tuple[Dict[str, Any], Path]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise MissingArtifact(f"manifest {path} not found")
    return json.loads(path.read_text(encoding="utf-8")), path.parent


def report(manifest_path: Union[str, Path], fmt: str = "json", render: bool = False) -> List[Path]:
    """Emit verdicts (json), per-sample tables (csv) or named series (plotdata) next to the manifest"""
    if fmt not in REPORT_FORMATS:
        raise ConfigError(f"unknown report format '{fmt}'", rule="report-format")
    manifest, run_dir = read_manifest(manifest_path)
    source = run_dir / "report.json"
    if not source.exists():
        raise MissingArtifact(f"report {source} not found")
    data = json.loads(source.read_text(encoding="utf-8"))
    written: List[Path] = []
    if fmt == "json":
        verdicts = {
            "scenario": data["scenario"],
            "passed": all(c["passed"] for c in data["checks"].values()),
            "checks": {name: {"kind": c["kind"], "passed": c["passed"], "summary": c["summary"]} for name, c in data["checks"].items()},
        }
        written.append(write_json(run_dir / "verdicts.json", verdicts))
    elif fmt == "csv":
        for name, check in sorted(data["checks"].items()):
            for table, columns in sorted(check["tables"].items()):
                path = run_dir / "csv" / f"{name}.{table}.csv"
                path.parent.mkdir(parents=True, exist_ok=True)
                pd.DataFrame(columns).to_csv(path, index=False, float_format="%.17g", encoding="utf-8", lineterminator="\r\n")
                written.append(path)
    else:
        series = {
            f"{name}/{curve}": values
            for name, check in data["checks"].items()
            for curve, values in check["series"].items()
        }
        written.append(write_json(run_dir / "plotdata.json", series))
        if render:
            written += render_series(series, run_dir / "plots")
    artifacts = sorted(set(manifest["artifacts"]) | {str(p.relative_to(run_dir)) for p in written})
    manifest["artifacts"] = artifacts
    write_json(run_dir / "manifest.json", manifest)
    return written


def render_series(series: Dict[str, Dict[str, list]], directory: Path) -> List[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for key, values in sorted(series.items()):
        if not values.get("x"):
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        if key.endswith("histogram"):
            ax.bar(values["x"], values["y"], width=(values["x"][1] - values["x"][0]) if len(values["x"]) > 1 else 1.0)
        else:
            ax.plot(values["x"], values["y"], marker="o", markersize=3)
        ax.set_title(key)
        ax.grid(True, alpha=0.3)
        path = directory / (key.replace("/", "__").replace("*", "star") + ".png")
        fig.tight_layout()
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths


def golden_update(path: Union[str, Path], force: bool = False, jobs: int = 1) -> Path:
    """Freeze calibrated C* of the golden estimate checks; overwriting needs force"""
    scenario, _ = load_scenario(path)
    golden = [e for e in scenario.estimates if e.golden]
    if not golden:
        raise ConfigError(f"scenario '{scenario.name}' marks no estimate check as golden", rule="golden")
    target = golden_path(scenario)
    if target.exists() and not force:
        raise ConfigError(f"golden file {target} exists; pass --force to overwrite", rule="golden-overwrite")
    state = prepare(
        scenario.model_copy(
            update={"estimates": [e.model_copy(update={"mode": "calibrate"}) for e in golden]}
        ),
        scenario.seed,
        jobs,
    )
    values = {e.name: run_estimate(state, e).summary["c_star"] for e in state.scenario.estimates}
    logger.info("writing %d golden values to %s", len(values), target)
    return write_json(target, values)
