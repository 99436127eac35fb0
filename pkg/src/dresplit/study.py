"""Study execution: order/efficiency ladders, adaptivity sweeps, validation.

Every emitted number is traceable to a step record or a measured timing;
wall-clock columns are the only nondeterministic ones, and they sit in
dedicated columns so reports can be compared byte-wise without them.
"""

import csv
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.io

from .adaptive import ControllerParams, Trajectory, integrate_adaptive, integrate_fixed
from .errors import DresplitError, InvalidInput
from .expaction import ExpActionOptions, StiffOperator
from .lowrank import CompressionOptions, LDLTFactor, combine, compress, frob_norm, to_dense
from .oracle import dense_subflow, relative_error, self_verified_reference
from .problems import to_dense_problem
from .schemes import SchemeSpec, additive_coeffs, coefficient_residual
from .subflows import (
    ProblemData,
    QuadraticTerm,
    affine_flow,
    init_quadrature,
    quad_weights,
    quadratic_flow,
)


@dataclass(frozen=True)
class RunConfig:
    """One solver run: scheme, stepping mode, tolerances, resources.

    Exactly one of n_steps (fixed) and tol (adaptive) must be set; adaptive
    runs also need h1.
    """

    scheme: str = "sym"
    stages: int = 2
    n_steps: int | None = None
    tol: float | None = None
    h1: float | None = None
    epus: bool = False
    exp_tol: float = 1e-10
    comp_tol: float | None = None
    quad_degree: int | None = None
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if (self.n_steps is None) == (self.tol is None):
            raise InvalidInput("exactly one of n_steps and tol must be set")
        if self.tol is not None and self.h1 is None:
            raise InvalidInput("adaptive runs need an initial step h1")
        for name in ("tol", "h1", "exp_tol", "comp_tol"):
            val = getattr(self, name)
            if val is not None and val <= 0 and not (name == "comp_tol" and val == 0.0):
                raise InvalidInput(f"{name} must be positive, got {val}")

    @property
    def spec(self) -> SchemeSpec:
        return SchemeSpec(self.scheme, self.stages)

    def exp_opts(self) -> ExpActionOptions:
        return ExpActionOptions(rel_tol=self.exp_tol)

    def comp_opts(self) -> CompressionOptions:
        return CompressionOptions(rel_tol=self.comp_tol)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class StudySpec:
    """What a study sweeps over and how errors are referenced."""

    schemes: tuple = (
        SchemeSpec("lie"),
        SchemeSpec("strang"),
        SchemeSpec("asym", 3),
        SchemeSpec("sym", 2),
        SchemeSpec("sym", 3),
    )
    ladder: tuple = (10, 20, 40, 80, 160, 320, 640, 1280)
    tolerances: tuple = (1e-1, 1e-2, 1e-3)
    reference: str = "oracle"
    window: tuple = (1e-10, 1e-3)
    refine_substeps: int = 10

    def __post_init__(self):
        if len(self.ladder) < 3:
            raise InvalidInput("the step ladder needs at least 3 rungs for slope fits")
        if self.reference not in ("oracle", "finest"):
            raise InvalidInput(f"unknown reference policy {self.reference!r}")


@dataclass
class StudyReport:
    kind: str
    rows: list
    slopes: dict
    paths: list
    failures: list


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return "1" if value else "0"
    return str(value)


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def scheme_label(spec: SchemeSpec) -> str:
    if spec.kind in ("lie", "strang"):
        return spec.kind
    return f"{spec.kind}{spec.stages}"


def fit_order(hs, errors, window) -> tuple:
    """Least-squares slope of log(error) vs log(h) inside the error window."""
    hs = np.asarray(hs, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    mask = np.isfinite(errors) & (errors >= window[0]) & (errors <= window[1])
    if mask.sum() < 2:
        return float("nan"), int(mask.sum())
    slope = np.polyfit(np.log(hs[mask]), np.log(errors[mask]), 1)[0]
    return float(slope), int(mask.sum())


def _factored_error(approx: LDLTFactor, ref: LDLTFactor) -> float:
    denom = frob_norm(ref)
    diff = combine([(1.0, approx), (-1.0, ref)], CompressionOptions(rel_tol=0.0))
    return frob_norm(diff) / denom


def _build_reference(problem: ProblemData, study: StudySpec, config: RunConfig):
    """(dense reference or None, factored reference or None)."""
    if study.reference == "oracle":
        return self_verified_reference(to_dense_problem(problem)), None
    best = max(study.schemes, key=lambda s: s.order)
    n_ref = 2 * max(study.ladder)
    traj = integrate_fixed(
        problem, best, n_ref, config.exp_opts(), config.comp_opts(),
        config.quad_degree, config.threads,
        store_factors=False,
    )
    return None, traj.final


def run_fixed_ladder(problem: ProblemData, study: StudySpec, config: RunConfig):
    """Rows for the order/efficiency studies (one row per scheme per rung)."""
    dense_ref, factored_ref = _build_reference(problem, study, config)
    rows = []
    failures = []
    slopes = {}
    for spec in study.schemes:
        hs, errs = [], []
        for n in study.ladder:
            started = time.perf_counter()
            try:
                traj = integrate_fixed(
                    problem, spec, n, config.exp_opts(), config.comp_opts(),
                    config.quad_degree, config.threads, store_factors=False,
                )
            except DresplitError as exc:
                failures.append((scheme_label(spec), n, str(exc)))
                continue
            elapsed = time.perf_counter() - started
            if dense_ref is not None:
                err = relative_error(to_dense(traj.final), dense_ref)
            else:
                err = _factored_error(traj.final, factored_ref)
            max_rank = max(r.rank for r in traj.records)
            fresh = sum(r.fresh_quad_blocks for r in traj.records)
            h = problem.horizon / n
            rows.append([scheme_label(spec), spec.stages, n, h, err, max_rank,
                         fresh, elapsed])
            hs.append(h)
            errs.append(err)
        slopes[scheme_label(spec)] = fit_order(hs, errs, study.window)
    return rows, slopes, failures


def _refined_step_error(problem: ProblemData, spec: SchemeSpec, config: RunConfig,
                        start: LDLTFactor, h: float, accepted: LDLTFactor,
                        substeps: int) -> float:
    """Local error of one accepted step, measured against a fixed-step
    refinement with `substeps` equal substeps from the same start factor."""
    sub_problem = ProblemData(a=problem.a, q=problem.q, s=problem.s,
                              p0=start, horizon=h)
    refined = integrate_fixed(
        sub_problem, spec, substeps, config.exp_opts(), config.comp_opts(),
        config.quad_degree, threads=1, store_factors=False,
    )
    diff = combine([(1.0, accepted), (-1.0, refined.final)],
                   CompressionOptions(rel_tol=0.0))
    return frob_norm(diff)


def run_adaptive_sweep(problem: ProblemData, study: StudySpec, config: RunConfig):
    """Per-tolerance adaptive runs with per-step actual-error refinement.

    Returns (summary rows, {tol: step rows}, failures).
    """
    spec = config.spec
    summary = []
    per_tol = {}
    failures = []
    for tol in study.tolerances:
        params = ControllerParams(tol=tol, epus=config.epus)
        started = time.perf_counter()
        try:
            traj = integrate_adaptive(
                problem, spec, config.h1, params, config.exp_opts(),
                config.comp_opts(), config.quad_degree, config.threads,
                store_factors=True,
            )
        except DresplitError as exc:
            failures.append((scheme_label(spec), tol, str(exc)))
            continue
        elapsed = time.perf_counter() - started
        step_rows = []
        n_below = 0
        for i, rec in enumerate(traj.records):
            e_actual = _refined_step_error(
                problem, spec, config, traj.factors[i], rec.h,
                traj.factors[i + 1], study.refine_substeps,
            )
            if config.epus:
                e_actual /= rec.h
            if e_actual <= rec.err_est:
                n_below += 1
            step_rows.append([i + 1, rec.t, rec.h, rec.err_est, e_actual,
                              rec.rank, rec.rejections, rec.fresh_quad_blocks,
                              rec.clamped])
        per_tol[tol] = step_rows
        n_steps = len(traj.records)
        summary.append([
            scheme_label(spec), tol, n_steps,
            sum(r.rejections for r in traj.records),
            sum(r.fresh_quad_blocks for r in traj.records),
            n_below / n_steps if n_steps else float("nan"),
            elapsed,
        ])
    return summary, per_tol, failures


FIXED_HEADER = ["scheme", "stages", "n_steps", "h", "rel_error", "max_rank",
                "fresh_quad_blocks", "wallclock_s"]
SLOPE_HEADER = ["scheme", "slope", "points_used"]
ADAPTIVE_SUMMARY_HEADER = ["scheme", "tol", "n_steps", "rejections",
                           "fresh_quad_blocks", "frac_actual_below_est",
                           "wallclock_s"]
ADAPTIVE_STEP_HEADER = ["step", "t", "h", "e_est", "e_actual", "rank",
                        "rejections", "fresh_quad_blocks", "clamped"]


def run_study(problem: ProblemData, study: StudySpec, config: RunConfig,
              kind: str, out_dir) -> StudyReport:
    """Execute a study and emit its CSV report files.

    kind "order" and "efficiency" run the fixed-step ladder (order also fits
    slopes); "adaptivity" sweeps the tolerances with per-step records.
    Per-run failures are logged in the report and do not abort the study.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json())
    paths = []
    if kind in ("order", "efficiency"):
        rows, slopes, failures = run_fixed_ladder(problem, study, config)
        paths.append(_write_csv(out / f"{kind}.csv", FIXED_HEADER, rows))
        if kind == "order":
            slope_rows = [[name, s, npts] for name, (s, npts) in slopes.items()]
            paths.append(_write_csv(out / "slopes.csv", SLOPE_HEADER, slope_rows))
        report = StudyReport(kind, rows, slopes, paths, failures)
    elif kind == "adaptivity":
        summary, per_tol, failures = run_adaptive_sweep(problem, study, config)
        paths.append(_write_csv(out / "adaptive_summary.csv",
                                ADAPTIVE_SUMMARY_HEADER, summary))
        for tol, step_rows in per_tol.items():
            name = f"adaptive_steps_tol{tol:g}.csv"
            paths.append(_write_csv(out / name, ADAPTIVE_STEP_HEADER, step_rows))
        report = StudyReport(kind, summary, {}, paths, failures)
    else:
        raise InvalidInput(f"unknown study kind {kind!r}")

    lines = [f"study: {kind}", f"rows: {len(report.rows)}"]
    for name, (slope, npts) in report.slopes.items():
        lines.append(f"slope {name}: {slope:.3f} ({npts} points)")
    for failure in report.failures:
        lines.append(f"FAILED run: {failure}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return report


def run_solve(problem: ProblemData, config: RunConfig, out_dir) -> Trajectory:
    """One solver run; writes trajectory.csv, the final factor and a summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json())
    started = time.perf_counter()
    if config.n_steps is not None:
        traj = integrate_fixed(
            problem, config.spec, config.n_steps, config.exp_opts(),
            config.comp_opts(), config.quad_degree, config.threads,
        )
    else:
        params = ControllerParams(tol=config.tol, epus=config.epus)
        traj = integrate_adaptive(
            problem, config.spec, config.h1, params, config.exp_opts(),
            config.comp_opts(), config.quad_degree, config.threads,
        )
    elapsed = time.perf_counter() - started

    rows = [[i + 1, r.t, r.h, r.err_est, r.rank, r.rejections,
             r.fresh_quad_blocks, r.clamped] for i, r in enumerate(traj.records)]
    _write_csv(out / "trajectory.csv",
               ["step", "t", "h", "err_est", "rank", "rejections",
                "fresh_quad_blocks", "clamped"], rows)
    scipy.io.mmwrite(str(out / "final_L.mtx"), traj.final.L, precision=17)
    scipy.io.mmwrite(str(out / "final_D.mtx"), traj.final.D, precision=17)
    (out / "summary.txt").write_text(
        f"steps: {len(traj.records)}\nfinal rank: {traj.final.rank}\n"
        f"wallclock_s: {elapsed!r}\n"
    )
    return traj


def run_validation(seed: int = 0, n_instances: int = 25) -> list:
    """Oracle cross-checks used by the `validate` command.

    Returns (name, passed, detail) triples: coefficient order conditions,
    quadrature moment residuals, factored-vs-dense subflow agreement, and
    the compression contract.
    """
    rng = np.random.default_rng(seed)
    results = []

    worst = 0.0
    closed_ok = True
    for s in range(1, 9):
        gamma = additive_coeffs(s, symmetric=False)
        worst = max(worst, coefficient_residual(gamma, s, symmetric=False))
        closed = np.array(
            [(-1.0) ** (s - k) * k**s / (math.factorial(k) * math.factorial(s - k))
             for k in range(1, s + 1)]
        )
        closed_ok &= bool(np.allclose(gamma, closed, rtol=0, atol=1e-12 * max(1, abs(closed).max())))
        if s >= 1:
            worst = max(worst, coefficient_residual(
                additive_coeffs(s, symmetric=True), s, symmetric=True))
    results.append(("coefficient order conditions (s<=8)", worst <= 1e-12 and closed_ok,
                    f"max residual {worst:.2e}"))

    worst = 0.0
    for degree in range(1, 10):
        h = float(rng.uniform(0.5, 2.0))
        nodes = np.linspace(0.0, h, degree + 1)
        w = quad_weights(nodes, h)
        for j in range(degree + 1):
            target = h ** (j + 1) / (j + 1)
            worst = max(worst, abs(float(w @ nodes**j) - target) / target)
    results.append(("quadrature moment residuals (degree<=9)", worst <= 1e-12,
                    f"max relative residual {worst:.2e}"))

    worst_g, worst_f = 0.0, 0.0
    for _ in range(n_instances):
        n = int(rng.integers(2, 9))
        inst = _random_instance(rng, n)
        problem, dense, factor, h = inst
        exp_opts = ExpActionOptions(rel_tol=1e-12)
        comp_opts = CompressionOptions(rel_tol=1e-15)
        p_dense = to_dense(factor)
        g_fac = to_dense(quadratic_flow(factor, h, problem.s))
        g_ref = dense_subflow("quadratic", p_dense, h, dense)
        worst_g = max(worst_g, relative_error(g_fac, g_ref))
        state = init_quadrature(problem, h, 9, exp_opts, comp_opts)
        f_fac = to_dense(affine_flow(factor, h, problem, state, exp_opts, comp_opts))
        f_ref = dense_subflow("affine", p_dense, h, dense)
        worst_f = max(worst_f, relative_error(f_fac, f_ref))
    results.append(("subflow equivalence vs dense oracle",
                    worst_g <= 1e-10 and worst_f <= 1e-10,
                    f"quadratic {worst_g:.2e}, affine {worst_f:.2e}"))

    ok = True
    detail = ""
    for _ in range(20):
        n = int(rng.integers(4, 33))
        r = int(rng.integers(1, min(n, 12) + 1))
        l_mat = rng.standard_normal((n, r))
        core = rng.standard_normal((r, r))
        factor = LDLTFactor(l_mat, core + core.T)
        tol = float(rng.choice([1e-4, 1e-6, 1e-8]))
        compressed = compress(factor, CompressionOptions(rel_tol=tol))
        p_in = to_dense(factor)
        err = np.linalg.norm(p_in - to_dense(compressed)) / np.linalg.norm(p_in)
        if err > tol or compressed.rank > factor.rank:
            ok = False
            detail = f"error {err:.2e} above {tol:g}"
            break
    results.append(("compression contract", ok, detail or "bound held"))
    return results


def _random_instance(rng, n):
    """Random desk-scale instance (problem, dense mirror, state factor, h)."""
    a = rng.standard_normal((n, n)) / np.sqrt(n)
    r = int(rng.integers(1, min(n, 4) + 1))
    q_l = rng.standard_normal((n, r))
    s_l = rng.standard_normal((n, r))
    p_l = rng.standard_normal((n, r))
    problem = ProblemData(
        a=StiffOperator(a),
        q=LDLTFactor(q_l, np.eye(r)),
        s=QuadraticTerm.from_dense(s_l @ s_l.T),
        p0=LDLTFactor(p_l, np.eye(r)),
        horizon=1.0,
    )
    dense = to_dense_problem(problem)
    h = float(rng.uniform(0.02, 0.12))
    return problem, dense, problem.p0, h
