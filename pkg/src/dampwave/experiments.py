"""Experiment orchestration: one function per experiment kind.

Each experiment returns an :class:`ExperimentResult` holding CSV tables,
plot curves and checks.  :func:`run` writes everything to the output
directory and assembles an :class:`ExperimentReport`.
"""

from __future__ import annotations

import math
import platform
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import io as rio
from .coherent import InfeasibleError, default_K, ehrenfest_run
from .config import ExperimentConfig
from .damping import ZERO_LEVEL, MollifierSpec, from_spec, mollify, zero_set_violations
from .estimates import (
    Envelope, WeightFunction, filtered_average_check, frequency_mixing_scan, loglog_slope,
    modified_resolvent_check, theorem31_check,
)
from .evolution import evolve, time_grid
from .geometry import ManifoldModel, gcc_check
from .operators import assemble, diagonalization_suite
from .spectra import G_of_h, WindowError, scan_imaginary_axis, spectrum

VERDICTS = ("PASS", "FAIL", "INFO")


@dataclass(frozen=True)
class Check:
    name: str
    verdict: str
    detail: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}")

    def as_dict(self) -> dict:
        return {"name": self.name, "verdict": self.verdict, "detail": self.detail}


def check(name: str, ok: bool, **detail) -> Check:
    return Check(name, "PASS" if ok else "FAIL", detail)


@dataclass
class ExperimentResult:
    tables: dict = field(default_factory=dict)  # file stem -> (header, rows)
    curves: dict = field(default_factory=dict)  # name -> (xlabel, ylabel, x, y)
    checks: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    fitted: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    config: dict
    environment: dict
    artifacts: list
    checks: list
    fitted_constants: dict
    summary: dict
    wall_clock: float

    @property
    def exit_code(self) -> int:
        return 1 if any(c.verdict == "FAIL" for c in self.checks) else 0

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "environment": self.environment,
            "artifacts": self.artifacts,
            "checks": [c.as_dict() for c in self.checks],
            "fitted_constants": self.fitted_constants,
            "summary": self.summary,
            "wall_clock_s": self.wall_clock,
            "exit_code": self.exit_code,
        }


def environment() -> dict:
    return {
        "dampwave": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "precision": "float64",
        "machine_eps": float(np.finfo(float).eps),
    }


# ---------------------------------------------------------------- helpers


def _setup(cfg: ExperimentConfig):
    model = ManifoldModel(cfg.manifold.kind, cfg.manifold.K)
    b = from_spec(cfg.damping.family, cfg.damping.params, model.dim)
    return model, b


def _main_bundle(model, b, m):
    return assemble(model, b, m, "A_m" if m > 0 else "A_plus")


def _map(executor: Executor | None, fn, items):
    if executor is None:
        return [fn(x) for x in items]
    futs = [executor.submit(fn, x) for x in items]
    return [f.result() for f in futs]


def _need_K_for_window(model, h, eps, m=1.0):
    need = (1.0 + eps) / h
    if need > float(np.max(model.lam_m(m))):
        raise InfeasibleError(f"h = {h} with eps = {eps} needs K >= {math.ceil(need) + 1} (have {model.K})")


# ------------------------------------------------------------ experiments


def exp_spectrum(cfg, executor=None) -> ExperimentResult:
    model, b = _setup(cfg)
    bundle = _main_bundle(model, b, cfg.m)
    res = spectrum(bundle)
    z = res.values
    z = z[np.lexsort((z.real, z.imag))]
    scale = max(1.0, float(np.max(np.abs(z))))
    bsup = b.sup_norm
    nonreal = np.abs(z.imag) > 1e-9 * scale
    out = ExperimentResult()
    out.tables["eigenvalues"] = (["re", "im"], [(v.real, v.imag) for v in z])
    out.curves["spectrum"] = ("Re z", "Im z", z.real, z.imag)
    max_re = float(np.max(z.real))
    if b.is_zero:
        out.checks.append(Check("abscissa-negative", "INFO", {"max_re": max_re, "note": "b = 0"}))
    else:
        out.checks.append(check("abscissa-negative", max_re < 0, max_re=max_re))
    out.checks.append(check("re-lower-bound", bool(np.all(z.real >= -bsup - 1e-9)), min_re=float(np.min(z.real)), bound=-bsup))
    nr_min = float(np.min(z.real[nonreal])) if nonreal.any() else math.nan
    out.checks.append(check("nonreal-re-bound", bool(np.all(z.real[nonreal] >= -bsup / 2 - 1e-9)), min_re=nr_min, bound=-bsup / 2))
    out.summary = {
        "n_eigenvalues": int(z.size),
        "n_upper_half_plane": int(np.count_nonzero(z.imag > 1e-9 * scale)),
        "max_re": max_re,
        "max_cond": res.max_cond,
    }
    return out


def exp_scan(cfg, executor=None) -> ExperimentResult:
    model, b = _setup(cfg)
    p = cfg.typed_params()
    bundle = _main_bundle(model, b, cfg.m)
    s_max = p.s_max or 1.2 * float(np.max(bundle.lam))
    s = np.linspace(-s_max, s_max, p.n)
    scan = scan_imaginary_axis(bundle, s, refine=p.refine)
    out = ExperimentResult()
    out.tables["scan"] = (["s", "resolvent_norm", "near_singular"], list(zip(s, scan.values, scan.flags)))
    out.curves["scan"] = ("s", "||(is - A)^-1||", s, scan.values)
    v = scan.values
    ok = ~(np.isnan(v) | np.isnan(v[::-1]))
    asym = float(np.max(np.abs(v[ok] - v[::-1][ok]) / v[ok])) if ok.any() else 0.0
    out.checks.append(check("scan-symmetric", asym <= 1e-8, max_rel_asymmetry=asym))
    out.summary = {"grid_max": scan.grid_max, "peak_max": scan.peak_max, "certified_upper": scan.certified_upper,
                   "n_flagged": int(scan.flags.sum())}
    return out


def exp_evolve(cfg, executor=None) -> ExperimentResult:
    model, b = _setup(cfg)
    p = cfg.typed_params()
    bundle = _main_bundle(model, b, cfg.m)
    rng = np.random.default_rng(cfg.seed)
    times = time_grid(p.T, b.sup_norm, omega_max=float(np.max(bundle.lam)))
    rows = []
    first = None
    worst_res = worst_inc = 0.0
    for j in range(p.n_states):
        U = rng.normal(size=bundle.dim) + 1j * rng.normal(size=bundle.dim)
        U /= np.linalg.norm(bundle.weight() * U)
        tr = evolve(bundle, U, times, keep_states=False)
        res, inc = tr.dissipation_residual(), tr.max_increase()
        worst_res, worst_inc = max(worst_res, res), max(worst_inc, inc)
        rows.append((j, tr.energy[0], tr.energy[-1], res, inc))
        if first is None:
            first = tr
    out = ExperimentResult()
    out.tables["states"] = (["state", "E0", "ET", "dissipation_residual", "max_increase"], rows)
    out.tables["trace"] = (["t", "energy", "dissipation_rate"], list(zip(first.times, first.energy, first.dissipation_rate)))
    out.curves["energy"] = ("t", "E(t)", first.times, first.energy)
    out.checks.append(check("dissipation-identity", worst_res <= 1e-8, max_residual=worst_res))
    out.checks.append(check("energy-nonincreasing", worst_inc <= 1e-12, max_increase=worst_inc))
    out.summary = {"n_times": int(times.size), "dt": float(times[1] - times[0])}
    return out


def _weight(kind: str, L: float) -> WeightFunction:
    if kind == "ramp":
        return WeightFunction.ramp()
    if kind == "bump":
        return WeightFunction.smooth(L)
    return WeightFunction.psi_min(L)


def exp_avg_estimate(cfg, executor=None) -> ExperimentResult:
    model, b = _setup(cfg)
    p = cfg.typed_params()
    if cfg.m <= 0:
        raise InfeasibleError("avg-estimate needs m > 0")
    A = assemble(model, b, cfg.m, "A_m")
    P = assemble(model, b, cfg.m, "P_m")
    s = np.linspace(0.0, 2.0 * float(np.max(A.lam)), p.scan_points)
    env = Envelope.from_scan(scan_imaginary_axis(A, s))
    mr = modified_resolvent_check(P, env, p.eps, n_tau=p.n_tau)
    rng = np.random.default_rng(cfg.seed)
    U0 = rng.normal(size=A.dim) + 1j * rng.normal(size=A.dim)
    Psi = _weight(p.weight, p.L)
    reps = _map(executor, lambda T: filtered_average_check(A, env, p.eps, Psi, T, U0, mr.C0), p.T_grid)
    out = ExperimentResult()
    out.tables["filtered_average"] = (
        ["T", "lhs", "rhs", "error_bar", "pass"],
        [(T, r.lhs, r.rhs, r.error_bar, r.verdict == "PASS") for T, r in zip(p.T_grid, reps)],
    )
    out.curves["filtered_average"] = ("T", "LHS", np.array(p.T_grid), np.array([r.lhs for r in reps]))
    for T, r in zip(p.T_grid, reps):
        out.checks.append(Check(f"filtered-average-T{T:g}", r.verdict, {"lhs": r.lhs, "rhs": r.rhs}))
    slope = loglog_slope(p.T_grid, [r.lhs for r in reps])
    out.checks.append(Check("filtered-average-slope", "INFO", {"slope": slope}))
    out.fitted = {"C0": mr.C0}
    out.summary = {"C0": mr.C0, "C0_tau": mr.tau, "C0_alpha": mr.alpha, "slope": slope}
    return out


def exp_theorem31(cfg, executor=None) -> ExperimentResult:
    model, b = _setup(cfg)
    p = cfg.typed_params()
    if cfg.m <= 0:
        raise InfeasibleError("theorem31 needs m > 0")
    for h in p.h_grid:
        _need_K_for_window(model, h, p.eps, cfg.m)
    P = assemble(model, b, cfg.m, "P_m")
    w = _weight(p.weight, p.L)

    def one(h):
        g = G_of_h(P, h, p.eps)
        return [theorem31_check(P, h, p.eps, p.T, w, v, theta=p.theta, delta=p.delta, G=g) for v in p.variants]

    results = _map(executor, one, p.h_grid)
    out = ExperimentResult()
    rows = []
    for h, reps in zip(p.h_grid, results):
        for r in reps:
            q = r.params
            rows.append((h, q["variant"], r.lhs, r.rhs, q["main"], q["remainder_factor"], r.fitted_constant, q["G"], r.verdict == "PASS"))
            out.checks.append(Check(f"theorem31-{q['variant']}-h{h:g}", r.verdict, {"fitted_C0": r.fitted_constant}))
    out.tables["theorem31"] = (["h", "variant", "lhs", "rhs", "main", "remainder_factor", "fitted_C0", "G", "pass"], rows)
    for v in p.variants:
        fits = [r[6] for r in rows if r[1] == v]
        out.curves[f"fitted_C0_{v}"] = ("h", "fitted C0", np.array(p.h_grid), np.array(fits))
        ratio = constant_variation(fits)
        out.checks.append(check(f"theorem31-{v}-stability", math.isfinite(ratio) and ratio <= 2.0, variation=ratio))
        out.fitted[v] = fits
    return out


def constant_variation(values) -> float:
    """``max / min`` of fitted constants; 1 when all vanish, inf when only some do."""
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        return math.inf
    if np.all(v == 0):
        return 1.0
    if np.any(v == 0):
        return math.inf
    return float(v.max() / v.min())


def exp_ehrenfest(cfg, executor=None) -> ExperimentResult:
    _, b = _setup(cfg)
    p = cfg.typed_params()
    kind, K = cfg.manifold.kind, cfg.manifold.K
    hs = sorted(p.h_grid, reverse=True)
    Ks = {}
    for h in hs:
        need = max(default_K(h), math.ceil((1 + (p.eps if p.rho == 0 else h**p.rho)) / h) + 1)
        if need > K:
            raise InfeasibleError(f"h = {h} needs K >= {need} (have {K})")
        Ks[h] = max(need, 16) if p.K_rule == "auto" else K
        Ks[h] = min(Ks[h], K)

    def one(h):
        return ehrenfest_run(kind, b, cfg.m, p.x0, p.xi0, p.mu, h, Ks[h], eps=p.eps, rho=p.rho, nu=p.nu, delta=p.delta)

    rows = _map(executor, one, hs)
    out = ExperimentResult()
    cols = ["h", "T", "r", "classical_exp2", "classical_exp1", "G_measured", "G_lower_implied"]
    out.tables["ehrenfest"] = (cols, [(r.h, r.T, r.ratio, r.prediction_squared, r.prediction, r.G, r.G_lower) for r in rows])
    x = np.array([math.log(1.0 / r.h) for r in rows])
    out.curves["G_measured"] = ("log(1/h)", "G(h)", x, np.array([r.G for r in rows]))
    out.curves["G_lower_implied"] = ("log(1/h)", "implied lower bound", x, np.array([r.G_lower for r in rows]))
    for r in rows:
        out.checks.append(check(f"ratio-range-h{r.h:g}", -1e-12 <= r.ratio <= 1 + 1e-9, r=r.ratio))
        if r.perturbation_gap is not None:
            out.checks.append(check(f"mollifier-gap-h{r.h:g}", r.perturbation_gap <= r.perturbation_bound + 1e-12,
                                    gap=r.perturbation_gap, bound=r.perturbation_bound))
        out.checks.append(Check(f"G-over-log-h{r.h:g}", "INFO", {"value": r.G / math.log(1 / r.h)}))
    out.summary = {"rows": [r.as_dict() for r in rows], "K": {str(h): k for h, k in Ks.items()}}
    return out


def exp_mollify(cfg, executor=None) -> ExperimentResult:
    _, b = _setup(cfg)
    p = cfg.typed_params()

    def one(eps):
        mb = mollify(b, MollifierSpec(eps, p.level_scale, p.grid))
        data = mb.meta["mollified"]
        sup_err = float(np.max(np.abs(data.values - data.source)))
        om = float(np.asarray(b.omega(eps)))
        return eps, sup_err, eps * data.grad_sup, om, zero_set_violations(b, mb)

    rows = _map(executor, one, p.eps_grid)
    out = ExperimentResult()
    out.tables["mollify"] = (["eps", "sup_error", "eps_grad_sup", "omega_eps", "zero_set_violations"], rows)
    e = np.array([r[0] for r in rows])
    out.curves["sup_error"] = ("eps", "||b_eps - b||_inf", e, np.array([r[1] for r in rows]))
    out.curves["eps_grad"] = ("eps", "eps ||grad b_eps||_inf", e, np.array([r[2] for r in rows]))
    for r in rows:
        out.checks.append(check(f"zero-set-eps{r[0]:g}", r[4] == 0, violations=r[4]))
    ratios = [r[1] / r[3] for r in rows if r[3] > 0]
    if ratios:
        out.checks.append(Check("sup-error-over-omega", "INFO", {"max_over_min": max(ratios) / min(ratios)}))
    return out


def exp_gcc(cfg, executor=None) -> ExperimentResult:
    model, b = _setup(cfg)
    p = cfg.typed_params()
    level = ZERO_LEVEL * max(b.sup_norm, 1e-300)
    verdict = gcc_check(model, lambda pts: b(pts) > level, p.T, p.n_x, p.n_theta)
    out = ExperimentResult()
    wx = verdict.witness.x.tolist() if verdict.witness else []
    wxi = verdict.witness.xi.tolist() if verdict.witness else []
    out.tables["gcc"] = (["passed", "T", "n_x", "n_theta", "dt"], [(verdict.passed, p.T, verdict.n_x, verdict.n_theta, verdict.dt)])
    out.checks.append(Check("gcc-sampled", "INFO", {"passed": verdict.passed, "witness_x": wx, "witness_xi": wxi, "note": verdict.note}))
    return out


def exp_mix_scan(cfg, executor=None) -> ExperimentResult:
    model, b = _setup(cfg)
    p = cfg.typed_params()
    for k in p.levels:
        if 2 ** (k + 1) > model.K:
            raise InfeasibleError(f"level {k} needs K >= {2 ** (k + 1)} (have {model.K})")
    scan = frequency_mixing_scan(model, b, cfg.m, p.levels)
    out = ExperimentResult()
    out.tables["mixing"] = (["k", "norm"], list(zip(scan.levels, scan.norms)))
    out.curves["mixing"] = ("2^k", "norm", 2.0 ** np.array(scan.levels), scan.norms)
    out.checks.append(Check("mixing-slope", "INFO", {"slope": scan.slope, "n_hat": scan.n_hat}))
    out.summary = scan.as_dict()
    return out


def exp_diag_suite(cfg, executor=None) -> ExperimentResult:
    model, b = _setup(cfg)
    p = cfg.typed_params()
    for h in p.h_grid:
        if 1.6 / h > model.K:
            raise InfeasibleError(f"h = {h} needs K >= {math.ceil(1.6 / h)} (have {model.K})")

    def one(h):
        s = diagonalization_suite(model, b, h, nu=p.nu, m=cfg.m if cfg.m > 0 else 1.0)
        return h, s.e1(p.t), s.e2(p.t)

    rows = _map(executor, one, p.h_grid)
    out = ExperimentResult()
    out.tables["diag_suite"] = (["h", "e1", "e2"], rows)
    hs = np.array([r[0] for r in rows])
    out.curves["e2"] = ("h", "e2(t, h)", hs, np.array([r[2] for r in rows]))
    expo = loglog_slope(hs, [r[2] for r in rows]) if len(rows) > 1 else math.nan
    out.checks.append(Check("e2-exponent", "INFO", {"exponent": expo}))
    out.fitted = {"e2_exponent": expo}
    return out


DISPATCH = {
    "spectrum": exp_spectrum,
    "scan": exp_scan,
    "evolve": exp_evolve,
    "avg-estimate": exp_avg_estimate,
    "theorem31": exp_theorem31,
    "ehrenfest": exp_ehrenfest,
    "mollify": exp_mollify,
    "gcc": exp_gcc,
    "mix-scan": exp_mix_scan,
    "diag-suite": exp_diag_suite,
}


def run(cfg: ExperimentConfig) -> ExperimentReport:
    """Run one configured experiment and write its outputs.

    Files go to ``<output_dir>/<kind>/``: one CSV per table, plot data under
    ``plots/`` and ``report.json``.  CSV files carry the configuration as
    metadata and nothing time dependent, so reruns are byte identical.
    """
    t0 = time.perf_counter()
    echo = cfg.model_dump()
    executor = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        try:
            result = DISPATCH[cfg.kind](cfg, executor)
        except WindowError as err:
            raise InfeasibleError(str(err)) from None
    finally:
        if executor is not None:
            executor.shutdown()
    out_dir = Path(cfg.output_dir) / cfg.kind
    meta = {"config": echo, "dampwave": __version__}
    paths = []
    for stem in sorted(result.tables):
        header, rows = result.tables[stem]
        paths.append(rio.write_csv(out_dir / f"{stem}.csv", header, rows, meta))
    paths += rio.emit_plot_data(result.curves, out_dir / "plots", {"kind": cfg.kind})
    artifacts = [{"path": str(p), "sha256": rio.sha256(p)} for p in paths]
    # the report lists itself without a checksum
    artifacts.append({"path": str(out_dir / "report.json"), "sha256": None})
    report = ExperimentReport(echo, environment(), artifacts, result.checks, result.fitted, result.summary,
                              time.perf_counter() - t0)
    rio.write_json(out_dir / "report.json", report.as_dict())
    return report
