"""Experiment orchestration: scaling runs, cross-validation and reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats as sps

from . import branching, fixed_point, graph
from .kernel import (Kernel, KernelError, check_conditions, kernel_from_config,
                     operator_stats, tilt_measure, truncate_measure)

log = logging.getLogger(__name__)

RUNS_HEADER = ["experiment_id", "kernel_id", "n", "rep", "seed", "c1",
               "c1_over_logn", "c1_over_n", "elapsed_ms"]
MODES = ("subcritical-scaling", "supercritical-fraction", "branching-validation")
MAX_EXPECTED_EDGES = 1e8


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


class PreconditionError(RuntimeError):
    """The kernel does not satisfy what the requested mode needs."""


@dataclass
class BranchingOptions:
    samples: int = 200_000
    cap: int = branching.DEFAULT_CAP
    root: Optional[int] = None
    z_grid: tuple = (1.02, 1.05)
    tilt_q: tuple = (0.05, 0.1)
    truncate_d: tuple = ()


@dataclass
class ExperimentConfig:
    kernel_doc: dict
    n_grid: list
    replications: int = 1
    master_seed: int = 0
    mode: str = "subcritical-scaling"
    assignment: str = "deterministic"
    tol: float = 1e-12
    max_iter: int = 1_000_000
    bis_tol: float = 1e-9
    output_dir: Optional[str] = None
    experiment_id: str = "exp"
    kernel_id: str = "kernel"
    threads: int = 1
    record_timing: bool = False
    branching: BranchingOptions = field(default_factory=BranchingOptions)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode != "branching-validation":
            if not self.n_grid:
                raise ConfigError("n_grid must be nonempty")
            if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
                raise ConfigError("n_grid must be strictly ascending")
            if any(n < 2 for n in self.n_grid):
                raise ConfigError("n_grid entries must be >= 2")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.assignment not in ("deterministic", "iid"):
            raise ConfigError(f"unknown assignment mode {self.assignment!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @property
    def kernel(self) -> Kernel:
        return kernel_from_config(self.kernel_doc)

    @property
    def iteration(self):
        return fixed_point.IterationConfig(self.tol, int(self.max_iter))

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        if "kernel" not in doc:
            raise ConfigError("config has no 'kernel' entry")
        kdoc = doc["kernel"]
        try:
            kernel_from_config(kdoc)
        except KernelError as exc:
            raise ConfigError(str(exc)) from None
        b = dict(doc.get("branching", {}))
        known_b = set(BranchingOptions.__dataclass_fields__)
        if set(b) - known_b:
            raise ConfigError(f"unknown branching fields {sorted(set(b) - known_b)}")
        for key in ("z_grid", "tilt_q", "truncate_d"):
            if key in b:
                b[key] = tuple(b[key])
        rest = {k: v for k, v in doc.items() if k not in ("kernel", "branching")}
        known = set(cls.__dataclass_fields__) - {"kernel_doc", "branching"}
        if set(rest) - known:
            raise ConfigError(f"unknown config fields {sorted(set(rest) - known)}")
        rest.setdefault("n_grid", [])
        rest["n_grid"] = [int(n) for n in rest["n_grid"]]
        try:
            return cls(kernel_doc=kdoc, branching=BranchingOptions(**b), **rest)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self):
        b = self.branching
        return {
            "experiment_id": self.experiment_id,
            "kernel_id": self.kernel_id,
            "kernel": self.kernel_doc,
            "mode": self.mode,
            "n_grid": list(self.n_grid),
            "replications": self.replications,
            "master_seed": self.master_seed,
            "assignment": self.assignment,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "bis_tol": self.bis_tol,
            "branching": {
                "samples": b.samples, "cap": b.cap, "root": b.root,
                "z_grid": list(b.z_grid), "tilt_q": list(b.tilt_q),
                "truncate_d": list(b.truncate_d),
            },
        }


@dataclass(frozen=True)
class RunRecord:
    n: int
    rep: int
    seed: int
    c1: int
    elapsed_ms: Optional[float] = None

    @property
    def c1_over_logn(self):
        return self.c1 / math.log(self.n)

    @property
    def c1_over_n(self):
        return self.c1 / self.n


@dataclass
class ExperimentReport:
    config: dict
    operator_stats: dict
    conditions: dict
    r_kappa: dict
    rho: dict
    prediction: Optional[float]
    prediction_label: str
    per_n: list
    regression: Optional[dict]
    runs: list
    checks: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    conjecture_probe: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.get("passed", False) for c in self.checks.values())

    def to_dict(self):
        return {
            "config": self.config,
            "operator_stats": self.operator_stats,
            "conditions": self.conditions,
            "r_kappa": self.r_kappa,
            "rho": self.rho,
            "prediction": self.prediction,
            "prediction_label": self.prediction_label,
            "per_n": self.per_n,
            "regression": self.regression,
            "checks": self.checks,
            "warnings": self.warnings,
            "conjecture_probe": self.conjecture_probe,
        }


# -- pieces -----------------------------------------------------------------

def _analysis(config: ExperimentConfig):
    k = config.kernel
    ostats = operator_stats(k)
    cond = check_conditions(k)
    r = fixed_point.r_kappa(k, config.iteration, config.bis_tol)
    rho = fixed_point.survival_prob(k, config.iteration)
    return k, ostats, cond, r, rho


def prediction_for(r: fixed_point.RKappaEstimate, bis_tol: float) -> Optional[float]:
    """1/log r_kappa, or None when the bracket does not clear 1."""
    if not r.excludes_one(bis_tol) or r.saturated:
        return None
    return 1.0 / math.log(r.mid)


def _hypothesis_label(cond):
    if cond.c1_bounded or cond.c3:
        return "proven"
    return "outside proven hypotheses"


def run_replication(kernel: Kernel, n: int, rep: int, config: ExperimentConfig) -> RunRecord:
    seed = derived_run_seed(config.master_seed, n, rep)
    t0 = time.perf_counter()
    arng = np.random.default_rng(seed) if config.assignment == "iid" else None
    a = graph.assign_types(kernel.space, n, config.assignment, arng)
    g = graph.generate_graph(a, kernel, seed)
    c1 = graph.largest_component(g).c1
    elapsed = (time.perf_counter() - t0) * 1e3 if config.record_timing else None
    return RunRecord(n, rep, seed, c1, elapsed)


def derived_run_seed(master_seed, n, rep):
    from .seeding import derived_seed
    return derived_seed(master_seed, "replication", n, rep)


def _guard_resources(kernel, config):
    for n in config.n_grid:
        counts = graph._largest_remainder(n, kernel.space.weights)
        e = graph.expected_edges(kernel, counts, n)
        if e > MAX_EXPECTED_EDGES:
            raise PreconditionError(f"n={n}: expected {e:.3g} edges exceeds the 1e8 guard")


def run_graphs(kernel: Kernel, config: ExperimentConfig) -> list:
    tasks = [(n, rep) for n in config.n_grid for rep in range(config.replications)]
    if config.threads == 1:
        return [run_replication(kernel, n, rep, config) for n, rep in tasks]
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        futures = [pool.submit(run_replication, kernel, n, rep, config) for n, rep in tasks]
        return [f.result() for f in futures]


def summarize(runs, key, level=0.95):
    out = []
    for n in sorted({r.n for r in runs}):
        vals = np.array([getattr(r, key) for r in runs if r.n == n], dtype=float)
        k = vals.size
        mean = float(vals.mean())
        sd = float(vals.std(ddof=1)) if k > 1 else 0.0
        half = float(sps.t.ppf(0.5 + level / 2, k - 1) * sd / math.sqrt(k)) if k > 1 else 0.0
        out.append({"n": n, "observable": key, "replications": k, "mean": mean,
                    "stddev": sd, "ci_level": level, "ci": [mean - half, mean + half],
                    "mean_c1": float(np.mean([r.c1 for r in runs if r.n == n]))})
    return out


def fit_scaling(runs) -> Optional[dict]:
    """Least squares c1 ~ alpha log n + beta log log n + gamma over all runs."""
    if len({r.n for r in runs}) < 3:
        return None
    ln = np.array([math.log(r.n) for r in runs])
    X = np.column_stack([ln, np.log(ln), np.ones_like(ln)])
    y = np.array([r.c1 for r in runs], dtype=float)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    dof = len(y) - 3
    resid = y - X @ coef
    if dof > 0:
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.inv(X.T @ X)
        se = [float(math.sqrt(max(v, 0.0))) for v in np.diag(cov)]
    else:
        se = [None, None, None]
    return {"alpha": float(coef[0]), "beta": float(coef[1]), "gamma": float(coef[2]),
            "alpha_stderr": se[0], "beta_stderr": se[1], "gamma_stderr": se[2],
            "records": len(y)}


def _base_report(config, ostats, cond, r, rho, runs, per_n, regression, prediction, label):
    return ExperimentReport(
        config=config.to_dict(),
        operator_stats=ostats.to_dict(),
        conditions=cond.to_dict(),
        r_kappa=r.to_dict(),
        rho=rho.to_dict(),
        prediction=prediction,
        prediction_label=label,
        per_n=per_n,
        regression=regression,
        runs=runs,
    )


def run_scaling_experiment(config: ExperimentConfig) -> ExperimentReport:
    """C1 against log n for a kernel with ||T|| < 1."""
    if config.mode != "subcritical-scaling":
        raise ConfigError(f"mode {config.mode!r} is not subcritical-scaling")
    k, ostats, cond, r, rho = _analysis(config)
    _guard_resources(k, config)
    warnings = []
    if ostats.op_norm >= 1:
        warnings.append(f"||T|| = {ostats.op_norm:.6g} >= 1: r_kappa = 1, C1/log n is expected to diverge")
        log.warning(warnings[-1])
    prediction = prediction_for(r, config.bis_tol)
    runs = run_graphs(k, config)
    report = _base_report(config, ostats, cond, r, rho, runs,
                          summarize(runs, "c1_over_logn"), fit_scaling(runs),
                          prediction, _hypothesis_label(cond))
    report.warnings = warnings
    reg = report.regression
    if reg is not None and prediction is not None:
        reg["alpha_relative_error"] = reg["alpha"] / prediction - 1.0
    return report


def run_supercritical(config: ExperimentConfig) -> ExperimentReport:
    """Mean C1/n per n against the survival probability."""
    if config.mode != "supercritical-fraction":
        raise ConfigError(f"mode {config.mode!r} is not supercritical-fraction")
    k, ostats, cond, r, rho = _analysis(config)
    if ostats.op_norm <= 1:
        raise PreconditionError(f"||T|| = {ostats.op_norm:.6g} <= 1: no giant component to measure")
    _guard_resources(k, config)
    runs = run_graphs(k, config)
    per_n = summarize(runs, "c1_over_n")
    for row in per_n:
        row["rho"] = rho.rho_aggregate
        row["relative_error"] = row["mean"] / rho.rho_aggregate - 1.0
    return _base_report(config, ostats, cond, r, rho, runs, per_n, None,
                        prediction_for(r, config.bis_tol), _hypothesis_label(cond))


def _check(passed, **detail):
    return {"passed": bool(passed), **detail}


def run_branching_validation(config: ExperimentConfig) -> ExperimentReport:
    """Cross-check generating-function fixed points against simulation."""
    if config.mode != "branching-validation":
        raise ConfigError(f"mode {config.mode!r} is not branching-validation")
    k, ostats, cond, r, rho = _analysis(config)
    cfg = config.iteration
    opts = config.branching
    root = opts.root if opts.root is not None else k.space.labels[0]
    ridx = k.space.index(root)
    seed = config.master_seed
    checks = {}
    warnings = []

    base = branching.sample_batch(k, root, opts.samples, seed, opts.cap)

    for z in opts.z_grid:
        out = fixed_point.progeny_gf(k, z, cfg)
        name = f"gf_z={z:g}"
        if not out.converged:
            checks[name] = _check(True, skipped=f"z beyond radius ({out.status.value})")
            continue
        est = branching.empirical_gf(base, z)
        h = float(out.h[ridx])
        checks[name] = _check(abs(est.value - h) <= 3 * est.stderr + 1e-12,
                              fixed_point=h, estimate=est.value, stderr=est.stderr,
                              censored_fraction=est.censored_fraction)

    log_r = math.log(r.mid)
    try:
        tf = branching.tail_fit(base)
        if r.excludes_one(config.bis_tol):
            ok = abs(tf.rate / log_r - 1.0) <= 0.05
        else:
            ok = abs(tf.rate) <= max(3 * tf.stderr, 0.01)
        checks["tail_rate"] = _check(ok, log_r=log_r, **tf.to_dict())
    except branching.TailFitError as exc:
        refused_ok = not r.excludes_one(config.bis_tol)
        checks["tail_rate"] = _check(refused_ok, refused=str(exc), log_r=log_r,
                                     censored_fraction=exc.censored_fraction)

    sandwich_lo, sandwich_hi = [], []
    for i, q in enumerate(opts.tilt_q):
        _, m_q = tilt_measure(k, q)
        c = 1.0 / m_q
        tr = {"kind": "tilt", "q": q, "c": c}
        kt = fixed_point.transformed_kernel(k, tr)
        rt = fixed_point.r_kappa(kt, cfg, config.bis_tol)
        sandwich_lo.append({"q": q, "c": c, "r": rt.to_dict(), "ok": rt.lo <= r.hi + config.bis_tol})
        tb = branching.sample_batch(kt, root, opts.samples, seed + 1 + i, opts.cap)
        dom = branching.dominance_check(base, tb)
        checks[f"dominance_tilt_q={q:g}"] = _check(dom.passed, max_violation=dom.max_violation,
                                                   tolerance=dom.tolerance)
    for i, D in enumerate(opts.truncate_d):
        if D < root:
            warnings.append(f"truncation D={D} drops the root type; skipped")
            continue
        _, m_d = truncate_measure(k.space, D)
        tr = {"kind": "truncate", "D": D, "c": m_d}
        kd = fixed_point.transformed_kernel(k, tr)
        rd = fixed_point.r_kappa(kd, cfg, config.bis_tol)
        sandwich_hi.append({"D": D, "c": m_d, "r": rd.to_dict(), "ok": r.lo <= rd.hi + config.bis_tol})
        db = branching.sample_batch(kd, root, opts.samples, seed + 101 + i, opts.cap)
        dom = branching.dominance_check(db, base)
        checks[f"dominance_truncate_D={D}"] = _check(dom.passed, max_violation=dom.max_violation,
                                                     tolerance=dom.tolerance)
    if sandwich_lo or sandwich_hi:
        checks["sandwich"] = _check(all(s["ok"] for s in sandwich_lo + sandwich_hi),
                                    tilts=sandwich_lo, truncations=sandwich_hi)

    neg = fixed_point.negative_solution(k, cfg)
    probe = []
    if neg is not None:
        checks["duality"] = _check(r.excludes_one(config.bis_tol), negative_solution=neg.to_dict(),
                                   r_lo=r.lo)
    else:
        checks["duality"] = _check(True, negative_solution=None)
        if r.excludes_one(config.bis_tol):
            probe.append({"kernel_id": config.kernel_id, "r_lo": r.lo,
                          "note": "r_kappa > 1 but no negative solution found"})

    report = _base_report(config, ostats, cond, r, rho, [], [], None,
                          prediction_for(r, config.bis_tol), _hypothesis_label(cond))
    report.checks = checks
    report.warnings = warnings
    report.conjecture_probe = probe
    return report


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    return {
        "subcritical-scaling": run_scaling_experiment,
        "supercritical-fraction": run_supercritical,
        "branching-validation": run_branching_validation,
    }[config.mode](config)


# -- output -----------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def report_json(report: ExperimentReport) -> str:
    return json.dumps(_clean(report.to_dict()), indent=2, sort_keys=True) + "\n"


def runs_csv(report: ExperimentReport) -> str:
    cfg = report.config
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUNS_HEADER)
    for r in report.runs:
        w.writerow([cfg["experiment_id"], cfg["kernel_id"], r.n, r.rep, r.seed, r.c1,
                    repr(r.c1_over_logn), repr(r.c1_over_n),
                    "" if r.elapsed_ms is None else f"{r.elapsed_ms:.3f}"])
    return buf.getvalue()


def emit_report(report: ExperimentReport, directory) -> tuple[Path, Path]:
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
        rp, cp = d / "report.json", d / "runs.csv"
        rp.write_text(report_json(report))
        cp.write_text(runs_csv(report))
    except OSError as exc:
        raise OSError(f"cannot write report to {d}: {exc.strerror or exc}") from exc
    return rp, cp
