"""Command-line entry point: ``irglab <command> --config FILE [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import branching, fixed_point, graph, harness
from .kernel import KernelError, check_conditions, kernel_from_config, operator_stats

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    p = _Parser(prog="irglab", description="Branching-process radius and giant-component experiments.")
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="kernel or experiment JSON")
    common.add_argument("--seed", type=_u64, help="master seed (overrides config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in [
        ("analyze", "norms, r_kappa, rho_kappa, conditions and negative-solution probe"),
        ("check", "condition report only"),
        ("simulate-graph", "sample one graph per n in n_grid and report component sizes"),
        ("simulate-branching", "sample total progenies and fit the tail"),
        ("experiment", "run the configured experiment and write report.json/runs.csv"),
    ]:
        sub.add_parser(name, parents=[common], help=help_)
    return p


def _load(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise harness.ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise harness.ConfigError(f"config {path} is not valid JSON: {exc}") from None


def _is_kernel_doc(doc):
    return isinstance(doc, dict) and isinstance(doc.get("kernel"), dict) and "builder" in doc["kernel"]


def _experiment_config(doc, args, **defaults):
    if _is_kernel_doc(doc):
        doc = {"kernel": doc, **defaults}
    else:
        doc = {**defaults, **doc}
    if args.seed is not None:
        doc["master_seed"] = args.seed
    if args.threads is not None:
        doc["threads"] = args.threads
    return harness.ExperimentConfig.from_dict(doc)


def _kernel(doc):
    try:
        return kernel_from_config(doc if _is_kernel_doc(doc) else doc["kernel"])
    except (KeyError, TypeError):
        raise harness.ConfigError("config has no kernel description") from None
    except KernelError as exc:
        raise harness.ConfigError(str(exc)) from None


def _emit(payload, out, name):
    text = json.dumps(harness._clean(payload), indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / name).write_text(text)


def cmd_check(args, doc):
    k = _kernel(doc)
    _emit({"conditions": check_conditions(k).to_dict()}, args.out, "conditions.json")


def cmd_analyze(args, doc):
    k = _kernel(doc)
    cfg = fixed_point.DEFAULT_CONFIG
    r = fixed_point.r_kappa(k, cfg)
    rho = fixed_point.survival_prob(k, cfg)
    neg = fixed_point.negative_solution(k, cfg)
    probe = None
    if neg is None and r.excludes_one(1e-9):
        probe = "r_kappa > 1 but no negative solution found"
    _emit({
        "operator_stats": operator_stats(k).to_dict(),
        "conditions": check_conditions(k).to_dict(),
        "r_kappa": r.to_dict(),
        "prediction": harness.prediction_for(r, 1e-9),
        "rho": rho.to_dict(),
        "negative_solution": None if neg is None else neg.to_dict(),
        "conjecture_probe": probe,
    }, args.out, "analysis.json")


def cmd_simulate_graph(args, doc):
    cfg = _experiment_config(doc, args, n_grid=[1000])
    k = cfg.kernel
    rows = []
    for n in cfg.n_grid:
        rec = harness.run_replication(k, n, 0, cfg)
        rows.append({"n": n, "seed": rec.seed, "c1": rec.c1,
                     "c1_over_logn": rec.c1_over_logn, "c1_over_n": rec.c1_over_n})
        if args.out and n <= 10_000:
            a = graph.assign_types(k.space, n, "deterministic")
            g = graph.generate_graph(a, k, rec.seed)
            Path(args.out).mkdir(parents=True, exist_ok=True)
            g.dump(Path(args.out) / f"graph_n{n}.txt")
    _emit({"graphs": rows}, args.out, "graphs.json")


def cmd_simulate_branching(args, doc):
    cfg = _experiment_config(doc, args, mode="branching-validation")
    k = cfg.kernel
    opts = cfg.branching
    root = opts.root if opts.root is not None else k.space.labels[0]
    batch = branching.sample_batch(k, root, opts.samples, cfg.master_seed, opts.cap)
    out = {"root_type": root, "samples": len(batch), "cap": batch.cap,
           "mean_size": float(batch.sizes.mean()), "censored_fraction": batch.censored_fraction}
    try:
        out["tail_fit"] = branching.tail_fit(batch).to_dict()
    except branching.TailFitError as exc:
        out["tail_fit"] = {"refused": str(exc)}
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        batch.to_csv(Path(args.out) / "progeny.csv")
    _emit(out, args.out, "branching.json")


def cmd_experiment(args, doc):
    cfg = _experiment_config(doc, args)
    report = harness.run_experiment(cfg)
    out = args.out or cfg.output_dir
    if out:
        harness.emit_report(report, out)
    summary = {"mode": cfg.mode, "prediction": report.prediction, "r_kappa": report.r_kappa,
               "per_n": report.per_n, "regression": report.regression,
               "checks": {k: v["passed"] for k, v in report.checks.items()},
               "warnings": report.warnings}
    sys.stdout.write(json.dumps(harness._clean(summary), indent=2, sort_keys=True) + "\n")


COMMANDS = {
    "analyze": cmd_analyze,
    "check": cmd_check,
    "simulate-graph": cmd_simulate_graph,
    "simulate-branching": cmd_simulate_branching,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        doc = _load(args.config)
        COMMANDS[args.command](args, doc)
    except (harness.ConfigError, KernelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except harness.PreconditionError as exc:
        print(f"precondition not met: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
