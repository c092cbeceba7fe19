import json
import math

import pytest

from irglab.harness import (RUNS_HEADER, ConfigError, ExperimentConfig, ExperimentReport,
                            PreconditionError, RunRecord, emit_report, fit_scaling, prediction_for,
                            report_json, run_experiment, runs_csv, summarize)
from irglab.fixed_point import RKappaEstimate

from oracles import scalar_survival


def scalar_doc(c):
    return {"space": {"labels": [1], "weights": [1.0]}, "kernel": {"builder": "constant", "c": c}}


def config(kdoc, **kw):
    return ExperimentConfig.from_dict({"kernel": kdoc, **kw})


def test_config_validation():
    with pytest.raises(ConfigError):
        config(scalar_doc(0.5), n_grid=[])
    with pytest.raises(ConfigError):
        config(scalar_doc(0.5), n_grid=[100, 50])
    with pytest.raises(ConfigError):
        config(scalar_doc(0.5), n_grid=[100], mode="nonsense")
    with pytest.raises(ConfigError):
        config(scalar_doc(0.5), n_grid=[100], replications=0)
    with pytest.raises(ConfigError):
        config(scalar_doc(0.5), n_grid=[100], surprise=1)
    with pytest.raises(ConfigError):
        config(scalar_doc(-1.0), n_grid=[100])
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"n_grid": [100]})
    # branching mode needs no graph grid
    assert config(scalar_doc(0.5), mode="branching-validation").n_grid == []


def test_config_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(bad)


def test_prediction_for():
    assert prediction_for(RKappaEstimate(1.0, 1.0 + 1e-10, 0, False, 10), 1e-9) is None
    assert prediction_for(RKappaEstimate(1.5, 1.5, 0, False, 10), 1e-9) == pytest.approx(1 / math.log(1.5))
    assert prediction_for(RKappaEstimate(64.0, 64.0, 0, True, 10), 1e-9) is None


def test_summarize_and_fit():
    runs = [RunRecord(n, rep, 0, c1) for n in (100, 1000, 10000) for rep, c1 in enumerate((3, 5))]
    rows = summarize(runs, "c1_over_logn")
    assert [r["n"] for r in rows] == [100, 1000, 10000]
    assert rows[0]["mean"] == pytest.approx(4 / math.log(100))
    assert rows[0]["ci"][0] < rows[0]["mean"] < rows[0]["ci"][1]
    assert fit_scaling(runs[:4]) is None
    # exact data recovers the coefficients
    exact = [RunRecord(n, 0, 0, 0) for n in (10, 100, 1000, 10 ** 4)]
    import numpy as np
    ln = np.log([r.n for r in exact])
    y = 3 * ln - 2 * np.log(ln) + 1
    X = np.column_stack([ln, np.log(ln), np.ones_like(ln)])
    assert np.linalg.lstsq(X, y, rcond=None)[0] == pytest.approx([3, -2, 1])


def test_empty_runs_csv_is_header_only():
    rep = ExperimentReport({"experiment_id": "e", "kernel_id": "k"}, {}, {}, {}, {}, None, "", [], None, [])
    assert runs_csv(rep) == ",".join(RUNS_HEADER) + "\n"


def test_zero_kernel_scaling():
    zero = {"space": {"labels": [1], "weights": [1.0]}, "kernel": {"builder": "explicit", "matrix": [[0.0]]}}
    rep = run_experiment(config(zero, n_grid=[100], replications=1))
    assert [r.c1 for r in rep.runs] == [1]
    assert rep.prediction is None
    assert json.loads(report_json(rep))["prediction"] is None


def test_scalar_scaling_small():
    rep = run_experiment(config(scalar_doc(0.5), n_grid=[1000, 4000, 16000], replications=3))
    assert rep.prediction == pytest.approx(1 / math.log(math.exp(-0.5) / 0.5), rel=1e-6)
    assert rep.prediction_label == "proven"
    assert len(rep.runs) == 9
    assert rep.regression is not None and "alpha_relative_error" in rep.regression
    lines = runs_csv(rep).splitlines()
    assert lines[0] == ",".join(RUNS_HEADER) and len(lines) == 10
    assert all(line.endswith(",") for line in lines[1:])


def test_scaling_warns_on_supercritical_kernel():
    rep = run_experiment(config(scalar_doc(2.0), n_grid=[1000], replications=1))
    assert rep.warnings and rep.prediction is None


def test_supercritical_refuses_subcritical_kernel():
    with pytest.raises(PreconditionError):
        run_experiment(config(scalar_doc(0.5), n_grid=[1000], mode="supercritical-fraction"))


def test_resource_guard():
    with pytest.raises(PreconditionError):
        run_experiment(config(scalar_doc(500.0), n_grid=[10 ** 6], mode="supercritical-fraction"))


def test_supercritical_scalar():
    rep = run_experiment(config(scalar_doc(2.0), n_grid=[20000], replications=5,
                                mode="supercritical-fraction"))
    row = rep.per_n[0]
    assert row["rho"] == pytest.approx(scalar_survival(2.0), abs=1e-10)
    assert abs(row["relative_error"]) < 0.03


def test_supercritical_rank1():
    kdoc = {"space": {"labels": [1, 2], "weights": [0.5, 0.5]}, "kernel": {"builder": "rank1", "phi": [1, 2]}}
    rep = run_experiment(config(kdoc, n_grid=[50000], replications=4, mode="supercritical-fraction"))
    assert abs(rep.per_n[0]["relative_error"]) < 0.03


def test_branching_validation_scalar():
    rep = run_experiment(config(scalar_doc(0.5), mode="branching-validation",
                                branching={"samples": 400_000}))
    assert set(rep.checks) >= {"gf_z=1.02", "gf_z=1.05", "tail_rate", "dominance_tilt_q=0.05",
                               "dominance_tilt_q=0.1", "sandwich", "duality"}
    assert rep.passed, {k: v for k, v in rep.checks.items() if not v["passed"]}
    assert rep.conjecture_probe == []


def test_branching_validation_two_type():
    kdoc = {"space": {"labels": [1, 2], "weights": [0.5, 0.5]},
            "kernel": {"builder": "explicit", "matrix": [[0.3, 0.5], [0.5, 0.7]]}}
    rep = run_experiment(config(kdoc, mode="branching-validation",
                                branching={"samples": 200_000, "truncate_d": [1, 2]}))
    for name in ("gf_z=1.02", "gf_z=1.05", "sandwich", "duality", "dominance_truncate_D=1"):
        assert rep.checks[name]["passed"], (name, rep.checks[name])


def test_branching_validation_critical():
    rep = run_experiment(config(scalar_doc(1.0), mode="branching-validation",
                                branching={"samples": 20_000, "cap": 10_000, "tilt_q": []}))
    assert rep.checks["gf_z=1.02"].get("skipped")
    assert rep.checks["duality"]["passed"] and rep.prediction is None


def test_determinism_across_runs_and_threads(tmp_path):
    base = dict(n_grid=[500, 2000], replications=4, master_seed=7)
    outs = []
    for i, threads in enumerate((1, 1, 8)):
        rep = run_experiment(config(scalar_doc(0.5), threads=threads, **base))
        rp, cp = emit_report(rep, tmp_path / str(i))
        outs.append((rp.read_bytes(), cp.read_bytes()))
    assert outs[0] == outs[1] == outs[2]
    other = run_experiment(config(scalar_doc(0.5), **{**base, "master_seed": 8}))
    assert runs_csv(other).encode() != outs[0][1]


def test_config_roundtrip():
    cfg = config(scalar_doc(0.5), n_grid=[100], branching={"z_grid": [1.1]})
    again = ExperimentConfig.from_dict({**{k: v for k, v in cfg.to_dict().items() if k != "kernel"},
                                        "kernel": cfg.kernel_doc})
    assert again.to_dict() == cfg.to_dict()
