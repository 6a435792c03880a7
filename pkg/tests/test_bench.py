import csv

import numpy as np
import pytest

from opfa import SweepConfig, run_sweep, summarize, write_sweep
from opfa.bench import model_config
from opfa.synthetic import SyntheticConfig

TINY = {
    "axis": "sigma_d2",
    "values": [1.0],
    "trials": 2,
    "models": ["OPFA", "SFA"],
    "synthetic": {"S": 2, "n": 8, "p": 6, "f": 2, "snr_db": 20.0},
    "fit": {"restarts": 1, "max_outer_iters": 5},
}


def test_sweep_config_validation():
    with pytest.raises(ValueError, match="axis"):
        SweepConfig(axis="noise")
    with pytest.raises(ValueError, match="models"):
        SweepConfig(models=["PCA"])
    with pytest.raises(ValueError):
        SweepConfig(trials=0)
    assert SweepConfig(models=["opfa-c"]).models == ["OPFA_C"]


def test_model_config_per_model():
    synth = SyntheticConfig(n=10, sigma_d2=2.0)
    sfa = model_config("SFA", synth, {"restarts": 1}, 3)
    assert (sfa.d_max, sfa.n_F, sfa.window_start, sfa.seed) == (0, 10, 0, 3)
    opfa = model_config("OPFA", synth, {}, 0)
    assert (opfa.d_max, opfa.n_F) == (synth.d_max, synth.n_F)
    assert model_config("OPFA_C", synth, {"d_max": 2}, 0).variant == "OPFA_C"
    assert model_config("OPFA_C", synth, {"d_max": 2}, 0).d_max == 2


def test_summarize_ci():
    rows = [{"axis_name": "snr_db", "axis_value": 1.0, "model": "OPFA", "mse": v, "dtf": 0.1} for v in (1.0, 2.0, 3.0)]
    (s,) = summarize(rows)
    assert s["trials"] == 3 and s["mse_mean"] == 2.0
    assert s["mse_ci95"] == pytest.approx(1.96 * 1.0 / np.sqrt(3))
    assert s["dtf_ci95"] == pytest.approx(0.0, abs=1e-15)


def test_tiny_sweep_outputs(tmp_path):
    rows = run_sweep(TINY)
    assert len(rows) == 4
    assert {r["model"] for r in rows} == {"OPFA", "SFA"}
    assert all(np.isfinite(r["mse"]) and 0 <= r["dtf"] <= 1 for r in rows)
    summary = write_sweep(rows, tmp_path / "a")
    assert len(summary) == 2
    results = list(csv.DictReader(open(tmp_path / "a" / "results.csv")))
    assert len(results) == 4
    assert list(results[0]) == ["axis_name", "axis_value", "model", "trial", "mse", "dtf"]
    head = open(tmp_path / "a" / "summary.csv").readline().strip()
    assert head == "axis_name,axis_value,model,trials,mse_mean,mse_ci95,dtf_mean,dtf_ci95"
    for name in ("mse.svg", "dtf.svg"):
        assert open(tmp_path / "a" / name).read().lstrip().startswith("<?xml")
    # reruns are byte-identical, charts included
    write_sweep(run_sweep(TINY), tmp_path / "b")
    for name in ("results.csv", "summary.csv", "mse.svg", "dtf.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
