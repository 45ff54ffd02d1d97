import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from qmemory import cli
from qmemory import simexp as sx


def _cfg(tmp_path, scenario, params=None, seed=3, **extra):
    cfg = {"schema_version": 1, "scenario": scenario, "seed": seed, "paths": {}, "params": params or {}}
    cfg.update(extra)
    path = tmp_path / f"{scenario}.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(tmp_path, scenario, params=None, out="out", threads=1, **extra):
    code = cli.main([scenario, "--config", _cfg(tmp_path, scenario, params, **extra),
                     "--out", str(tmp_path / out), "--threads", str(threads)])
    return code, tmp_path / out


def _comment_header(text):
    return dict(ln[2:].split(": ", 1) for ln in text.splitlines() if ln.startswith("# "))


FAST_CONTRAST = {"times_s": [1.0, 2.0, 4.0], "n_traj": 200}
FAST_TOMO = {"times_s": [240.0, 960.0, 1920.0], "n_bootstrap": 100}


def test_filter_scenario_peak(tmp_path):
    code, out = _run(tmp_path, "filter", {"f_min_hz": 1.0, "f_max_hz": 1.5, "n_points": 1001})
    assert code == 0
    text = (out / "filter.csv").read_text()
    head = _comment_header(text)
    assert abs(float(head["peak_f_hz"]) - 1.25) < 0.01
    rows = list(csv.DictReader(ln for ln in text.splitlines() if not ln.startswith("#")))
    assert len(rows) == 1001 and set(rows[0]) == {"f_hz", "filter_s2"}
    assert head["seed"] == "3" and len(head["config_sha256"]) == 64


def test_contrast_scenario(tmp_path):
    code, out = _run(tmp_path, "contrast", FAST_CONTRAST)
    assert code == 0
    spectral = sx.contrast_series_from_csv((out / "contrast_spectral.csv").read_text())
    mc = sx.contrast_series_from_csv((out / "contrast_mc.csv").read_text())
    assert [p.storage_time for p in spectral] == [1.0, 2.0, 4.0]
    for a, b in zip(spectral, mc):
        assert abs(a.contrast - b.contrast) < 4 * b.std_err + 1e-12


def test_contrast_thread_invariance(tmp_path):
    _, a = _run(tmp_path, "contrast", FAST_CONTRAST, out="a", threads=1)
    _, b = _run(tmp_path, "contrast", FAST_CONTRAST, out="b", threads=4)
    for name in ("contrast_spectral.csv", "contrast_mc.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_changes_output(tmp_path):
    _, a = _run(tmp_path, "contrast", {**FAST_CONTRAST, "method": "mc"}, out="a", seed=1)
    _, b = _run(tmp_path, "contrast", {**FAST_CONTRAST, "method": "mc"}, out="b", seed=2)
    assert (a / "contrast_mc.csv").read_text() != (b / "contrast_mc.csv").read_text()


def test_tomography_scenario(tmp_path):
    code, out = _run(tmp_path, "tomography", FAST_TOMO, threads=2)
    assert code == 0
    obj = json.loads((out / "tomography.json").read_text())
    assert obj["seed"] == 3 and len(obj["reconstructions"]) == 3
    assert obj["bootstrap"]["n_resamples"] == 100
    assert set(obj["fit_t1t2"]["params"]) == {"T1", "T2", "gamma1", "gamma2"}
    # written datasets can be fed back in
    paths = []
    for k, d in enumerate(obj["datasets"]):
        p = tmp_path / f"ds{k}.json"
        p.write_text(json.dumps(d))
        paths.append(str(p))
    code, out2 = _run(tmp_path, "tomography", FAST_TOMO, out="again", paths={"input": paths})
    assert code == 0
    again = json.loads((out2 / "tomography.json").read_text())
    assert again["fit_t1t2"]["params"] == obj["fit_t1t2"]["params"]


def test_metrics_scenario(tmp_path):
    code, out = _run(tmp_path, "metrics", {"times_s": [0.0, 960.0], "n_samples": 2000})
    assert code == 0
    text = (out / "metrics.csv").read_text()
    rows = list(csv.DictReader(ln for ln in text.splitlines() if not ln.startswith("#")))
    rqm = {float(r["time_s"]): float(r["value"]) for r in rows if r["metric"] == "rqm"}
    assert rqm[0.0] == pytest.approx(1.0) and rqm[960.0] == pytest.approx(0.758428, abs=1e-6)
    zero = [r for r in rows if r["metric"] == "rqm_zero_time_s"]
    assert float(zero[0]["value"]) == pytest.approx(6568.06, abs=0.01)


def test_fit_scenario_from_csv(tmp_path):
    t = np.arange(60.0, 961.0, 60.0)
    pts = [sx.ContrastPoint(float(x), math.exp(-x / 5487.0), 0.0) for x in t]
    src = tmp_path / "series.csv"
    src.write_text(sx.contrast_series_to_csv(pts))
    code, out = _run(tmp_path, "fit", paths={"input": str(src)})
    assert code == 0
    obj = json.loads((out / "fit.json").read_text())
    assert obj["params"]["tau"] == pytest.approx(5487.0, rel=1e-8)
    assert obj["converged"] is True and len(obj["input_digest"]) == 64


def test_budget_scenario(tmp_path):
    code, out = _run(tmp_path, "budget")
    assert code == 0
    obj = json.loads((out / "budget.json").read_text())
    assert obj["zeeman_shift_hz"] == pytest.approx(310.8 * 5.8**2, rel=1e-12)
    assert obj["zeeman_sensitivity_hz_per_gauss"] == pytest.approx(2 * 310.8 * 5.8, rel=1e-12)
    assert len(obj["field_lines"]) == 2 and all(0 < ln["contrast"] <= 1 for ln in obj["field_lines"])
    for sc in obj["scattering"]:
        assert 1e3 < sc["time_constant_s"] < 1e8
    assert obj["leakage"]["rotation_rad"] == pytest.approx(4.53e-5, rel=1e-3)


def test_digest_ignores_output_path(tmp_path):
    _, a = _run(tmp_path, "filter", {"n_points": 11}, out="x")
    _, b = _run(tmp_path, "filter", {"n_points": 11}, out="y")
    assert (a / "filter.csv").read_text() == (b / "filter.csv").read_text()
    _, c = _run(tmp_path, "filter", {"n_points": 12}, out="z")
    ha = _comment_header((a / "filter.csv").read_text())["config_sha256"]
    hc = _comment_header((c / "filter.csv").read_text())["config_sha256"]
    assert ha != hc


@pytest.mark.parametrize("cfg_patch, params", [
    ({"schema_version": 2}, None),
    ({}, {"no_such_param": 1}),
    ({"seed": -1}, None),
    ({"seed": "abc"}, None),
    ({"scenario": "budget"}, None),
])
def test_config_errors_exit_2(tmp_path, cfg_patch, params):
    cfg = {"schema_version": 1, "scenario": "filter", "seed": 1, "paths": {}, "params": params or {}}
    cfg.update(cfg_patch)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert cli.main(["filter", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_missing_seed_exit_2(tmp_path):
    assert cli.main(["filter", "--out", str(tmp_path)]) == 2
    assert cli.main(["filter", "--seed", "5", "--out", str(tmp_path)]) == 0


def test_invalid_json_exit_2(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert cli.main(["filter", "--config", str(p)]) == 2


def test_missing_input_exit_4(tmp_path):
    assert cli.main(["filter", "--config", str(tmp_path / "none.json")]) == 4
    code, _ = _run(tmp_path, "fit", paths={"input": str(tmp_path / "none.csv")})
    assert code == 4


def test_nonconvergent_fit_exit_3(tmp_path):
    series = {"t": [1.0, 2.0, 3.0, 4.0], "y": [0.9, 0.9, 0.9, 0.9]}
    code, _ = _run(tmp_path, "fit", {"series": series})
    assert code == 3


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "qmemory.cli", "filter", "--seed", "1",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip().endswith("filter.csv")
