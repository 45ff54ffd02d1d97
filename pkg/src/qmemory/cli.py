"""
Command-line pipelines.

Every run is driven by a JSON config::

    {"schema_version": 1, "scenario": "filter", "seed": 7,
     "paths": {"out": "results", "input": null}, "params": {...}}

``--seed`` and ``--out`` override the file; with no ``--config`` the
scenario runs on its default parameters.  Output files carry the SHA-256
of the effective config (output path and thread count excluded) and the
seed.

CSV columns by scenario:

* contrast   ``contrast_<method>.csv``: time_s, phi_rad, contrast, std_err
* filter     ``filter.csv``: f_hz, filter_s2
* metrics    ``metrics.csv``: time_s, metric, value, std_err, n_samples
* tomography ``tomography.json`` (reconstructions plus T1/T2 fit)
* fit        ``fit.json``
* budget     ``budget.json``
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import channel as ch
from . import ddseq, fitkit, metrics, noisemodel, simexp, tomo
from .errors import ConvergenceError

SCHEMA_VERSION = 1
SCENARIOS = ("contrast", "tomography", "metrics", "fit", "filter", "budget")

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4

REFERENCE_T1, REFERENCE_T2 = 11902.0, 4235.0


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict] = {
    "contrast": {
        "sequence": {"family": "cpmg", "n_pulses": 4},
        "times_s": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0],
        "spectrum": {"white_level": 0.01, "one_over_f": {"amp": 0.01, "f_low_hz": 0.01, "f_high_hz": 5.0}},
        "method": "both",
        "n_traj": 2000,
        "phi_rad": 0.0,
    },
    "filter": {
        "sequence": {"family": "kddxy", "tau": 0.4, "n_units": 2},
        "f_min_hz": 0.01,
        "f_max_hz": 5.0,
        "n_points": 2000,
    },
    "tomography": {
        "T1_s": REFERENCE_T1,
        "T2_s": REFERENCE_T2,
        "times_s": [240.0, 480.0, 960.0, 1920.0],
        "shots": 100,
        "readout_error": simexp.DEFAULT_READOUT_ERROR,
        "n_bootstrap": 200,
    },
    "metrics": {
        "T1_s": REFERENCE_T1,
        "T2_s": REFERENCE_T2,
        "times_s": [0.0, 240.0, 480.0, 960.0, 1920.0, 3840.0],
        "n_samples": 100000,
        "rec_threshold": metrics.REC_THRESHOLD,
    },
    "fit": {
        "series": None,
        "floor": 0.0,
    },
    "budget": {
        "B0_gauss": 5.8,
        "storage_time_s": 960.0,
        "sequence": {"family": "kddxy", "tau": 0.4},
        "field_lines": [{"freq_hz": 50.0, "amp_gauss": 16e-6}, {"freq_hz": 150.0, "amp_gauss": 32e-6}],
        "scattering": [
            {"label": "493nm", "gamma": 2 * math.pi * 20e6, "intensity_ratio": 21.8,
             "delta_d1": 2 * math.pi * 203.8e12, "delta_fs": 2 * math.pi * 100e12},
            {"label": "650nm", "gamma": 2 * math.pi * 20e6, "intensity_ratio": 75.5,
             "delta_d1": 2 * math.pi * 349.9e12, "delta_fs": 2 * math.pi * 100e12},
        ],
        "leakage": {"attenuation_db": 164.0, "t_pi_s": 175e-6, "interval_s": 0.4},
    },
}


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

def load_config(path: str | None, scenario: str, seed: int | None, out: str | None) -> dict:
    cfg: dict = {"schema_version": SCHEMA_VERSION, "scenario": scenario, "paths": {}, "params": {}}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc}") from exc
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg.get('schema_version')!r}; expected {SCHEMA_VERSION}")
    cfg.setdefault("scenario", scenario)
    if cfg["scenario"] != scenario:
        raise ConfigError(f"config is for scenario {cfg['scenario']!r}, not {scenario!r}")
    cfg.setdefault("paths", {})
    cfg.setdefault("params", {})
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["paths"]["out"] = out
    if "seed" not in cfg:
        raise ConfigError("a seed is required (config 'seed' or --seed)")
    s = cfg["seed"]
    if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < 2**64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {s!r}")
    unknown = set(cfg["params"]) - set(DEFAULTS[scenario])
    if unknown:
        raise ConfigError(f"unknown parameters for {scenario}: {sorted(unknown)}")
    params = copy.deepcopy(DEFAULTS[scenario])
    params.update(cfg["params"])
    cfg["params"] = params
    return cfg


def config_digest(cfg: dict) -> str:
    c = copy.deepcopy(cfg)
    c.get("paths", {}).pop("out", None)
    return hashlib.sha256(json.dumps(c, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _provenance(cfg: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, "scenario": cfg["scenario"],
            "config_sha256": config_digest(cfg), "seed": cfg["seed"]}


def _header(cfg: dict) -> str:
    return "\n".join(f"{k}: {v}" for k, v in _provenance(cfg).items())


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _finite(obj):
    # JSON has no inf/nan; spell them out
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _dump_json(payload: dict) -> str:
    return json.dumps(_finite(payload), indent=2, sort_keys=True, default=_json_default) + "\n"


def _csv(cfg, header_row, rows) -> str:
    buf = io.StringIO()
    for line in _header(cfg).splitlines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header_row)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _build_sequence(desc: dict, T: float | None = None) -> ddseq.PulseSequence:
    """Sequence from a config block; ``T`` fixes the total time if given."""
    fam = desc.get("family")
    try:
        if fam == "ramsey":
            total = T if T is not None else desc["total_time_s"]
            return ddseq.build_ramsey(float(total))
        if fam == "cpmg":
            if "n_pulses" in desc:
                n = int(desc["n_pulses"])
                tau = float(T) / n if T is not None else float(desc["tau"])
            else:
                tau = float(desc["tau"])
                n = round(float(T) / tau)
                if abs(n * tau - T) > 1e-9 * T:
                    raise ConfigError(f"T={T} is not a multiple of tau={tau}")
            return ddseq.build_cpmg(n, tau)
        if fam == "kddxy":
            if T is not None and "tau" in desc:
                tau = float(desc["tau"])
                n_units = round(float(T) / (10 * tau))
                if abs(n_units * 10 * tau - T) > 1e-9 * T:
                    raise ConfigError(f"T={T} is not a whole number of KDD units of 10 tau={tau}")
            elif T is not None:
                n_units = int(desc["n_units"])
                tau = float(T) / (10 * n_units)
            else:
                n_units, tau = int(desc["n_units"]), float(desc["tau"])
            return ddseq.build_kddxy(n_units, tau)
    except KeyError as exc:
        raise ConfigError(f"sequence block missing {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown sequence family {fam!r}")


# ---------------------------------------------------------------------------
# scenarios; each returns {filename: text}
# ---------------------------------------------------------------------------

def _scenario_contrast(cfg, threads):
    p = cfg["params"]
    S = noisemodel.NoiseSpectrum.from_json(p["spectrum"])
    method = p["method"]
    if method not in ("spectral", "mc", "both"):
        raise ConfigError(f"method must be spectral, mc or both, got {method!r}")
    seqs = [_build_sequence(p["sequence"], float(T)) for T in p["times_s"]]
    files = {}
    if method in ("spectral", "both"):
        pts = [simexp.ContrastPoint(s.total_time, ddseq.coherence_contrast(s, S), 0.0, p["phi_rad"])
               for s in seqs]
        files["contrast_spectral.csv"] = simexp.contrast_series_to_csv(pts, _header(cfg))
    if method in ("mc", "both"):
        pts = [simexp.simulate_sequence_mc(s, S, p["phi_rad"], int(p["n_traj"]),
                                           simexp.substream(cfg["seed"], k), threads=threads)
               for k, s in enumerate(seqs)]
        files["contrast_mc.csv"] = simexp.contrast_series_to_csv(pts, _header(cfg))
    return files


def _scenario_filter(cfg, threads):
    p = cfg["params"]
    seq = _build_sequence(p["sequence"])
    f = np.linspace(float(p["f_min_hz"]), float(p["f_max_hz"]), int(p["n_points"]))
    vals = ddseq.filter_function(seq, 2 * np.pi * f)
    f_peak, v_peak = ddseq.filter_peak(seq, f)
    header = _header(cfg) + f"\nsequence: {seq.label}\npeak_f_hz: {f_peak!r}\npeak_filter_s2: {v_peak!r}"
    buf = io.StringIO()
    for line in header.splitlines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["f_hz", "filter_s2"])
    for a, b in zip(f, vals):
        w.writerow([repr(float(a)), repr(float(b))])
    return {"filter.csv": buf.getvalue()}


def _read_datasets(paths) -> list[simexp.TomographyDataset]:
    out = []
    for path in paths:
        try:
            obj = json.loads(Path(path).read_text())
        except OSError as exc:
            raise OSError(f"cannot read dataset {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"dataset {path} is not valid JSON: {exc}") from exc
        out.append(simexp.TomographyDataset.from_json(obj))
    return out


def _scenario_tomography(cfg, threads):
    p = cfg["params"]
    inputs = cfg["paths"].get("input")
    if inputs:
        datasets = _read_datasets(inputs if isinstance(inputs, list) else [inputs])
    else:
        ro = simexp.ReadoutModel.symmetric(float(p["readout_error"]))
        datasets = []
        for k, t in enumerate(p["times_s"]):
            chi = ch.memory_channel(ch.MemoryChannelParams(float(t), float(p["T1_s"]), float(p["T2_s"])))
            datasets.append(simexp.simulate_tomography(chi, int(p["shots"]), ro,
                                                       simexp.substream(cfg["seed"], k), storage_time=float(t)))
    reports = [tomo.reconstruct(ds) for ds in datasets]
    fit, boot = fitkit.fit_t1t2_bootstrap(datasets, int(p["n_bootstrap"]),
                                         simexp.substream(cfg["seed"], len(datasets)), threads)
    payload = {
        **_provenance(cfg),
        "datasets": [ds.to_json() for ds in datasets],
        "reconstructions": [r.to_json() for r in reports],
        "fit_t1t2": fit.to_json(),
        "bootstrap": boot.to_json(),
    }
    return {"tomography.json": _dump_json(payload)}


def _scenario_metrics(cfg, threads):
    p = cfg["params"]
    T1, T2 = float(p["T1_s"]), float(p["T2_s"])
    n = int(p["n_samples"])
    rows = []
    for k, t in enumerate(p["times_s"]):
        chi = ch.memory_channel(ch.MemoryChannelParams(float(t), T1, T2))
        fp = ch.process_fidelity(chi)
        rng = simexp.substream(cfg["seed"], k)
        mf = metrics.mean_fidelity_mc(chi, n, rng)
        rr = metrics.mean_rec_ratio(chi, n, float(p["rec_threshold"]), rng)
        rows += [
            (float(t), "process_fidelity", fp, 0.0, 0),
            (float(t), "mean_fidelity_formula", metrics.mean_fidelity_formula(fp), 0.0, 0),
            (float(t), "mean_fidelity_mc", mf.value, mf.std_err, mf.n_samples),
            (float(t), "rqm", metrics.rqm(chi), 0.0, 0),
            (float(t), "mean_rec_ratio", rr.value, rr.std_err, rr.n_samples),
        ]
    rows.append((metrics.rqm_zero_time(T1, T2), "rqm_zero_time_s", metrics.rqm_zero_time(T1, T2), 0.0, 0))
    return {"metrics.csv": _csv(cfg, ["time_s", "metric", "value", "std_err", "n_samples"], rows)}


def _read_series(path) -> fitkit.DecaySeries:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read series {path}: {exc}") from exc
    rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(rows)
    ycol = "contrast" if "contrast" in (reader.fieldnames or []) else "y"
    scol = "std_err" if ycol == "contrast" else "sigma"
    try:
        pts = [(float(r["time_s"]), float(r[ycol]), float(r.get(scol) or 0.0)) for r in reader]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"series {path} needs columns time_s and y (or contrast): {exc}") from exc
    return fitkit.DecaySeries(tuple(pts), label=Path(path).name)


def _scenario_fit(cfg, threads):
    p = cfg["params"]
    inp = cfg["paths"].get("input")
    if inp:
        series = _read_series(inp)
    elif p["series"]:
        s = p["series"]
        series = fitkit.DecaySeries.from_arrays(s["t"], s["y"], s.get("sigma"), s.get("label", ""))
    else:
        raise ConfigError("fit needs paths.input (CSV) or params.series")
    res = fitkit.fit_exponential(series, float(p["floor"]))
    if not res.converged:
        raise ConvergenceError(res.diagnostic)
    return {"fit.json": _dump_json({**_provenance(cfg), "floor": float(p["floor"]), **res.to_json()})}


def _scenario_budget(cfg, threads):
    p = cfg["params"]
    B0 = float(p["B0_gauss"])
    T = float(p["storage_time_s"])
    seq = _build_sequence(p["sequence"], T)
    lines = []
    for ln in p["field_lines"]:
        fl = noisemodel.FieldLine(float(ln["freq_hz"]), float(ln["amp_gauss"]))
        omega, weight = noisemodel.field_line_to_spectrum_line(fl, B0)
        S = noisemodel.NoiseSpectrum(lines=((omega, weight),))
        chi_exp = ddseq.decay_exponent(seq, S)
        lines.append({
            "freq_hz": fl.frequency, "amp_gauss": fl.field_amplitude,
            "detuning_amplitude_hz": noisemodel.zeeman_sensitivity(B0) * fl.field_amplitude,
            "weight_rad2_s2": weight, "decay_exponent": chi_exp,
            "contrast": math.exp(-chi_exp),
        })
    scat = []
    for sc in p["scattering"]:
        rate = noisemodel.spontaneous_scattering_rate(noisemodel.ScatteringParams(
            float(sc["gamma"]), float(sc["intensity_ratio"]), float(sc["delta_d1"]), float(sc["delta_fs"])))
        scat.append({"label": sc.get("label", ""), "rate_hz": rate,
                     "time_constant_s": 1.0 / rate if rate > 0 else math.inf})
    lk = p["leakage"]
    angle = noisemodel.leakage_rotation(float(lk["attenuation_db"]), float(lk["t_pi_s"]), float(lk["interval_s"]))
    payload = {
        **_provenance(cfg),
        "B0_gauss": B0,
        "zeeman_shift_hz": noisemodel.zeeman_shift(B0),
        "zeeman_sensitivity_hz_per_gauss": noisemodel.zeeman_sensitivity(B0),
        "sequence": seq.label,
        "storage_time_s": T,
        "field_lines": lines,
        "scattering": scat,
        "leakage": {**lk, "rotation_rad": angle},
    }
    return {"budget.json": _dump_json(payload)}


_RUNNERS = {
    "contrast": _scenario_contrast,
    "tomography": _scenario_tomography,
    "metrics": _scenario_metrics,
    "fit": _scenario_fit,
    "filter": _scenario_filter,
    "budget": _scenario_budget,
}


def run(cfg: dict, threads: int = 1) -> dict[str, str]:
    """Run a loaded config and return ``{filename: contents}``."""
    try:
        return _RUNNERS[cfg["scenario"]](cfg, threads)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad parameter block: {exc!r}") from exc


def _write(files: dict[str, str], out_dir: str):
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (d / name).write_text(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qmemory", description="Qubit-memory analysis pipelines.")
    sub = ap.add_subparsers(dest="scenario", required=True)
    for name in SCENARIOS:
        sp = sub.add_parser(name, help=f"run the {name} scenario")
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--out", help="output directory (overrides config paths.out)")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.scenario, args.seed, args.out)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        files = run(cfg, threads=args.threads)
        _write(files, cfg["paths"].get("out") or ".")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"numerical non-convergence: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for name in files:
        print(Path(cfg["paths"].get("out") or ".") / name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
