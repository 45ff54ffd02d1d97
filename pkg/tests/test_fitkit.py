import json
import math

import numpy as np
import pytest

from qmemory import ConvergenceError
from qmemory import channel as ch
from qmemory import fitkit as fk
from qmemory import simexp as sx
from qmemory import tomo

from conftest import T1_REF, T2_REF

T_GRID = np.arange(60.0, 961.0, 60.0)


def _memory_rows(times, T1=T1_REF, T2=T2_REF):
    return [(t, ch.memory_channel(ch.MemoryChannelParams(t, T1, T2)), None) for t in times]


@pytest.mark.parametrize("tau", [5487.0, 15943.0])
def test_exponential_exact(tau):
    fit = fk.fit_exponential(fk.DecaySeries.from_arrays(T_GRID, np.exp(-T_GRID / tau)))
    assert fit.converged
    assert fit.params["tau"] == pytest.approx(tau, rel=1e-9)
    assert fit.params["A"] == pytest.approx(1.0, rel=1e-9)


def test_exponential_with_floor():
    y = 0.25 + 0.75 * np.exp(-T_GRID / T1_REF)
    fit = fk.fit_exponential(fk.DecaySeries.from_arrays(T_GRID, y), floor=0.25)
    assert fit.params["tau"] == pytest.approx(T1_REF, rel=1e-9)


def test_exponential_order_invariant(rng):
    y = np.exp(-T_GRID / 3000.0) + rng.normal(0, 0.01, T_GRID.size)
    perm = rng.permutation(T_GRID.size)
    a = fk.fit_exponential(fk.DecaySeries.from_arrays(T_GRID, y, 0.01))
    b = fk.fit_exponential(fk.DecaySeries.from_arrays(T_GRID[perm], y[perm], 0.01))
    assert a.params == b.params and a.input_digest == b.input_digest


def test_exponential_no_decay_reported():
    fit = fk.fit_exponential(fk.DecaySeries.from_arrays(T_GRID, np.full(T_GRID.size, 0.9)))
    assert not fit.converged and "no decay" in fit.diagnostic


def test_exponential_input_checks():
    with pytest.raises(ValueError):
        fk.fit_exponential(fk.DecaySeries.from_arrays([1.0, 2.0], [0.5, 0.4]))
    with pytest.raises(ValueError):
        fk.fit_exponential(fk.DecaySeries.from_arrays(T_GRID, np.full(T_GRID.size, 0.2)), floor=0.25)
    with pytest.raises(ValueError):
        fk.DecaySeries.from_arrays([1.0, 1.0, 2.0], [0.5, 0.5, 0.4])
    with pytest.raises(ValueError):
        fk.fit_exponential(fk.DecaySeries.from_arrays(T_GRID, np.exp(-T_GRID / 1e3),
                                                      np.r_[0.0, np.full(T_GRID.size - 1, 0.01)]))


def test_exponential_error_calibration():
    tau, sigma = 3000.0, 0.01
    hits = 0
    for seed in range(100):
        noise = np.random.default_rng(seed).normal(0, sigma, T_GRID.size)
        fit = fk.fit_exponential(fk.DecaySeries.from_arrays(T_GRID, np.exp(-T_GRID / tau) + noise, sigma))
        hits += abs(fit.params["tau"] - tau) < 2 * fit.std_errs["tau"]
    # nominal 2-sigma coverage is 95 %; 88 leaves room for binomial scatter
    assert hits >= 88


def test_unweighted_errors_rescaled(rng):
    y = np.exp(-T_GRID / 3000.0) + rng.normal(0, 0.01, T_GRID.size)
    a = fk.fit_exponential(fk.DecaySeries.from_arrays(T_GRID, y))
    b = fk.fit_exponential(fk.DecaySeries.from_arrays(T_GRID, y, 0.01))
    assert a.params["tau"] == pytest.approx(b.params["tau"], rel=1e-8)
    assert 0.3 < a.std_errs["tau"] / b.std_errs["tau"] < 3.0


def test_t1t2_exact_recovery():
    fit = fk.fit_t1t2(_memory_rows([240.0, 480.0, 960.0]))
    assert fit.converged and fit.residual_norm < 1e-12
    assert fit.params["T1"] == pytest.approx(T1_REF, rel=1e-9)
    assert fit.params["T2"] == pytest.approx(T2_REF, rel=1e-9)


def test_t1t2_order_invariant():
    rows = _memory_rows([960.0, 240.0, 1920.0, 480.0])
    a, b = fk.fit_t1t2(rows), fk.fit_t1t2(sorted(rows, key=lambda r: r[0]))
    assert a.params == b.params and a.input_digest == b.input_digest


def test_t1t2_pure_dephasing_flag():
    fit = fk.fit_t1t2(_memory_rows([240.0, 480.0, 960.0], T1=1e300))
    assert fit.flags["T1_unbounded"] and fit.params["T1"] == math.inf
    assert fit.params["T2"] == pytest.approx(T2_REF, rel=1e-9)
    assert json.loads(json.dumps(fit.to_json()))["params"]["T1"] == "inf"


def test_t1t2_degenerate_and_short():
    rows = [(t, ch.identity_chi(), None) for t in (1.0, 2.0, 3.0)]
    with pytest.raises(ValueError, match="degenerate"):
        fk.fit_t1t2(rows)
    with pytest.raises(ValueError):
        fk.fit_t1t2(_memory_rows([240.0, 480.0]))


def test_t1t2_nonconvergence_raises(monkeypatch):
    class Bad:
        status = 0
        message = "forced"
        fun = np.ones(6)

    monkeypatch.setattr(fk, "_lm", lambda *a, **k: Bad())
    with pytest.raises(ConvergenceError):
        fk.fit_t1t2(_memory_rows([240.0, 480.0, 960.0]))


def test_chi_combination_sigma_forms(chi_960):
    sig = np.full((4, 4), 0.01)
    assert fk._chi_combinations(chi_960, sig)[2:] == pytest.approx((math.hypot(0.01, 0.01), 0.5 * math.hypot(0.01, 0.01)))
    assert fk._chi_combinations(chi_960, {"IZ": 0.1, "XY": 0.2})[2:] == (0.1, 0.2)


def test_fit_from_exact_datasets():
    ro = sx.ReadoutModel.symmetric()
    dss = [sx.simulate_tomography(ch.memory_channel(ch.MemoryChannelParams(t, T1_REF, T2_REF)), None, ro, 0,
                                  storage_time=t) for t in (240.0, 480.0, 960.0, 1920.0)]
    fit = fk.fit_t1t2_from_datasets(dss)
    assert fit.params["T1"] == pytest.approx(T1_REF, rel=1e-8)
    assert fit.params["T2"] == pytest.approx(T2_REF, rel=1e-8)


def _chi11(ds):
    return {"chi11": ch.process_fidelity(tomo.reconstruct(ds).raw_chi)}


def test_bootstrap_zero_noise():
    ds = sx.simulate_tomography(ch.identity_chi(), None, sx.ReadoutModel(), 0)
    boot = fk.bootstrap_uncertainty(_chi11, ds, 100, 1)
    assert boot.valid and boot.std_errs["chi11"] == 0.0


def test_bootstrap_matches_direct_repetition():
    ro = sx.ReadoutModel.symmetric()
    chi = ch.memory_channel(ch.MemoryChannelParams(2000.0, T1_REF, T2_REF))
    direct = np.std([_chi11(sx.simulate_tomography(chi, 100, ro, sx.substream(5, k)))["chi11"]
                     for k in range(400)], ddof=1)
    ds = sx.simulate_tomography(chi, 100, ro, 17)
    boot = fk.bootstrap_uncertainty(_chi11, ds, 400, 3)
    assert boot.std_errs["chi11"] == pytest.approx(direct, rel=0.2)


def test_bootstrap_scales_with_shots():
    ro = sx.ReadoutModel.symmetric()
    chi = ch.memory_channel(ch.MemoryChannelParams(2000.0, T1_REF, T2_REF))
    sd = []
    for shots in (1000, 2000):
        ds = sx.simulate_tomography(chi, shots, ro, 8)
        sd.append(fk.bootstrap_uncertainty(_chi11, ds, 400, 2).std_errs["chi11"])
    assert sd[0] / sd[1] == pytest.approx(math.sqrt(2), rel=0.15)


def test_bootstrap_thread_invariance():
    ds = sx.simulate_tomography(ch.memory_channel(ch.MemoryChannelParams(2000.0, T1_REF, T2_REF)), 100, sx.ReadoutModel.symmetric(), 4)
    a = fk.bootstrap_uncertainty(_chi11, ds, 120, 9, threads=1)
    b = fk.bootstrap_uncertainty(_chi11, ds, 120, 9, threads=4)
    assert a.std_errs == b.std_errs and np.array_equal(a.samples["chi11"], b.samples["chi11"])


def test_bootstrap_failures_counted():
    ds = sx.simulate_tomography(ch.memory_channel(ch.MemoryChannelParams(2000.0, T1_REF, T2_REF)), 100, sx.ReadoutModel.symmetric(), 4)
    calls = iter(range(10_000))

    def flaky(every):
        def proc(d):
            if next(calls) % every == 0:
                raise ConvergenceError("forced", residual=1.0)
            return _chi11(d)
        return proc

    few = fk.bootstrap_uncertainty(flaky(20), ds, 100, 0)
    assert few.n_failures == 5 and few.valid
    many = fk.bootstrap_uncertainty(flaky(5), ds, 100, 0)
    assert many.n_failures == 20 and not many.valid
    assert json.loads(json.dumps(many.to_json()))["valid"] is False
    with pytest.raises(ValueError):
        fk.bootstrap_uncertainty(_chi11, ds, 50, 0)


def test_bootstrap_nonconverged_fit_counts_as_failure():
    ds = sx.simulate_tomography(ch.identity_chi(), 100, sx.ReadoutModel(), 0)
    bad = fk.FitResult({"x": 1.0}, {"x": 0.0}, 0.0, False, "forced")
    boot = fk.bootstrap_uncertainty(lambda d: bad, ds, 100, 0)
    assert boot.n_failures == 100 and not boot.valid
