import json

import numpy as np
import pytest

from qmemory import channel as ch
from qmemory import fitkit as fk
from qmemory import simexp as sx
from qmemory import tomo

from conftest import T1_REF, T2_REF, oracle_e


def _exact(chi, ro=None):
    return sx.simulate_tomography(chi, None, ro or sx.ReadoutModel.symmetric(), 0)


def test_identity_round_trip():
    rep = tomo.reconstruct(_exact(ch.identity_chi()))
    assert np.allclose(rep.ptm, np.eye(4), atol=1e-12)
    assert rep.projection_distance < 1e-12


def test_memory_channel_ptm(chi_960):
    rep = tomo.reconstruct(_exact(chi_960))
    e1, e2 = oracle_e(960, T1_REF), oracle_e(960, T2_REF)
    assert np.allclose(rep.ptm, np.diag([1, e2, e2, e1]), atol=1e-12)
    assert np.allclose(np.diag(rep.ptm), [1, 0.797174, 0.797174, 0.922508], atol=1e-6)


def test_random_channel_round_trip(rng):
    for _ in range(100):
        chi = ch.random_cptp_chi(rng, rank=int(rng.integers(1, 5)))
        rep = tomo.reconstruct(_exact(chi))
        assert np.max(np.abs(rep.chi - chi)) < 1e-10


def test_finite_shot_chi11_bootstrap(chi_960):
    truth = ch.process_fidelity(chi_960)
    ds = sx.simulate_tomography(chi_960, 100, sx.ReadoutModel.symmetric(), 11, storage_time=960.0)
    est = ch.process_fidelity(tomo.reconstruct(ds).chi)
    boot = fk.bootstrap_uncertainty(lambda d: {"chi11": ch.process_fidelity(tomo.reconstruct(d).chi)},
                                    ds, 200, 5)
    assert boot.valid
    assert abs(est - truth) < 3 * boot.std_errs["chi11"]


def test_linear_inversion_unbiased(chi_960):
    truth = ch.process_fidelity(chi_960)
    ro = sx.ReadoutModel.symmetric()
    est = np.array([
        ch.process_fidelity(tomo.reconstruct(sx.simulate_tomography(chi_960, 100, ro, sx.substream(99, k))).raw_chi)
        for k in range(1000)
    ])
    assert abs(est.mean() - truth) < 3 * est.std(ddof=1) / np.sqrt(est.size)


def test_chi_sigma_matches_spread(chi_960):
    ro = sx.ReadoutModel.symmetric()
    reps = [tomo.reconstruct(sx.simulate_tomography(chi_960, 400, ro, sx.substream(7, k))) for k in range(400)]
    spread = np.std([np.real(r.raw_chi[0, 0]) for r in reps], ddof=1)
    predicted = np.mean([r.chi_sigma[0, 0] for r in reps])
    assert predicted == pytest.approx(spread, rel=0.15)


def test_projection_of_cptp_is_noop(chi_960):
    out = tomo.project_chi_physical(chi_960)
    assert np.array_equal(out, chi_960)


def _alternating_oracle(chi, n=20000):
    """Plain alternating eigenvalue clipping and TP re-projection."""
    x = tomo._to_coords(chi)
    for _ in range(n):
        x = tomo._project_tp(tomo._project_psd(x))
    return tomo._from_coords(tomo._project_psd(x))


def test_projection_negative_eigenvalue(rng):
    chi = ch.random_cptp_chi(rng, rank=3)
    lam, vec = np.linalg.eigh(chi)
    lam[0] = -0.02
    bad = (vec * lam) @ vec.conj().T
    out = tomo.project_chi_physical(bad)
    assert ch.is_cptp(out, 1e-8)
    dist = np.linalg.norm(out - bad)
    assert dist <= 0.04
    oracle = _alternating_oracle(bad)
    assert np.linalg.eigvalsh(oracle).min() > -1e-6
    # Dykstra returns the nearest point, so never farther than the oracle's feasible point
    assert dist <= np.linalg.norm(oracle - bad) + 1e-8


def test_projection_scaled_trace(chi_960):
    out = tomo.project_chi_physical(1.1 * chi_960)
    assert abs(np.trace(out).real - 1.0) < 1e-9 and ch.is_cptp(out, 1e-8)


def test_projection_idempotent(rng):
    for _ in range(10):
        bad = ch.random_cptp_chi(rng) + 0.05 * np.diag(rng.normal(size=4))
        once = tomo.project_chi_physical(bad)
        twice = tomo.project_chi_physical(once)
        assert np.allclose(once, twice, atol=1e-8)


def test_project_physical_from_ptm(chi_960):
    ptm = ch.chi_to_ptm(chi_960)
    ptm[3, 3] = 1.05
    out = tomo.project_physical(ptm)
    assert ch.is_cptp(out, 1e-8)


def test_finite_shot_report_physical(chi_960):
    ds = sx.simulate_tomography(chi_960, 100, sx.ReadoutModel.symmetric(), 2)
    rep = tomo.reconstruct(ds)
    assert ch.is_cptp(rep.chi, 1e-8)
    assert rep.raw_chi is not None and rep.chi_sigma.shape == (4, 4)
    no_proj = tomo.reconstruct(ds, project=False)
    assert np.array_equal(no_proj.chi, no_proj.raw_chi)


def test_clamped_cells_recorded():
    ds = sx.simulate_tomography(ch.identity_chi(), 100, sx.ReadoutModel.symmetric(), 0)
    recs = dict(ds.records)
    recs[("0", "Z")] = (100, 0)  # below eps0 after inversion
    rep = tomo.reconstruct(sx.TomographyDataset(0.0, recs, ds.readout))
    assert ("0", "Z") in rep.clamped_cells


def test_report_json(chi_960):
    rep = tomo.reconstruct(sx.simulate_tomography(chi_960, 100, sx.ReadoutModel.symmetric(), 1, storage_time=960.0))
    obj = json.loads(json.dumps(rep.to_json()))
    assert {"chi", "ptm", "basis", "physical_before_projection", "projection_distance"} <= set(obj)
    assert np.allclose(ch.chi_from_json(obj), rep.chi)


def test_combination_sigma_linear(chi_960):
    ds = sx.simulate_tomography(chi_960, 100, sx.ReadoutModel.symmetric(), 4)
    rep = tomo.reconstruct(ds)
    w = np.zeros((4, 4))
    w[0, 0] = 1.0
    assert tomo.combination_sigma(rep.expectation_se, w) <= rep.chi_sigma[0, 0] + 1e-15
