"""
Monte Carlo experiment engine.

* :func:`simulate_sequence_mc` runs a Ramsey experiment with a DD sequence
  under sampled detuning trajectories and reports the ensemble contrast.
* :func:`simulate_tomography` draws finite-shot process-tomography counts
  for a channel, including readout errors.
* :func:`readout_correct` inverts an uncorrelated readout-error model.

Random streams: every trajectory (and every tomography dataset) draws from
its own generator ``SeedSequence(master, spawn_key=(index,))`` so results do
not depend on how work is split across threads.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .ddseq import PulseSequence
from .noisemodel import NoiseSpectrum, TrajectorySynth
from .qstate import I2, X, Y, Z, bloch_from_density, density_from_bloch

INPUT_STATES = ("0", "1", "+", "+i")
BASES = ("X", "Y", "Z")
INPUT_BLOCH = {
    "0": np.array([0.0, 0.0, 1.0]),
    "1": np.array([0.0, 0.0, -1.0]),
    "+": np.array([1.0, 0.0, 0.0]),
    "+i": np.array([0.0, 1.0, 0.0]),
}
BASIS_OPS = {"X": X, "Y": Y, "Z": Z}

#: Default symmetric readout error, from a 98.6 % detection efficiency.
DEFAULT_READOUT_ERROR = 0.014


def master_seed(rng) -> int:
    """Reduce an int seed or a Generator to a 63-bit master seed."""
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63))
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    raise TypeError(f"expected an int seed or numpy Generator, got {type(rng).__name__}")


def substream(master: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(index,)))


# ---------------------------------------------------------------------------
# Readout model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReadoutModel:
    """``eps0 = P(read 1 | 0)``, ``eps1 = P(read 0 | 1)``."""

    eps0: float = 0.0
    eps1: float = 0.0

    def __post_init__(self):
        if not (0 <= self.eps0 < 0.5 and 0 <= self.eps1 < 0.5):
            raise ValueError(f"readout errors must lie in [0, 0.5), got {self.eps0}, {self.eps1}")

    @classmethod
    def symmetric(cls, eps: float = DEFAULT_READOUT_ERROR) -> "ReadoutModel":
        return cls(eps, eps)

    @property
    def visibility(self) -> float:
        return 1.0 - self.eps0 - self.eps1

    def corrupt(self, p_one):
        """Probability of reading 1 given true probability ``p_one``."""
        return self.eps0 + self.visibility * np.asarray(p_one)

    def to_json(self) -> dict:
        return {"eps0": self.eps0, "eps1": self.eps1}


@dataclass(frozen=True)
class CorrectedProbability:
    p: float
    std_err: float
    clamped: bool
    p_unclamped: float


def readout_correct(ones_count: int, shots: int, readout: ReadoutModel) -> CorrectedProbability:
    """Linear inversion ``(p_meas - eps0) / (1 - eps0 - eps1)``, clamped to
    [0, 1], with the binomial error propagated."""
    if shots < 1:
        raise ValueError("need at least one shot")
    if not 0 <= ones_count <= shots:
        raise ValueError("ones_count must lie in [0, shots]")
    vis = 1.0 - readout.eps0 - readout.eps1
    if vis <= 0:
        raise ValueError("eps0 + eps1 >= 1: readout is not invertible")
    p_meas = ones_count / shots
    raw = (p_meas - readout.eps0) / vis
    se = math.sqrt(p_meas * (1.0 - p_meas) / shots) / vis
    p = min(max(raw, 0.0), 1.0)
    return CorrectedProbability(p, se, p != raw, raw)


# ---------------------------------------------------------------------------
# Ramsey / DD Monte Carlo
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContrastPoint:
    storage_time: float
    contrast: float
    std_err: float
    phi: float = 0.0
    n_traj: int = 0


def contrast_series_to_csv(points, header: str = "") -> str:
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s", "phi_rad", "contrast", "std_err"])
    for p in points:
        w.writerow([repr(p.storage_time), repr(p.phi), repr(p.contrast), repr(p.std_err)])
    return buf.getvalue()


def contrast_series_from_csv(text: str) -> list[ContrastPoint]:
    rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(rows)
    return [ContrastPoint(float(r["time_s"]), float(r["contrast"]), float(r["std_err"]),
                          float(r["phi_rad"])) for r in reader]


def pi_pulse(phase: float) -> np.ndarray:
    """Ideal pi rotation about ``cos(phase) x + sin(phase) y``."""
    return -1j * (math.cos(phase) * X + math.sin(phase) * Y)


def half_pi_pulse(phase: float) -> np.ndarray:
    n = math.cos(phase) * X + math.sin(phase) * Y
    return (I2 - 1j * n) / math.sqrt(2.0)


def _default_dt(seq: PulseSequence, S: NoiseSpectrum) -> float:
    top = max([w for w, a in S.lines if a > 0], default=0.0)
    if S.one_over_f_amp > 0:
        top = max(top, S.cutoff_high)
    edges = seq.boundaries
    unit = seq.uniform_tau / 2 if seq.uniform_tau else float(np.min(np.diff(edges)))
    if seq.n_pulses == 0:
        unit = seq.total_time
    dt = unit / 4.0
    if top > 0:
        dt = min(dt, math.pi / (4.0 * top))
    # land pulse times on bin edges when the grid is commensurate
    k = max(1, int(math.ceil(unit / dt - 1e-9)))
    return unit / k


def _segment_phases(seq: PulseSequence, series: np.ndarray, dt: float) -> np.ndarray:
    """Accumulated phase in each free-evolution segment, ``(n_traj, n+1)``."""
    cum = np.concatenate([np.zeros((series.shape[0], 1)), np.cumsum(series * dt, axis=1)], axis=1)
    grid = np.arange(cum.shape[1]) * dt
    edges = np.clip(seq.boundaries, 0.0, grid[-1])
    idx = edges / dt
    lo = np.clip(np.floor(idx + 1e-9).astype(int), 0, cum.shape[1] - 1)
    frac = np.clip(idx - lo, 0.0, 1.0)
    hi = np.minimum(lo + 1, cum.shape[1] - 1)
    at = cum[:, lo] * (1.0 - frac) + cum[:, hi] * frac
    return np.diff(at, axis=1)


def toggling_phase(seq: PulseSequence, seg_phases: np.ndarray) -> np.ndarray:
    """Net phase ``sum_j s_j phi_j`` after moving every free evolution
    through the remaining pi pulses (each flips the sign)."""
    n = seq.n_pulses
    signs = (-1.0) ** (n - np.arange(n + 1))
    return seg_phases @ signs


def _initial_bloch(phi: float) -> np.ndarray:
    return np.array([math.cos(phi), math.sin(phi), 0.0])


def ideal_output_bloch(seq: PulseSequence, phi: float) -> np.ndarray:
    """Bloch vector before the analysis pulse for noise-free evolution."""
    u = np.eye(2, dtype=complex)
    for ph in seq.pulse_phases:
        u = pi_pulse(ph) @ u
    rho = density_from_bloch(_initial_bloch(phi))
    return bloch_from_density(u @ rho @ u.conj().T)


def _free_unitaries(delta_dt: np.ndarray, leak_dt: float) -> np.ndarray:
    """exp(-i (delta Z + Omega X) dt / 2) for a stack of detuning phases."""
    a = 0.5 * delta_dt
    b = 0.5 * leak_dt
    norm = np.sqrt(a * a + b * b)
    c = np.cos(norm)
    s = np.where(norm > 0, np.sin(norm) / np.where(norm > 0, norm, 1.0), 1.0)
    u = np.empty(delta_dt.shape + (2, 2), dtype=complex)
    u[..., 0, 0] = c - 1j * s * a
    u[..., 1, 1] = c + 1j * s * a
    u[..., 0, 1] = -1j * s * b
    u[..., 1, 0] = -1j * s * b
    return u


def _signals_unitary(seq, series, dt, phi, leakage_rabi):
    """Signals from explicit propagation with residual drive during free
    evolution; pulses must sit on bin edges."""
    n_traj, n_bins = series.shape
    pulse_bins = np.rint(np.asarray(seq.pulse_times) / dt).astype(int)
    if np.max(np.abs(pulse_bins * dt - np.asarray(seq.pulse_times)), initial=0.0) > 1e-9 * seq.total_time:
        raise ValueError("finite-leakage mode needs pulse times on the dt grid")
    psi = np.tile(np.array([1.0, np.exp(1j * phi)]) / math.sqrt(2.0), (n_traj, 1))
    prop = _free_unitaries(series * dt, leakage_rabi * dt)
    p = 0
    for i in range(n_bins):
        while p < seq.n_pulses and pulse_bins[p] == i:
            psi = psi @ pi_pulse(seq.pulse_phases[p]).T
            p += 1
        psi = np.einsum("tab,tb->ta", prop[:, i], psi)
    while p < seq.n_pulses:
        psi = psi @ pi_pulse(seq.pulse_phases[p]).T
        p += 1
    ref = ideal_output_bloch(seq, phi)
    rx = 2 * np.real(psi[:, 0].conj() * psi[:, 1])
    ry = 2 * np.imag(psi[:, 0].conj() * psi[:, 1])
    rz = np.abs(psi[:, 0]) ** 2 - np.abs(psi[:, 1]) ** 2
    return np.column_stack([rx, ry, rz]) @ ref


def simulate_sequence_mc(seq: PulseSequence, S: NoiseSpectrum, phi: float, n_traj: int,
                         rng, *, dt: float | None = None, threads: int = 1,
                         block: int = 256, leakage_rabi: float = 0.0) -> ContrastPoint:
    """Ensemble Ramsey contrast of ``seq`` under detuning noise ``S``.

    Per trajectory the signal is the projection of the final Bloch vector on
    the noise-free output, which for ideal pi pulses is ``cos`` of the
    toggling-frame phase.  ``leakage_rabi`` (rad/s) switches on a residual
    x drive during free evolution and explicit 2x2 propagation.
    """
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    master = master_seed(rng)
    if S.is_zero and leakage_rabi == 0.0:
        return ContrastPoint(seq.total_time, 1.0, 0.0, phi, n_traj)
    dt = _default_dt(seq, S) if dt is None else dt
    synth = TrajectorySynth(S, dt, seq.total_time)
    if synth.n_bins * dt < seq.total_time * (1 - 1e-9):
        raise ValueError("dt does not tile the sequence length")

    def run_block(start):
        stop = min(start + block, n_traj)
        series = synth.sample_many(substream(master, i) for i in range(start, stop))
        if leakage_rabi:
            return _signals_unitary(seq, series, dt, phi, leakage_rabi)
        return np.cos(toggling_phase(seq, _segment_phases(seq, series, dt)))

    starts = range(0, n_traj, block)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run_block, starts))
    else:
        parts = [run_block(s) for s in starts]
    signals = np.concatenate(parts)
    mean = float(np.mean(signals))
    se = float(np.std(signals, ddof=1) / math.sqrt(n_traj)) if n_traj > 1 else 0.0
    return ContrastPoint(seq.total_time, mean, se, phi, n_traj)


# ---------------------------------------------------------------------------
# Process tomography data
# ---------------------------------------------------------------------------

CELLS = tuple((s, b) for s in INPUT_STATES for b in BASES)


@dataclass
class TomographyDataset:
    """Counts of outcome ``1`` per (input state, basis) cell.

    ``exact_p`` holds the measured-ones probabilities for the infinite-shot
    limit; when present it replaces the counts.  ``identity_shots`` records
    the informationless I-measurement bookkeeping per input.
    """

    storage_time: float
    records: dict[tuple[str, str], tuple[int, int]]
    readout: ReadoutModel = field(default_factory=ReadoutModel)
    exact_p: dict[tuple[str, str], float] | None = None
    identity_shots: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        missing = [c for c in CELLS if c not in self.records]
        if missing:
            raise ValueError(f"tomography dataset missing cells {missing}")
        for cell, (shots, ones) in self.records.items():
            if not 0 <= ones <= shots:
                raise ValueError(f"cell {cell}: ones_count {ones} not in [0, {shots}]")

    @property
    def is_exact(self) -> bool:
        return self.exact_p is not None

    def measured_p(self, cell) -> float:
        if self.exact_p is not None:
            return self.exact_p[cell]
        shots, ones = self.records[cell]
        return ones / shots

    def to_json(self) -> dict:
        out = {
            "storage_time_s": self.storage_time,
            "readout": self.readout.to_json(),
            "cells": [
                {"input": s, "basis": b, "shots": self.records[(s, b)][0],
                 "ones": self.records[(s, b)][1]}
                for s, b in CELLS
            ],
            "identity_shots": dict(self.identity_shots),
        }
        if self.exact_p is not None:
            out["exact_p"] = [{"input": s, "basis": b, "p": self.exact_p[(s, b)]} for s, b in CELLS]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TomographyDataset":
        records = {(c["input"], c["basis"]): (int(c["shots"]), int(c["ones"])) for c in obj["cells"]}
        exact = obj.get("exact_p")
        exact_p = {(c["input"], c["basis"]): float(c["p"]) for c in exact} if exact else None
        ro = obj.get("readout", {})
        return cls(float(obj["storage_time_s"]), records,
                   ReadoutModel(float(ro.get("eps0", 0.0)), float(ro.get("eps1", 0.0))),
                   exact_p, {k: int(v) for k, v in obj.get("identity_shots", {}).items()})


def true_ones_probabilities(chi) -> dict[tuple[str, str], float]:
    """Born probability of outcome 1 (eigenvalue -1) per cell, no readout error."""
    out = {}
    for s in INPUT_STATES:
        rho = ch.apply(chi, density_from_bloch(INPUT_BLOCH[s]))
        for b in BASES:
            expval = float(np.real(np.trace(rho @ BASIS_OPS[b])))
            out[(s, b)] = min(max(0.5 * (1.0 - expval), 0.0), 1.0)
    return out


def simulate_tomography(chi, shots_per_cell: int | None, readout: ReadoutModel, rng,
                        storage_time: float = 0.0) -> TomographyDataset:
    """Synthetic tomography counts; ``shots_per_cell=None`` gives the exact
    infinite-shot dataset."""
    report = ch.is_cptp(chi, tol=1e-8)
    if not report:
        raise ValueError("chi must be CPTP: " + "; ".join(report.violations))
    p_meas = {c: float(readout.corrupt(p)) for c, p in true_ones_probabilities(chi).items()}
    if shots_per_cell is None:
        records = {c: (0, 0) for c in CELLS}
        return TomographyDataset(storage_time, records, readout, p_meas,
                                 {s: 0 for s in INPUT_STATES})
    if shots_per_cell < 1:
        raise ValueError("shots_per_cell must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    counts = rng.binomial(shots_per_cell, [p_meas[c] for c in CELLS])
    records = {c: (shots_per_cell, int(k)) for c, k in zip(CELLS, counts)}
    return TomographyDataset(storage_time, records, readout, None,
                             {s: shots_per_cell for s in INPUT_STATES})


def resample_dataset(ds: TomographyDataset, rng: np.random.Generator) -> TomographyDataset:
    """Parametric bootstrap replica: binomial draws at the observed frequencies."""
    if ds.is_exact:
        return ds
    shots = np.array([ds.records[c][0] for c in CELLS])
    p_hat = np.array([ds.records[c][1] / ds.records[c][0] for c in CELLS])
    counts = rng.binomial(shots, p_hat)
    records = {c: (int(n), int(k)) for c, n, k in zip(CELLS, shots, counts)}
    return TomographyDataset(ds.storage_time, records, ds.readout, None, dict(ds.identity_shots))
