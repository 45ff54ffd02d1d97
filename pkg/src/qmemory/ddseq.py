"""
Dynamical-decoupling sequences, their filter function and the predicted
Ramsey contrast under a :class:`~qmemory.noisemodel.NoiseSpectrum`.

The filter function of a sequence with pulse times ``t_1 < ... < t_n``
inside ``(0, T)`` is

    y(omega, T) = (1/omega) sum_{j=0}^{n} (-1)^j (e^{i omega t_j} - e^{i omega t_{j+1}})

with ``t_0 = 0`` and ``t_{n+1} = T``.  Only the pulse times and the sign
alternation enter; pulse phases matter for the time-domain simulator only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError
from .noisemodel import NoiseSpectrum, line_spectral_mass, psd_eval

# Knill phase pattern for the sigma_x block of one KDD_xy unit, degrees
KNILL_PHASES_DEG = (30.0, 0.0, 90.0, 0.0, 30.0)


@dataclass(frozen=True)
class PulseSequence:
    """Instantaneous pi pulses inside a Ramsey bracket of length ``total_time``."""

    total_time: float
    pulse_times: tuple[float, ...] = ()
    pulse_phases: tuple[float, ...] = ()
    label: str = ""
    uniform_tau: float | None = field(init=False, default=None, compare=False)

    def __post_init__(self):
        times = tuple(float(t) for t in self.pulse_times)
        phases = tuple(float(p) for p in self.pulse_phases) or (0.0,) * len(times)
        object.__setattr__(self, "pulse_times", times)
        object.__setattr__(self, "pulse_phases", phases)
        T = self.total_time
        if not T > 0:
            raise ValueError("total time must be positive")
        if len(phases) != len(times):
            raise ValueError("need one phase per pulse")
        edges = (0.0,) + times + (T,)
        if any(b <= a for a, b in zip(edges[:-1], edges[1:])):
            raise ValueError("pulse times must be strictly increasing inside (0, T)")
        n = len(times)
        if n:
            tau = T / n
            ideal = (np.arange(1, n + 1) - 0.5) * tau
            if np.max(np.abs(np.asarray(times) - ideal)) <= 1e-12 * T:
                object.__setattr__(self, "uniform_tau", tau)

    @property
    def n_pulses(self) -> int:
        return len(self.pulse_times)

    @property
    def boundaries(self) -> np.ndarray:
        """``t_0 = 0, t_1, ..., t_n, t_{n+1} = T``."""
        return np.concatenate([[0.0], self.pulse_times, [self.total_time]])

    @property
    def switching_coefficients(self) -> np.ndarray:
        """Coefficients ``c_k`` with ``omega y = sum_k c_k e^{i omega t_k}``."""
        n = self.n_pulses
        c = 2.0 * (-1.0) ** np.arange(n + 2)
        c[0] = 1.0
        c[-1] = (-1.0) ** (n + 1)
        return c

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "total_time_s": self.total_time,
            "pulse_times_s": list(self.pulse_times),
            "pulse_phases_rad": list(self.pulse_phases),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PulseSequence":
        return cls(
            total_time=float(obj["total_time_s"]),
            pulse_times=tuple(obj.get("pulse_times_s", ())),
            pulse_phases=tuple(obj.get("pulse_phases_rad", ())),
            label=obj.get("label", ""),
        )


def build_ramsey(T: float) -> PulseSequence:
    return PulseSequence(T, label="ramsey")


def build_cpmg(n_pulses: int, tau: float) -> PulseSequence:
    """``n_pulses`` equal-phase pi pulses at ``(j - 1/2) tau``; ``T = n tau``."""
    if n_pulses < 1:
        raise ValueError("CPMG needs at least one pulse")
    if not tau > 0:
        raise ValueError("pulse interval must be positive")
    times = (np.arange(1, n_pulses + 1) - 0.5) * tau
    return PulseSequence(n_pulses * tau, tuple(times), (0.0,) * n_pulses, label=f"cpmg{n_pulses}")


def build_kddxy(n_units: int, tau: float) -> PulseSequence:
    """``n_units`` KDD_xy units of ten equally spaced pi pulses.

    Each unit is a Knill block about x followed by the same block shifted by
    90 degrees; ``n_units`` must be even so the ideal sequence is the
    identity.
    """
    if n_units < 2 or n_units % 2:
        raise ValueError(f"KDD_xy needs a positive even number of units, got {n_units}")
    if not tau > 0:
        raise ValueError("pulse interval must be positive")
    unit = np.deg2rad(np.concatenate([KNILL_PHASES_DEG, np.add(KNILL_PHASES_DEG, 90.0)]))
    n = 10 * n_units
    times = (np.arange(1, n + 1) - 0.5) * tau
    return PulseSequence(n * tau, tuple(times), tuple(np.tile(unit, n_units)),
                         label=f"kddxy{n_units}")


# ---------------------------------------------------------------------------
# Filter function
# ---------------------------------------------------------------------------

_SERIES_CUTOFF = 0.05   # omega*T below which the Taylor series is used
_SERIES_TERMS = 14


def _switching_sum_direct(seq: PulseSequence, omega: np.ndarray) -> np.ndarray:
    c = seq.switching_coefficients
    t = seq.boundaries
    out = np.empty(omega.shape, dtype=complex)
    step = max(1, 2**22 // t.size)
    for lo in range(0, omega.size, step):
        w = omega[lo:lo + step]
        out[lo:lo + step] = np.exp(1j * np.outer(w, t)) @ c
    return out


def _switching_sum_uniform(seq: PulseSequence, omega: np.ndarray) -> np.ndarray:
    # sum over interior pulses is geometric in z = -exp(i omega tau)
    n, tau, T = seq.n_pulses, seq.uniform_tau, seq.total_time
    z = -np.exp(1j * omega * tau)
    zn = (-1.0) ** n * np.exp(1j * omega * n * tau)
    den = 1.0 - z
    near = np.abs(den) < 1e-6
    geo = np.empty(omega.shape, dtype=complex)
    ok = ~near
    geo[ok] = z[ok] * (1.0 - zn[ok]) / den[ok]
    if near.any():
        k = np.arange(1, n + 1)
        geo[near] = np.exp(1j * np.outer(omega[near] * tau + np.pi, k)).sum(axis=1)
    interior = np.exp(-0.5j * omega * tau) * geo
    return 1.0 + 2.0 * interior + (-1.0) ** (n + 1) * np.exp(1j * omega * T)


def _switching_sum(seq: PulseSequence, omega: np.ndarray) -> np.ndarray:
    if seq.uniform_tau is not None:
        return _switching_sum_uniform(seq, omega)
    return _switching_sum_direct(seq, omega)


def _series_y(seq: PulseSequence, omega: np.ndarray) -> np.ndarray:
    # y = T sum_{m>=1} i^m (omega T)^(m-1) M_m / m!,  M_m = sum_k c_k (t_k/T)^m
    T = seq.total_time
    s = seq.boundaries / T
    c = seq.switching_coefficients
    x = omega * T
    out = np.zeros(omega.shape, dtype=complex)
    fact = 1.0
    for m in range(1, _SERIES_TERMS + 1):
        fact *= m
        moment = float(np.dot(c, s**m))
        out += (1j**m) * x ** (m - 1) * moment / fact
    return T * out


def filter_amplitude(seq: PulseSequence, omega) -> np.ndarray:
    """Complex ``y(omega, T)``; finite at ``omega = 0``."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if np.any(omega < 0):
        raise ValueError("omega must be >= 0")
    out = np.empty(omega.shape, dtype=complex)
    small = omega * seq.total_time < _SERIES_CUTOFF
    if small.any():
        out[small] = _series_y(seq, omega[small])
    big = ~small
    if big.any():
        out[big] = _switching_sum(seq, omega[big]) / omega[big]
    return out


def filter_function(seq: PulseSequence, omega):
    """``|y(omega, T)|^2`` in s^2; scalar in, scalar out."""
    scalar = np.ndim(omega) == 0
    val = np.abs(filter_amplitude(seq, omega)) ** 2
    return float(val[0]) if scalar else val


def filter_peak(seq: PulseSequence, f_grid) -> tuple[float, float]:
    """Grid frequency (Hz) and value of the global maximum of ``|y|^2``."""
    f_grid = np.asarray(f_grid, dtype=float)
    vals = filter_function(seq, 2 * np.pi * f_grid)
    k = int(np.argmax(vals))
    return float(f_grid[k]), float(vals[k])


def local_maxima(values) -> np.ndarray:
    v = np.asarray(values)
    return np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:])) + 1


# ---------------------------------------------------------------------------
# Contrast integral
# ---------------------------------------------------------------------------

OMEGA_MIN = 2 * math.pi * 1e-4
OMEGA_MAX = 2 * math.pi * 1e6
_GL_ORDER = 8
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)
# for commensurate pulse grids the averaged tail starts at an exact zero of
# every sin(omega * lag); 64 units keeps the residual below 1e-8 relative
_RESOLVED_UNITS = 64
_RESOLVED_IRREGULAR = 1000.0
_MAX_PANELS = 4_000_000


def _time_unit(seq: PulseSequence) -> tuple[float, bool]:
    """Common divisor of all pulse-time lags, if the grid is commensurate."""
    if seq.n_pulses == 0:
        return seq.total_time, True
    if seq.uniform_tau is not None:
        return 0.5 * seq.uniform_tau, True
    return float(np.min(np.diff(seq.boundaries))), False


def _gl_integrate(f, edges) -> float:
    total = 0.0
    step = 2**20 // _GL_ORDER
    for lo in range(0, edges.size - 1, step):
        e = edges[lo:lo + step + 1]
        a, b = e[:-1, None], e[1:, None]
        half = 0.5 * (b - a)
        nodes = a + half * (_GL_X + 1.0)
        total += float(np.sum(f(nodes.ravel()) * (half * _GL_W).ravel()))
    return total


def _log_edges(lo, hi, ppd):
    if hi <= lo:
        return np.array([lo, hi])
    n = max(1, int(math.ceil(math.log10(hi / lo) * ppd)))
    return lo * (hi / lo) ** np.linspace(0.0, 1.0, n + 1)


def _panel_edges(lo, hi, ppd, lin_step, breaks, log_lo=OMEGA_MIN):
    start = max(lo, log_lo)
    pts = [_log_edges(start, hi, ppd)] if hi > start else []
    if lin_step is not None:
        n_lin = int(math.ceil((hi - lo) / lin_step))
        if n_lin > _MAX_PANELS:
            raise ConvergenceError(
                f"contrast quadrature needs {n_lin} panels (limit {_MAX_PANELS})"
            )
        pts.append(np.linspace(lo, hi, n_lin + 1))
    pts.append(np.array([lo, hi] + [b for b in breaks if lo < b < hi]))
    return np.unique(np.concatenate(pts))


def _smooth_integral(seq: PulseSequence, S: NoiseSpectrum, level: int) -> float:
    """``int_0^inf S(omega) |y|^2`` at refinement ``level`` (panels x 2^level)."""
    T = seq.total_time
    refine = 2**level
    ppd = 40 * refine
    unit, commensurate = _time_unit(seq)
    if commensurate:
        w_res = 2 * math.pi * _RESOLVED_UNITS / unit
    else:
        w_res = _RESOLVED_IRREGULAR / unit
    breaks = [OMEGA_MIN]
    log_lo = OMEGA_MIN
    if S.one_over_f_amp > 0:
        log_lo = min(log_lo, S.cutoff_low)
        breaks += [S.cutoff_low, S.cutoff_high]
        if commensurate and S.cutoff_high < OMEGA_MAX:
            # push the averaging switch above the band edge when affordable
            k = math.ceil(S.cutoff_high * unit / (2 * math.pi)) * 4
            if k * 2 * T / unit < _MAX_PANELS / 4:
                w_res = max(w_res, 2 * math.pi * k / unit)
    w_res = min(w_res, OMEGA_MAX)
    c2 = float(np.sum(seq.switching_coefficients**2))

    def resolved(w):
        return psd_eval(S, w) * filter_function(seq, w)

    def averaged(w):
        return psd_eval(S, w) * c2 / (w * w)

    total = _gl_integrate(resolved, _panel_edges(0.0, w_res, ppd, math.pi / T / refine, breaks, log_lo))
    if w_res < OMEGA_MAX:
        total += _gl_integrate(averaged, _panel_edges(w_res, OMEGA_MAX, ppd, None, breaks, log_lo))
    # tails beyond OMEGA_MAX, where |y|^2 is replaced by its mean c2 / omega^2
    total += S.white_level * c2 / OMEGA_MAX
    if S.one_over_f_amp > 0 and S.cutoff_high > OMEGA_MAX:
        lo = max(OMEGA_MAX, S.cutoff_low)
        total += 0.5 * S.one_over_f_amp * c2 * (lo**-2 - S.cutoff_high**-2)
    return total


def decay_exponent(seq: PulseSequence, S: NoiseSpectrum, rtol: float = 1e-6,
                   max_level: int = 3) -> float:
    """``(2/pi) int S |y|^2 domega`` with discrete lines added exactly."""
    line_part = sum(line_spectral_mass(a) * filter_function(seq, w) for w, a in S.lines if a > 0)
    smooth = 0.0
    if S.has_smooth:
        prev = _smooth_integral(seq, S, 0)
        for level in range(1, max_level + 1):
            cur = _smooth_integral(seq, S, level)
            change = abs(cur - prev) / abs(cur) if cur else abs(cur - prev)
            if change <= rtol:
                break
            prev = cur
        else:
            raise ConvergenceError(
                f"contrast quadrature not converged: relative change {change:.2e} > {rtol:g}",
                residual=change,
            )
        smooth = cur
    return 2.0 / math.pi * (smooth + line_part)


def coherence_contrast(seq: PulseSequence, S: NoiseSpectrum, rtol: float = 1e-6) -> float:
    """Predicted Ramsey contrast ``W(T)`` in [0, 1]."""
    if S.is_zero:
        return 1.0
    return math.exp(-decay_exponent(seq, S, rtol=rtol))
