"""
Noise budget for the clock qubit.

Spectral convention
-------------------
``S(omega)`` is the one-sided PSD of the qubit angular-frequency detuning
``delta(t)`` (rad/s) normalised so that the Ramsey/DD contrast is

    W(T) = exp(-(2/pi) int_0^inf S(omega) |y(omega, T)|^2 domega).

With this normalisation the detuning autocorrelation is

    C(tau) = (4/pi) int_0^inf S(omega) cos(omega tau) domega,

so white noise of level ``S0`` has ``C(tau) = 4 S0 delta(tau)``.  A discrete
line is stored by its mean-square detuning ``weight`` (rad^2/s^2); its
spectral mass in the PSD above is ``(pi/4) * weight``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Hyperfine clock splitting at zero field, Hz.
CLOCK_FREQUENCY_HZ = 12642812118.0
#: Second-order Zeeman coefficient, Hz / G^2.
ZEEMAN_QUADRATIC_HZ_PER_G2 = 310.8


def zeeman_shift(B: float) -> float:
    """Second-order Zeeman shift in Hz for field ``B`` in Gauss."""
    if B < 0:
        raise ValueError("field magnitude must be >= 0")
    return ZEEMAN_QUADRATIC_HZ_PER_G2 * B * B


def zeeman_sensitivity(B: float) -> float:
    """``d(shift)/dB`` in Hz/G."""
    if B < 0:
        raise ValueError("field magnitude must be >= 0")
    return 2.0 * ZEEMAN_QUADRATIC_HZ_PER_G2 * B


def qubit_frequency(B: float) -> float:
    return CLOCK_FREQUENCY_HZ + zeeman_shift(B)


@dataclass(frozen=True)
class FieldLine:
    """Magnetic-field noise line: ``frequency`` in Hz, ``field_amplitude``
    in Gauss."""

    frequency: float
    field_amplitude: float

    def __post_init__(self):
        if self.field_amplitude < 0:
            raise ValueError("field amplitude must be >= 0")
        if self.frequency <= 0:
            raise ValueError("line frequency must be positive")


def field_line_to_spectrum_line(line: FieldLine, B0: float) -> tuple[float, float]:
    """Convert a field-noise line at bias field ``B0`` to ``(omega, weight)``.

    The detuning excursion is ``2 pi * zeeman_sensitivity(B0) * amplitude``
    and the weight is half its square, i.e. the mean square of a sinusoid
    with that excursion.
    """
    if B0 <= 0:
        raise ValueError("bias field must be positive")
    excursion = 2.0 * math.pi * zeeman_sensitivity(B0) * line.field_amplitude
    return 2.0 * math.pi * line.frequency, 0.5 * excursion**2


@dataclass(frozen=True)
class NoiseSpectrum:
    """Composite detuning spectrum.

    ``lines`` holds ``(omega, weight)`` pairs (rad/s, rad^2/s^2 mean square).
    ``white_level`` is the flat PSD ``S0``; ``one_over_f_amp`` is ``A`` with
    ``S = A / omega`` between ``cutoff_low`` and ``cutoff_high`` (rad/s).
    """

    lines: tuple[tuple[float, float], ...] = ()
    white_level: float = 0.0
    one_over_f_amp: float = 0.0
    cutoff_low: float = 2 * math.pi * 1e-4
    cutoff_high: float = 2 * math.pi * 1e3

    def __post_init__(self):
        lines = tuple((float(w), float(a)) for w, a in self.lines)
        object.__setattr__(self, "lines", lines)
        if any(w <= 0 for w, _ in lines):
            raise ValueError("line frequencies must be positive")
        if any(a < 0 for _, a in lines):
            raise ValueError("line weights must be >= 0")
        if self.white_level < 0 or self.one_over_f_amp < 0:
            raise ValueError("spectral levels must be >= 0")
        if not 0 < self.cutoff_low < self.cutoff_high:
            raise ValueError("need 0 < cutoff_low < cutoff_high")

    @property
    def has_smooth(self) -> bool:
        return self.white_level > 0 or self.one_over_f_amp > 0

    @property
    def is_zero(self) -> bool:
        return not self.has_smooth and all(a == 0 for _, a in self.lines)

    def to_json(self) -> dict:
        return {
            "lines": [{"freq_hz": w / (2 * math.pi), "weight": a} for w, a in self.lines],
            "white_level": self.white_level,
            "one_over_f": {
                "amp": self.one_over_f_amp,
                "f_low_hz": self.cutoff_low / (2 * math.pi),
                "f_high_hz": self.cutoff_high / (2 * math.pi),
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NoiseSpectrum":
        lines = tuple((2 * math.pi * float(ln["freq_hz"]), float(ln["weight"]))
                      for ln in obj.get("lines", []))
        kw = {}
        oof = obj.get("one_over_f")
        if oof:
            kw["one_over_f_amp"] = float(oof.get("amp", 0.0))
            if "f_low_hz" in oof:
                kw["cutoff_low"] = 2 * math.pi * float(oof["f_low_hz"])
            if "f_high_hz" in oof:
                kw["cutoff_high"] = 2 * math.pi * float(oof["f_high_hz"])
        return cls(lines=lines, white_level=float(obj.get("white_level", 0.0)), **kw)


def psd_eval(S: NoiseSpectrum, omega):
    """Smooth part of the spectrum at ``omega`` (lines excluded)."""
    omega = np.asarray(omega, dtype=float)
    out = np.full(omega.shape, S.white_level, dtype=float)
    if S.one_over_f_amp > 0:
        band = (omega >= S.cutoff_low) & (omega <= S.cutoff_high)
        out = out + np.where(band, S.one_over_f_amp / np.where(band, omega, 1.0), 0.0)
    return out if out.ndim else float(out)


def line_spectral_mass(weight: float) -> float:
    """Integrated PSD of a line of mean-square detuning ``weight``."""
    return 0.25 * math.pi * weight


# ---------------------------------------------------------------------------
# Technical error sources
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScatteringParams:
    """Off-resonant scattering parameters.

    ``gamma`` is the P-state decay rate (s^-1, e.g. ``2 pi * 20 MHz``),
    ``delta_d1`` the magnitude of the red detuning from the D1 line and
    ``delta_fs`` the fine-structure splitting, both in rad/s.
    """

    gamma: float
    intensity_ratio: float
    delta_d1: float
    delta_fs: float

    def __post_init__(self):
        if self.gamma <= 0 or self.delta_d1 <= 0 or self.delta_fs <= 0:
            raise ValueError("gamma and detunings must be positive")
        if self.intensity_ratio < 0:
            raise ValueError("intensity ratio must be >= 0")


def spontaneous_scattering_rate(p: ScatteringParams) -> float:
    """Raman scattering rate (events per second) from a far-detuned beam.

    The laser sits ``delta_d1`` below D1, hence ``delta_d1 + delta_fs``
    below D2.
    """
    g = 0.5 * p.gamma * math.sqrt(p.intensity_ratio / 2.0)
    d2 = p.delta_fs + p.delta_d1
    return p.gamma * g * g / 6.0 * (1.0 / p.delta_d1**2 + 2.0 / d2**2)


def leakage_rotation(attenuation_db: float, t_pi: float, interval: float) -> float:
    """Rotation angle (rad) from residual microwave during ``interval``.

    The attenuation is applied to the field amplitude (``10^(-dB/20)``).
    """
    if t_pi <= 0 or interval < 0:
        raise ValueError("t_pi must be positive and interval >= 0")
    if attenuation_db < 0:
        raise ValueError("attenuation must be >= 0 dB")
    return math.pi / t_pi * 10.0 ** (-attenuation_db / 20.0) * interval


# ---------------------------------------------------------------------------
# Time-domain realisation
# ---------------------------------------------------------------------------

def _gl_panels(edges, order):
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    return (a + half * (x + 1.0)).ravel(), (half * w).ravel()


def _band_panels(lo, hi, horizon, points_per_decade=40):
    decades = math.log10(hi / lo)
    log_edges = lo * 10.0 ** np.linspace(0, decades, max(2, int(math.ceil(decades * points_per_decade)) + 1))
    step = math.pi / horizon
    lin_edges = np.arange(lo, hi, step)
    edges = np.union1d(log_edges, np.append(lin_edges, hi))
    return edges[(edges >= lo) & (edges <= hi)]


@dataclass
class TrajectorySynth:
    """Prepared sampler for detuning series on a fixed grid.

    Each sample is the bin average of ``delta(t)`` over ``[i dt, (i+1) dt)``
    for ``i < round(T / dt)``.  White noise is exact in that representation.
    The 1/f band is realised as a sum of sinusoids with Gaussian amplitudes
    at Gauss-Legendre nodes covering the band, weighted so that the
    covariance is the quadrature of ``C(tau)``; panels are narrower than
    ``pi / T`` so phase integrals over the horizon are resolved.  Lines are
    random-phase sinusoids of amplitude ``sqrt(2 weight)``.
    """

    S: NoiseSpectrum
    dt: float
    T: float
    max_modes: int = 20000
    gl_order: int = 6
    _MODE_BLOCK = 256
    modes: np.ndarray = field(init=False, repr=False)
    mode_amp: np.ndarray = field(init=False, repr=False)
    t_mid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        nyq = math.pi / self.dt
        for w, a in self.S.lines:
            if a > 0 and w >= nyq:
                raise ValueError(
                    f"dt={self.dt:g} s violates Nyquist for line at {w / 2 / math.pi:g} Hz"
                )
        self.n_bins = int(round(self.T / self.dt))
        if self.n_bins < 1:
            raise ValueError("T must be at least one time step")
        self.t_mid = (np.arange(self.n_bins) + 0.5) * self.dt
        if self.S.one_over_f_amp > 0:
            if self.S.cutoff_high >= nyq:
                raise ValueError(
                    f"dt={self.dt:g} s violates Nyquist for the 1/f cutoff "
                    f"{self.S.cutoff_high / 2 / math.pi:g} Hz"
                )
            edges = _band_panels(self.S.cutoff_low, self.S.cutoff_high, self.n_bins * self.dt)
            nodes, qw = _gl_panels(edges, self.gl_order)
            if nodes.size > self.max_modes:
                raise ValueError(
                    f"1/f band needs {nodes.size} modes at this horizon (limit {self.max_modes})"
                )
            self.modes = nodes
            var = (4.0 / math.pi) * (self.S.one_over_f_amp / nodes) * qw
            self.mode_amp = np.sqrt(var) * np.sinc(nodes * self.dt / (2 * math.pi))
        else:
            self.modes = np.empty(0)
            self.mode_amp = np.empty(0)
        self._white_sd = math.sqrt(4.0 * self.S.white_level / self.dt)
        self._lines = [(w, math.sqrt(2.0 * a) * np.sinc(w * self.dt / (2 * math.pi)))
                       for w, a in self.S.lines if a > 0]

    def sample_many(self, rngs) -> np.ndarray:
        """One series per generator in ``rngs``; shape ``(len(rngs), n_bins)``."""
        rngs = list(rngs)
        n = len(rngs)
        K = self.modes.size
        white = np.zeros((n, self.n_bins))
        amps = np.zeros((n, 2 * K))
        phases = np.zeros((n, len(self._lines)))
        # the draw order per generator is fixed: white, mode amplitudes, line phases
        for i, rng in enumerate(rngs):
            if self._white_sd > 0:
                white[i] = rng.standard_normal(self.n_bins)
            if K:
                amps[i] = rng.standard_normal(2 * K)
            if self._lines:
                phases[i] = rng.uniform(0.0, 2 * math.pi, len(self._lines))
        out = self._white_sd * white
        for lo in range(0, K, self._MODE_BLOCK):
            sl = slice(lo, min(lo + self._MODE_BLOCK, K))
            phase = np.outer(self.modes[sl], self.t_mid)
            out += (amps[:, sl] * self.mode_amp[sl]) @ np.cos(phase)
            out += (amps[:, K + sl.start:K + sl.stop] * self.mode_amp[sl]) @ np.sin(phase)
        for j, (w, amp) in enumerate(self._lines):
            out += amp * np.cos(w * self.t_mid[None, :] + phases[:, j:j + 1])
        return out

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_many([rng])[0]


def sample_noise_trajectory(S: NoiseSpectrum, dt: float, T: float,
                            rng: np.random.Generator) -> np.ndarray:
    """A single detuning series (rad/s), ``round(T/dt)`` bin averages."""
    return TrajectorySynth(S, dt, T).sample(rng)


def periodogram(series, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided periodogram in the package's PSD normalisation.

    Returns ``(omega, S_est)`` at the positive DFT frequencies below Nyquist.
    For white noise of level ``S0`` the ordinates have mean ``S0``.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    xf = np.fft.rfft(x)
    k = np.arange(1, (n - 1) // 2 + 1)
    omega = 2 * math.pi * k / (n * dt)
    # two-sided PSD estimate dt |X|^2 / n equals 4 S
    return omega, dt * np.abs(xf[k]) ** 2 / n / 4.0
