"""
Decay-curve fitting.

``fit_exponential`` fits ``y = floor + A exp(-t / tau)`` with a fixed floor;
``fit_t1t2`` fits the chi-matrix combinations

    chi_IZ(t) = 1 - (chi_II - chi_ZZ) = 1 - exp(-t / T2)
    chi_XY(t) = (chi_XX + chi_YY) / 2 = (1 - exp(-t / T1)) / 4

jointly.  Both use Levenberg-Marquardt least squares (MINPACK via scipy)
and report covariance errors; ``bootstrap_uncertainty`` adds a parametric
bootstrap over tomography counts.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import least_squares

from .errors import ConvergenceError, PhysicalityError
from .simexp import TomographyDataset, master_seed, resample_dataset, substream

MAX_ITER = 200
GTOL = 1e-10
# tau beyond this multiple of the sampled time span is reported as unresolved
_TAU_DIVERGENCE = 1e6


@dataclass(frozen=True)
class DecaySeries:
    """Points ``(t, y, sigma)`` sorted by ``t``; ``sigma = 0`` means unweighted."""

    points: tuple[tuple[float, float, float], ...]
    label: str = ""

    def __post_init__(self):
        pts = sorted((float(t), float(y), float(s)) for t, y, s in self.points)
        t = [p[0] for p in pts]
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("DecaySeries times must be distinct")
        if any(p[2] < 0 or not math.isfinite(p[1]) for p in pts):
            raise ValueError("sigma must be >= 0 and y finite")
        object.__setattr__(self, "points", tuple(pts))

    @classmethod
    def from_arrays(cls, t, y, sigma=None, label: str = "") -> "DecaySeries":
        t = np.asarray(t, dtype=float)
        sigma = np.zeros_like(t) if sigma is None else np.broadcast_to(sigma, t.shape)
        return cls(tuple(zip(t, np.asarray(y, dtype=float), sigma)), label)

    @property
    def t(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def y(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])

    def digest(self) -> str:
        blob = json.dumps({"label": self.label, "points": self.points}).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class FitResult:
    params: dict[str, float]
    std_errs: dict[str, float]
    residual_norm: float
    converged: bool
    diagnostic: str = ""
    flags: dict[str, bool] = field(default_factory=dict)
    bootstrap_std_errs: dict[str, float] | None = None
    input_digest: str = ""

    def to_json(self) -> dict:
        def clean(d):
            return None if d is None else {k: (float(v) if math.isfinite(v) else str(v)) for k, v in d.items()}
        return {
            "params": clean(self.params),
            "std_errs_covariance": clean(self.std_errs),
            "std_errs_bootstrap": clean(self.bootstrap_std_errs),
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "diagnostic": self.diagnostic,
            "flags": dict(self.flags),
            "input_digest": self.input_digest,
        }


def _weights(sigma: np.ndarray) -> tuple[np.ndarray, bool]:
    if np.all(sigma > 0):
        return 1.0 / sigma, True
    if np.all(sigma == 0):
        return np.ones_like(sigma), False
    raise ValueError("sigma must be positive for all points or zero for all points")


def _lm(fun, jac, x0, n_res):
    return least_squares(fun, x0, jac=jac, method="lm", gtol=GTOL, xtol=1e-15, ftol=1e-15,
                         max_nfev=MAX_ITER * (len(x0) + 1))


def _covariance(res, weighted: bool, n_res: int):
    jtj = res.jac.T @ res.jac
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        return np.full((len(res.x), len(res.x)), np.inf)
    if not weighted:
        dof = n_res - len(res.x)
        s2 = float(2.0 * res.cost / dof) if dof > 0 else 0.0
        cov = cov * s2
    return cov


def fit_exponential(series: DecaySeries, floor: float = 0.0) -> FitResult:
    """Weighted least squares of ``y = floor + A exp(-t / tau)``.

    Parameters
    ----------
    series : DecaySeries
        At least three points.  Uniform ``sigma = 0`` means unweighted.
    floor : float
        Known asymptote: 0 for contrast, 0.25 for process fidelity and 0.5
        for mean fidelity.

    Returns
    -------
    FitResult
        ``params`` has ``A`` and ``tau``.  A series without resolvable decay
        is returned with ``converged=False`` and an explanatory diagnostic.
    """
    t, y, sig = series.t, series.y, series.sigma
    if t.size < 3:
        raise ValueError("fit_exponential needs at least 3 points")
    z = y - floor
    if np.all(z <= 0):
        raise ValueError("all points lie at or below the floor; nothing to fit")
    w, weighted = _weights(sig)
    span = float(t[-1] - max(t[0], 0.0)) or float(t[-1])

    def fun(x):
        return w * (floor + x[0] * np.exp(-t * np.exp(-x[1])) - y)

    def jac(x):
        e = np.exp(-t * np.exp(-x[1]))
        return np.column_stack([w * e, w * x[0] * e * t * np.exp(-x[1])])

    # log-linear start on the positive part, then a tau multi-start grid
    pos = z > 0
    starts = []
    if pos.sum() >= 2:
        slope, icpt = np.polyfit(t[pos], np.log(z[pos]), 1)
        if slope < 0:
            starts.append((math.exp(icpt), -1.0 / slope))
    t_lo = max(float(t[t > 0].min()) if np.any(t > 0) else span, 1e-300)
    for tau in np.geomspace(t_lo, 10.0 * float(t[-1]), 5):
        a0 = float(np.sum(z * np.exp(-t / tau)) / np.sum(np.exp(-2 * t / tau)))
        starts.append((a0, tau))

    best = None
    for a0, tau0 in starts:
        res = _lm(fun, jac, np.array([a0, math.log(tau0)]), t.size)
        if best is None or res.cost < best.cost:
            best = res
    a, tau = float(best.x[0]), float(math.exp(best.x[1]))
    cov = _covariance(best, weighted, t.size)
    sd_a = float(math.sqrt(max(cov[0, 0], 0.0)))
    sd_tau = float(tau * math.sqrt(max(cov[1, 1], 0.0)))
    converged = bool(best.status > 0)
    diagnostic = best.message
    if tau > _TAU_DIVERGENCE * span or not math.isfinite(tau):
        converged = False
        diagnostic = f"no decay resolved: tau diverges (tau = {tau:.3g} s over a {span:.3g} s span)"
    elif not converged:
        diagnostic = f"no convergence within {MAX_ITER} iterations: {best.message}"
    return FitResult(
        params={"A": a, "tau": tau},
        std_errs={"A": sd_a, "tau": sd_tau},
        residual_norm=float(np.linalg.norm(best.fun)),
        converged=converged,
        diagnostic=diagnostic,
        input_digest=series.digest(),
    )


_IZ_WEIGHTS = np.diag([-1.0, 0.0, 0.0, 1.0])  # constant 1 drops out of the error
_XY_WEIGHTS = np.diag([0.0, 0.5, 0.5, 0.0])


def _chi_combinations(chi, sigma):
    chi = np.real(np.asarray(chi))
    iz = 1.0 - (chi[0, 0] - chi[3, 3])
    xy = 0.5 * (chi[1, 1] + chi[2, 2])
    if sigma is None:
        return iz, xy, 0.0, 0.0
    if isinstance(sigma, dict):
        return iz, xy, float(sigma["IZ"]), float(sigma["XY"])
    s = np.asarray(sigma, dtype=float)
    s_iz = math.hypot(s[0, 0], s[3, 3])
    s_xy = 0.5 * math.hypot(s[1, 1], s[2, 2])
    return iz, xy, s_iz, s_xy


def _series_digest(rows) -> str:
    blob = json.dumps([[t, np.real(c).round(15).tolist()] for t, c, _ in rows]).encode()
    return hashlib.sha256(blob).hexdigest()


def fit_t1t2(chi_series) -> FitResult:
    """Joint fit of ``T1`` and ``T2`` to a chi-matrix time series.

    Parameters
    ----------
    chi_series : sequence of ``(t, chi, sigma)``
        ``sigma`` is None (unweighted), a (4, 4) array of per-element
        standard errors of ``Re chi``, or a dict with keys ``"IZ"`` and
        ``"XY"`` giving the combination errors directly.

    Notes
    -----
    The fit runs unconstrained in the rates ``1/T1`` and ``1/T2``, so pure
    dephasing is reachable; a non-positive ``1/T1`` is reported as
    ``T1 = inf`` with ``flags["T1_unbounded"]``.
    """
    rows = sorted(((float(t), c, s) for t, c, s in chi_series), key=lambda r: r[0])
    if len(rows) < 3:
        raise ValueError("fit_t1t2 needs at least 3 time points")
    t = np.array([r[0] for r in rows])
    if np.any(np.diff(t) <= 0):
        raise ValueError("time points must be distinct")
    comb = np.array([_chi_combinations(c, s) for _, c, s in rows])
    iz, xy, s_iz, s_xy = comb.T
    w_iz, weighted = _weights(s_iz)
    w_xy, weighted_xy = _weights(s_xy)
    if weighted != weighted_xy:
        raise ValueError("sigma must be given for both combinations or neither")
    scale = float(np.max(np.abs(np.concatenate([iz, 4 * xy]))))
    if scale < 1e-12:
        raise ValueError("degenerate series: neither chi_IZ nor chi_XY decays")

    t_ref = float(t[-1])

    def fun(x):
        g1, g2 = x / t_ref
        return np.concatenate([
            w_iz * (1.0 - np.exp(-g2 * t) - iz),
            w_xy * (0.25 * (1.0 - np.exp(-g1 * t)) - xy),
        ])

    def jac(x):
        g1, g2 = x / t_ref
        j = np.zeros((2 * t.size, 2))
        j[: t.size, 1] = w_iz * t / t_ref * np.exp(-g2 * t)
        j[t.size:, 0] = w_xy * 0.25 * t / t_ref * np.exp(-g1 * t)
        return j

    # start from the per-point linearised rates
    with np.errstate(divide="ignore", invalid="ignore"):
        g2_0 = np.nanmedian(-np.log(np.clip(1.0 - iz, 1e-12, None)) / t)
        g1_0 = np.nanmedian(-np.log(np.clip(1.0 - 4.0 * xy, 1e-12, None)) / t)
    x0 = np.clip(np.nan_to_num([g1_0 * t_ref, g2_0 * t_ref]), 1e-6, 1e3)
    res = _lm(fun, jac, x0, 2 * t.size)
    if res.status <= 0:
        raise ConvergenceError(f"T1/T2 fit did not converge: {res.message}",
                               residual=float(np.linalg.norm(res.fun)))
    cov = _covariance(res, weighted, 2 * t.size)
    g1, g2 = res.x / t_ref
    sg1, sg2 = np.sqrt(np.clip(np.diag(cov), 0.0, None)) / t_ref
    # a non-positive rate means the combination does not decay over the data
    flags = {"T1_unbounded": bool(g1 * t_ref <= 1e-9), "T2_unbounded": bool(g2 * t_ref <= 1e-9)}

    def to_time(g, sg, unbounded):
        if unbounded:
            return math.inf, math.inf
        return float(1.0 / g), float(sg / g**2)

    T1, sT1 = to_time(g1, sg1, flags["T1_unbounded"])
    T2, sT2 = to_time(g2, sg2, flags["T2_unbounded"])
    diag = "; ".join(f"{k.split('_')[0]} unbounded: combination shows no decay" for k, v in flags.items() if v)
    return FitResult(
        params={"T1": T1, "T2": T2, "gamma1": float(g1), "gamma2": float(g2)},
        std_errs={"T1": sT1, "T2": sT2, "gamma1": float(sg1), "gamma2": float(sg2)},
        residual_norm=float(np.linalg.norm(res.fun)),
        converged=True,
        diagnostic=diag or res.message,
        flags=flags,
        input_digest=_series_digest(rows),
    )


def _model_sigma(ds: TomographyDataset, T1: float, T2: float) -> dict[str, float]:
    """Combination errors from the cell probabilities the fitted model predicts."""
    from .channel import MemoryChannelParams, memory_channel
    from .simexp import CELLS, true_ones_probabilities
    from .tomo import combination_sigma

    p_true = true_ones_probabilities(memory_channel(MemoryChannelParams(ds.storage_time, T1, T2), tol=1.0))
    vis = ds.readout.visibility
    se = np.zeros((4, 3))
    for k, cell in enumerate(CELLS):
        p = float(np.clip(ds.readout.corrupt(p_true[cell]), 1e-12, 1.0 - 1e-12))
        se[k // 3, k % 3] = 2.0 * math.sqrt(p * (1.0 - p) / ds.records[cell][0]) / vis
    return {"IZ": combination_sigma(se, _IZ_WEIGHTS), "XY": combination_sigma(se, _XY_WEIGHTS)}


def fit_t1t2_from_datasets(datasets, use_raw: bool = True, reweight_iter: int = 3) -> FitResult:
    """Reconstruct each tomography dataset and fit ``T1``/``T2``.

    With ``use_raw`` the fit sees the linear-inversion chi before CPTP
    projection.  That estimate is unbiased; the projection clips the small
    ``chi_XX``/``chi_YY`` elements at short storage times and would bias
    ``chi_XY`` upward.

    Finite-shot data are fitted by iteratively reweighted least squares:
    the weights come from the binomial errors of the cell probabilities
    predicted by the current fit.  Weights derived from the observed
    frequencies would correlate with the noise and bias the rates.
    """
    from .tomo import reconstruct

    reps = [reconstruct(ds) for ds in datasets]
    chis = [r.raw_chi if use_raw else r.chi for r in reps]
    rows = [(ds.storage_time, c, None) for ds, c in zip(datasets, chis)]
    fit = fit_t1t2(rows)
    if all(ds.is_exact for ds in datasets):
        return fit
    for _ in range(reweight_iter):
        rows = [(ds.storage_time, c, _model_sigma(ds, fit.params["T1"], fit.params["T2"]))
                for ds, c in zip(datasets, chis)]
        fit = fit_t1t2(rows)
    return fit


def fit_t1t2_bootstrap(datasets, n_resamples: int = 200, rng=0, threads: int = 1,
                       use_raw: bool = True) -> tuple[FitResult, "BootstrapResult"]:
    """:func:`fit_t1t2_from_datasets` plus parametric-bootstrap errors.

    The bootstrap spread is taken on the rates ``1/T1`` and ``1/T2``, which
    stay finite when a replica shows no decay, and mapped to the times with
    ``sd(T) = sd(gamma) / gamma**2``.
    """
    fit = fit_t1t2_from_datasets(datasets, use_raw=use_raw)
    boot = bootstrap_uncertainty(
        lambda d: {k: v for k, v in fit_t1t2_from_datasets(d, use_raw=use_raw).params.items()
                   if k.startswith("gamma")},
        list(datasets), n_resamples, rng, threads,
    )
    bse = dict(boot.std_errs)
    for tk, gk in (("T1", "gamma1"), ("T2", "gamma2")):
        g = fit.params[gk]
        bse[tk] = bse[gk] / g**2 if g > 0 else math.inf
    fit.bootstrap_std_errs = bse
    return fit, boot


@dataclass
class BootstrapResult:
    std_errs: dict[str, float]
    n_resamples: int
    n_failures: int
    valid: bool
    samples: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    failure_messages: list[str] = field(repr=False, default_factory=list)

    def to_json(self) -> dict:
        return {
            "std_errs": {k: float(v) for k, v in self.std_errs.items()},
            "n_resamples": self.n_resamples,
            "n_failures": self.n_failures,
            "valid": self.valid,
        }


_RESAMPLE_ERRORS = (ValueError, ConvergenceError, PhysicalityError, np.linalg.LinAlgError)
MAX_FAILURE_FRACTION = 0.10


def _resample(data, rng):
    if isinstance(data, TomographyDataset):
        return resample_dataset(data, rng)
    return [resample_dataset(d, rng) for d in data]


def bootstrap_uncertainty(procedure: Callable, dataset, n_resamples: int = 200, rng=0,
                          threads: int = 1) -> BootstrapResult:
    """Parametric bootstrap of a full analysis pipeline.

    Parameters
    ----------
    procedure : callable
        Maps a dataset (or list of datasets, matching ``dataset``) to a
        :class:`FitResult` or a dict of named floats.
    dataset : TomographyDataset or sequence of them
        Replicas redraw every cell binomially at its observed frequency.
    n_resamples : int
        At least 100.
    rng : int or numpy.random.Generator
        Master seed; replica ``i`` uses its own substream, so the result
        does not depend on ``threads``.
    """
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    master = master_seed(rng)

    def one(i):
        try:
            out = procedure(_resample(dataset, substream(master, i)))
        except _RESAMPLE_ERRORS as exc:
            return None, f"replica {i}: {exc}"
        if isinstance(out, FitResult):
            if not out.converged:
                return None, f"replica {i}: {out.diagnostic}"
            out = out.params
        return {k: float(v) for k, v in out.items()}, None

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, range(n_resamples)))
    else:
        results = [one(i) for i in range(n_resamples)]
    good = [r for r, _ in results if r is not None]
    fails = [m for _, m in results if m is not None]
    samples = {k: np.array([g[k] for g in good]) for k in (good[0] if good else {})}
    std = {k: float(np.std(v, ddof=1)) if v.size > 1 else math.nan for k, v in samples.items()}
    valid = len(fails) <= MAX_FAILURE_FRACTION * n_resamples and len(good) > 1
    return BootstrapResult(std, n_resamples, len(fails), valid, samples, fails)
