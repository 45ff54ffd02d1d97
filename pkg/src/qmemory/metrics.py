"""
Coherence quantifiers for qubit states and channels.

Monte Carlo estimators draw Haar-random pure inputs as uniform Bloch
vectors and push them through the channel's Pauli transfer matrix, which
keeps every sample a closed-form expression in the output Bloch vector.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq

from . import channel as ch
from .errors import PhysicalityError
from .qstate import TOL, binary_entropy, dephase, haar_random_bloch, validate_density, von_neumann_entropy

RQM_OFFDIAG_THRESHOLD = 0.05
REC_THRESHOLD = 0.01


@dataclass(frozen=True)
class MetricSample:
    value: float
    std_err: float
    n_samples: int
    threshold_used: float | None = None

    def __post_init__(self):
        if not self.std_err >= 0:
            raise ValueError(f"std_err must be >= 0, got {self.std_err}")

    def to_json(self, name: str | None = None) -> dict:
        out = asdict(self)
        if name is not None:
            out = {"metric": name, **out}
        return out


def _require_cptp(chi, tol=1e-7):
    rep = ch.is_cptp(chi, tol)
    if not rep:
        raise PhysicalityError("; ".join(rep.violations))


def _mc_summary(samples, threshold=None) -> MetricSample:
    n = samples.size
    std = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return MetricSample(float(samples.mean()), std, int(n), threshold)


def _apply_ptm(ptm, r):
    """Affine Bloch map ``r -> t + M r`` for a stack of Bloch vectors."""
    return ptm[1:, 0] + r @ ptm[1:, 1:].T


def mean_fidelity_formula(F_p: float) -> float:
    """Input-averaged fidelity ``(2 F_p + 1) / 3`` of a qubit channel."""
    if not -TOL <= F_p <= 1 + TOL:
        raise ValueError(f"process fidelity must lie in [0, 1], got {F_p}")
    return (2.0 * F_p + 1.0) / 3.0


def mean_fidelity_mc(chi, n: int, rng) -> MetricSample:
    """Monte Carlo mean of ``Tr(rho eps(rho))`` over ``n`` Haar-random pure states."""
    _require_cptp(chi)
    rng = np.random.default_rng(rng)
    r = haar_random_bloch(rng, n)
    out = _apply_ptm(ch.chi_to_ptm(chi), r)
    f = 0.5 * (1.0 + np.einsum("ij,ij->i", r, out))
    return _mc_summary(f)


def rqm(chi, offdiag_threshold: float = RQM_OFFDIAG_THRESHOLD) -> float:
    """Robustness of quantum memory in the near-diagonal limit, ``max(2 F_p - 1, 0)``.

    Raises
    ------
    PhysicalityError
        If the Frobenius norm of the off-diagonal part of ``chi`` exceeds
        ``offdiag_threshold``; the diagonal simplification does not hold then.
    """
    chi = np.asarray(chi, dtype=complex)
    off = float(np.linalg.norm(chi - np.diag(np.diag(chi))))
    if off > offdiag_threshold:
        raise PhysicalityError(
            f"off-diagonal chi norm {off:.3e} exceeds {offdiag_threshold}: "
            "the diagonal RQM formula is not applicable"
        )
    return max(2.0 * ch.process_fidelity(chi) - 1.0, 0.0)


def memory_channel_rqm(t, T1: float, T2: float):
    """Model RQM of the memory channel, vectorised over ``t``."""
    t = np.asarray(t, dtype=float)
    fp = (1.0 + 2.0 * np.exp(-t / T2) + np.exp(-t / T1)) / 4.0
    return np.maximum(2.0 * fp - 1.0, 0.0)


def rqm_zero_time(T1: float, T2: float) -> float:
    """Storage time at which the model RQM first reaches zero.

    Solves ``2 exp(-t/T2) + exp(-t/T1) = 1``; the left side is strictly
    decreasing from 3 to 0 so the root is unique.
    """
    if not (T1 > 0 and T2 > 0):
        raise ValueError("T1 and T2 must be positive")
    g = lambda t: 2.0 * np.exp(-t / T2) + np.exp(-t / T1) - 1.0  # noqa: E731
    hi = 10.0 * max(T1, T2)
    return float(brentq(g, 0.0, hi, xtol=1e-12, rtol=1e-15))


def rec(rho, tol: float = TOL) -> float:
    """Relative entropy of coherence ``S(Delta(rho)) - S(rho)`` in bits."""
    rho = validate_density(rho, tol)
    val = von_neumann_entropy(dephase(rho)) - von_neumann_entropy(rho)
    return max(float(val), 0.0)


def _rec_bloch(r):
    # qubit REC from the Bloch vector: H2((1+rz)/2) - H2((1+|r|)/2)
    norm = np.minimum(np.linalg.norm(r, axis=-1), 1.0)
    val = binary_entropy(0.5 * (1.0 + r[..., 2])) - binary_entropy(0.5 * (1.0 + norm))
    return np.maximum(val, 0.0)


def mean_rec_ratio(chi, n: int, threshold: float = REC_THRESHOLD, rng=None) -> MetricSample:
    """Mean of ``C(eps(rho)) / C(rho)`` over Haar pure inputs with ``C(rho) > threshold``.

    Inputs below the threshold are rejected and redrawn, so exactly ``n``
    ratios enter the mean.
    """
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    if n < 1:
        raise ValueError("n must be >= 1")
    _require_cptp(chi)
    rng = np.random.default_rng(rng)
    ptm = ch.chi_to_ptm(chi)
    kept, c_in = [], []
    have = 0
    while have < n:
        r = haar_random_bloch(rng, max(n - have, 64))
        c = binary_entropy(0.5 * (1.0 + r[:, 2]))
        mask = c > threshold
        kept.append(r[mask])
        c_in.append(c[mask])
        have += int(mask.sum())
    r = np.concatenate(kept)[:n]
    c = np.concatenate(c_in)[:n]
    ratio = _rec_bloch(_apply_ptm(ptm, r)) / c
    return _mc_summary(ratio, threshold)
