"""
Qubit channels in the chi-matrix and Pauli-transfer-matrix pictures.

The operator basis is ``(I, X, Y, Z)`` throughout.  A chi matrix is a
``(4, 4)`` complex Hermitian array with

    eps(rho) = sum_mn chi[m, n] E_m rho E_n^dagger,

and the Pauli transfer matrix (PTM) is the real ``(4, 4)`` array
``R[i, j] = Tr(sigma_i eps(sigma_j)) / 2``.  Both are plain numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PhysicalityError
from .qstate import PAULIS, TOL

BASIS_LABEL = "IXYZ"

# _PTM_TENSOR[i, j, m, n] = Tr(s_i E_m s_j E_n) / 2; R = einsum(ijmn, mn)
_PTM_TENSOR = 0.5 * np.einsum("iab,mbc,jcd,nda->ijmn", PAULIS, PAULIS, PAULIS, PAULIS)
_PTM_MAP = _PTM_TENSOR.reshape(16, 16)
_PTM_MAP_INV = np.linalg.inv(_PTM_MAP)

# _TP_TENSOR[m, n] = E_n^dagger E_m  (2x2 each)
_TP_TENSOR = np.einsum("nab,mbc->mnac", PAULIS, PAULIS)


@dataclass(frozen=True)
class MemoryChannelParams:
    """Storage time ``t`` and the depolarizing/dephasing times ``T1``/``T2``
    (all in seconds)."""

    t: float
    T1: float
    T2: float

    def __post_init__(self):
        if not self.t >= 0:
            raise PhysicalityError(f"storage time must be >= 0, got {self.t}")
        if not (self.T1 > 0 and self.T2 > 0):
            raise PhysicalityError(f"T1 and T2 must be positive, got {self.T1}, {self.T2}")


def memory_channel(p: MemoryChannelParams, tol: float = TOL) -> np.ndarray:
    """Diagonal dephasing + depolarizing chi matrix at storage time ``p.t``."""
    e1 = np.exp(-p.t / p.T1)
    e2 = np.exp(-p.t / p.T2)
    diag = np.array([
        (1.0 + 2.0 * e2 + e1) / 4.0,
        (1.0 - e1) / 4.0,
        (1.0 - e1) / 4.0,
        (1.0 - 2.0 * e2 + e1) / 4.0,
    ])
    for k, d in enumerate(diag):
        if d < -tol:
            lbl = BASIS_LABEL[k]
            raise PhysicalityError(
                f"chi[{lbl}{lbl}] = {d:.3e} < 0: need 2 exp(-t/T2) <= 1 + exp(-t/T1) "
                f"(t={p.t}, T1={p.T1}, T2={p.T2})"
            )
    return np.diag(np.clip(diag, 0.0, None)).astype(complex)


def identity_chi() -> np.ndarray:
    chi = np.zeros((4, 4), dtype=complex)
    chi[0, 0] = 1.0
    return chi


def depolarizing_chi() -> np.ndarray:
    """The fully depolarizing channel ``rho -> I/2``."""
    return np.eye(4, dtype=complex) / 4.0


def unitary_chi(u) -> np.ndarray:
    """Chi matrix of conjugation by the 2x2 unitary ``u``."""
    u = np.asarray(u, dtype=complex)
    c = 0.5 * np.einsum("mab,ba->m", PAULIS, u)  # u = sum_m c_m E_m
    return np.outer(c, c.conj())


def chi_from_kraus(kraus) -> np.ndarray:
    coeffs = 0.5 * np.einsum("mab,kba->km", PAULIS, np.asarray(kraus, dtype=complex))
    return np.einsum("km,kn->mn", coeffs, coeffs.conj())


def random_cptp_chi(rng: np.random.Generator, rank: int = 4) -> np.ndarray:
    """A random CPTP chi matrix from a Haar-random isometry with ``rank``
    Kraus operators."""
    g = rng.normal(size=(2 * rank, 2)) + 1j * rng.normal(size=(2 * rank, 2))
    q, r = np.linalg.qr(g)
    q = q * (np.diag(r) / np.abs(np.diag(r)))
    kraus = q.reshape(rank, 2, 2)
    return chi_from_kraus(kraus)


def apply(chi, rho) -> np.ndarray:
    """Act with ``chi`` on a density matrix (or a stack of them).

    The output is not renormalised; use :func:`is_cptp` to detect a
    non-trace-preserving chi.
    """
    chi = np.asarray(chi, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    return np.einsum("mn,mab,...bc,ndc->...ad", chi, PAULIS, rho, PAULIS.conj())


def apply_checked(chi, rho, tol: float = 1e-9) -> np.ndarray:
    """:func:`apply` for a single state, raising if the output trace is off."""
    out = apply(chi, rho)
    tr = np.trace(out).real
    if abs(tr - 1.0) > tol:
        raise PhysicalityError(f"channel output has trace {tr:.12g}; chi is not trace preserving")
    return out


def chi_to_ptm(chi) -> np.ndarray:
    chi = np.asarray(chi, dtype=complex)
    return (_PTM_MAP @ chi.reshape(16)).reshape(4, 4).real


def ptm_to_chi(ptm) -> np.ndarray:
    ptm = np.asarray(ptm, dtype=float)
    chi = (_PTM_MAP_INV @ ptm.reshape(16).astype(complex)).reshape(4, 4)
    return 0.5 * (chi + chi.conj().T)


def process_fidelity(chi) -> float:
    """Overlap with the identity process, ``Re chi[0, 0]``."""
    return float(np.real(np.asarray(chi)[0, 0]))


def tp_residual(chi) -> np.ndarray:
    """``sum_mn chi_mn E_n^dagger E_m - I`` as a 2x2 array."""
    return np.einsum("mn,mnac->ac", np.asarray(chi, dtype=complex), _TP_TENSOR) - np.eye(2)


@dataclass
class CPTPReport:
    ok: bool
    hermitian_error: float
    min_eigenvalue: float
    tp_error: float
    trace: float
    violations: list[str] = field(default_factory=list)

    def __bool__(self):
        return self.ok


def is_cptp(chi, tol: float = TOL) -> CPTPReport:
    chi = np.asarray(chi, dtype=complex)
    herm = float(np.max(np.abs(chi - chi.conj().T)))
    lam = float(np.linalg.eigvalsh(0.5 * (chi + chi.conj().T)).min())
    tp = float(np.max(np.abs(tp_residual(chi))))
    tr = float(np.trace(chi).real)
    violations = []
    if herm > tol:
        violations.append(f"not Hermitian (max |chi - chi^dagger| = {herm:.3e})")
    if lam < -tol:
        violations.append(f"negative eigenvalue {lam:.3e} (not completely positive)")
    if abs(tr - 1.0) > tol:
        violations.append(f"trace violation: Tr(chi) = {tr:.12g}")
    if tp > tol:
        violations.append(f"not trace preserving (max TP residual {tp:.3e})")
    return CPTPReport(not violations, herm, lam, tp, tr, violations)


def compose(chi_a, chi_b) -> np.ndarray:
    """Chi matrix of ``eps_a o eps_b`` (``eps_b`` acts first)."""
    return ptm_to_chi(chi_to_ptm(chi_a) @ chi_to_ptm(chi_b))


def chi_to_json(chi) -> dict:
    chi = np.asarray(chi, dtype=complex)
    return {
        "basis": BASIS_LABEL,
        "chi": [[[float(z.real), float(z.imag)] for z in row] for row in chi],
    }


def chi_from_json(obj: dict) -> np.ndarray:
    if obj.get("basis") != BASIS_LABEL:
        raise ValueError(f"unsupported chi basis {obj.get('basis')!r}")
    arr = np.asarray(obj["chi"], dtype=float)
    if arr.shape != (4, 4, 2):
        raise ValueError(f"chi must be 4x4 [re, im] pairs, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def ptm_to_json(ptm) -> dict:
    return {"basis": BASIS_LABEL, "ptm": np.asarray(ptm, dtype=float).tolist()}


def ptm_from_json(obj: dict) -> np.ndarray:
    if obj.get("basis") != BASIS_LABEL:
        raise ValueError(f"unsupported PTM basis {obj.get('basis')!r}")
    arr = np.asarray(obj["ptm"], dtype=float)
    if arr.shape != (4, 4):
        raise ValueError(f"PTM must be 4x4, got shape {arr.shape}")
    return arr
