"""
Process tomography: linear inversion of a :class:`~qmemory.simexp.TomographyDataset`
into a PTM / chi matrix, followed by projection onto CPTP maps when the
estimate is unphysical.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .errors import ConvergenceError
from .qstate import TOL
from .simexp import BASES, CELLS, INPUT_BLOCH, INPUT_STATES, TomographyDataset

# rows: inputs (0, 1, +, +i); columns: (1, ax, ay, az)
_DESIGN = np.array([[1.0, *INPUT_BLOCH[s]] for s in INPUT_STATES])
_DESIGN_PINV = np.linalg.pinv(_DESIGN)
_DESIGN_COND = np.linalg.cond(_DESIGN)


@dataclass
class ReconstructionReport:
    ptm: np.ndarray
    chi: np.ndarray
    physical: bool
    projection_distance: float
    storage_time: float = 0.0
    raw_chi: np.ndarray | None = None
    chi_sigma: np.ndarray | None = None
    clamped_cells: list[tuple[str, str]] = field(default_factory=list)
    expectation_se: np.ndarray | None = None

    def to_json(self) -> dict:
        out = {
            "storage_time_s": self.storage_time,
            "physical_before_projection": self.physical,
            "projection_distance": self.projection_distance,
            "clamped_cells": [list(c) for c in self.clamped_cells],
            **ch.chi_to_json(self.chi),
            "ptm": np.asarray(self.ptm).tolist(),
        }
        if self.raw_chi is not None:
            out["raw_chi"] = ch.chi_to_json(self.raw_chi)["chi"]
        if self.chi_sigma is not None:
            out["chi_sigma"] = np.asarray(self.chi_sigma).tolist()
        return out


def _expectations(ds: TomographyDataset):
    """Unclamped readout-corrected <B> per cell and their standard errors."""
    vis = ds.readout.visibility
    if vis <= 0:
        raise ValueError("eps0 + eps1 >= 1: readout is not invertible")
    ev = np.empty((len(INPUT_STATES), len(BASES)))
    se = np.zeros_like(ev)
    clamped = []
    for (s, b) in CELLS:
        i, j = INPUT_STATES.index(s), BASES.index(b)
        p_meas = ds.measured_p((s, b))
        p1 = (p_meas - ds.readout.eps0) / vis
        if p1 < 0.0 or p1 > 1.0:
            clamped.append((s, b))
        ev[i, j] = 1.0 - 2.0 * p1
        if not ds.is_exact:
            shots = ds.records[(s, b)][0]
            se[i, j] = 2.0 * np.sqrt(p_meas * (1.0 - p_meas) / shots) / vis
    return ev, se, clamped


def ptm_from_expectations(ev) -> np.ndarray:
    """Least-squares affine Bloch map from the four canonical inputs.

    ``ev[k, i]`` is ``<sigma_i>`` of the output for input ``k``.
    """
    if _DESIGN_COND > 1e8:
        raise np.linalg.LinAlgError("tomography design matrix is ill-conditioned")
    coef = _DESIGN_PINV @ np.asarray(ev, dtype=float)  # (4, 3): rows (1, ax, ay, az)
    ptm = np.zeros((4, 4))
    ptm[0, 0] = 1.0
    ptm[1:, 0] = coef[0]
    ptm[1:, 1:] = coef[1:].T
    return ptm


# Hermitian-matrix coordinates used by the projection: an orthonormal real
# basis of 4x4 Hermitian matrices under the Frobenius inner product.
def _herm_basis(d):
    out = []
    for i in range(d):
        m = np.zeros((d, d), dtype=complex)
        m[i, i] = 1.0
        out.append(m)
    for i in range(d):
        for j in range(i + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[i, j] = m[j, i] = 1 / np.sqrt(2)
            out.append(m)
            m = np.zeros((d, d), dtype=complex)
            m[i, j], m[j, i] = -1j / np.sqrt(2), 1j / np.sqrt(2)
            out.append(m)
    return np.array(out)


_HB4 = _herm_basis(4)
_HB2 = _herm_basis(2)
# linear TP map in coordinates: x (16) -> coordinates of sum chi_mn E_n E_m (4)
_TP_A = np.array([
    [np.real(np.trace(h2.conj().T @ (ch.tp_residual(h4) + np.eye(2)))) for h4 in _HB4]
    for h2 in _HB2
])
_TP_B = np.array([np.real(np.trace(h2.conj().T @ np.eye(2))) for h2 in _HB2])
_TP_A_PINV = np.linalg.pinv(_TP_A)


def _to_coords(chi):
    return np.real(np.einsum("kab,ab->k", _HB4.conj(), chi))


def _from_coords(x):
    return np.einsum("k,kab->ab", x, _HB4)


def _project_tp(x):
    return x - _TP_A_PINV @ (_TP_A @ x - _TP_B)


def _project_psd(x):
    chi = _from_coords(x)
    lam, vec = np.linalg.eigh(0.5 * (chi + chi.conj().T))
    return _to_coords((vec * np.clip(lam, 0.0, None)) @ vec.conj().T)


def project_chi_physical(chi, tol: float = TOL, max_iter: int = 500) -> np.ndarray:
    """Frobenius-nearest CPTP chi matrix via Dykstra's alternating projections
    between the PSD cone and the trace-preserving affine set."""
    chi = np.asarray(chi, dtype=complex)
    chi = 0.5 * (chi + chi.conj().T)
    if ch.is_cptp(chi, tol):
        return chi
    x = _project_tp(_to_coords(chi))
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    resid = np.inf
    for _ in range(max_iter):
        y = _project_psd(x + p)
        p = x + p - y
        x_new = _project_tp(y + q)
        q = y + q - x_new
        resid = float(np.linalg.norm(x_new - y))
        step = float(np.linalg.norm(x_new - x))
        x = x_new
        if resid < tol and step < tol:
            break
    else:
        raise ConvergenceError(
            f"CPTP projection did not converge in {max_iter} iterations (residual {resid:.3e})",
            residual=resid,
        )
    out = _from_coords(x)
    return 0.5 * (out + out.conj().T)


def project_physical(ptm, tol: float = TOL, max_iter: int = 500) -> np.ndarray:
    """Nearest CPTP chi matrix (Frobenius distance in chi space) to ``ptm``."""
    return project_chi_physical(ch.ptm_to_chi(ptm), tol=tol, max_iter=max_iter)


def _build_chi_jacobian():
    # chi is linear in the expectation table: d chi / d ev[k, i]
    zero = ptm_from_expectations(np.zeros((len(INPUT_STATES), len(BASES))))
    jac = np.zeros((len(INPUT_STATES), len(BASES), 4, 4))
    for k in range(len(INPUT_STATES)):
        for i in range(len(BASES)):
            unit = np.zeros((len(INPUT_STATES), len(BASES)))
            unit[k, i] = 1.0
            jac[k, i] = np.real(ch.ptm_to_chi(ptm_from_expectations(unit) - zero))
    return jac


_CHI_JAC = _build_chi_jacobian()


def _chi_sigma(se) -> np.ndarray:
    """Per-element standard error of Re(chi), ignoring cell correlations."""
    return np.sqrt(np.einsum("ki,kimn->mn", np.asarray(se) ** 2, _CHI_JAC**2))


def combination_sigma(se, weights) -> float:
    """Standard error of ``sum_mn weights[m, n] Re chi[m, n]`` with exact
    propagation through the linear inversion (cells independent)."""
    grad = np.einsum("kimn,mn->ki", _CHI_JAC, np.asarray(weights, dtype=float))
    return float(np.sqrt(np.sum((np.asarray(se) * grad) ** 2)))


def reconstruct(ds: TomographyDataset, tol: float = TOL, project: bool = True) -> ReconstructionReport:
    """Linear-inversion process tomography with optional CPTP projection."""
    ev, se, clamped = _expectations(ds)
    ptm = ptm_from_expectations(ev)
    raw = ch.ptm_to_chi(ptm)
    physical = bool(ch.is_cptp(raw, tol))
    chi = raw
    if project and not physical:
        chi = project_chi_physical(raw, tol=tol)
    return ReconstructionReport(
        ptm=ch.chi_to_ptm(chi),
        chi=chi,
        physical=physical,
        projection_distance=float(np.linalg.norm(chi - raw)),
        storage_time=ds.storage_time,
        raw_chi=raw,
        chi_sigma=_chi_sigma(se),
        clamped_cells=clamped,
        expectation_se=se,
    )
