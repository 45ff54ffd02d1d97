"""
Single-qubit state algebra.

States are plain ``numpy`` arrays: a density matrix is a ``(2, 2)`` complex
array and a Bloch vector is a length-3 real array ``(rx, ry, rz)`` with
``rho = (I + rx X + ry Y + rz Z) / 2``.  Entropies are in bits.
"""
from __future__ import annotations

import numpy as np

#: Absolute tolerance for Hermiticity, trace and positivity checks.
TOL = 1e-9

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = np.stack([I2, X, Y, Z])

KET0 = np.array([1, 0], dtype=complex)
KET1 = np.array([0, 1], dtype=complex)


def projector(ket) -> np.ndarray:
    ket = np.asarray(ket, dtype=complex)
    ket = ket / np.linalg.norm(ket)
    return np.outer(ket, ket.conj())


def validate_density(rho, tol: float = TOL) -> np.ndarray:
    """Return ``rho`` as a complex array, raising ``ValueError`` if it is not
    a valid qubit density matrix within ``tol``."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ValueError(f"density matrix must be 2x2, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > tol:
        raise ValueError(f"density matrix trace is {tr!r}, expected 1")
    lam_min = np.linalg.eigvalsh(rho).min()
    if lam_min < -tol:
        raise ValueError(f"density matrix has negative eigenvalue {lam_min:.3e}")
    return rho


def density_from_bloch(v, tol: float = TOL) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"Bloch vector must have 3 components, got shape {v.shape}")
    norm = np.linalg.norm(v)
    if norm > 1.0 + tol:
        raise ValueError(f"Bloch vector norm {norm:.12g} exceeds 1")
    return 0.5 * (I2 + v[0] * X + v[1] * Y + v[2] * Z)


def bloch_from_density(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    return np.array([
        2.0 * rho[0, 1].real,
        -2.0 * rho[0, 1].imag,
        (rho[0, 0] - rho[1, 1]).real,
    ])


def haar_random_bloch(rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Bloch vectors of Haar-random pure states.

    ``rz`` is uniform on [-1, 1] and the azimuth uniform on [0, 2 pi), which
    is exactly the uniform measure on the sphere.  Returns shape ``(3,)`` if
    ``n`` is None, else ``(n, 3)``.
    """
    size = 1 if n is None else n
    rz = rng.uniform(-1.0, 1.0, size)
    az = rng.uniform(0.0, 2.0 * np.pi, size)
    rho_xy = np.sqrt(np.clip(1.0 - rz * rz, 0.0, None))
    v = np.column_stack([rho_xy * np.cos(az), rho_xy * np.sin(az), rz])
    return v[0] if n is None else v


def haar_random_pure(rng: np.random.Generator) -> np.ndarray:
    """A Haar-random pure qubit state as a density matrix."""
    v = haar_random_bloch(rng)
    # renormalise so the state is pure to rounding
    return density_from_bloch(v / np.linalg.norm(v))


def purity(rho) -> float:
    rho = np.asarray(rho, dtype=complex)
    return float(np.real(np.trace(rho @ rho)))


def _entropy_from_eigs(lam) -> np.ndarray:
    lam = np.clip(lam, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(lam > 0.0, -lam * np.log2(np.where(lam > 0, lam, 1.0)), 0.0)
    return terms.sum(axis=-1)


def von_neumann_entropy(rho, tol: float = TOL) -> float:
    """``S(rho) = -sum_i lam_i log2 lam_i`` with ``0 log 0 = 0``."""
    rho = np.asarray(rho, dtype=complex)
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if lam.min() < -tol:
        raise ValueError(f"negative eigenvalue {lam.min():.3e} in entropy argument")
    return float(_entropy_from_eigs(lam))


def binary_entropy(p):
    """``H2(p)`` in bits, elementwise."""
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    return _entropy_from_eigs(np.stack([p, 1.0 - p], axis=-1))


def dephase(rho) -> np.ndarray:
    """Diagonal part of ``rho`` in the computational basis."""
    rho = np.asarray(rho, dtype=complex)
    return np.diag(np.diag(rho))


def state_fidelity(rho_in, rho_out, tol: float = 1e-6) -> float:
    """Overlap ``Tr(rho_in rho_out)`` for a pure input state.

    This is the pure-input fidelity only; mixed inputs raise ``ValueError``.
    """
    rho_in = np.asarray(rho_in, dtype=complex)
    rho_out = np.asarray(rho_out, dtype=complex)
    p = purity(rho_in)
    if abs(p - 1.0) > tol:
        raise ValueError(f"input state must be pure (purity {p:.9g})")
    f = float(np.real(np.trace(rho_in @ rho_out)))
    return min(max(f, 0.0), 1.0)
