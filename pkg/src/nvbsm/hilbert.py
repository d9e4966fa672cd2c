"""Spin-1 operators and the 9-dimensional electron-nitrogen space.

Both qutrits use the level ordering (+1, 0, -1); the electron is the major
index, so ``index = 3 * ord(m_s) + ord(m_I)``.  The logical two-qubit
subspace spanned by ``|+-1, +-1>`` therefore sits at indices 0, 2, 6, 8.
"""

from __future__ import annotations

from typing import Literal

import numpy as np

Slot = Literal["electron", "nitrogen"]

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10

LEVELS = (1, 0, -1)
LOGICAL_INDICES = (0, 2, 6, 8)
LOGICAL_LABELS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def level_index(m: int) -> int:
    """Position of the spin projection ``m`` in the (+1, 0, -1) ordering."""
    try:
        return LEVELS.index(m)
    except ValueError:
        raise ValueError(f"spin-1 projection must be one of +1, 0, -1, got {m!r}") from None


def basis_index(m_s: int, m_i: int) -> int:
    return 3 * level_index(m_s) + level_index(m_i)


def basis_label(index: int) -> tuple[int, int]:
    if not 0 <= index < 9:
        raise ValueError(f"basis index out of range: {index}")
    return LEVELS[index // 3], LEVELS[index % 3]


def ket(m_s: int, m_i: int) -> np.ndarray:
    v = np.zeros(9, dtype=complex)
    v[basis_index(m_s, m_i)] = 1.0
    return v


def qutrit_ket(m: int) -> np.ndarray:
    v = np.zeros(3, dtype=complex)
    v[level_index(m)] = 1.0
    return v


def spin1_operators() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(Sx, Sy, Sz)`` for spin 1 in the (+1, 0, -1) basis."""
    s = 1 / np.sqrt(2)
    sx = s * np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex)
    sy = s * np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex)
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    return sx, sy, sz


def embed(op: np.ndarray, slot: Slot) -> np.ndarray:
    """Lift a single-qutrit operator into the joint space."""
    op = np.asarray(op)
    if op.shape != (3, 3):
        raise ValueError(f"expected a 3x3 operator, got shape {op.shape}")
    eye = np.eye(3, dtype=complex)
    if slot == "electron":
        return np.kron(op, eye)
    if slot == "nitrogen":
        return np.kron(eye, op)
    raise ValueError(f"unknown slot {slot!r}")


def projector(m: int, slot: Slot) -> np.ndarray:
    """Projector onto spin projection ``m`` of one qutrit, identity on the other."""
    v = qutrit_ket(m)
    return embed(np.outer(v, v.conj()), slot)


def logical_projector() -> np.ndarray:
    p = np.zeros((9, 9), dtype=complex)
    p[LOGICAL_INDICES, LOGICAL_INDICES] = 1.0
    return p


def subspace_projector(labels) -> np.ndarray:
    """Projector onto the span of the given ``(m_s, m_I)`` basis labels."""
    p = np.zeros((9, 9), dtype=complex)
    for m_s, m_i in labels:
        k = basis_index(m_s, m_i)
        p[k, k] = 1.0
    return p


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return bool(np.max(np.abs(m - m.conj().T), initial=0.0) <= tol)


def is_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    eye = np.eye(u.shape[0])
    return bool(np.max(np.abs(u.conj().T @ u - eye), initial=0.0) <= tol)


def expm_propagator(h: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i H t)`` for Hermitian ``H`` via eigendecomposition."""
    h = np.asarray(h, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(h), initial=0.0)))
    if not is_hermitian(h, HERMITIAN_TOL * scale):
        raise ValueError("generator is not Hermitian")
    evals, evecs = np.linalg.eigh(h)
    return (evecs * np.exp(-1j * evals * t)) @ evecs.conj().T


def density(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def is_density_matrix(rho: np.ndarray, tol: float = 1e-10) -> bool:
    if abs(np.trace(rho) - 1) > tol or not is_hermitian(rho, tol):
        return False
    return bool(np.linalg.eigvalsh(rho).min() >= -tol)


def fidelity(rho: np.ndarray, psi: np.ndarray) -> float:
    """State fidelity ``<psi| rho |psi>`` against a normalized pure target."""
    psi = np.asarray(psi, dtype=complex)
    if abs(np.vdot(psi, psi).real - 1) > 1e-10:
        raise ValueError("target state is not normalized")
    f = np.vdot(psi, rho @ psi).real
    return float(min(1.0, max(0.0, f)))


def partial_trace(rho: np.ndarray, keep: Slot) -> np.ndarray:
    r = np.asarray(rho).reshape(3, 3, 3, 3)
    if keep == "electron":
        return np.einsum("ijkj->ik", r)
    if keep == "nitrogen":
        return np.einsum("ijil->jl", r)
    raise ValueError(f"unknown slot {keep!r}")


def apply_unitary(u: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return u @ rho @ u.conj().T


def logical_block(m: np.ndarray) -> np.ndarray:
    """Restrict a 9x9 matrix to the 4x4 logical block."""
    idx = np.array(LOGICAL_INDICES)
    return np.asarray(m)[np.ix_(idx, idx)]


def from_logical(m4: np.ndarray) -> np.ndarray:
    """Place a 4x4 logical-block matrix into the joint 9x9 space."""
    out = np.zeros((9, 9), dtype=complex)
    idx = np.array(LOGICAL_INDICES)
    out[np.ix_(idx, idx)] = m4
    return out


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(0.5 * np.abs(np.linalg.eigvalsh(a - b)).sum())
