"""Zero-field electron/14N Hamiltonian, rotating frame and RWA drive terms.

All frequencies are angular (rad/s).  The lab-frame Hamiltonian is diagonal
in the product basis::

    H = D0 Sz^2 - Q Iz^2 - A Sz Iz

The rotating frame removes ``omega_mw Sz^2 - omega_rf Iz^2``, so resonant
carriers (``omega_mw = D0``, ``omega_rf = Q``) leave only the hyperfine term.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hilbert import basis_index, embed, expm_propagator, qutrit_ket, spin1_operators, LEVELS

TWO_PI = 2 * np.pi

D0_DEFAULT = TWO_PI * 2.88e9
Q_DEFAULT = TWO_PI * 4.95e6
A_DEFAULT = TWO_PI * 2.17e6

MW_CAP_DEFAULT = TWO_PI * 10e6
RF_CAP_DEFAULT = TWO_PI * 50e3

CHANNELS = (
    "mw_plus_re",
    "mw_plus_im",
    "mw_minus_re",
    "mw_minus_im",
    "rf_plus_re",
    "rf_plus_im",
    "rf_minus_re",
    "rf_minus_im",
)
MW_CHANNELS = (0, 1, 2, 3)
RF_CHANNELS = (4, 5, 6, 7)


@dataclass(frozen=True)
class StaticParams:
    D0: float = D0_DEFAULT
    Q: float = Q_DEFAULT
    A: float = A_DEFAULT

    def __post_init__(self):
        for name in ("D0", "Q", "A"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be finite and strictly positive, got {value}")


@dataclass(frozen=True)
class FrameSpec:
    omega_mw: float
    omega_rf: float

    def __post_init__(self):
        if not (np.isfinite(self.omega_mw) and np.isfinite(self.omega_rf)):
            raise ValueError("carrier frequencies must be finite")

    @classmethod
    def resonant(cls, p: StaticParams) -> FrameSpec:
        return cls(omega_mw=p.D0, omega_rf=p.Q)


def _caps_default() -> np.ndarray:
    return np.array([MW_CAP_DEFAULT] * 4 + [RF_CAP_DEFAULT] * 4)


@dataclass(frozen=True, eq=False)
class ControlSet:
    """Piecewise-constant drive amplitudes, shape ``(8, n_slices)`` in rad/s.

    Channel order follows :data:`CHANNELS`.  The complex Rabi frequency of
    each polarization is ``re + 1j * im``.
    """

    amplitudes: np.ndarray
    dt: float

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=float)
        if amps.ndim != 2 or amps.shape[0] != len(CHANNELS):
            raise ValueError(f"amplitudes must have shape (8, n_slices), got {amps.shape}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("control amplitudes must be finite")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n_slices(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def duration(self) -> float:
        return self.n_slices * self.dt

    @classmethod
    def zeros(cls, n_slices: int, dt: float) -> ControlSet:
        return cls(np.zeros((len(CHANNELS), n_slices)), dt)

    def with_amplitudes(self, amplitudes: np.ndarray) -> ControlSet:
        return ControlSet(amplitudes, self.dt)

    def within_caps(self, caps=None, tol: float = 1e-9) -> bool:
        caps = _caps_default() if caps is None else np.asarray(caps, dtype=float)
        return bool(np.all(np.abs(self.amplitudes) <= caps[:, None] * (1 + tol)))

    def refine(self, factor: int = 2) -> ControlSet:
        """Split every slice into ``factor`` equal slices of the same amplitude."""
        return ControlSet(np.repeat(self.amplitudes, factor, axis=1), self.dt / factor)

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "n_slices": self.n_slices,
            "channels": [
                {"name": name, "amplitudes": [float(a) for a in row]}
                for name, row in zip(CHANNELS, self.amplitudes)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> ControlSet:
        n = int(data["n_slices"])
        amps = np.zeros((len(CHANNELS), n))
        seen = set()
        for ch in data["channels"]:
            name = ch["name"]
            if name not in CHANNELS:
                raise ValueError(f"unknown control channel {name!r}")
            if name in seen:
                raise ValueError(f"duplicate control channel {name!r}")
            seen.add(name)
            row = np.asarray(ch["amplitudes"], dtype=float)
            if row.shape != (n,):
                raise ValueError(f"channel {name!r} has {row.size} amplitudes, expected {n}")
            amps[CHANNELS.index(name)] = row
        return cls(amps, float(data["dt"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> ControlSet:
        return cls.from_dict(json.loads(Path(path).read_text()))


def static_hamiltonian(p: StaticParams) -> np.ndarray:
    _, _, sz = spin1_operators()
    s_z, i_z = embed(sz, "electron"), embed(sz, "nitrogen")
    return p.D0 * s_z @ s_z - p.Q * i_z @ i_z - p.A * s_z @ i_z


def diagonal_entry(p: StaticParams, m_s: int, m_i: int) -> float:
    """Energy of ``|m_s, m_I>`` evaluated straight from the scalar formula."""
    return p.D0 * m_s**2 - p.Q * m_i**2 - p.A * m_s * m_i


def rotating_hamiltonian(p: StaticParams, f: FrameSpec) -> np.ndarray:
    _, _, sz = spin1_operators()
    s_z, i_z = embed(sz, "electron"), embed(sz, "nitrogen")
    return (p.D0 - f.omega_mw) * s_z @ s_z - (p.Q - f.omega_rf) * i_z @ i_z - p.A * s_z @ i_z


def _transition_pair(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit-coupling Re/Im generators for the |0> <-> |m> transition of one qutrit."""
    up = np.outer(qutrit_ket(m), qutrit_ket(0))
    re = (up + up.conj().T) / 2
    im = (1j * up + (1j * up).conj().T) / 2
    return re, im


def control_hamiltonians() -> list[np.ndarray]:
    """RWA generators in :data:`CHANNELS` order."""
    ops = []
    for slot in ("electron", "nitrogen"):
        for m in (1, -1):
            re, im = _transition_pair(m)
            ops.append(embed(re, slot))
            ops.append(embed(im, slot))
    return ops


_CONTROLS = np.array(control_hamiltonians())


def slice_hamiltonians(cs: ControlSet, h_drift: np.ndarray) -> np.ndarray:
    """Stack of per-slice generators, shape ``(n_slices, 9, 9)``."""
    return h_drift[None] + np.einsum("kj,kab->jab", cs.amplitudes, _CONTROLS)


def slice_propagators(cs: ControlSet, h_drift: np.ndarray):
    """Per-slice eigendecompositions and propagators.

    Returns ``(evals, evecs, props)`` with ``props[j] = exp(-i dt H_j)``.
    """
    hs = slice_hamiltonians(cs, h_drift)
    evals, evecs = np.linalg.eigh(hs)
    phases = np.exp(-1j * cs.dt * evals)
    props = np.einsum("jab,jb,jcb->jac", evecs, phases, evecs.conj())
    return evals, evecs, props


def propagate(cs: ControlSet, p: StaticParams, f: FrameSpec | None = None) -> np.ndarray:
    """Total propagator ``U_N ... U_1`` of a piecewise-constant pulse."""
    f = FrameSpec.resonant(p) if f is None else f
    h0 = rotating_hamiltonian(p, f)
    if cs.n_slices == 0:
        return np.eye(9, dtype=complex)
    _, _, props = slice_propagators(cs, h0)
    u = np.eye(9, dtype=complex)
    for uj in props:
        u = uj @ u
    return u


def free_evolution(p: StaticParams, f: FrameSpec, t: float) -> np.ndarray:
    return expm_propagator(rotating_hamiltonian(p, f), t)


def drive_amplitudes(
    rabi: float, theta: float = 0.0, phi: float = 0.0, phase: float = 0.0, band: str = "mw"
) -> np.ndarray:
    """Channel vector for a drive coupling ``|0>`` to a bright state.

    The bright state is ``cos(theta/2)|+1> + exp(i phi) sin(theta/2)|-1>`` of
    the driven qutrit, with Rabi angular frequency ``rabi`` and overall drive
    phase ``phase``.
    """
    plus = rabi * np.cos(theta / 2) * np.exp(1j * phase)
    minus = rabi * np.sin(theta / 2) * np.exp(1j * (phase + phi))
    vec = np.zeros(len(CHANNELS))
    offset = 0 if band == "mw" else 4
    vec[offset : offset + 4] = [plus.real, plus.imag, minus.real, minus.imag]
    return vec


def constant_pulse(vec: np.ndarray, duration: float, n_slices: int = 1) -> ControlSet:
    return ControlSet(np.repeat(np.asarray(vec, dtype=float)[:, None], n_slices, axis=1), duration / n_slices)


__all__ = [
    "CHANNELS",
    "ControlSet",
    "FrameSpec",
    "LEVELS",
    "StaticParams",
    "basis_index",
    "control_hamiltonians",
    "diagonal_entry",
    "drive_amplitudes",
    "propagate",
    "rotating_hamiltonian",
    "static_hamiltonian",
]
