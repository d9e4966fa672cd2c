"""Holonomic gates and the Bell-measurement circuit stages.

The logical qubit of each spin is ``{|+1>, |-1>}`` and is only reachable
through the ``|0>`` ancilla.  A drive coupling ``|0>`` to the bright state
``|b>`` for a full 2*pi Rabi cycle multiplies ``|0>`` and ``|b>`` by -1 and
leaves the dark state alone, which on the logical pair is the reflection
``I - 2|b><b|``.

Population transfers are written in pi-rotation form
(``|a> -> -i|b>``, ``|b> -> -i|a>``).  Unlike a bare swap this has unit
determinant, so it is reachable with the traceless RWA drives.

Every stage is a list of :class:`PulseStep` primitives, each realizable by
one shaped pulse.  Stage unitaries are the ordered product of their steps.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np

from .grape import OptConfig, OptResult, TargetSpec, optimize, pulse_fidelity, random_controls
from .hamiltonian import (
    MW_CHANNELS,
    RF_CHANNELS,
    ControlSet,
    FrameSpec,
    StaticParams,
    constant_pulse,
    drive_amplitudes,
    propagate,
)
from .hilbert import (
    LOGICAL_INDICES,
    basis_index,
    density,
    embed,
    ket,
    logical_projector,
    qutrit_ket,
    subspace_projector,
)

log = logging.getLogger(__name__)

Slot = Literal["electron", "nitrogen"]
Band = Literal["mw", "rf"]

BELL_LABELS = ("phi+", "phi-", "psi+", "psi-")

# (duration, slices) of the default pulse grids
MW_GRID = (2e-6, 100)
RF_GRID = (500e-6, 100)


class SynthesisError(RuntimeError):
    """A stage was asked for its pulse realization before synthesis."""


@dataclass(frozen=True)
class BrightState:
    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if not 0 <= self.theta <= np.pi + 1e-12:
            raise ValueError(f"theta must lie in [0, pi], got {self.theta}")

    def vector(self) -> np.ndarray:
        """Bright state in the (+1, 0, -1) qutrit basis."""
        return np.array([np.cos(self.theta / 2), 0.0, np.exp(1j * self.phi) * np.sin(self.theta / 2)])

    def dark(self) -> np.ndarray:
        return np.array([-np.exp(-1j * self.phi) * np.sin(self.theta / 2), 0.0, np.cos(self.theta / 2)])

    @classmethod
    def from_vector(cls, v) -> BrightState:
        """Bright state along the logical 2-vector ``v = (c_plus, c_minus)`` (any phase)."""
        v = np.asarray(v, dtype=complex)
        v = v / np.linalg.norm(v)
        theta = 2 * np.arccos(min(1.0, abs(v[0])))
        phi = float(np.angle(v[1]) - np.angle(v[0])) % (2 * np.pi) if abs(v[1]) > 1e-15 else 0.0
        return cls(float(theta), phi)


X_BRIGHT = BrightState(np.pi / 2, np.pi)
HADAMARD_BRIGHT = BrightState(3 * np.pi / 4, np.pi)


def reflection3(b: BrightState) -> np.ndarray:
    """Single-qutrit unitary of a 2*pi cycle on ``{|0>, |b>}``."""
    v = b.vector()
    zero = qutrit_ket(0)
    return np.eye(3) - 2 * np.outer(zero, zero) - 2 * np.outer(v, v.conj())


def transfer3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pi rotation between orthonormal qutrit states ``a`` and ``b``."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    pa, pb = np.outer(a, a.conj()), np.outer(b, b.conj())
    return np.eye(3) - pa - pb - 1j * (np.outer(a, b.conj()) + np.outer(b, a.conj()))


def conditional(op: np.ndarray, slot: Slot, control: int) -> np.ndarray:
    """Apply ``op`` to ``slot`` only when the other spin sits at level ``control``."""
    other = "nitrogen" if slot == "electron" else "electron"
    c = qutrit_ket(control)
    pc = np.outer(c, c.conj())
    if slot == "electron":
        return np.kron(op, pc) + np.kron(np.eye(3), np.eye(3) - pc)
    return np.kron(pc, op) + np.kron(np.eye(3) - pc, np.eye(3))


def holonomy_reflection(b: BrightState, spin: Slot) -> np.ndarray:
    return embed(reflection3(b), spin)


def logical_x3() -> np.ndarray:
    x = np.zeros((3, 3), dtype=complex)
    x[0, 2] = x[2, 0] = 1
    x[1, 1] = 1
    return x


def cnot_ideal() -> np.ndarray:
    """Electron logical NOT conditioned on ``m_I = -1``."""
    return conditional(logical_x3(), "electron", -1)


@dataclass(frozen=True, eq=False)
class PulseStep:
    """One pulse-realizable primitive.

    ``projector`` is ``None`` for steps synthesized against the full 9x9
    target.  ``guess`` optionally seeds the optimizer with a square pulse
    ``(rotation_angle, bright_state)`` on the step's band.
    """

    key: str
    ideal: np.ndarray
    band: Band
    projector: np.ndarray | None = None
    guess: tuple[float, BrightState] | None = None

    def target(self) -> TargetSpec:
        return TargetSpec.unitary(self.ideal, self.projector)


@dataclass(frozen=True, eq=False)
class GateStage:
    label: str
    steps: tuple[PulseStep, ...]
    projector: np.ndarray
    pulses: tuple[ControlSet, ...] = ()

    @property
    def ideal(self) -> np.ndarray:
        u = np.eye(9, dtype=complex)
        for s in self.steps:
            u = s.ideal @ u
        return u

    def inverse_ideal(self) -> np.ndarray:
        return self.ideal.conj().T

    def with_pulses(self, library: PulseLibrary) -> GateStage:
        return replace(self, pulses=tuple(library[s.key] for s in self.steps))


# ---------------------------------------------------------------- stage builders

_SIX = [(ms, mi) for ms in (1, 0, -1) for mi in (1, -1)]


def shelve_step(m: int, inverse: bool = False) -> PulseStep:
    """Unconditional electron transfer ``|m>_e <-> |0>_e`` (or its inverse)."""
    op = transfer3(qutrit_ket(m), qutrit_ket(0))
    if inverse:
        op = op.conj().T
    key = f"{'unshelve' if inverse else 'shelve'}_e{m:+d}"
    return PulseStep(key, embed(op, "electron"), "mw", subspace_projector(_SIX))


def nitrogen_holonomy_step(b: BrightState, key: str) -> PulseStep:
    """RF 2*pi cycle on the nitrogen, resonant only in the ``m_s = 0`` manifold."""
    ideal = conditional(reflection3(b), "nitrogen", 0)
    return PulseStep(key, ideal, "rf", subspace_projector(_SIX), guess=(2 * np.pi, b))


def nitrogen_reflection_sequence(b: BrightState, label: str = "hadamard_N", key: str | None = None) -> GateStage:
    """Shelve each electron logical level through ``|0>_e`` and reflect the nitrogen there."""
    key = key or f"rf_holonomy_t{b.theta:.6f}_p{b.phi:.6f}"
    holo = nitrogen_holonomy_step(b, key)
    steps = []
    for m in (1, -1):
        steps += [shelve_step(m), holo, shelve_step(m, inverse=True)]
    return GateStage(label, tuple(steps), logical_projector())


def hadamard_N_sequence() -> GateStage:
    return nitrogen_reflection_sequence(HADAMARD_BRIGHT, "hadamard_N", "rf_holonomy_hadamard")


def cnot_stage() -> GateStage:
    step = PulseStep("cnot", cnot_ideal(), "mw", logical_projector())
    return GateStage("cnot", (step,), logical_projector())


def electron_reflection_stage(b: BrightState, key: str) -> GateStage:
    step = PulseStep(key, holonomy_reflection(b, "electron"), "mw")
    return GateStage("rotation_e", (step,), logical_projector())


def disentangle_stages() -> tuple[GateStage, GateStage]:
    return cnot_stage(), hadamard_N_sequence()


def disentangle_ideal() -> np.ndarray:
    cnot, had = disentangle_stages()
    return had.ideal @ cnot.ideal


def mw_conditional_transfer(m_s: int, m_i: int) -> PulseStep:
    """``|m_s, m_i> <-> |0, m_i>``; the other nitrogen levels are untouched."""
    op = transfer3(qutrit_ket(m_s), qutrit_ket(0))
    return PulseStep(f"mw_transfer_e{m_s:+d}_n{m_i:+d}", conditional(op, "electron", m_i), "mw")


def rf_conditional_transfer(vec: np.ndarray, key: str) -> PulseStep:
    """``|0, 0> <-> |0, vec>`` for a nitrogen vector in the logical span."""
    vec = np.asarray(vec, dtype=complex)
    op = transfer3(vec, qutrit_ket(0))
    bright = BrightState.from_vector([vec[0], vec[2]])
    return PulseStep(key, conditional(op, "nitrogen", 0), "rf", guess=(np.pi, bright))


def map_basis_to_readout(target: tuple[int, int]) -> GateStage:
    """Move the logical basis state ``target`` into ``|0, 0>``."""
    m_s, m_i = target
    if m_s not in (1, -1) or m_i not in (1, -1):
        raise ValueError(f"readout mapping needs a logical basis label, got {target}")
    rf = rf_conditional_transfer(qutrit_ket(m_i), f"rf_transfer_n{m_i:+d}")
    steps = (mw_conditional_transfer(m_s, m_i), rf)
    return GateStage("map_to_readout", steps, subspace_projector(list(_LOGICAL_LABELS) + [(0, 0)]))


_LOGICAL_LABELS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def reinit_stage() -> GateStage:
    """MW pi pulse returning the ``|+1, 0>`` leak branch to ``|0, 0>``."""
    step = mw_conditional_transfer(1, 0)
    return GateStage("reinit", (step,), subspace_projector([(1, 0), (0, 0)]))


def bell_prep_stage(which: str) -> GateStage:
    """RF transfer into the nitrogen superposition, then two m_I-selective MW transfers."""
    if which not in BELL_LABELS:
        raise ValueError(f"unknown Bell state {which!r}")
    sign = 1 if which.endswith("+") else -1
    nvec = (qutrit_ket(1) + sign * qutrit_ket(-1)) / np.sqrt(2)
    rf = rf_conditional_transfer(nvec, f"rf_transfer_bell{'+' if sign > 0 else '-'}")
    if which.startswith("phi"):
        pairs = ((1, 1), (-1, -1))
    else:
        pairs = ((-1, 1), (1, -1))
    steps = (rf,) + tuple(mw_conditional_transfer(ms, mi) for ms, mi in pairs)
    return GateStage("prep", steps, subspace_projector([(0, 0)]))


def bell_vector(which: str) -> np.ndarray:
    """The Bell state as a 9-vector."""
    s = 1 / np.sqrt(2)
    table = {
        "phi+": ((1, 1), (-1, -1), 1),
        "phi-": ((1, 1), (-1, -1), -1),
        "psi+": ((1, -1), (-1, 1), 1),
        "psi-": ((1, -1), (-1, 1), -1),
    }
    if which not in table:
        raise ValueError(f"unknown Bell state {which!r}")
    a, b, sign = table[which]
    return s * (ket(*a) + sign * ket(*b))


# published chain: Bell state -> computational basis after CNOT and Hadamard
BELL_TO_BASIS = {
    "phi+": (1, 1),
    "phi-": (1, -1),
    "psi+": (-1, 1),
    "psi-": (-1, -1),
}


def prepare_bell(which: str, via: str = "ideal", library: PulseLibrary | None = None,
                 p: StaticParams | None = None, f: FrameSpec | None = None) -> np.ndarray:
    """Density matrix of the Bell state produced from ``|0, 0>``."""
    stage = bell_prep_stage(which)
    if via == "pulse":
        stage = stage.with_pulses(_require(library))
    u = realize_stage(stage, via, p, f)
    psi = u @ ket(0, 0)
    return density(psi)


def _require(library):
    if library is None:
        raise SynthesisError("pulse mode needs a synthesized PulseLibrary")
    return library


def realize_stage(stage: GateStage, via: str = "ideal", p: StaticParams | None = None,
                  f: FrameSpec | None = None) -> np.ndarray:
    if via == "ideal":
        return stage.ideal
    if via != "pulse":
        raise ValueError(f"unknown realization {via!r}")
    if len(stage.pulses) != len(stage.steps):
        raise SynthesisError(f"stage {stage.label!r} has no pulse synthesis")
    p = StaticParams() if p is None else p
    u = np.eye(9, dtype=complex)
    for cs in stage.pulses:
        u = propagate(cs, p, f) @ u
    return u


def stage_fidelity(u: np.ndarray, stage: GateStage) -> float:
    """Subspace gate fidelity of ``u`` against the stage's ideal unitary."""
    return pulse_fidelity_of(u, stage.ideal, stage.projector)


def pulse_fidelity_of(u: np.ndarray, target: np.ndarray, projector: np.ndarray | None) -> float:
    if projector is None:
        projector = np.eye(9)
    rank = np.real(np.trace(projector))
    g = np.trace(projector @ target.conj().T @ u @ projector)
    return float(abs(g) ** 2 / rank**2)


# ---------------------------------------------------------------- pulse synthesis


class PulseLibrary(dict):
    """Synthesized pulses keyed by :attr:`PulseStep.key`."""

    def save(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for key in sorted(self):
            path = directory / f"{key}.json"
            self[key].save(path)
            paths.append(path)
        return paths

    @classmethod
    def load(cls, directory) -> PulseLibrary:
        lib = cls()
        for path in sorted(Path(directory).glob("*.json")):
            lib[path.stem] = ControlSet.load(path)
        return lib


@dataclass(frozen=True)
class SynthesisConfig:
    mw_grid: tuple[float, int] = MW_GRID
    rf_grid: tuple[float, int] = RF_GRID
    opt: OptConfig = field(default_factory=lambda: OptConfig(max_iters=2000, fid_goal=0.9999))
    init_scale: float = 0.3
    seed: int = 0


def initial_controls(step: PulseStep, cfg: SynthesisConfig) -> ControlSet:
    duration, n = cfg.mw_grid if step.band == "mw" else cfg.rf_grid
    dt = duration / n
    if step.guess is not None:
        angle, bright = step.guess
        vec = drive_amplitudes(angle / duration, bright.theta, bright.phi, band=step.band)
        return constant_pulse(vec, duration, n)
    rng = np.random.default_rng([cfg.seed, zlib.crc32(step.key.encode())])
    opt = replace(cfg.opt, channels=MW_CHANNELS if step.band == "mw" else RF_CHANNELS)
    return random_controls(n, dt, rng, opt, scale=cfg.init_scale)


def synthesize_step(step: PulseStep, cfg: SynthesisConfig = SynthesisConfig(),
                    p: StaticParams | None = None, f: FrameSpec | None = None) -> OptResult:
    p = StaticParams() if p is None else p
    channels = MW_CHANNELS if step.band == "mw" else RF_CHANNELS
    opt = replace(cfg.opt, channels=channels)
    cs0 = initial_controls(step, cfg)
    result = optimize(cs0, step.target(), opt, p, f)
    log.info("synthesized %s: fidelity=%.6f status=%s iters=%d", step.key, result.fidelity,
             result.status, result.iterations)
    return result


def synthesize(stages, library: PulseLibrary | None = None, cfg: SynthesisConfig = SynthesisConfig(),
               p: StaticParams | None = None, f: FrameSpec | None = None) -> tuple[PulseLibrary, dict]:
    """Fill ``library`` with pulses for every step of ``stages`` not yet present.

    Returns the library and a ``{key: OptResult}`` map of newly run syntheses.
    """
    library = PulseLibrary() if library is None else library
    results = {}
    for stage in stages:
        for step in stage.steps:
            if step.key in library:
                continue
            res = synthesize_step(step, cfg, p, f)
            library[step.key] = res.controls
            results[step.key] = res
    return library, results


def bsm_stages() -> list[GateStage]:
    """Every stage the disentangle-and-read pipeline touches."""
    stages = list(disentangle_stages())
    stages += [map_basis_to_readout(lbl) for lbl in _LOGICAL_LABELS]
    stages.append(reinit_stage())
    return stages
