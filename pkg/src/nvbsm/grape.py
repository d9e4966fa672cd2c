"""Gradient ascent pulse engineering on the 9-level drive model.

Fidelities are written as ``|Tr(U W)|^2 / r^2`` for a weight matrix ``W``:

* full unitary:     ``W = U_target^dag``,        ``r = 9``
* subspace unitary: ``W = P U_target^dag``,      ``r = rank(P)``
* state transfer:   ``W = |start><target|``,     ``r = 1``

Per-slice derivatives are exact: with ``H_j = V diag(E) V^dag`` the
derivative of ``exp(-i dt H_j)`` along ``H_k`` is
``V (Gamma o (V^dag (-i dt H_k) V)) V^dag`` where ``Gamma`` holds the divided
differences of ``exp(-i dt E)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .hamiltonian import (
    CHANNELS,
    MW_CAP_DEFAULT,
    RF_CAP_DEFAULT,
    ControlSet,
    FrameSpec,
    StaticParams,
    _CONTROLS,
    rotating_hamiltonian,
    slice_propagators,
)

log = logging.getLogger(__name__)

Kind = Literal["full_unitary", "subspace_unitary", "state_transfer"]


@dataclass(frozen=True, eq=False)
class TargetSpec:
    kind: Kind
    target: np.ndarray | None = None
    projector: np.ndarray | None = None
    start: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "state_transfer":
            for name in ("start", "target"):
                v = getattr(self, name)
                if v is None or np.shape(v) != (9,):
                    raise ValueError(f"state transfer needs a 9-vector {name}")
                if abs(np.linalg.norm(v) - 1) > 1e-10:
                    raise ValueError(f"{name} state is not normalized")
        elif self.kind in ("full_unitary", "subspace_unitary"):
            if self.target is None or np.shape(self.target) != (9, 9):
                raise ValueError("unitary targets need a 9x9 target operator")
            if self.kind == "subspace_unitary":
                p = self.projector
                if p is None or np.shape(p) != (9, 9):
                    raise ValueError("subspace target needs a 9x9 projector")
                if np.max(np.abs(p @ p - p)) > 1e-12 or np.max(np.abs(p - p.conj().T)) > 1e-12:
                    raise ValueError("projector must be Hermitian and idempotent")
                block = p @ self.target @ p
                if np.max(np.abs(block.conj().T @ block - p)) > 1e-10:
                    raise ValueError("target is not unitary on the projected subspace")
        else:
            raise ValueError(f"unknown target kind {self.kind!r}")

    @classmethod
    def unitary(cls, target: np.ndarray, projector: np.ndarray | None = None) -> TargetSpec:
        if projector is None:
            return cls("full_unitary", target=np.asarray(target, dtype=complex))
        return cls("subspace_unitary", target=np.asarray(target, dtype=complex),
                   projector=np.asarray(projector, dtype=complex))

    @classmethod
    def transfer(cls, start: np.ndarray, target: np.ndarray) -> TargetSpec:
        return cls("state_transfer", target=np.asarray(target, dtype=complex),
                   start=np.asarray(start, dtype=complex))

    def weight(self) -> tuple[np.ndarray, float]:
        if self.kind == "state_transfer":
            return np.outer(self.start, self.target.conj()), 1.0
        if self.kind == "full_unitary":
            return self.target.conj().T, 9.0
        rank = float(np.real(np.trace(self.projector)).round())
        return self.projector @ self.target.conj().T, rank


@dataclass(frozen=True)
class OptConfig:
    max_iters: int = 500
    step_init: float = 0.1
    fid_goal: float = 0.999
    grad_tol: float = 1e-9
    mw_cap: float = MW_CAP_DEFAULT
    rf_cap: float = RF_CAP_DEFAULT
    penalty_weight: float = 0.0
    step_floor: float = 1e-10
    channels: tuple[int, ...] = tuple(range(len(CHANNELS)))

    def __post_init__(self):
        if not 0 < self.fid_goal <= 1:
            raise ValueError("fid_goal must lie in (0, 1]")
        if self.step_init <= 0:
            raise ValueError("step_init must be positive")
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be non-negative")
        if self.mw_cap <= 0 or self.rf_cap <= 0:
            raise ValueError("amplitude caps must be positive")
        if any(not 0 <= k < len(CHANNELS) for k in self.channels):
            raise ValueError("channel index out of range")

    def caps(self) -> np.ndarray:
        return np.array([self.mw_cap] * 4 + [self.rf_cap] * 4)

    def mask(self) -> np.ndarray:
        m = np.zeros(len(CHANNELS), dtype=bool)
        m[list(self.channels)] = True
        return m


@dataclass
class OptResult:
    controls: ControlSet
    trace: list[float]
    fidelity: float
    status: str
    iterations: int

    @property
    def goal_reached(self) -> bool:
        return self.status == "goal_reached"


def _drift(p: StaticParams, f: FrameSpec | None) -> np.ndarray:
    return rotating_hamiltonian(p, FrameSpec.resonant(p) if f is None else f)


def _overlap(cs: ControlSet, w: np.ndarray, h0: np.ndarray):
    if cs.n_slices == 0:
        return np.trace(w), None
    evals, evecs, props = slice_propagators(cs, h0)
    u = np.eye(9, dtype=complex)
    for uj in props:
        u = uj @ u
    return np.trace(u @ w), (evals, evecs, props)


def pulse_fidelity(cs: ControlSet, t: TargetSpec, p: StaticParams, f: FrameSpec | None = None) -> float:
    w, r = t.weight()
    g, _ = _overlap(cs, w, _drift(p, f))
    return float(abs(g) ** 2 / r**2)


def _divided_differences(evals: np.ndarray, dt: float) -> np.ndarray:
    """``Gamma[j, a, b]`` for ``exp(alpha)`` with ``alpha = -i dt E``."""
    alpha = -1j * dt * evals
    x = alpha[:, :, None] - alpha[:, None, :]
    small = np.abs(x) < 1e-8
    ratio = np.where(small, 1 + x / 2, np.expm1(x) / np.where(small, 1, x))
    return np.exp(alpha)[:, None, :] * ratio


def fidelity_and_gradient(cs: ControlSet, t: TargetSpec, p: StaticParams, f: FrameSpec | None = None):
    """Return ``(phi, grad)`` with ``grad[k, j] = d phi / d u_k(j)``."""
    w, r = t.weight()
    h0 = _drift(p, f)
    n = cs.n_slices
    g, cache = _overlap(cs, w, h0)
    phi = float(abs(g) ** 2 / r**2)
    if n == 0:
        return phi, np.zeros((len(CHANNELS), 0))
    evals, evecs, props = cache

    fwd = np.empty((n, 9, 9), dtype=complex)  # X_{j-1} = U_{j-1} ... U_1
    x = np.eye(9, dtype=complex)
    for j in range(n):
        fwd[j] = x
        x = props[j] @ x
    bwd = np.empty((n, 9, 9), dtype=complex)  # L_j = U_N ... U_{j+1}
    y = np.eye(9, dtype=complex)
    for j in range(n - 1, -1, -1):
        bwd[j] = y
        y = y @ props[j]

    m = fwd @ w[None] @ bwd
    vh = np.conj(np.swapaxes(evecs, 1, 2))
    m_eig = vh @ m @ evecs
    gamma = _divided_differences(evals, cs.dt)
    h_eig = vh[:, None] @ _CONTROLS[None] @ evecs[:, None]
    weights = gamma * np.swapaxes(m_eig, 1, 2)
    dg = -1j * cs.dt * np.einsum("jkab,jab->kj", h_eig, weights, optimize=True)
    grad = 2 * np.real(np.conj(g) * dg) / r**2
    return phi, grad


def pulse_gradient(cs: ControlSet, t: TargetSpec, p: StaticParams, f: FrameSpec | None = None) -> np.ndarray:
    return fidelity_and_gradient(cs, t, p, f)[1]


def finite_difference_gradient(cs, t, p, f=None, rel_step: float = 1e-6, knobs=None) -> np.ndarray:
    """Central finite differences, optionally restricted to ``knobs`` ``[(k, j), ...]``."""
    amps = np.array(cs.amplitudes)
    scale = max(float(np.max(np.abs(amps), initial=0.0)), 1.0)
    h = rel_step * scale
    out = np.full(amps.shape, np.nan)
    if knobs is None:
        knobs = [(k, j) for k in range(amps.shape[0]) for j in range(amps.shape[1])]
    for k, j in knobs:
        up, dn = amps.copy(), amps.copy()
        up[k, j] += h
        dn[k, j] -= h
        out[k, j] = (pulse_fidelity(cs.with_amplitudes(up), t, p, f)
                     - pulse_fidelity(cs.with_amplitudes(dn), t, p, f)) / (2 * h)
    return out


def _objective(cs, t, cfg, p, f, caps, mask):
    phi, grad = fidelity_and_gradient(cs, t, p, f)
    grad = np.where(mask[:, None], grad, 0.0)
    if cfg.penalty_weight == 0 or cs.n_slices == 0:
        return phi, phi, grad
    scaled = cs.amplitudes / caps[:, None]
    n_knobs = mask.sum() * cs.n_slices
    pen = cfg.penalty_weight * np.sum(scaled[mask] ** 2) / n_knobs
    pen_grad = 2 * cfg.penalty_weight * scaled / caps[:, None] / n_knobs
    return phi - pen, phi, grad - np.where(mask[:, None], pen_grad, 0.0)


def optimize(
    cs0: ControlSet,
    t: TargetSpec,
    cfg: OptConfig = OptConfig(),
    p: StaticParams = StaticParams(),
    f: FrameSpec | None = None,
) -> OptResult:
    """Backtracking gradient ascent.

    Each iteration moves the largest knob by ``step * cap`` along the
    cap-scaled gradient, halving ``step`` until the objective improves.  A
    successful step is doubled for the next iteration.  ``trace`` holds the
    objective after every accepted step, which equals the fidelity when the
    amplitude penalty is zero.
    """
    caps = cfg.caps()
    mask = cfg.mask()
    if not cs0.within_caps(caps):
        raise ValueError("initial controls exceed the amplitude caps")
    amps = np.where(mask[:, None], cs0.amplitudes, 0.0)
    cs = cs0.with_amplitudes(amps)
    obj, phi, grad = _objective(cs, t, cfg, p, f, caps, mask)
    trace = [obj]
    if phi >= cfg.fid_goal:
        return OptResult(cs, trace, phi, "goal_reached", 0)

    step = cfg.step_init
    status = "max_iters"
    it = 0
    while it < cfg.max_iters:
        scaled = grad * caps[:, None]
        gmax = float(np.max(np.abs(scaled), initial=0.0))
        if gmax <= cfg.grad_tol:
            status = "grad_tol"
            break
        direction = scaled * caps[:, None] / gmax
        s = step
        while s >= cfg.step_floor:
            cand = cs.with_amplitudes(np.clip(cs.amplitudes + s * direction, -caps[:, None], caps[:, None]))
            c_obj, c_phi, c_grad = _objective(cand, t, cfg, p, f, caps, mask)
            if c_obj > obj:
                break
            s /= 2
        else:
            status = "stalled"
            break
        it += 1
        cs, obj, phi, grad = cand, c_obj, c_phi, c_grad
        trace.append(obj)
        step = min(2 * s, 1.0)
        if phi >= cfg.fid_goal:
            status = "goal_reached"
            break
    log.debug("grape finished: status=%s iters=%d fidelity=%.8f", status, it, phi)
    return OptResult(cs, trace, phi, status, it)


def random_controls(n_slices: int, dt: float, rng: np.random.Generator, cfg: OptConfig = OptConfig(),
                    scale: float = 0.1) -> ControlSet:
    """Small uniform random starting pulse on the active channels."""
    caps = cfg.caps()
    amps = scale * caps[:, None] * rng.uniform(-1, 1, size=(len(CHANNELS), n_slices))
    return ControlSet(np.where(cfg.mask()[:, None], amps, 0.0), dt)
