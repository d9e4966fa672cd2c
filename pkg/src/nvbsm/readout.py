"""Photon-counting readout, the threshold-cascade Bell measurement and tomography.

Brightness depends only on the electron ``m_s = 0`` manifold.  Count means
are totals accumulated over one repetitive measurement (``n_reps_bsm``
sub-sequences); tomography reads accumulate ``n_reps_qst`` sub-sequences and
scale the means accordingly.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .circuits import (
    BELL_TO_BASIS,
    BrightState,
    PulseLibrary,
    electron_reflection_stage,
    map_basis_to_readout,
    nitrogen_reflection_sequence,
    realize_stage,
    reinit_stage,
)
from .hamiltonian import FrameSpec, StaticParams
from .hilbert import LOGICAL_INDICES, apply_unitary, basis_index, from_logical, logical_block

BSM_ORDER = ("phi+", "psi+", "psi-", "phi-")
LABELS = BSM_ORDER + ("inconclusive",)
BSM_BASES = tuple(BELL_TO_BASIS[lbl] for lbl in BSM_ORDER)

_BRIGHT = np.zeros(9, dtype=bool)
_BRIGHT[[basis_index(0, m) for m in (1, 0, -1)]] = True


class TomographyError(ValueError):
    """Raised when the shot budget cannot condition the inversion."""


@dataclass(frozen=True)
class ReadoutParams:
    lambda_bright: float = 1.8
    lambda_dark: float = 0.3
    n_reps_bsm: int = 25
    n_reps_qst: int = 30
    n_c: int = 1
    p_leak: float = 0.1
    recover_plus_only: bool = True
    p_deph_N: float = 0.0
    seed: int = 0
    phi_minus_by_elimination: bool = False
    sub_repetitions: bool = False

    def __post_init__(self):
        if not self.lambda_bright > self.lambda_dark >= 0:
            raise ValueError("need lambda_bright > lambda_dark >= 0")
        for name in ("p_leak", "p_deph_N"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be a probability, got {v}")
        if self.n_c < 1:
            raise ValueError("n_c must be at least 1")
        if self.n_reps_bsm < 1 or self.n_reps_qst < 1:
            raise ValueError("repetition counts must be positive")

    @property
    def p_loss(self) -> float:
        """Fraction of bright population that ends dark after one read."""
        return self.p_leak / 2 if self.recover_plus_only else 0.0


@dataclass(frozen=True)
class BsmOutcome:
    counts: tuple[int, int, int, int]
    label: str


@dataclass
class TomographyResult:
    rho_hat: np.ndarray
    rho_raw: np.ndarray
    fidelity_to_target: float | None
    settings_used: int
    probabilities: np.ndarray


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent stream for one Monte-Carlo trial."""
    return np.random.default_rng([seed, trial])


# ---------------------------------------------------------------- single shot


def draw_counts(mean: float, rp: ReadoutParams, rng: np.random.Generator, reps: int | None = None) -> int:
    reps = rp.n_reps_bsm if reps is None else reps
    if rp.sub_repetitions:
        return int(rng.poisson(mean / reps, size=reps).sum())
    return int(rng.poisson(mean))


def _leak(rho: np.ndarray, p: float) -> np.ndarray:
    """Move a fraction ``p`` of the ``m_s = 0`` population to ``|-1>_e``, ``m_I`` kept."""
    if p == 0:
        return rho
    b = np.flatnonzero(_BRIGHT)
    dst = b + 3  # |0, m> -> |-1, m>
    moved = np.zeros_like(rho)
    moved[np.ix_(dst, dst)] = rho[np.ix_(b, b)]
    # the leaked branch loses every coherence involving m_s = 0
    kept_dark = rho.copy()
    kept_dark[b, :] = 0
    kept_dark[:, b] = 0
    return (1 - p) * rho + p * (kept_dark + moved)


def _dephase_nitrogen(rho: np.ndarray, p: float) -> np.ndarray:
    if p == 0:
        return rho
    m_i = np.arange(9) % 3
    same = m_i[:, None] == m_i[None, :]
    return np.where(same, rho, (1 - p) * rho)


_PARKED = basis_index(1, 0)
_READOUT = basis_index(0, 0)


def recover_parked(rho: np.ndarray) -> np.ndarray:
    """Return the parked ``|+1, 0>`` population to ``|0, 0>`` (incoherently)."""
    out = rho.copy()
    pop = np.real(rho[_PARKED, _PARKED])
    if pop == 0:
        return out
    out[_PARKED, :] = 0
    out[:, _PARKED] = 0
    out[_READOUT, _READOUT] += pop
    return out


def single_shot(rho: np.ndarray, rp: ReadoutParams, rng: np.random.Generator):
    """One accumulated readout: ``(counts, post-measurement state)``.

    Leak and recovery are folded into one channel: of the fraction
    ``p_leak`` relaxed to ``|+-1>_e`` the ``|+1>`` half is pumped back, so
    ``p_loss`` of the bright population ends in ``|-1, m_I>``.
    """
    pops = np.real(np.diag(rho))
    p0 = float(np.clip(pops[_BRIGHT].sum(), 0.0, 1.0))
    bright = rng.random() < p0
    keep = _BRIGHT if bright else ~_BRIGHT
    out = np.where(keep[:, None] & keep[None, :], rho, 0)
    out = out / np.real(np.trace(out))
    counts = draw_counts(rp.lambda_bright if bright else rp.lambda_dark, rp, rng)
    out = _leak(out, rp.p_loss)
    out = _dephase_nitrogen(out, rp.p_deph_N)
    return counts, out


# ---------------------------------------------------------------- classification


def classify(counts, n_c: int = 1, phi_minus_by_elimination: bool = False) -> str:
    n1, n2, n3, n4 = counts
    if n1 >= n_c:
        return "phi+"
    if n2 >= n_c:
        return "psi+"
    if n3 >= n_c:
        return "psi-"
    if phi_minus_by_elimination or n4 >= n_c:
        return "phi-"
    return "inconclusive"


def poisson_tail(lam: float, n_c: int) -> float:
    """``P(N >= n_c)`` for ``N ~ Poisson(lam)``."""
    cdf = sum(math.exp(-lam) * lam**k / math.factorial(k) for k in range(n_c))
    return 1.0 - cdf


def cascade_probabilities(rp: ReadoutParams, prepared: str) -> np.ndarray:
    """Exact label distribution for an ideally disentangled Bell state.

    Measurements before the matching one read dark.  The matching one and all
    later ones read bright, except that each read leaves a fraction
    ``p_loss`` of the bright population permanently dark.
    Order follows :data:`LABELS`.
    """
    if prepared not in BSM_ORDER:
        raise ValueError(f"unknown preparation {prepared!r}")
    k = BSM_ORDER.index(prepared)
    t_b = poisson_tail(rp.lambda_bright, rp.n_c)
    t_d = poisson_tail(rp.lambda_dark, rp.n_c)
    probs = np.zeros(len(LABELS))
    undecided = {"dark": 1.0}  # branch -> probability mass with no label yet
    for i in range(4):
        nxt = {}
        fire = 0.0
        for branch, mass in undecided.items():
            if branch == "dark" and i == k:
                branch, q = "bright", 1.0
            elif branch == "bright":
                q = 1 - rp.p_loss
            else:
                q = 0.0
            # bright projection with prob q, dark otherwise
            fire += mass * (q * t_b + (1 - q) * t_d)
            if i == 3 and rp.phi_minus_by_elimination:
                continue
            nb = mass * q * (1 - t_b)
            nd = mass * (1 - q) * (1 - t_d)
            if i < k:
                nxt["dark"] = nxt.get("dark", 0.0) + nd
            else:
                nxt["bright"] = nxt.get("bright", 0.0) + nb
                nxt["dead"] = nxt.get("dead", 0.0) + nd
        if i == 3 and rp.phi_minus_by_elimination:
            probs[i] = sum(undecided.values())
            undecided = {}
            break
        probs[i] = fire
        undecided = nxt
    probs[4] = sum(undecided.values())
    return probs


# ---------------------------------------------------------------- Bell measurement


class ReadoutPipeline:
    """Cached unitaries for the four readout blocks.

    A block parks population already held in ``|0, 0>`` on ``|+1, 0>`` with
    the reinit pi pulse, maps the next basis into ``|0, 0>``, returns the
    parked population and reads.  Parking keeps earlier readout population
    out of reach of the electron-conditioned RF transfer, which would
    otherwise carry it into a later MW-addressed level.
    """

    def __init__(self, mode: str = "ideal", library: PulseLibrary | None = None,
                 p: StaticParams | None = None, f: FrameSpec | None = None):
        self.mode = mode
        self.maps = []
        for basis in BSM_BASES:
            stage = map_basis_to_readout(basis)
            if mode == "pulse":
                if library is None:
                    raise ValueError("pulse mode needs a synthesized PulseLibrary")
                stage = stage.with_pulses(library)
            self.maps.append(realize_stage(stage, mode, p, f))
        park = reinit_stage()
        if mode == "pulse":
            park = park.with_pulses(library)
        self.park = realize_stage(park, mode, p, f)

    def run(self, rho: np.ndarray, rp: ReadoutParams, rng: np.random.Generator) -> BsmOutcome:
        counts = []
        for u in self.maps:
            rho = apply_unitary(u @ self.park, rho)
            rho = recover_parked(rho)
            n, rho = single_shot(rho, rp, rng)
            counts.append(n)
        return BsmOutcome(tuple(counts), classify(counts, rp.n_c, rp.phi_minus_by_elimination))


    def branch_tree(self, rho: np.ndarray, rp: ReadoutParams) -> list[np.ndarray]:
        """Bright probability at every node of the four-read outcome tree.

        Entry ``tree[i][b]`` is the probability that read ``i`` is bright given
        the earlier outcomes encoded in the bits of ``b`` (read 0 is the most
        significant bit).  The state after each outcome is deterministic, so
        the tree fixes the whole shot statistics apart from the counts.
        """
        tree = []
        states = [rho]
        for u in self.maps:
            probs = np.empty(len(states))
            nxt = []
            for j, r in enumerate(states):
                r = recover_parked(apply_unitary(u @ self.park, r))
                p0 = float(np.clip(np.real(np.diag(r))[_BRIGHT].sum(), 0.0, 1.0))
                probs[j] = p0
                for keep in (~_BRIGHT, _BRIGHT):
                    out = np.where(keep[:, None] & keep[None, :], r, 0)
                    norm = np.real(np.trace(out))
                    if norm > 1e-15:
                        out = out / norm
                        out = _dephase_nitrogen(_leak(out, rp.p_loss), rp.p_deph_N)
                    nxt.append(out)
            tree.append(probs)
            states = nxt
        return tree


def run_bsm(rho: np.ndarray, rp: ReadoutParams, mode: str = "ideal", rng: np.random.Generator | None = None,
            library: PulseLibrary | None = None, p: StaticParams | None = None,
            f: FrameSpec | None = None) -> BsmOutcome:
    rng = np.random.default_rng(rp.seed) if rng is None else rng
    return ReadoutPipeline(mode, library, p, f).run(rho, rp, rng)


def _draw_block(mean: np.ndarray, rp: ReadoutParams, rng: np.random.Generator) -> np.ndarray:
    if rp.sub_repetitions:
        reps = rp.n_reps_bsm
        return rng.poisson(mean[..., None] / reps, size=mean.shape + (reps,)).sum(axis=-1)
    return rng.poisson(mean)


def _bsm_block(args):
    tree, rp, seed, block, n = args
    rng = np.random.default_rng([seed, block])
    u = rng.random((n, 4))
    node = np.zeros(n, dtype=np.int64)
    bright = np.empty((n, 4), dtype=bool)
    for i in range(4):
        bright[:, i] = u[:, i] < tree[i][node]
        node = 2 * node + bright[:, i]
    counts = _draw_block(np.where(bright, rp.lambda_bright, rp.lambda_dark), rp, rng)
    return counts.astype(np.int64)


BLOCK = 4096


def classify_counts(counts: np.ndarray, n_c: int = 1, phi_minus_by_elimination: bool = False) -> list[str]:
    """Vectorized :func:`classify` over an ``(n, 4)`` count array."""
    fired = np.asarray(counts) >= n_c
    if phi_minus_by_elimination:
        fired[:, 3] = True
    first = np.where(fired.any(axis=1), fired.argmax(axis=1), 4)
    return [LABELS[k] for k in first]


def simulate_bsm(rho: np.ndarray, rp: ReadoutParams, trials: int, pipeline: ReadoutPipeline | None = None,
                 seed: int | None = None, workers: int = 1):
    """Run ``trials`` independent BSM shots; returns ``(counts[trials, 4], labels)``.

    Trials are drawn in fixed blocks of :data:`BLOCK`, block ``b`` using the
    stream seeded by ``(seed, b)``, so the result does not depend on
    ``workers``.
    """
    pipeline = ReadoutPipeline() if pipeline is None else pipeline
    seed = rp.seed if seed is None else seed
    tree = pipeline.branch_tree(rho, rp)
    jobs = [(tree, rp, seed, b, min(BLOCK, trials - s)) for b, s in enumerate(range(0, trials, BLOCK))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_bsm_block, jobs))
    else:
        parts = [_bsm_block(j) for j in jobs]
    counts = np.concatenate(parts) if parts else np.zeros((0, 4), dtype=np.int64)
    return counts, classify_counts(counts, rp.n_c, rp.phi_minus_by_elimination)


def label_frequencies(labels) -> np.ndarray:
    labels = list(labels)
    n = max(len(labels), 1)
    return np.array([labels.count(lbl) / n for lbl in LABELS])


def multinomial_z(freqs: np.ndarray, probs: np.ndarray, trials: int) -> np.ndarray:
    """Per-label deviation in units of the multinomial standard error."""
    sigma = np.sqrt(np.maximum(probs * (1 - probs), 1e-300) / trials)
    z = (freqs - probs) / sigma
    return np.where((probs == 0) & (freqs == 0), 0.0, z)


# ---------------------------------------------------------------- tomography

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
SETTINGS = tuple(itertools.product("XYZ", repeat=2))
# logical outcome order (+1,+1), (+1,-1), (-1,+1), (-1,-1) with eigenvalue signs
_SIGNS = np.array([(1, 1), (1, -1), (-1, 1), (-1, -1)])
_OUTCOMES = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def _eigen_bright(axis: str) -> BrightState | None:
    """Reflection taking the +1 eigenvector of ``axis`` onto ``|+1>``."""
    if axis == "Z":
        return None
    plus = np.array([1, 1]) / np.sqrt(2) if axis == "X" else np.array([1, 1j]) / np.sqrt(2)
    return BrightState.from_vector(plus - np.array([1, 0]))


def setting_rotation(setting, mode: str = "ideal", library: PulseLibrary | None = None,
                     p: StaticParams | None = None, f: FrameSpec | None = None) -> np.ndarray:
    """Pre-rotation unitary that turns a local Pauli setting into the computational basis."""
    a_e, a_n = setting
    u = np.eye(9, dtype=complex)
    b_e, b_n = _eigen_bright(a_e), _eigen_bright(a_n)
    stages = []
    if b_e is not None:
        stages.append(electron_reflection_stage(b_e, f"mw_holonomy_{a_e}"))
    if b_n is not None:
        stages.append(nitrogen_reflection_sequence(b_n, "rotation_N", f"rf_holonomy_{a_n}"))
    for stage in stages:
        if mode == "pulse":
            if library is None:
                raise ValueError("pulse mode needs a synthesized PulseLibrary")
            stage = stage.with_pulses(library)
        u = realize_stage(stage, mode, p, f) @ u
    return u


def tomography_stages():
    stages = []
    for axis in "XY":
        b = _eigen_bright(axis)
        stages.append(electron_reflection_stage(b, f"mw_holonomy_{axis}"))
        stages.append(nitrogen_reflection_sequence(b, "rotation_N", f"rf_holonomy_{axis}"))
    stages += [map_basis_to_readout(o) for o in _OUTCOMES]
    return stages


def exact_setting_probabilities(rho: np.ndarray, mode: str = "ideal", library=None, p=None, f=None) -> np.ndarray:
    """Bright-readout probability of each outcome for all nine settings, shape ``(9, 4)``."""
    maps = _readout_maps(mode, library, p, f)
    out = np.empty((len(SETTINGS), 4))
    for s, setting in enumerate(SETTINGS):
        r = apply_unitary(setting_rotation(setting, mode, library, p, f), rho)
        for o, u in enumerate(maps):
            out[s, o] = np.real(np.diag(apply_unitary(u, r)))[_BRIGHT].sum()
    return out


def _readout_maps(mode, library, p, f):
    maps = []
    for o in _OUTCOMES:
        stage = map_basis_to_readout(o)
        if mode == "pulse":
            stage = stage.with_pulses(library)
        maps.append(realize_stage(stage, mode, p, f))
    return maps


def linear_inversion(probs: np.ndarray) -> np.ndarray:
    """Logical 4x4 density matrix from the ``(9, 4)`` outcome probabilities."""
    probs = np.asarray(probs, dtype=float)
    table = {s: probs[i] for i, s in enumerate(SETTINGS)}
    rho = np.zeros((4, 4), dtype=complex)
    for a, b in itertools.product("IXYZ", repeat=2):
        if a == "I" and b == "I":
            expval = 1.0
        else:
            vals = []
            for s in SETTINGS:
                if (a != "I" and s[0] != a) or (b != "I" and s[1] != b):
                    continue
                w = np.ones(4)
                if a != "I":
                    w = w * _SIGNS[:, 0]
                if b != "I":
                    w = w * _SIGNS[:, 1]
                vals.append(float(w @ table[s]))
            expval = float(np.mean(vals))
        rho += expval * np.kron(_PAULI[a], _PAULI[b])
    return rho / 4


def project_psd(rho: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues and renormalize to unit trace."""
    rho = (rho + rho.conj().T) / 2
    evals, evecs = np.linalg.eigh(rho)
    evals = np.clip(evals, 0, None)
    if evals.sum() <= 0:
        raise TomographyError("reconstruction has no positive weight")
    evals = evals / evals.sum()
    return (evecs * evals) @ evecs.conj().T


def qst_means(rp: ReadoutParams) -> tuple[float, float]:
    scale = rp.n_reps_qst / rp.n_reps_bsm
    return rp.lambda_bright * scale, rp.lambda_dark * scale


def estimator_std_error(rp: ReadoutParams, shots: int) -> float:
    """Worst-case standard error of a single outcome-probability estimate."""
    lb, ld = qst_means(rp)
    worst_var = lb + (lb - ld) ** 2 / 4
    return math.sqrt(worst_var / shots) / (lb - ld)


def qst(prep, rp: ReadoutParams = ReadoutParams(), mode: str = "ideal", rng: np.random.Generator | None = None,
        shots: int = 10_000, target: np.ndarray | None = None, exact: bool = False,
        library: PulseLibrary | None = None, p: StaticParams | None = None, f: FrameSpec | None = None,
        max_std_error: float = 0.25) -> TomographyResult:
    """Nine-setting tomography of the logical two-qubit state.

    ``prep`` is a 9x9 density matrix (or a callable returning one).  Each
    outcome of each setting is read with ``shots`` fresh preparations whose
    accumulated counts give an unbiased estimate of its bright probability.
    ``exact=True`` skips sampling and inverts the exact probabilities.
    ``target`` is a logical 4-vector or a 9-vector.
    """
    rho = prep() if callable(prep) else np.asarray(prep, dtype=complex)
    p_exact = exact_setting_probabilities(rho, mode, library, p, f)
    if exact:
        est = p_exact
    else:
        if shots < 1 or estimator_std_error(rp, shots) > max_std_error:
            raise TomographyError(
                f"{shots} shots per setting give a probability standard error of "
                f"{estimator_std_error(rp, max(shots, 1)):.3f} (limit {max_std_error})")
        rng = np.random.default_rng(rp.seed) if rng is None else rng
        lb, ld = qst_means(rp)
        est = np.empty_like(p_exact)
        for s in range(len(SETTINGS)):
            for o in range(4):
                q = float(np.clip(p_exact[s, o], 0, 1))
                bright = rng.random(shots) < q
                if rp.sub_repetitions:
                    # sum of n_reps_qst sub-reads has the same total mean
                    means = np.where(bright, lb, ld) / rp.n_reps_qst
                    counts = rng.poisson(np.repeat(means[:, None], rp.n_reps_qst, axis=1)).sum(axis=1)
                else:
                    counts = rng.poisson(np.where(bright, lb, ld))
                est[s, o] = (counts.mean() - ld) / (lb - ld)
            total = est[s].sum()
            if total > 0:
                est[s] = est[s] / total
    raw = linear_inversion(est)
    rho_hat = project_psd(raw)
    fid = None
    if target is not None:
        t = np.asarray(target, dtype=complex)
        if t.shape == (9,):
            t = t[list(LOGICAL_INDICES)]
        t = t / np.linalg.norm(t)
        fid = float(np.real(np.vdot(t, rho_hat @ t)))
    return TomographyResult(rho_hat, raw, fid, len(SETTINGS), est)
