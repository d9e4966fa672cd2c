import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvbsm.hamiltonian import (
    CHANNELS,
    TWO_PI,
    ControlSet,
    FrameSpec,
    StaticParams,
    constant_pulse,
    control_hamiltonians,
    diagonal_entry,
    drive_amplitudes,
    free_evolution,
    propagate,
    rotating_hamiltonian,
    static_hamiltonian,
)
from nvbsm.hilbert import LEVELS, basis_index, is_hermitian, is_unitary, ket

MHZ = TWO_PI * 1e6
positive = st.floats(1e3, 1e10, allow_nan=False)


def pop(u, start, end):
    return abs(np.vdot(end, u @ start)) ** 2


def test_static_entries_from_formula():
    p = StaticParams()
    h = static_hamiltonian(p)
    assert np.count_nonzero(h - np.diag(np.diag(h))) == 0
    assert h[0, 0].real == pytest.approx(2872.88 * MHZ, rel=1e-12)
    assert h[basis_index(0, 1), basis_index(0, 1)].real == pytest.approx(-4.95 * MHZ, rel=1e-12)
    assert h[basis_index(0, -1), basis_index(0, -1)].real == pytest.approx(-4.95 * MHZ, rel=1e-12)
    assert h[basis_index(0, 0), basis_index(0, 0)] == 0


@settings(max_examples=50, deadline=None)
@given(positive, positive, positive)
def test_logical_degeneracies_hold_exactly(d0, q, a):
    p = StaticParams(d0, q, a)
    e = np.real(np.diag(static_hamiltonian(p)))
    assert e[basis_index(1, 1)] == e[basis_index(-1, -1)]
    assert e[basis_index(1, -1)] == e[basis_index(-1, 1)]
    for ms in LEVELS:
        for mi in LEVELS:
            ref = diagonal_entry(p, ms, mi)
            assert e[basis_index(ms, mi)] == pytest.approx(ref, rel=1e-12, abs=1e-12 * d0)


def test_params_validation():
    with pytest.raises(ValueError):
        StaticParams(A=0.0)
    with pytest.raises(ValueError):
        StaticParams(D0=-1.0)
    with pytest.raises(ValueError):
        FrameSpec(np.inf, 0.0)


def test_rotating_frame():
    p = StaticParams()
    h = rotating_hamiltonian(p, FrameSpec.resonant(p))
    # only the hyperfine term survives
    d = np.real(np.diag(h))
    for ms in LEVELS:
        for mi in LEVELS:
            assert d[basis_index(ms, mi)] == pytest.approx(-p.A * ms * mi)
    # MW transition |0, m> <-> |+-1, m> detuned by A |m|
    for ms in (1, -1):
        for mi in LEVELS:
            delta = d[basis_index(ms, mi)] - d[basis_index(0, mi)]
            assert abs(delta) == pytest.approx(p.A * abs(mi))
    assert np.allclose(h @ static_hamiltonian(p), static_hamiltonian(p) @ h)
    off = rotating_hamiltonian(p, FrameSpec(p.D0 - MHZ, p.Q))
    assert off[basis_index(1, 0), basis_index(1, 0)].real == pytest.approx(MHZ)


def test_control_generators():
    ops = control_hamiltonians()
    assert len(ops) == len(CHANNELS) == 8
    for h in ops:
        assert is_hermitian(h)
        assert abs(np.trace(h)) < 1e-15
    # MW sigma+ generators never touch m_s = -1
    for h in ops[:2]:
        for mi in LEVELS:
            assert np.allclose(h @ ket(-1, mi), 0)
    # and RF generators never touch m_s
    for h in ops[4:]:
        assert np.allclose(h[np.ix_([0, 1, 2], [3, 4, 5])], 0)


def test_resonant_pi_pulse_transfers():
    p = StaticParams()
    omega = TWO_PI * 1e6
    cs = constant_pulse(drive_amplitudes(omega, theta=0.0, band="mw"), np.pi / omega, 10)
    assert pop(propagate(cs, p), ket(0, 0), ket(1, 0)) >= 1 - 1e-9


def test_detuned_rabi_formula():
    # m_I = +1 manifold: the |0,+1> <-> |+1,+1> transition sits A away from the carrier
    p = StaticParams()
    omega, delta = TWO_PI * 1.3e6, p.A
    for t in (0.1e-6, 0.37e-6, 1.0e-6):
        cs = constant_pulse(drive_amplitudes(omega, band="mw"), t, 7)
        got = pop(propagate(cs, p), ket(0, 1), ket(1, 1))
        w = np.hypot(omega, delta)
        ref = omega**2 / w**2 * np.sin(w * t / 2) ** 2
        assert got == pytest.approx(ref, abs=1e-6)


def test_zero_controls_are_free_evolution():
    p = StaticParams()
    f = FrameSpec(p.D0 - 0.3 * MHZ, p.Q + 0.1 * MHZ)
    cs = ControlSet.zeros(5, 1e-7)
    assert np.allclose(propagate(cs, p, f), free_evolution(p, f, 5e-7), atol=1e-10)
    assert np.array_equal(propagate(ControlSet.zeros(0, 1e-7), p), np.eye(9))


def test_slice_refinement_is_exact(rng):
    p = StaticParams()
    amps = rng.uniform(-1, 1, size=(8, 6)) * np.array([10 * MHZ] * 4 + [0.05 * MHZ] * 4)[:, None]
    cs = ControlSet(amps, 2e-8)
    u = propagate(cs, p)
    assert is_unitary(u, 1e-9)
    assert np.max(np.abs(propagate(cs.refine(2), p) - u)) < 1e-10


def test_hyperfine_selectivity():
    p = StaticParams()
    omega = p.A / 20
    t = np.pi / omega
    # target the m_I = +1 transition by detuning the carrier by -A (|+1,+1> sits at -A)
    f = FrameSpec(p.D0 - p.A, p.Q)
    u = propagate(constant_pulse(drive_amplitudes(omega, band="mw"), t, 50), p, f)
    assert pop(u, ket(0, 1), ket(1, 1)) > 0.99
    for mi in (0, -1):
        assert 1 - pop(u, ket(0, mi), ket(0, mi)) < 0.02


def test_controlset_validation_and_json(tmp_path, rng):
    with pytest.raises(ValueError):
        ControlSet(np.zeros((7, 3)), 1e-8)
    with pytest.raises(ValueError):
        ControlSet(np.zeros((8, 3)), 0.0)
    with pytest.raises(ValueError):
        ControlSet(np.full((8, 2), np.nan), 1e-8)
    cs = ControlSet(rng.normal(size=(8, 4)), 1e-8)
    with pytest.raises(ValueError):
        cs.amplitudes[0, 0] = 1.0
    path = tmp_path / "p.json"
    cs.save(path)
    back = ControlSet.load(path)
    assert np.array_equal(back.amplitudes, cs.amplitudes) and back.dt == cs.dt
    bad = cs.to_dict()
    bad["channels"][0]["name"] = "mw_bogus"
    with pytest.raises(ValueError):
        ControlSet.from_dict(bad)


def test_caps():
    vec = drive_amplitudes(TWO_PI * 20e6, band="mw")
    assert not constant_pulse(vec, 1e-6).within_caps()
    assert constant_pulse(vec / 4, 1e-6).within_caps()
