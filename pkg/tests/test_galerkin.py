import numpy as np
import pytest

from formctrl.galerkin import (
    SynthesisParams,
    comparison_system,
    compactness_profile,
    drift_eigenbasis,
    projector,
    synthesize_pc,
    transfer_experiment,
    truncate,
)
from formctrl.controls import constant
from formctrl.models import harmonic_oscillator, particle_in_box, random_system
from formctrl.propagate import drift_exponential, propagate_pc
from formctrl.system import FormLinearSystem


def qubit():
    return FormLinearSystem.build(np.diag([0.0, 1.0]), [np.array([[0.0, 1.0], [1.0, 0.0]])], [[-1.0, 1.0]])


def test_full_rank_is_unitarily_equivalent(rng):
    s = random_system(12, 2, 4)
    t = truncate(s, 12)
    for _ in range(5):
        u = rng.uniform(-1, 1, 2)
        assert np.allclose(np.linalg.eigvalsh(s.hamiltonian(u)), np.linalg.eigvalsh(t.system.hamiltonian(u)),
                           atol=1e-10)


def test_truncate_oscillator():
    t = truncate(harmonic_oscillator(32), 8)
    assert np.allclose(t.h0_n, np.diag(np.arange(8) + 0.5))
    assert np.allclose(t.interactions_n[0], harmonic_oscillator(8).interactions[0])
    assert t.system.m >= 0


def test_rank_one_is_a_phase():
    s = particle_in_box(6)
    t = truncate(s, 1)
    p = propagate_pc(t.system, constant(1.3, [0.4]), 1.3).u_matrix
    expected = np.exp(-1j * (np.pi**2 + 0.4 * 0.5) * 1.3)
    assert p.shape == (1, 1) and p[0, 0] == pytest.approx(expected, abs=1e-12)


def test_truncate_rank_checked():
    with pytest.raises(ValueError):
        truncate(harmonic_oscillator(4), 0)
    with pytest.raises(ValueError):
        truncate(harmonic_oscillator(4), 5)


def test_degenerate_drift_ordering_is_deterministic(rng):
    q = np.linalg.qr(rng.standard_normal((4, 4)))[0]
    h0 = q @ np.diag([1.0, 1.0, 2.0, 3.0]) @ q.T
    w1, v1 = drift_eigenbasis(h0)
    w2, v2 = drift_eigenbasis(h0.copy())
    assert np.array_equal(v1, v2)
    assert np.allclose(w1, [1, 1, 2, 3])
    lead = np.argmax(np.abs(v1[:, :2]), axis=0)
    assert lead[0] <= lead[1]
    w, v = drift_eigenbasis(np.diag([2.0, 1.0, 1.0]))
    assert np.array_equal(np.argmax(np.abs(v), axis=0), [1, 2, 0])


def test_projector_algebra():
    s = random_system(10, 1, 2)
    p = projector(s, 4)
    assert np.allclose(p @ p, p, atol=1e-12)
    assert np.allclose(p, p.conj().T, atol=1e-12)
    assert np.allclose(p @ s.h0, s.h0 @ p, atol=1e-12)
    e = drift_exponential(s, 0.7)
    assert np.allclose(p @ e, e @ p, atol=1e-12)


def test_basis_expansion_identity(rng):
    s = harmonic_oscillator(12)
    n = 5
    lam, vecs = drift_eigenbasis(s.h0)
    psi = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    plain = sum(np.vdot(vecs[:, j], psi) * vecs[:, j] for j in range(n))
    a0 = s.frame.a0
    tilde = [vecs[:, j] / np.sqrt(1 + lam[j]) for j in range(n)]
    plus = sum(np.vdot(t, a0 @ psi) * t for t in tilde)
    hat = [vecs[:, j] * np.sqrt(1 + lam[j]) for j in range(n)]
    minus = sum(np.vdot(h, np.linalg.solve(a0, psi)) * h for h in hat)
    assert np.allclose(plain, projector(s, n) @ psi, atol=1e-10)
    assert np.allclose(plus, plain, atol=1e-10)
    assert np.allclose(minus, plain, atol=1e-10)


def test_compactness_examples():
    osc = harmonic_oscillator(32)
    assert compactness_profile(osc, 0, [32])[0] == pytest.approx(0.0, abs=1e-14)
    a0 = compactness_profile(osc, 0, range(1, 32), operator=osc.frame.a0)
    assert min(a0) >= 1 - 1e-12
    prof = compactness_profile(osc, 0, range(1, 33))
    assert all(b <= a + 1e-12 for a, b in zip(prof, prof[1:]))


def test_compactness_tracks_weighted_tail_entry():
    osc = harmonic_oscillator(64)
    lam = np.arange(64) + 0.5
    for n in (8, 16, 32):
        prof = compactness_profile(osc, 0, [n])[0]
        entry = np.sqrt(n / 2) / np.sqrt((1 + lam[n - 1]) * (1 + lam[n]))
        assert entry <= prof <= 2 * entry + 1e-12


def test_synthesis_trivial_target():
    t = truncate(qubit(), 2)
    r = synthesize_pc(t, np.array([1, 0j]), np.array([1, 0j]), 1e-3, 1.0)
    assert r.success and r.schedule.T == 0.0 and r.infidelity == 0.0


def test_synthesis_qubit_flip():
    t = truncate(qubit(), 2)
    r = synthesize_pc(t, np.array([1, 0j]), np.array([0, 1 + 0j]), 1e-3, 10.0,
                      SynthesisParams(segments=4, T_max=8.0, seed=1))
    assert r.success and r.infidelity <= 1e-6
    assert np.all(r.l1 < 10.0)


def test_synthesis_zero_budget_fails_softly():
    t = truncate(qubit(), 2)
    r = synthesize_pc(t, np.array([1, 0j]), np.array([0, 1 + 0j]), 1e-3, 0.0,
                      SynthesisParams(segments=3, T_max=4.0, restarts=2, seed=1))
    assert not r.success
    assert r.infidelity > 0.9
    assert "budget" in r.message


def test_synthesis_deterministic():
    t = truncate(harmonic_oscillator(6), 4)
    phi, psi = np.eye(4)[0].astype(complex), np.eye(4)[1].astype(complex)
    p = SynthesisParams(segments=3, T_max=6.0, restarts=2, maxfev=600, seed=9)
    a, b = synthesize_pc(t, phi, psi, 1e-2, 5.0, p), synthesize_pc(t, phi, psi, 1e-2, 5.0, p)
    assert a.objective == b.objective
    assert np.array_equal(a.schedule.breakpoints, b.schedule.breakpoints)


def test_comparison_system_shares_frame():
    osc = harmonic_oscillator(16)
    c = comparison_system(osc, 4)
    assert np.array_equal(c.frame.a0, osc.frame.a0)


def test_transfer_full_rank_no_gap():
    s = FormLinearSystem.build(np.diag([0.0, 1.0, 2.5]), [np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0.0]])],
                               [[-1.0, 1.0]])
    phi, psi = np.eye(3)[0].astype(complex), np.eye(3)[1].astype(complex)
    rep = transfer_experiment(s, 2, 3, phi, psi, 1e-2, 10.0, SynthesisParams(segments=4, T_max=8, seed=2))
    e = rep.errors
    assert abs(e["ambient_final_error"] - e["finite_dim_residual"]) <= 1e-10
    assert e["chain_bound_terms"]["measured_gap"] <= 1e-10
    assert rep.checks["chain_holds"] and rep.checks["gap_bound_dominates"]


def test_transfer_identity_target():
    osc = harmonic_oscillator(16)
    phi = np.eye(16)[0].astype(complex)
    rep = transfer_experiment(osc, 1, 4, phi, phi, 1e-2, 5.0)
    assert rep.success
    assert rep.errors["ambient_final_error"] == 0.0
    assert rep.errors["finite_dim_residual"] == 0.0
    assert rep.errors["chain_bound_terms"]["gap_bound"] == 0.0


def test_transfer_gap_bound_and_sensitivity():
    osc = harmonic_oscillator(32)
    phi, psi = np.eye(32)[0].astype(complex), np.eye(32)[1].astype(complex)
    rep = transfer_experiment(osc, 2, 4, phi, psi, 1e-2, 5.0,
                              SynthesisParams(segments=4, T_max=8, restarts=2, maxfev=1500, seed=3))
    assert rep.checks["gap_bound_dominates"] and rep.checks["chain_holds"]
    assert rep.sensitivity["checked"]
    assert rep.sensitivity["N_half"] == 16
    with pytest.raises(ValueError, match="first 2"):
        transfer_experiment(osc, 2, 4, np.eye(32)[3].astype(complex), psi, 1e-2, 5.0)
