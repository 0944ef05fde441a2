import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import unitary_group

from formctrl.certify import (
    CoverageError,
    StabilityCertificate,
    certify_formlinear,
    certify_stability,
    check_propagator_growth,
    check_resolvent_lipschitz,
    constants_for,
    growth_certificates,
    instantaneous_C,
    passes,
    strong_convergence_gap,
)
from formctrl.controls import MollifierParams, PolySegment, constant, mollify, piecewise_constant, smooth
from formctrl.linops import hermitian_power
from formctrl.models import harmonic_oscillator
from formctrl.propagate import Propagator, propagate, propagate_pc
from formctrl.sweeps import random_pc_schedule, random_state, resolvent_suite
from formctrl.system import FormLinearSystem, SystemConstants, equivalence_constant

seeds = st.integers(0, 2**32 - 1)


def scalar_system(lo=0.0, hi=3.0):
    return FormLinearSystem.build(np.zeros((1, 1)), [np.eye(1)], [[lo, hi]])


def two_step():
    return piecewise_constant([0.0, 1.0, 2.0], [[0.0], [1.0]])


def test_pass_rule():
    assert passes(1.0, 1.0)
    assert passes(1.0 + 5e-9, 1.0)
    assert not passes(1.0 + 2e-8, 1.0)
    assert passes(100.0 + 5e-7, 100.0)
    k = SystemConstants.from_cm(0.0, 1.0, 0.0)
    c = StabilityCertificate.make("stability_main", 2.0, 1.0, k)
    assert c.margin == -1.0 and not c.passed
    with pytest.raises(ValueError):
        StabilityCertificate.make("nonsense", 0.0, 0.0, k)


def test_resolvent_examples():
    osc = harmonic_oscillator(8)
    c = check_resolvent_lipschitz(osc, [0.3], [0.3], 1.0)
    assert c.lhs == 0.0 and c.rhs == 0.0 and c.passed
    s = scalar_system()
    c = check_resolvent_lipschitz(s, [0.0], [3.0], equivalence_constant(s, [[0.0], [3.0]]))
    assert c.lhs == pytest.approx(0.75)
    assert c.rhs == pytest.approx(48.0)
    assert c.passed


def test_resolvent_sweep_oscillator():
    certs, summary = resolvent_suite(harmonic_oscillator(16), 100, seed=3)
    assert summary["failures"] == 0
    assert all(c.rhs >= c.lhs for c in certs)


def test_instantaneous_C_examples():
    osc = harmonic_oscillator(6)
    assert instantaneous_C(osc, two_step(), 0.5) == 0.0
    ramp = smooth(2.0, PolySegment(np.array([[0.0, 1.0]])), "smooth_Cinf")
    s = scalar_system()
    for t in (1.0, 1.5, 2.0):
        assert instantaneous_C(s, ramp, t) == pytest.approx(1.0 / (t + 1.0), rel=1e-12)
    with pytest.raises(ValueError, match="breakpoint"):
        instantaneous_C(osc, two_step(), 1.0)


def test_instantaneous_C_against_finite_difference():
    osc = harmonic_oscillator(8)
    sm = mollify(two_step(), MollifierParams(0.3))
    t, h = 0.93, 1e-5
    inv = lambda x: np.linalg.inv(osc.shifted(sm(x)))
    d_inv = (inv(t + h) - inv(t - h)) / (2 * h)
    half = hermitian_power(osc.shifted(sm(t)), 0.5)
    fd = np.linalg.norm(half @ d_inv @ half, 2)
    assert instantaneous_C(osc, sm, t) == pytest.approx(fd, rel=1e-3)


def test_growth_pc_single_segment_is_conservation(rng):
    osc = harmonic_oscillator(16)
    phi = random_state(rng, 16)
    plus, minus = check_propagator_growth(osc, two_step(), phi, 0.9, 0.1)
    assert plus.passed and minus.passed
    assert abs(plus.margin) < 1e-12 and abs(minus.margin) < 1e-12


def test_growth_mollified_random_states(rng):
    osc = harmonic_oscillator(16)
    sm = mollify(two_step(), MollifierParams(0.2))
    phis = [random_state(rng, 16) for _ in range(100)]
    fwd = growth_certificates(osc, sm, phis, 2.0, 0.0)
    back = growth_certificates(osc, sm, phis, 0.0, 2.0)
    assert all(p.passed and m.passed for p, m in fwd + back)
    assert fwd[0][0].provenance["integral_C"] > 0


def test_growth_across_jump_needs_jump_factor(rng):
    osc = harmonic_oscillator(8)
    phi = random_state(rng, 8)
    plus, minus = check_propagator_growth(osc, two_step(), phi, 2.0, 0.0)
    assert plus.passed and minus.passed
    assert plus.provenance["jump_factor_plus"] > 1.0


def test_stability_identical_schedules():
    osc = harmonic_oscillator(8)
    s = two_step()
    c = certify_stability(osc, s, s, constants_for(osc, [s]))
    assert c.lhs == 0.0 and c.rhs == 0.0 and c.passed


def test_stability_commuting_closed_form():
    d = np.diag([1.0, 2.0])
    eps, T = 0.3, 2.0
    s = FormLinearSystem.build(np.zeros((2, 2)), [d], [[0.0, 1.0]])
    sj, sk = constant(T, [0.0]), constant(T, [eps])
    k = constants_for(s, [sj, sk])
    c = certify_stability(s, sj, sk, k)
    # a0 = identity, so the lhs is the spectral norm of I - exp(-i T eps d)
    closed = max(2 * abs(math.sin(T * eps * x / 2)) for x in (1.0, 2.0))
    assert c.lhs == pytest.approx(closed, rel=1e-12)
    assert c.rhs == pytest.approx(k.L * 2.0 * eps * T, rel=1e-12)
    assert c.passed


def test_stability_random_pc_pairs():
    osc = harmonic_oscillator(16)
    for k in range(20):
        rng = np.random.default_rng(k)
        sj, sk = random_pc_schedule(rng, osc), random_pc_schedule(rng, osc)
        c = certify_stability(osc, sj, sk, constants_for(osc, [sj, sk]))
        assert c.passed
        assert c.extra["rhs_formlinear"] >= c.rhs * (1 - 1e-12)


def test_stability_rhs_recomputable():
    osc = harmonic_oscillator(8)
    sm = mollify(two_step(), MollifierParams(0.2))
    k = constants_for(osc, [two_step(), sm])
    c = certify_stability(osc, two_step(), sm, k)
    assert c.rhs == pytest.approx(k.L * c.extra["gap_integral"], rel=1e-12)
    assert c.constants.L == pytest.approx(c.constants.c**11 * math.exp(4 * c.constants.c**2 * c.constants.M))
    f = certify_formlinear(osc, two_step(), sm, k)
    assert f.kind == "stability_formlinear" and f.rhs == c.extra["rhs_formlinear"]


def test_coverage_errors():
    osc = harmonic_oscillator(8)
    sm = mollify(two_step(), MollifierParams(0.2))
    good = constants_for(osc, [two_step(), sm])
    with pytest.raises(CoverageError, match="A3"):
        certify_stability(osc, two_step(), sm, SystemConstants.from_cm(0.0, 1.0, good.M))
    with pytest.raises(CoverageError, match="A4"):
        certify_stability(osc, two_step(), sm, SystemConstants.from_cm(0.0, good.c, 0.0))
    with pytest.raises(CoverageError, match="A1"):
        certify_stability(osc, two_step(), sm, SystemConstants.from_cm(0.5, good.c, good.M))


def test_monotone_in_horizon():
    osc = harmonic_oscillator(8)
    rng = np.random.default_rng(7)
    sj, sk = random_pc_schedule(rng, osc), random_pc_schedule(rng, osc)
    k = constants_for(osc, [sj, sk])
    full = certify_stability(osc, sj, sk, k)
    for t in (0.3, 0.9, 1.4):
        part = certify_stability(osc, sj, sk, k, t=t, t_rhs=2.0)
        assert part.lhs <= full.rhs
        assert part.rhs == pytest.approx(full.rhs)


def test_strong_convergence_examples(rng):
    osc = harmonic_oscillator(8)
    ref = propagate_pc(osc, two_step(), 2.0)
    rep = strong_convergence_gap(ref, [ref], [random_state(rng, 8)], osc.frame, pairs=50)
    assert rep["rows"][0]["gap"] == 0.0 and rep["all_pass"]
    us = [Propagator(unitary_group.rvs(8, random_state=k), 2.0, 0.0) for k in range(3)]
    rep = strong_convergence_gap(ref, us, [], osc.frame, pairs=1000, seed=4)
    assert rep["all_pass"]


def test_strong_convergence_mollification_sequence():
    osc = harmonic_oscillator(8)
    pc = two_step()
    ref = propagate_pc(osc, pc, 2.0)
    seq = [mollify(pc, MollifierParams(0.2 * 0.5**k)) for k in range(4)]
    props = [propagate(osc, s, 2.0, 0.0, 1e-11) for s in seq]
    rep = strong_convergence_gap(ref, props, [], osc.frame, pairs=200)
    gaps = [r["gap"] for r in rep["rows"]]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    for s, g in zip(seq, gaps):
        assert g <= certify_stability(osc, pc, s, constants_for(osc, [pc, s])).rhs


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_stability_symmetric(seed):
    rng = np.random.default_rng(seed)
    osc = harmonic_oscillator(8)
    sj, sk = random_pc_schedule(rng, osc), random_pc_schedule(rng, osc)
    k = constants_for(osc, [sj, sk])
    a, b = certify_stability(osc, sj, sk, k), certify_stability(osc, sk, sj, k)
    assert abs(a.lhs - b.lhs) <= 1e-10
    assert abs(a.rhs - b.rhs) <= 1e-10 * max(1.0, a.rhs)
    assert a.passed and b.passed


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_growth_pc_random(seed):
    rng = np.random.default_rng(seed)
    osc = harmonic_oscillator(8)
    sched = random_pc_schedule(rng, osc)
    s, t = rng.uniform(0, 2, 2)
    plus, minus = check_propagator_growth(osc, sched, random_state(rng, 8), t, s)
    assert plus.passed and minus.passed
