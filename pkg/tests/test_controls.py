import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from formctrl.controls import (
    MollifierParams,
    ScheduleError,
    SineSegment,
    bump_step,
    constant,
    derivative_l1,
    empty,
    evaluate,
    l1_distance,
    l1_norm,
    mollify,
    piecewise_constant,
    quintic,
    schedule_from_json,
    smooth,
    total_variation,
)
from oracles import BUMP_AT_03, BUMP_L1, QUINTIC_L1, midpoint_vec

seeds = st.integers(0, 2**32 - 1)


def two_step():
    return piecewise_constant([0.0, 1.0, 2.0], [[0.0], [1.0]])


def random_pc(rng, k=10, T=2.0, channels=1):
    lengths = T * (0.5 / k + 0.5 * rng.dirichlet(np.ones(k)))
    bp = np.concatenate([[0.0], np.cumsum(lengths)])
    bp[-1] = T
    return piecewise_constant(bp, rng.uniform(-1, 1, (k, channels)))


def test_evaluate_examples():
    assert evaluate(constant(2.0, [0.3]), 1.7)[0] == 0.3
    assert evaluate(two_step(), 1.0)[0] == 1.0
    assert evaluate(two_step(), 2.0)[0] == 1.0
    assert evaluate(two_step(), 0.999)[0] == 0.0
    assert evaluate(mollify(two_step(), MollifierParams(0.1)), 1.0)[0] == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ScheduleError, match="outside"):
        evaluate(two_step(), 2.5)


def test_invalid_schedules():
    with pytest.raises(ScheduleError):
        piecewise_constant([0.0, 1.0, 1.0], [[0.0], [1.0]])
    with pytest.raises(ScheduleError):
        piecewise_constant([0.5, 1.0], [[0.0]])
    seg = SineSegment(np.zeros(1), np.ones(1), np.ones(1), np.zeros(1))
    with pytest.raises(ScheduleError):
        from formctrl.controls import ControlSchedule
        ControlSchedule(np.array([0.0, 1.0]), (seg,), "piecewise_constant", 1)


def test_l1_examples():
    assert np.all(l1_distance(two_step(), two_step()) == 0)
    assert l1_distance(constant(2.0, [0.0]), constant(2.0, [1.0]))[0] == pytest.approx(2.0)
    sm = mollify(two_step(), MollifierParams(0.1))
    # centred ramp of width 2 delta: 2 delta * 5/32
    assert l1_distance(two_step(), sm)[0] == pytest.approx(0.2 * QUINTIC_L1, rel=1e-9)
    with pytest.raises(ScheduleError):
        l1_distance(two_step(), constant(3.0, [0.0]))


def test_quintic_ramp_constant_against_dense_quadrature():
    x = np.linspace(0, 1, 2_000_001)
    dense = np.trapezoid(np.abs(quintic(x) - (x >= 0.5)), x)
    assert dense == pytest.approx(QUINTIC_L1, abs=1e-6)


def test_bump_ramp_frozen_values():
    assert float(bump_step(np.array(0.3))) == pytest.approx(BUMP_AT_03, rel=1e-12)
    assert float(bump_step(np.array(0.5))) == pytest.approx(0.5, abs=1e-15)
    sm = mollify(two_step(), MollifierParams(0.1, "bump"))
    assert sm.kind == "smooth_Cinf"
    assert l1_distance(two_step(), sm)[0] == pytest.approx(0.2 * BUMP_L1, rel=1e-8)


def test_derivative_l1_examples():
    assert np.all(derivative_l1(two_step()) == 0)
    sine = smooth(math.pi, SineSegment(np.zeros(1), np.ones(1), np.ones(1), np.zeros(1)))
    assert derivative_l1(sine)[0] == pytest.approx(2.0, rel=1e-10)
    for d in (0.3, 0.1, 0.01):
        step = piecewise_constant([0, 1, 2], [[0.2], [-0.7]])
        assert derivative_l1(mollify(step, MollifierParams(d)))[0] == pytest.approx(0.9, abs=1e-12)


def test_mollify_examples():
    c = constant(2.0, [0.4])
    assert mollify(c, MollifierParams(0.2)) is c
    sm = mollify(two_step(), MollifierParams(0.2))
    assert sm.kind == "smooth_C2"
    assert sm(1.0)[0] == pytest.approx(0.5)
    assert l1_distance(two_step(), sm)[0] == pytest.approx(0.2 * 2 * QUINTIC_L1, rel=1e-9)
    half = mollify(two_step(), MollifierParams(0.1))
    assert l1_distance(two_step(), half)[0] == pytest.approx(0.5 * l1_distance(two_step(), sm)[0], rel=1e-9)


def test_mollify_agrees_outside_ramps(rng):
    pc = random_pc(rng, 6)
    d = 0.4 * float(np.min(np.diff(pc.breakpoints)))
    sm = mollify(pc, MollifierParams(d))
    bp = pc.interior_breakpoints()
    for t in rng.uniform(0, 2, 200):
        if np.min(np.abs(bp - t)) > d:
            assert sm(t)[0] == pc(t)[0]


def test_mollify_rejects_wide_ramp():
    with pytest.raises(ScheduleError, match="half the shortest"):
        mollify(two_step(), MollifierParams(0.5))
    with pytest.raises(ScheduleError):
        MollifierParams(0.0)
    with pytest.raises(ScheduleError):
        mollify(mollify(two_step(), MollifierParams(0.1)), MollifierParams(0.1))


def test_mollify_skips_jump_free_breakpoints():
    pc = piecewise_constant([0, 0.5, 1.0, 1.5, 2.0], [[0.0], [1.0], [1.0], [0.0]])
    sm = mollify(pc, MollifierParams(0.1))
    assert sm(1.0)[0] == 1.0
    assert sm(0.5)[0] == pytest.approx(0.5)
    assert derivative_l1(sm)[0] == pytest.approx(2.0, abs=1e-12)


def test_total_variation_examples(rng):
    assert total_variation(constant(1.0, [0.2]))[0] == 0.0
    assert total_variation(piecewise_constant([0, 1, 2, 3], [[0], [1], [0]]))[0] == 2.0
    pc = random_pc(rng, 10)
    d = 0.4 * float(np.min(np.diff(pc.breakpoints)))
    assert derivative_l1(mollify(pc, MollifierParams(d)))[0] == pytest.approx(total_variation(pc)[0], abs=1e-9)
    with pytest.raises(ScheduleError):
        total_variation(mollify(two_step(), MollifierParams(0.1)))


def test_l1_norm_and_empty():
    assert l1_norm(piecewise_constant([0, 1, 3], [[-1.0], [0.5]]))[0] == pytest.approx(2.0)
    e = empty(2)
    assert e.T == 0.0 and e.n_segments == 0


def test_json_round_trip(rng):
    for sched in (two_step(), mollify(two_step(), MollifierParams(0.1, "bump")),
                  smooth(1.0, SineSegment(np.zeros(2), np.ones(2), np.ones(2), np.zeros(2)))):
        back = schedule_from_json(sched.to_json())
        for t in rng.uniform(0, sched.T, 20):
            assert np.array_equal(back(t), sched(t))
    with pytest.raises(ScheduleError, match="missing"):
        schedule_from_json({"T": 1.0})


def test_l1_against_dense_midpoint(rng):
    a, b = random_pc(rng, 5), mollify(random_pc(rng, 4), MollifierParams(0.05))
    cuts = np.unique(np.concatenate([a.breakpoints, b.breakpoints]))
    f = lambda t: np.abs(np.array([a(x)[0] - b(x)[0] for x in t]))
    dense = sum(midpoint_vec(f, x, y, 20_000) for x, y in zip(cuts[:-1], cuts[1:]))
    assert l1_distance(a, b)[0] == pytest.approx(dense, abs=1e-7)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_l1_pseudometric(seed):
    rng = np.random.default_rng(seed)
    s1, s2, s3 = random_pc(rng, 4), random_pc(rng, 5), random_pc(rng, 3)
    s3 = mollify(s3, MollifierParams(0.4 * float(np.min(np.diff(s3.breakpoints)))))
    d12, d21 = l1_distance(s1, s2), l1_distance(s2, s1)
    assert np.allclose(d12, d21, atol=1e-12)
    assert np.all(l1_distance(s1, s3) <= d12 + l1_distance(s2, s3) + 1e-9)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_mollifier_convergence_and_uniform_budget(seed):
    rng = np.random.default_rng(seed)
    pc = random_pc(rng, 5, channels=2)
    tv = total_variation(pc)
    d0 = 0.45 * float(np.min(np.diff(pc.breakpoints)))
    prev = None
    for k in range(4):
        d = d0 / 2**k
        sm = mollify(pc, MollifierParams(d, "quintic" if k % 2 == 0 else "bump"))
        dist = l1_distance(pc, sm)
        assert np.all(dist <= tv * d + 1e-12)
        assert np.allclose(derivative_l1(sm), tv, atol=1e-9)
        if prev is not None and k % 2 == 0:
            assert np.all(dist <= prev + 1e-12)
        if k % 2 == 0:
            prev = dist


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_mollified_values_never_overshoot(seed):
    rng = np.random.default_rng(seed)
    pc = random_pc(rng, 6)
    d = 0.45 * float(np.min(np.diff(pc.breakpoints)))
    sm = mollify(pc, MollifierParams(d, "bump" if seed % 2 else "quintic"))
    for t, left, right in pc.jumps():
        lo, hi = min(left[0], right[0]), max(left[0], right[0])
        for x in np.linspace(t - d, t + d, 41):
            v = sm(x)[0]
            assert lo - 1e-15 <= v <= hi + 1e-15
