"""Randomized certificate sweeps shared by the command line and the acceptance suite."""
from __future__ import annotations

import numpy as np

from .certify import (
    check_resolvent_lipschitz,
    constants_for,
    certify_stability,
    growth_certificates,
)
from .controls import (
    ControlSchedule,
    MollifierParams,
    derivative_l1,
    l1_distance,
    mollify,
    piecewise_constant,
    total_variation,
)
from .galerkin import compactness_profile
from .linops import hermitian_power, norm_plus_minus
from .propagate import propagate_pc, unitarity_defect
from .seeding import derive_seed
from .system import FormLinearSystem, equivalence_constant


def random_pc_schedule(rng: np.random.Generator, system: FormLinearSystem, T: float = 2.0,
                       max_segments: int = 8) -> ControlSchedule:
    """Random piecewise-constant schedule in the box; every segment is at least ``T / (2k)`` long."""
    k = int(rng.integers(1, max_segments + 1))
    lengths = T * (0.5 / k + 0.5 * rng.dirichlet(np.ones(k)))
    bp = np.concatenate([[0.0], np.cumsum(lengths)])
    bp[-1] = T
    lo, hi = system.control_box[:, 0], system.control_box[:, 1]
    vals = rng.uniform(lo, hi, size=(k, system.channels))
    return piecewise_constant(bp, vals)


def admissible_delta(*schedules: ControlSchedule, fraction: float = 0.45) -> float:
    return fraction * min(float(np.min(np.diff(s.breakpoints))) for s in schedules)


def random_state(rng: np.random.Generator, dim: int) -> np.ndarray:
    x = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return x / np.linalg.norm(x)


def summarize(certs) -> dict:
    ratios = [c.lhs / c.rhs for c in certs if c.rhs > 0]
    return {
        "trials": len(certs),
        "failures": sum(not c.passed for c in certs),
        "min_margin": min((c.margin for c in certs), default=0.0),
        "max_ratio": max(ratios, default=0.0),
    }


def propagator_invariants(system: FormLinearSystem, trials: int, seed: int, T: float = 2.0) -> dict:
    """Unitarity, composition and time-reversal defects over random pc schedules."""
    worst = {"unitarity": 0.0, "composition": 0.0, "time_reversal": 0.0}
    for k in range(trials):
        rng = np.random.default_rng(derive_seed(seed, "propagator", k))
        sched = random_pc_schedule(rng, system, T)
        r, s, t = np.sort(rng.uniform(0.0, T, 3))
        u_tr = propagate_pc(system, sched, t, r).u_matrix
        u_ts = propagate_pc(system, sched, t, s).u_matrix
        u_sr = propagate_pc(system, sched, s, r).u_matrix
        u_rt = propagate_pc(system, sched, r, t).u_matrix
        worst["unitarity"] = max(worst["unitarity"], unitarity_defect(u_tr))
        worst["composition"] = max(worst["composition"], float(np.linalg.norm(u_ts @ u_sr - u_tr, 2)))
        worst["time_reversal"] = max(worst["time_reversal"], float(np.linalg.norm(u_rt - u_tr.conj().T, 2)))
    return {"trials": trials, "seed": seed, "max_defects": worst}


def resolvent_suite(system: FormLinearSystem, pairs: int, seed: int) -> tuple[list, dict]:
    lo, hi = system.control_box[:, 0], system.control_box[:, 1]
    certs = []
    for k in range(pairs):
        rng = np.random.default_rng(derive_seed(seed, "resolvent", k))
        u1, u2 = rng.uniform(lo, hi), rng.uniform(lo, hi)
        c = equivalence_constant(system, np.vstack([u1, u2]))
        certs.append(check_resolvent_lipschitz(system, u1, u2, c))
    return certs, summarize(certs)


def growth_suite(system: FormLinearSystem, schedules: int, states: int, seed: int, T: float = 2.0,
                 tol: float = 1e-10, reverse: bool = True) -> tuple[list, dict]:
    """Growth certificates for mollified random schedules, forward and (optionally) backward."""
    certs = []
    for k in range(schedules):
        rng = np.random.default_rng(derive_seed(seed, "growth", k))
        pc = random_pc_schedule(rng, system, T, max_segments=6)
        ramp = "quintic" if k % 2 == 0 else "bump"
        sched = mollify(pc, MollifierParams(admissible_delta(pc), ramp))
        phis = [random_state(rng, system.dim) for _ in range(states)]
        k_sched = constants_for(system, [sched])
        for pair in growth_certificates(system, sched, phis, T, 0.0, tol, k_sched):
            certs.extend(pair)
        if reverse:
            for pair in growth_certificates(system, sched, phis, 0.0, T, tol, k_sched):
                certs.extend(pair)
    return certs, summarize(certs)


def segment_conservation(system: FormLinearSystem, seed: int, states: int = 20, samples: int = 9,
                         T: float = 2.0) -> float:
    """Largest relative drift of ``||A(u_seg)^{1/2} Phi(t)||`` inside single constant segments."""
    rng = np.random.default_rng(derive_seed(seed, "conservation"))
    sched = random_pc_schedule(rng, system, T)
    worst = 0.0
    for (a, b), seg in zip(sched.intervals(), sched.segments):
        sq = hermitian_power(system.shifted(seg.values), 0.5)
        for _ in range(states):
            phi = random_state(rng, system.dim)
            x = propagate_pc(system, sched, a, 0.0).apply(phi)
            ref = float(np.linalg.norm(sq @ x))
            for t in np.linspace(a, b, samples)[1:]:
                y = propagate_pc(system, sched, t, a).apply(x)
                worst = max(worst, abs(float(np.linalg.norm(sq @ y)) - ref) / ref)
    return worst


def stability_suite(system: FormLinearSystem, pc_pairs: int, moll_pairs: int, seed: int, T: float = 2.0,
                    tol: float = 1e-9) -> tuple[list, dict]:
    certs = []
    for k in range(pc_pairs):
        rng = np.random.default_rng(derive_seed(seed, "stability_pc", k))
        sj, sk = random_pc_schedule(rng, system, T), random_pc_schedule(rng, system, T)
        certs.append(certify_stability(system, sj, sk, constants_for(system, [sj, sk]), tol=tol))
    for k in range(moll_pairs):
        rng = np.random.default_rng(derive_seed(seed, "stability_mollified", k))
        pj = random_pc_schedule(rng, system, T, max_segments=5)
        pk = random_pc_schedule(rng, system, T, max_segments=5)
        delta = admissible_delta(pj, pk)
        sj, sk = mollify(pj, MollifierParams(delta)), mollify(pk, MollifierParams(delta))
        certs.append(certify_stability(system, sj, sk, constants_for(system, [sj, sk]), tol=tol))
    return certs, summarize(certs)


def two_step(T: float = 2.0, low: float = 0.0, high: float = 1.0) -> ControlSchedule:
    return piecewise_constant([0.0, 0.5 * T, T], [[low], [high]])


def mollification_study(pc: ControlSchedule, deltas, ramp_kind: str = "quintic") -> dict:
    """L1 distance and derivative budget of mollifications of ``pc`` for each width."""
    rows = []
    tv = total_variation(pc)
    for d in deltas:
        sm = mollify(pc, MollifierParams(float(d), ramp_kind))
        rows.append({"delta": float(d), "l1_distance": l1_distance(pc, sm).tolist(),
                     "derivative_l1": derivative_l1(sm).tolist()})
    ds = np.array([r["delta"] for r in rows])
    l1 = np.array([r["l1_distance"] for r in rows]).sum(axis=1)
    slope = float(np.dot(ds, l1) / np.dot(ds, ds)) if len(ds) else 0.0
    return {"total_variation": tv.tolist(), "ramp_kind": ramp_kind, "rows": rows, "fit_slope": slope}


def mollification_certificates(system: FormLinearSystem, pc: ControlSchedule, deltas, tol: float = 1e-10) -> list:
    """Stability certificates comparing ``pc`` with its mollification at each width."""
    out = []
    for d in deltas:
        sm = mollify(pc, MollifierParams(float(d)))
        out.append(certify_stability(system, pc, sm, constants_for(system, [pc, sm]), tol=tol))
    return out


def compactness_report(system: FormLinearSystem, ranks=None) -> dict:
    ranks = list(range(1, system.dim + 1)) if ranks is None else list(ranks)
    out = {"ranks": ranks, "channels": []}
    for i in range(system.channels):
        prof = compactness_profile(system, i, ranks)
        below = [n for n, v in zip(ranks, prof) if v < 0.1]
        out["channels"].append({
            "profile": prof,
            "monotone": bool(all(b <= a + 1e-12 for a, b in zip(prof, prof[1:]))),
            "first_below_0.1": below[0] if below else None,
        })
    a0_prof = compactness_profile(system, 0, ranks[:-1] if ranks[-1] == system.dim else ranks,
                                  operator=system.frame.a0)
    out["reference_operator_min"] = min(a0_prof) if a0_prof else None
    return out


def interaction_norms(system: FormLinearSystem) -> list:
    return [norm_plus_minus(h, system.frame) for h in system.interactions]
