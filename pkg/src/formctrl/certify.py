"""Numerical certificates for the resolvent, growth and stability inequalities.

Each check returns a :class:`StabilityCertificate` holding both sides of an
inequality, the constants used and enough provenance to recompute the
right-hand side.  A certificate passes when ``rhs - lhs >= -1e-8 max(1, rhs)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .controls import ControlSchedule, l1_distance, merged_breakpoints, schedule_samples
from .linops import ScaleFrame, hermitian_power, norm_minus_plus, norm_plus_minus, spectral_norm
from .propagate import Propagator, propagate
from .system import (
    FormLinearSystem,
    SystemConstants,
    default_samples,
    derivative_bound_M,
    equivalence_constant,
    lower_bound,
)

KINDS = ("resolvent_lipschitz", "propagator_growth_plus", "propagator_growth_minus",
         "stability_main", "stability_formlinear", "strong_convergence")
SLACK = 1e-8
QUAD_TOL = 1e-11
BREAKPOINT_TOL = 1e-12


class CoverageError(ValueError):
    """Constants that do not cover the schedules being compared."""


@dataclass(frozen=True)
class StabilityCertificate:
    kind: str
    lhs: float
    rhs: float
    constants: SystemConstants
    margin: float
    passed: bool
    provenance: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @classmethod
    def make(cls, kind: str, lhs: float, rhs: float, constants: SystemConstants,
             provenance: dict | None = None, extra: dict | None = None) -> "StabilityCertificate":
        if kind not in KINDS:
            raise ValueError(f"unknown certificate kind '{kind}'")
        margin = float(rhs) - float(lhs)
        return cls(kind, float(lhs), float(rhs), constants, margin, passes(lhs, rhs),
                   provenance or {}, extra or {})

    def to_json(self) -> dict:
        return {
            "kind": self.kind, "lhs": self.lhs, "rhs": self.rhs, "margin": self.margin,
            "pass": self.passed, "constants": self.constants.to_dict(),
            "provenance": self.provenance, "extra": self.extra,
        }


def passes(lhs: float, rhs: float) -> bool:
    return float(rhs) - float(lhs) >= -SLACK * max(1.0, float(rhs))


def _shifted_power(system: FormLinearSystem, u, exponent: float) -> np.ndarray:
    return hermitian_power(system.shifted(u), exponent)


# ----------------------------------------------------------------- resolvent

def check_resolvent_lipschitz(system: FormLinearSystem, u1, u2, c: float) -> StabilityCertificate:
    """``||A(u1)^-1 - A(u2)^-1||_{-,+} <= c^4 ||H(u1) - H(u2)||_{+,-}``."""
    u1 = system.check_in_box(u1)
    u2 = system.check_in_box(u2)
    a1, a2 = system.shifted(u1), system.shifted(u2)
    eye = np.eye(system.dim)
    try:
        diff = np.linalg.solve(a1, eye) - np.linalg.solve(a2, eye)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"A(u) is singular: {exc}") from None
    lhs = norm_minus_plus(diff, system.frame) if np.any(u1 != u2) else 0.0
    rhs = c**4 * norm_plus_minus(a1 - a2, system.frame)
    consts = SystemConstants.from_cm(system.m, c, 0.0)
    return StabilityCertificate.make("resolvent_lipschitz", lhs, rhs, consts,
                                     {"u1": u1.tolist(), "u2": u2.tolist(), "c": c},
                                     {"rhs_formula": "c**4 * norm_plus_minus(H(u1) - H(u2))"})


# -------------------------------------------------------------------- growth

def _is_interior_breakpoint(schedule: ControlSchedule, t: float) -> bool:
    bp = schedule.interior_breakpoints()
    return bp.size > 0 and float(np.min(np.abs(bp - t))) <= BREAKPOINT_TOL


def _derivative_operator(system: FormLinearSystem, du) -> np.ndarray:
    out = np.zeros((system.dim, system.dim), dtype=complex)
    for di, h in zip(du, system.interactions):
        if di != 0.0:
            out += di * h
    return out


def instantaneous_C(system: FormLinearSystem, schedule: ControlSchedule, t: float) -> float:
    """``||A(t)^{-1/2} A'(t) A(t)^{-1/2}||`` at a point inside a segment."""
    if _is_interior_breakpoint(schedule, t):
        raise ValueError(f"t={t} is a breakpoint; the derivative is one-sided there")
    seg = schedule.segments[schedule.segment_index(t)]
    if seg.is_constant:
        return 0.0
    du = seg.derivative(t)
    if not np.any(du):
        return 0.0
    s = _shifted_power(system, seg.value(t), -0.5)
    return spectral_norm(s @ _derivative_operator(system, du) @ s)


def integrated_C(system: FormLinearSystem, schedule: ControlSchedule, a: float, b: float) -> float:
    """``int_a^b C(t) dt`` split at the schedule breakpoints."""
    lo, hi = min(a, b), max(a, b)
    total = 0.0
    for (x, y), seg in zip(schedule.intervals(), schedule.segments):
        x, y = max(x, lo), min(y, hi)
        if y <= x or seg.is_constant:
            continue

        def c_of(t, seg=seg):
            du = seg.derivative(t)
            s = _shifted_power(system, seg.value(t), -0.5)
            return spectral_norm(s @ _derivative_operator(system, du) @ s)

        val, _ = integrate.quad(c_of, x, y, epsabs=QUAD_TOL, epsrel=1e-10, limit=200)
        total += val
    return total


def jump_factors(system: FormLinearSystem, schedule: ControlSchedule, a: float, b: float) -> tuple[float, float]:
    """Products of ``||A(u_after)^{+-1/2} A(u_before)^{-+1/2}||`` over jumps crossed between ``a`` and ``b``.

    Both factors are 1 for a continuous schedule.
    """
    plus = minus = 1.0
    lo, hi = min(a, b), max(a, b)
    for t, left, right in schedule.jumps():
        if not lo < t < hi or np.array_equal(left, right):
            continue
        before, after = (left, right) if b >= a else (right, left)
        sb, sa = system.shifted(before), system.shifted(after)
        plus *= spectral_norm(hermitian_power(sa, 0.5) @ hermitian_power(sb, -0.5))
        minus *= spectral_norm(hermitian_power(sa, -0.5) @ hermitian_power(sb, 0.5))
    return plus, minus


def check_propagator_growth(system: FormLinearSystem, schedule: ControlSchedule, phi, t: float, s: float,
                            tol: float = 1e-10, constants: SystemConstants | None = None):
    """Growth of ``||Phi(t)||_{+,t}`` and ``||Phi(t)||_{-,t}`` along the shifted dynamics.

    ``Phi`` evolves under ``A(u(t)) = H(u(t)) + m + 1``; it differs from the
    physical state by the phase ``exp(-i (m+1)(t-s))`` and has the same norms.
    Returns the plus and minus certificates.
    """
    return growth_certificates(system, schedule, [phi], t, s, tol, constants)[0]


def growth_certificates(system: FormLinearSystem, schedule: ControlSchedule, phis, t: float, s: float,
                        tol: float = 1e-10, constants: SystemConstants | None = None) -> list:
    """Plus/minus growth certificates for many initial states sharing one propagator."""
    u = propagate(system, schedule, t, s, tol)
    phase = np.exp(-1j * (system.m + 1.0) * (t - s))
    a_s, a_t = system.shifted(schedule(s)), system.shifted(schedule(t))
    sq_s, isq_s = hermitian_power(a_s, 0.5), hermitian_power(a_s, -0.5)
    sq_t, isq_t = hermitian_power(a_t, 0.5), hermitian_power(a_t, -0.5)
    int_c = integrated_C(system, schedule, s, t)
    jp, jm = jump_factors(system, schedule, s, t)
    grow_p = math.exp(1.5 * int_c) * jp
    grow_m = math.exp(0.5 * int_c) * jm
    if constants is None:
        constants = SystemConstants.from_cm(system.m, 1.0, 0.0)
    prov = {"s": s, "t": t, "tol": tol, "integral_C": int_c, "jump_factor_plus": jp,
            "jump_factor_minus": jm, "schedule_class": schedule.kind}
    out = []
    for phi in phis:
        phi = np.asarray(phi, dtype=complex)
        if phi.shape != (system.dim,):
            raise ValueError(f"state has shape {phi.shape}, expected ({system.dim},)")
        phi_t = phase * u.apply(phi)
        plus = StabilityCertificate.make(
            "propagator_growth_plus", float(np.linalg.norm(sq_t @ phi_t)),
            grow_p * float(np.linalg.norm(sq_s @ phi)), constants, dict(prov))
        minus = StabilityCertificate.make(
            "propagator_growth_minus", float(np.linalg.norm(isq_t @ phi_t)),
            grow_m * float(np.linalg.norm(isq_s @ phi)), constants, dict(prov))
        out.append((plus, minus))
    return out


# ----------------------------------------------------------------- stability

def constants_for(system: FormLinearSystem, schedules, n_halton: int = 64) -> SystemConstants:
    """Constants covering the box sample and every value visited by ``schedules``."""
    samples = [default_samples(system, n_halton)]
    samples += [schedule_samples(s) for s in schedules if s.n_segments]
    c = equivalence_constant(system, np.vstack(samples))
    M = max([derivative_bound_M(system, s) for s in schedules] + [0.0])
    return SystemConstants.from_cm(system.m, c, M)


def check_coverage(system: FormLinearSystem, schedules, constants: SystemConstants) -> None:
    problems = []
    if constants.m < lower_bound(system) - 1e-10:
        problems.append(f"A1: m={constants.m:.6g} below the box lower bound {lower_bound(system):.6g}")
    if abs(constants.m - system.m) > 1e-12:
        problems.append(f"A1: m={constants.m:.6g} differs from the system's reference m={system.m:.6g}")
    visited = [schedule_samples(s) for s in schedules if s.n_segments]
    if visited:
        c_need = equivalence_constant(system, np.vstack(visited))
        if constants.c < c_need - 1e-12:
            problems.append(f"A3: c={constants.c:.6g} below {c_need:.6g} needed by the schedule values")
    for j, s in enumerate(schedules):
        m_need = derivative_bound_M(system, s)
        if constants.M < m_need - 1e-10:
            problems.append(f"A4: M={constants.M:.6g} below {m_need:.6g} for schedule {j}")
    if problems:
        raise CoverageError("constants do not cover the schedules: " + "; ".join(problems))


def hamiltonian_gap_integral(system: FormLinearSystem, sj: ControlSchedule, sk: ControlSchedule,
                             t_end: float | None = None) -> float:
    """``int_0^t ||H(u_j) - H(u_k)||_{+,-} dtau``; exact on constant pieces."""
    t_end = sj.T if t_end is None else float(t_end)
    if system.channels == 1:
        w = norm_plus_minus(system.interactions[0], system.frame)
        return float(w * l1_distance(sj, sk, t_end)[0])
    weighted = system.weighted_interactions()

    def gap(du):
        return spectral_norm(sum(d * w for d, w in zip(du, weighted)))

    total = 0.0
    bp = merged_breakpoints(sj, sk)
    for a, b in zip(bp[:-1], bp[1:]):
        if a >= t_end:
            break
        b = min(b, t_end)
        gj = sj.segments[sj.segment_index(0.5 * (a + b))]
        gk = sk.segments[sk.segment_index(0.5 * (a + b))]
        if gj.is_constant and gk.is_constant:
            total += gap(gj.values - gk.values) * (b - a)
        else:
            val, _ = integrate.quad(lambda t: gap(gj.value(t) - gk.value(t)), a, b,
                                    epsabs=QUAD_TOL, epsrel=1e-10, limit=200)
            total += val
    return total


def certify_stability(system: FormLinearSystem, sj: ControlSchedule, sk: ControlSchedule,
                      constants: SystemConstants, t: float | None = None, tol: float = 1e-10,
                      t_rhs: float | None = None) -> StabilityCertificate:
    """``||U_j(t,0) - U_k(t,0)||_{+,-} <= L int_0^t ||H_j - H_k||_{+,-}``.

    The right-hand side is integrated up to ``t_rhs`` (default ``t``), which
    allows checking monotonicity in the horizon.  The certificate also
    carries the form-linear bound ``L sum_i ||H_i||_{+,-} l1_i``.
    """
    if abs(sj.T - sk.T) > 1e-12 or sj.channels != sk.channels:
        raise ValueError("schedules must share horizon and channel count")
    check_coverage(system, [sj, sk], constants)
    t = sj.T if t is None else float(t)
    t_rhs = t if t_rhs is None else float(t_rhs)
    if sj is sk:
        lhs = 0.0
    else:
        uj = propagate(system, sj, t, 0.0, tol).u_matrix
        uk = propagate(system, sk, t, 0.0, tol).u_matrix
        lhs = norm_plus_minus(uj - uk, system.frame)
    gap = hamiltonian_gap_integral(system, sj, sk, t_rhs)
    l1 = l1_distance(sj, sk, t_rhs)
    norms = [norm_plus_minus(h, system.frame) for h in system.interactions]
    rhs_main = constants.L * gap
    rhs_fl = constants.L * float(np.dot(norms, l1))
    prov = {"t": t, "t_rhs": t_rhs, "tol": tol, "schedule_j": sj.to_json(), "schedule_k": sk.to_json()}
    extra = {
        "gap_integral": gap, "l1": l1.tolist(), "interaction_norms": norms,
        "rhs_formlinear": rhs_fl, "rhs_c2": constants.L_c2 * gap,
        "ratio": lhs / rhs_main if rhs_main > 0 else 0.0,
    }
    return StabilityCertificate.make("stability_main", lhs, rhs_main, constants, prov, extra)


def certify_formlinear(system: FormLinearSystem, sj: ControlSchedule, sk: ControlSchedule,
                       constants: SystemConstants, tol: float = 1e-10) -> StabilityCertificate:
    """Same comparison judged against ``L sum_i ||H_i||_{+,-} ||u_j,i - u_k,i||_{L1}``."""
    main = certify_stability(system, sj, sk, constants, tol=tol)
    return StabilityCertificate.make("stability_formlinear", main.lhs, main.extra["rhs_formlinear"],
                                     constants, main.provenance, dict(main.extra, rhs_main=main.rhs))


# -------------------------------------------------------- strong convergence

def strong_convergence_gap(u_ref: Propagator, u_seq, probes, frame: ScaleFrame,
                           pairs: int = 1000, seed: int = 0) -> dict:
    """Gaps ``||U_n - U_ref||_{+,-}`` and a randomized check of the pairing bound.

    For every ``n`` and random ``(Psi, Phi)``,
    ``|<Psi, (U_n - U_ref) Phi>| <= ||Psi||_+ ||Phi||_+ gap_n``.
    """
    rng = np.random.default_rng(seed)
    dim = u_ref.dim
    rows = []
    certs = []
    for k, un in enumerate(u_seq):
        if un.dim != dim or abs(un.t - u_ref.t) > 1e-12 or abs(un.s - u_ref.s) > 1e-12:
            raise ValueError(f"propagator {k} does not match the reference dims/times")
        d = un.u_matrix - u_ref.u_matrix
        gap = norm_plus_minus(d, frame)
        probe_err = [float(np.linalg.norm(d @ np.asarray(p, dtype=complex))) for p in probes]
        worst = 0.0
        for _ in range(pairs):
            psi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
            phi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
            val = abs(np.vdot(psi, d @ phi)) / (frame.norm_plus(psi) * frame.norm_plus(phi))
            worst = max(worst, float(val))
        cert = StabilityCertificate.make("strong_convergence", worst, gap,
                                         SystemConstants.from_cm(frame.m, 1.0, 0.0),
                                         {"index": k, "pairs": pairs, "seed": seed})
        certs.append(cert)
        rows.append({"index": k, "gap": gap, "probe_errors": probe_err, "max_pairing": worst,
                     "pass": cert.passed})
    return {"rows": rows, "certificates": certs, "all_pass": all(c.passed for c in certs)}
