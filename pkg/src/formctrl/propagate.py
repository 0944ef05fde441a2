"""Unitary propagators ``U(t, s)`` of ``i d/dt psi = H(u(t)) psi``.

Piecewise-constant controls use exact exponentials of each segment
generator.  Smooth segments use an adaptive fourth-order Magnus
integrator with two Gauss nodes per step.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .controls import ControlSchedule, schedule_samples
from .system import FormLinearSystem

logger = logging.getLogger(__name__)

STEP_FLOOR = 1e-8
# step-doubling estimates below this are rounding noise in the comparison
ROUNDOFF_ERR = 1e-14
UNITARY_CLEANUP = 1e-9
EIG_CACHE_LIMIT = 4096
_GAUSS = (0.5 - math.sqrt(3.0) / 6.0, 0.5 + math.sqrt(3.0) / 6.0)
_COMM = math.sqrt(3.0) / 12.0


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Propagator:
    """``U(t, s)`` with a record of how it was produced."""

    u_matrix: np.ndarray
    t: float
    s: float
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.u_matrix.shape[0]

    def apply(self, phi) -> np.ndarray:
        return self.u_matrix @ np.asarray(phi, dtype=complex)

    def adjoint(self) -> "Propagator":
        return Propagator(self.u_matrix.conj().T, self.s, self.t, dict(self.meta, adjoint=True))

    def unitarity_defect(self) -> float:
        return unitarity_defect(self.u_matrix)


def unitarity_defect(u: np.ndarray) -> float:
    return float(np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0]), 2))


def polar_cleanup(u: np.ndarray) -> np.ndarray:
    """Nearest unitary in Frobenius norm."""
    w, _, vh = np.linalg.svd(u)
    return w @ vh


def _eig(system: FormLinearSystem, values: np.ndarray):
    key = np.ascontiguousarray(values, dtype=float).tobytes()
    hit = system.eig_cache.get(key)
    if hit is None:
        system.check_in_box(values)
        hit = np.linalg.eigh(system.hamiltonian(values))
        if len(system.eig_cache) >= EIG_CACHE_LIMIT:
            system.eig_cache.clear()
        system.eig_cache[key] = hit
    return hit


def segment_exponential(system: FormLinearSystem, values, duration: float) -> np.ndarray:
    """``exp(-i duration H(values))``."""
    w, v = _eig(system, np.asarray(values, dtype=float))
    return (v * np.exp(-1j * duration * w)) @ v.conj().T


def _check(system: FormLinearSystem, schedule: ControlSchedule, t: float, s: float) -> None:
    if schedule.channels != system.channels:
        raise ValueError(f"schedule has {schedule.channels} channels, system has {system.channels}")
    for x in (t, s):
        if x < -1e-12 or x > schedule.T + 1e-12:
            raise ValueError(f"time {x} outside the schedule horizon [0, {schedule.T}]")


def _pieces(schedule: ControlSchedule, s: float, t: float):
    """Segments overlapping ``[s, t]`` with the overlap, in time order."""
    for (a, b), seg in zip(schedule.intervals(), schedule.segments):
        lo, hi = max(a, s), min(b, t)
        if hi > lo:
            yield lo, hi, seg


def propagate_pc(system: FormLinearSystem, schedule: ControlSchedule, t: float, s: float = 0.0) -> Propagator:
    """Ordered product of exact segment exponentials."""
    if schedule.kind != "piecewise_constant":
        raise ValueError("propagate_pc needs a piecewise-constant schedule")
    _check(system, schedule, t, s)
    meta = {"integrator": "exact_pc", "segments": schedule.n_segments}
    if t == s:
        return Propagator(np.eye(system.dim, dtype=complex), t, s, meta)
    if t < s:
        return propagate_pc(system, schedule, s, t).adjoint()
    u = np.eye(system.dim, dtype=complex)
    for lo, hi, seg in _pieces(schedule, s, t):
        u = segment_exponential(system, seg.values, hi - lo) @ u
    return Propagator(u, t, s, meta)


def magnus4_step(hamiltonian: Callable[[float], np.ndarray], t: float, h: float) -> np.ndarray:
    """One fourth-order Magnus step from ``t`` to ``t + h``."""
    h1 = hamiltonian(t + _GAUSS[0] * h)
    h2 = hamiltonian(t + _GAUSS[1] * h)
    k = 0.5 * h * (h1 + h2) + 1j * _COMM * h * h * (h1 @ h2 - h2 @ h1)
    w, v = np.linalg.eigh(0.5 * (k + k.conj().T))
    return (v * np.exp(-1j * w)) @ v.conj().T


def magnus_propagate(hamiltonian: Callable[[float], np.ndarray], s: float, t: float, tol: float = 1e-10,
                     breakpoints: Sequence[float] = (), span: float | None = None) -> tuple[np.ndarray, dict]:
    """Adaptive Magnus-4 propagation of ``hamiltonian`` from ``s`` to ``t > s``.

    The step-doubling estimate ``||U_h - U_{h/2} U_{h/2}|| / 15`` is kept
    below ``tol * h / span`` so the accumulated error over ``span`` stays
    near ``tol``.  Stepping restarts at every breakpoint.
    """
    if t < s:
        raise ValueError("magnus_propagate integrates forward only")
    dim = hamiltonian(s).shape[0]
    span = float(t - s) if span is None else float(span)
    cuts = [s] + sorted(b for b in breakpoints if s < b < t) + [t]
    u = np.eye(dim, dtype=complex)
    stats = {"steps": 0, "rejected": 0, "min_step": math.inf}
    for a, b in zip(cuts[:-1], cuts[1:]):
        u = _magnus_interval(hamiltonian, a, b, tol, span, stats) @ u
    if stats["steps"] == 0:
        stats["min_step"] = 0.0
    return u, stats


def _magnus_interval(hamiltonian, a: float, b: float, tol: float, span: float, stats: dict) -> np.ndarray:
    dim = hamiltonian(a).shape[0]
    u = np.eye(dim, dtype=complex)
    x = a
    h = min(b - a, 0.25)
    while b - x > 1e-15 * max(1.0, abs(b)):
        # fold a short remainder into this step rather than leave a sliver
        h = b - x if b - x < 1.1 * h else h
        full = magnus4_step(hamiltonian, x, h)
        half = magnus4_step(hamiltonian, x + 0.5 * h, 0.5 * h) @ magnus4_step(hamiltonian, x, 0.5 * h)
        err = float(np.linalg.norm(full - half)) / 15.0
        allowed = tol * h / span
        if h == b - x:
            # a short closing step cannot grow; rounding noise is all it can resolve
            allowed = max(allowed, ROUNDOFF_ERR)
        if err <= allowed or h <= STEP_FLOOR:
            if err > allowed:
                raise PropagationError(
                    f"tolerance {tol:g} unachievable at t={x:.6g}: step {h:.3g} at the floor, error estimate {err:.3g}")
            u = half @ u
            x += h
            stats["steps"] += 1
            stats["min_step"] = min(stats["min_step"], h)
            factor = 2.0 if err == 0.0 else min(2.0, max(0.2, 0.9 * (allowed / err) ** 0.2))
            h *= factor
        else:
            stats["rejected"] += 1
            h = max(STEP_FLOOR, h * max(0.2, 0.9 * (allowed / err) ** 0.2))
    return u


def check_schedule_in_box(system: FormLinearSystem, schedule: ControlSchedule) -> None:
    for u in schedule_samples(schedule):
        system.check_in_box(u)


def propagate_smooth(system: FormLinearSystem, schedule: ControlSchedule, t: float, s: float = 0.0,
                     tol: float = 1e-10) -> Propagator:
    """Propagator for a piecewise-smooth schedule; constant segments are exact."""
    _check(system, schedule, t, s)
    meta = {"integrator": "magnus4", "tol": tol, "steps": 0, "rejected": 0}
    if t == s:
        return Propagator(np.eye(system.dim, dtype=complex), t, s, meta)
    if t < s:
        return propagate_smooth(system, schedule, s, t, tol).adjoint()
    check_schedule_in_box(system, schedule)
    pieces = list(_pieces(schedule, s, t))
    span = sum(hi - lo for lo, hi, seg in pieces if not seg.is_constant) or 1.0
    u = np.eye(system.dim, dtype=complex)
    for lo, hi, seg in pieces:
        if seg.is_constant:
            u = segment_exponential(system, seg.values, hi - lo) @ u
            continue
        step, stats = magnus_propagate(lambda x, seg=seg: system.hamiltonian(seg.value(x)), lo, hi, tol, span=span)
        meta["steps"] += stats["steps"]
        meta["rejected"] += stats["rejected"]
        u = step @ u
    defect = unitarity_defect(u)
    if defect > UNITARY_CLEANUP:
        logger.info("unitarity defect %.3g, applying polar cleanup", defect)
        u = polar_cleanup(u)
        meta["polar_cleanup"] = defect
    return Propagator(u, t, s, meta)


def propagate(system: FormLinearSystem, schedule: ControlSchedule, t: float, s: float = 0.0,
              tol: float = 1e-10) -> Propagator:
    if schedule.kind == "piecewise_constant":
        return propagate_pc(system, schedule, t, s)
    return propagate_smooth(system, schedule, t, s, tol)


def drift_exponential(system: FormLinearSystem, t: float) -> np.ndarray:
    """``exp(-i t h0)``."""
    key = b"drift"
    hit = system.eig_cache.get(key)
    if hit is None:
        hit = np.linalg.eigh(system.h0)
        system.eig_cache[key] = hit
    w, v = hit
    return (v * np.exp(-1j * t * w)) @ v.conj().T


def interaction_picture(prop: Propagator, system: FormLinearSystem) -> Propagator:
    """``e^{i t h0} U(t, s) e^{-i s h0}``."""
    if prop.dim != system.dim:
        raise ValueError("propagator/system dimension mismatch")
    u = drift_exponential(system, -prop.t) @ prop.u_matrix @ drift_exponential(system, prop.s)
    return Propagator(u, prop.t, prop.s, dict(prop.meta, picture="interaction"))


def evolve_state(system: FormLinearSystem, schedule: ControlSchedule, phi, t: float, s: float = 0.0,
                 tol: float = 1e-10) -> np.ndarray:
    """``U(t, s) phi``."""
    phi = np.asarray(phi, dtype=complex)
    if phi.shape != (system.dim,):
        raise ValueError(f"state has shape {phi.shape}, expected ({system.dim},)")
    if not np.linalg.norm(phi) > 0:
        raise ValueError("state must be non-zero")
    if t == s:
        return phi.copy()
    if schedule.kind == "piecewise_constant" and t > s:
        _check(system, schedule, t, s)
        out = phi.copy()
        for lo, hi, seg in _pieces(schedule, s, t):
            w, v = _eig(system, seg.values)
            out = v @ (np.exp(-1j * (hi - lo) * w) * (v.conj().T @ out))
        return out
    return propagate(system, schedule, t, s, tol).apply(phi)
