"""Piecewise-smooth control schedules, their L1 geometry and mollification.

A schedule on ``[0, T]`` is a list of breakpoints ``0 = t_1 < ... < t_{k+1} = T``
and one smooth segment per interval.  Evaluation is right-continuous at
interior breakpoints and left-continuous at ``T``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

KINDS = ("piecewise_constant", "piecewise_C2", "smooth_C2", "smooth_Cinf")
RAMP_KINDS = ("quintic", "bump")
MERGE_TOL = 1e-12
L1_TOL = 1e-12
GAUSS_POINTS = 64


class ScheduleError(ValueError):
    pass


# ---------------------------------------------------------------- ramp shapes

def quintic(x):
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


def quintic_d1(x):
    x = np.clip(x, 0.0, 1.0)
    return 30.0 * x**2 * (1.0 - x) ** 2


def quintic_d2(x):
    x = np.clip(x, 0.0, 1.0)
    return 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x)


def _bump(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = (x > 0.0) & (x < 1.0)
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (xi * (1.0 - xi)))
    return out


@functools.lru_cache(maxsize=1)
def _bump_table():
    """Normalisation of the bump and a Gauss-Legendre rule on [0, 1]."""
    z, _ = integrate.quad(lambda x: float(_bump(np.array([x]))[0]), 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    return z, 0.5 * (nodes + 1.0), 0.5 * weights


def bump_step(x):
    """C-infinity monotone step: normalised integral of ``exp(-1/(x(1-x)))``."""
    z, nodes, weights = _bump_table()
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    # integrate over the shorter half and use the symmetry s(1-x) = 1 - s(x)
    xs = np.minimum(x, 1.0 - x)
    partial = xs * (_bump(np.multiply.outer(xs, nodes)) @ weights) / z
    return np.where(x <= 0.5, partial, 1.0 - partial)


def bump_step_d1(x):
    z, _, _ = _bump_table()
    return _bump(x) / z


def bump_step_d2(x):
    z, _, _ = _bump_table()
    x = np.asarray(x, dtype=float)
    b = _bump(x)
    out = np.zeros_like(x)
    inside = b > 0
    xi = x[inside]
    out[inside] = b[inside] * (1.0 - 2.0 * xi) / (xi * (1.0 - xi)) ** 2 / z
    return out


_RAMPS = {
    "quintic": (quintic, quintic_d1, quintic_d2),
    "bump": (bump_step, bump_step_d1, bump_step_d2),
}


# ------------------------------------------------------------------- segments

@dataclass(frozen=True, eq=False)
class ConstSegment:
    values: np.ndarray

    is_constant = True

    def value(self, t):
        return self.values.copy()

    def derivative(self, t):
        return np.zeros_like(self.values)

    def second_derivative(self, t):
        return np.zeros_like(self.values)

    def to_json(self) -> dict:
        return {"const": self.values.tolist()}


@dataclass(frozen=True, eq=False)
class RampSegment:
    """``left + (right - left) * s((t - t0) / (t1 - t0))`` for a monotone step ``s``."""

    left: np.ndarray
    right: np.ndarray
    t0: float
    t1: float
    ramp_kind: str = "quintic"

    is_constant = False

    def _x(self, t):
        return (t - self.t0) / (self.t1 - self.t0)

    def value(self, t):
        s = float(_RAMPS[self.ramp_kind][0](np.array(self._x(t))))
        return self.left + (self.right - self.left) * s

    def derivative(self, t):
        ds = float(_RAMPS[self.ramp_kind][1](np.array(self._x(t))))
        return (self.right - self.left) * ds / (self.t1 - self.t0)

    def second_derivative(self, t):
        d2 = float(_RAMPS[self.ramp_kind][2](np.array(self._x(t))))
        return (self.right - self.left) * d2 / (self.t1 - self.t0) ** 2

    def to_json(self) -> dict:
        return {"kind": "ramp", "params": {
            "left": self.left.tolist(), "right": self.right.tolist(),
            "t0": self.t0, "t1": self.t1, "ramp_kind": self.ramp_kind}}


@dataclass(frozen=True, eq=False)
class PolySegment:
    """Per-channel polynomial in absolute time, ``coeffs[i, k]`` multiplies ``t**k``."""

    coeffs: np.ndarray

    is_constant = False

    def value(self, t):
        return np.array([np.polynomial.polynomial.polyval(t, c) for c in self.coeffs])

    def derivative(self, t):
        return np.array([np.polynomial.polynomial.polyval(t, np.polynomial.polynomial.polyder(c))
                         for c in self.coeffs])

    def second_derivative(self, t):
        return np.array([np.polynomial.polynomial.polyval(t, np.polynomial.polynomial.polyder(c, 2))
                         for c in self.coeffs])

    def to_json(self) -> dict:
        return {"kind": "poly", "params": {"coeffs": self.coeffs.tolist()}}


@dataclass(frozen=True, eq=False)
class SineSegment:
    """``offset + amp * sin(omega t + phase)`` per channel."""

    offset: np.ndarray
    amp: np.ndarray
    omega: np.ndarray
    phase: np.ndarray

    is_constant = False

    def value(self, t):
        return self.offset + self.amp * np.sin(self.omega * t + self.phase)

    def derivative(self, t):
        return self.amp * self.omega * np.cos(self.omega * t + self.phase)

    def second_derivative(self, t):
        return -self.amp * self.omega**2 * np.sin(self.omega * t + self.phase)

    def to_json(self) -> dict:
        return {"kind": "sin", "params": {
            "offset": self.offset.tolist(), "amp": self.amp.tolist(),
            "omega": self.omega.tolist(), "phase": self.phase.tolist()}}


def _vec(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


def segment_from_json(obj: dict):
    if "const" in obj:
        return ConstSegment(_vec(obj["const"]))
    kind = obj.get("kind")
    p = obj.get("params", {})
    try:
        if kind == "ramp":
            rk = p.get("ramp_kind", "quintic")
            if rk not in RAMP_KINDS:
                raise ScheduleError(f"unknown ramp_kind '{rk}'")
            return RampSegment(_vec(p["left"]), _vec(p["right"]), float(p["t0"]), float(p["t1"]), rk)
        if kind == "poly":
            return PolySegment(np.atleast_2d(np.asarray(p["coeffs"], dtype=float)))
        if kind == "sin":
            off = _vec(p.get("offset", 0.0))
            amp = _vec(p["amp"])
            n = max(off.size, amp.size)
            return SineSegment(np.broadcast_to(off, n).copy(), np.broadcast_to(amp, n).copy(),
                               np.broadcast_to(_vec(p.get("omega", 1.0)), n).copy(),
                               np.broadcast_to(_vec(p.get("phase", 0.0)), n).copy())
    except KeyError as exc:
        raise ScheduleError(f"segment of kind '{kind}': missing parameter {exc}") from None
    raise ScheduleError(f"unknown segment {obj!r}")


# ------------------------------------------------------------------- schedule

@dataclass(frozen=True, eq=False)
class ControlSchedule:
    breakpoints: np.ndarray
    segments: tuple
    kind: str
    channels: int

    def __post_init__(self):
        bp = self.breakpoints
        if self.kind not in KINDS:
            raise ScheduleError(f"unknown schedule class '{self.kind}'")
        if bp.ndim != 1 or bp.size < 1 or bp[0] != 0.0:
            raise ScheduleError("breakpoints must start at 0")
        if np.any(np.diff(bp) <= 0):
            raise ScheduleError("breakpoints must be strictly increasing")
        if len(self.segments) != bp.size - 1:
            raise ScheduleError(f"{bp.size} breakpoints need {bp.size - 1} segments, got {len(self.segments)}")
        for j, seg in enumerate(self.segments):
            if seg.value(bp[j]).size != self.channels:
                raise ScheduleError(f"segment {j} has the wrong channel count")
        if self.kind == "piecewise_constant" and not all(s.is_constant for s in self.segments):
            raise ScheduleError("piecewise_constant schedule with non-constant segment")

    @property
    def T(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    def intervals(self):
        return list(zip(self.breakpoints[:-1].tolist(), self.breakpoints[1:].tolist()))

    def segment_index(self, t: float) -> int:
        if t < -MERGE_TOL or t > self.T + MERGE_TOL or self.n_segments == 0:
            raise ScheduleError(f"t={t} outside horizon [0, {self.T}]")
        j = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return min(max(j, 0), self.n_segments - 1)

    def __call__(self, t: float) -> np.ndarray:
        return self.segments[self.segment_index(t)].value(t)

    def derivative(self, t: float) -> np.ndarray:
        return self.segments[self.segment_index(t)].derivative(t)

    def interior_breakpoints(self) -> np.ndarray:
        return self.breakpoints[1:-1]

    def jumps(self):
        """``(t, left_limit, right_limit)`` at every interior breakpoint."""
        out = []
        for j, t in enumerate(self.interior_breakpoints(), start=1):
            out.append((float(t), self.segments[j - 1].value(t), self.segments[j].value(t)))
        return out

    def restrict_values(self) -> np.ndarray:
        """Constant values of a piecewise-constant schedule, shape ``(segments, channels)``."""
        if self.kind != "piecewise_constant":
            raise ScheduleError("only piecewise-constant schedules have segment values")
        return np.array([s.values for s in self.segments]).reshape(self.n_segments, self.channels)

    def to_json(self) -> dict:
        return {
            "T": self.T,
            "channels": self.channels,
            "class": self.kind,
            "breakpoints": self.breakpoints.tolist(),
            "segments": [s.to_json() for s in self.segments],
        }


def schedule_from_json(obj: dict) -> ControlSchedule:
    if not isinstance(obj, dict):
        raise ScheduleError("schedule: expected a JSON object")
    for key in ("T", "channels", "class", "breakpoints", "segments"):
        if key not in obj:
            raise ScheduleError(f"schedule: missing field '{key}'")
    bp = np.asarray(obj["breakpoints"], dtype=float)
    if bp.size and abs(bp[-1] - float(obj["T"])) > MERGE_TOL:
        raise ScheduleError(f"schedule: last breakpoint {bp[-1]} differs from T={obj['T']}")
    segs = tuple(segment_from_json(s) for s in obj["segments"])
    return ControlSchedule(bp, segs, obj["class"], int(obj["channels"]))


def piecewise_constant(breakpoints: Sequence[float], values) -> ControlSchedule:
    """Schedule with ``values[j]`` on ``[breakpoints[j], breakpoints[j+1])``."""
    bp = np.asarray(breakpoints, dtype=float)
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    return ControlSchedule(bp, tuple(ConstSegment(v.copy()) for v in vals), "piecewise_constant", vals.shape[1])


def constant(T: float, value) -> ControlSchedule:
    return piecewise_constant([0.0, T], [_vec(value)])


def empty(channels: int) -> ControlSchedule:
    """Zero-length schedule; its propagator is the identity."""
    return ControlSchedule(np.array([0.0]), (), "piecewise_constant", channels)


def smooth(T: float, segment, kind: str = "smooth_Cinf") -> ControlSchedule:
    """Single-segment schedule from one smooth segment."""
    ch = segment.value(0.0).size
    return ControlSchedule(np.array([0.0, float(T)]), (segment,), kind, ch)


def evaluate(schedule: ControlSchedule, t: float) -> np.ndarray:
    return schedule(t)


def merged_breakpoints(*schedules: ControlSchedule) -> np.ndarray:
    pts = np.sort(np.concatenate([s.breakpoints for s in schedules]))
    keep = [pts[0]]
    for p in pts[1:]:
        if p - keep[-1] > MERGE_TOL:
            keep.append(p)
    return np.array(keep)


def _owner(schedule: ControlSchedule, a: float, b: float):
    return schedule.segments[schedule.segment_index(0.5 * (a + b))]


def l1_distance(s1: ControlSchedule, s2: ControlSchedule, t_end: float | None = None) -> np.ndarray:
    """Per-channel ``int_0^T |s1_i - s2_i| dt``, split at the merged breakpoints."""
    if abs(s1.T - s2.T) > MERGE_TOL or s1.channels != s2.channels:
        raise ScheduleError("schedules must share horizon and channel count")
    t_end = s1.T if t_end is None else float(t_end)
    out = np.zeros(s1.channels)
    bp = merged_breakpoints(s1, s2)
    for a, b in zip(bp[:-1], bp[1:]):
        if a >= t_end:
            break
        b = min(b, t_end)
        g1, g2 = _owner(s1, a, b), _owner(s2, a, b)
        if g1.is_constant and g2.is_constant:
            out += np.abs(g1.values - g2.values) * (b - a)
            continue
        for i in range(s1.channels):
            val, _ = integrate.quad(lambda t: abs(g1.value(t)[i] - g2.value(t)[i]), a, b,
                                    epsabs=L1_TOL, epsrel=1e-10, limit=200)
            out[i] += val
    return out


def derivative_l1(schedule: ControlSchedule) -> np.ndarray:
    """Per-channel ``sum_j int_{I_j} |f_i'| dt``."""
    out = np.zeros(schedule.channels)
    if schedule.kind == "piecewise_constant":
        return out
    for (a, b), seg in zip(schedule.intervals(), schedule.segments):
        if seg.is_constant:
            continue
        for i in range(schedule.channels):
            val, _ = integrate.quad(lambda t: abs(seg.derivative(t)[i]), a, b,
                                    epsabs=L1_TOL, epsrel=1e-12, limit=200)
            out[i] += val
    return out


def total_variation(pc: ControlSchedule) -> np.ndarray:
    """Per-channel sum of jump magnitudes of a piecewise-constant schedule."""
    if pc.kind != "piecewise_constant":
        raise ScheduleError("total_variation needs a piecewise-constant schedule")
    vals = pc.restrict_values()
    if len(vals) < 2:
        return np.zeros(pc.channels)
    return np.abs(np.diff(vals, axis=0)).sum(axis=0)


def l1_norm(schedule: ControlSchedule) -> np.ndarray:
    """Per-channel ``int_0^T |u_i| dt``."""
    return l1_distance(schedule, _zero_like(schedule)) if schedule.T > 0 else np.zeros(schedule.channels)


def _zero_like(schedule: ControlSchedule) -> ControlSchedule:
    return constant(schedule.T, np.zeros(schedule.channels))


@dataclass(frozen=True)
class MollifierParams:
    delta: float
    ramp_kind: str = "quintic"

    def __post_init__(self):
        if not self.delta > 0:
            raise ScheduleError("ramp half-width delta must be positive")
        if self.ramp_kind not in RAMP_KINDS:
            raise ScheduleError(f"ramp_kind must be one of {RAMP_KINDS}")


def mollify(pc: ControlSchedule, params: MollifierParams) -> ControlSchedule:
    """Replace every jump of ``pc`` by a centred monotone ramp on ``[t_j - δ, t_j + δ]``."""
    if pc.kind != "piecewise_constant":
        raise ScheduleError("mollify needs a piecewise-constant schedule")
    vals = pc.restrict_values()
    bp = pc.breakpoints
    delta = params.delta
    if pc.n_segments and delta >= 0.5 * float(np.min(np.diff(bp))):
        raise ScheduleError(f"delta={delta} must be below half the shortest segment "
                            f"({0.5 * float(np.min(np.diff(bp))):.6g})")
    jump_at = [j for j in range(1, pc.n_segments) if np.any(vals[j] != vals[j - 1])]
    if not jump_at:
        return pc
    new_bp = [0.0]
    segs = []
    last = 0
    for j in jump_at:
        t = float(bp[j])
        segs.append(ConstSegment(vals[j - 1].copy()))
        new_bp.append(t - delta)
        segs.append(RampSegment(vals[j - 1].copy(), vals[j].copy(), t - delta, t + delta, params.ramp_kind))
        new_bp.append(t + delta)
        last = j
    # jump-free breakpoints disappear: the value is unchanged across them
    segs.append(ConstSegment(vals[last].copy()))
    new_bp.append(pc.T)
    kind = "smooth_C2" if params.ramp_kind == "quintic" else "smooth_Cinf"
    return ControlSchedule(np.array(new_bp), tuple(segs), kind, pc.channels)


def schedule_samples(schedule: ControlSchedule, per_segment: int = 17) -> np.ndarray:
    """Control values visited by a schedule, for covering the equivalence constant."""
    if schedule.kind == "piecewise_constant":
        return schedule.restrict_values() if schedule.n_segments else np.zeros((0, schedule.channels))
    out = []
    for (a, b), seg in zip(schedule.intervals(), schedule.segments):
        if seg.is_constant:
            out.append(seg.values)
            continue
        for t in np.linspace(a, b, per_segment):
            out.append(seg.value(t))
    return np.array(out)
