"""Form-linear control systems ``H(u) = h0 + sum_i u_i H_i`` and their constants.

The constants follow the stability theory:

* ``m``  uniform lower bound, ``H(u) >= -m`` on the control box;
* ``c``  equivalence constant between the scale of ``A(u) = H(u) + m + 1``
  and the reference scale of ``a0 = h0 + m + 1``;
* ``M``  derivative budget, the summed L1 norm of ``||d/dt H||_{+,-}``;
* ``L = c**11 * exp(4 c**2 M)`` the stability constant.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy import integrate
from scipy.stats import qmc

from .linops import (
    ScaleFrame,
    as_hermitian,
    matrix_from_json,
    matrix_to_json,
    spectral_norm,
)

if TYPE_CHECKING:
    from .controls import ControlSchedule

BOX_TOL = 1e-9
MAX_VERTEX_CHANNELS = 20
M_QUAD_TOL = 1e-10
M_SNAP = 1e-12


class ControlBoxError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FormLinearSystem:
    """Drift ``h0``, interactions ``H_i``, a bounded control box and its lower bound."""

    h0: np.ndarray
    interactions: tuple
    control_box: np.ndarray
    m: float
    frame: ScaleFrame = field(repr=False)
    model: dict | None = None
    # eigendecompositions of H(u) keyed by the control value; read-mostly
    eig_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, h0, interactions: Sequence, control_box, m: float | None = None,
              model: dict | None = None) -> "FormLinearSystem":
        h0 = as_hermitian(h0, "h0")
        n = h0.shape[0]
        hs = []
        for i, h in enumerate(interactions):
            h = as_hermitian(h, f"interactions[{i}]")
            if h.shape != (n, n):
                raise ValueError(f"interactions[{i}] has shape {h.shape}, expected {(n, n)}")
            hs.append(h)
        box = np.asarray(control_box, dtype=float).reshape(len(hs), 2)
        if not np.all(np.isfinite(box)):
            raise ValueError("control box must have finite endpoints")
        if np.any(box[:, 0] > box[:, 1]):
            raise ValueError("control box intervals must satisfy lo <= hi")
        w0 = np.linalg.eigvalsh(h0)
        if w0[0] < -1e-10 * max(1.0, abs(w0[-1])):
            raise ValueError(f"h0 must be positive semidefinite (smallest eigenvalue {w0[0]:.6g})")
        m_box = _vertex_lower_bound(h0, hs, box)
        if m is None:
            m = m_box
        elif m_box > m + 1e-10:
            raise ValueError(f"m={m} is not a lower bound on the control box (need {m_box:.6g})")
        frame = ScaleFrame.from_h0(h0, m)
        return cls(h0=h0, interactions=tuple(hs), control_box=box, m=float(m), frame=frame, model=model)

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    @property
    def channels(self) -> int:
        return len(self.interactions)

    def check_in_box(self, u, tol: float = BOX_TOL) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.size != self.channels:
            raise ControlBoxError(f"expected {self.channels} controls, got {u.size}")
        for i, (ui, (lo, hi)) in enumerate(zip(u, self.control_box)):
            if ui < lo - tol or ui > hi + tol:
                raise ControlBoxError(f"control u[{i}]={ui:.6g} outside box [{lo:.6g}, {hi:.6g}]")
        return u

    def hamiltonian(self, u) -> np.ndarray:
        """``h0 + sum u_i H_i`` without the box check (hot path)."""
        out = self.h0.copy()
        for ui, h in zip(np.asarray(u, dtype=float).reshape(-1), self.interactions):
            if ui != 0.0:
                out += ui * h
        return out

    def shifted(self, u) -> np.ndarray:
        """``A(u) = H(u) + (m + 1)``."""
        return self.hamiltonian(u) + (self.m + 1.0) * np.eye(self.dim)

    def vertices(self) -> np.ndarray:
        return _box_vertices(self.control_box)

    def weighted_interactions(self) -> list:
        s = self.frame.a0_inv_sqrt
        return [s @ h @ s for h in self.interactions]


def _box_vertices(box: np.ndarray) -> np.ndarray:
    if len(box) == 0:
        return np.zeros((1, 0))
    if len(box) > MAX_VERTEX_CHANNELS:
        raise ControlBoxError(f"vertex enumeration limited to {MAX_VERTEX_CHANNELS} channels, got {len(box)}")
    # a degenerate interval contributes one coordinate, not two copies
    axes = [sorted({lo, hi}) for lo, hi in box]
    return np.array(list(itertools.product(*axes)), dtype=float)


def _vertex_lower_bound(h0, interactions, box) -> float:
    worst = math.inf
    for v in _box_vertices(box):
        h = h0.copy()
        for ui, hi in zip(v, interactions):
            h = h + ui * hi
        worst = min(worst, float(np.linalg.eigvalsh(h)[0]))
    # roundoff-level negatives (e.g. a critically shifted oscillator) count as zero
    if worst > -M_SNAP:
        return 0.0
    return -worst


def assemble(system: FormLinearSystem, u) -> np.ndarray:
    """``h0 + sum_i u_i H_i`` for ``u`` inside the control box."""
    u = system.check_in_box(u)
    return system.hamiltonian(u)


def lower_bound(system: FormLinearSystem) -> float:
    """Smallest valid ``m`` for the whole box, from its vertices.

    The smallest eigenvalue of an affine Hermitian family is concave in
    ``u``, so its minimum over the box is attained at a vertex.
    """
    return _vertex_lower_bound(system.h0, system.interactions, system.control_box)


def default_samples(system: FormLinearSystem, n_halton: int = 64) -> np.ndarray:
    """Box vertices plus an unscrambled Halton set mapped into the box."""
    verts = system.vertices()
    if system.channels == 0 or n_halton == 0:
        return verts
    pts = qmc.Halton(d=system.channels, scramble=False).random(n_halton + 1)[1:]
    lo, hi = system.control_box[:, 0], system.control_box[:, 1]
    return np.vstack([verts, lo + pts * (hi - lo)])


def sample_equivalence(system: FormLinearSystem, u) -> float:
    """``max(||T||, ||T^-1||)`` for ``T = A(u)^{1/2} a0^{-1/2}`` at one control value.

    Both norms follow from the spectrum of ``B = a0^{-1/2} A(u) a0^{-1/2}``
    since ``T^† T = B``.
    """
    s = system.frame.a0_inv_sqrt
    b = s @ system.shifted(u) @ s
    w = np.linalg.eigvalsh(0.5 * (b + b.conj().T))
    if w[0] <= 0.0:
        raise ValueError(f"A(u) is not positive definite at u={np.asarray(u).tolist()}; is m correct?")
    return float(max(math.sqrt(w[-1]), 1.0 / math.sqrt(w[0])))


def equivalence_constant(system: FormLinearSystem, samples) -> float:
    """Equivalence constant ``c >= 1`` over a finite set of control values.

    Certified for the samples themselves; for the whole box it is only an
    estimate whose quality depends on the sample density.
    """
    samples = np.asarray(samples, dtype=float).reshape(-1, system.channels)
    c = 1.0
    for u in samples:
        system.check_in_box(u)
        c = max(c, sample_equivalence(system, u))
    return c


def derivative_bound_M(system: FormLinearSystem, schedule: "ControlSchedule") -> float:
    """``sum_j int_{I_j} ||sum_i f_i'(t) H_i||_{+,-} dt`` over the schedule's segments."""
    if schedule.channels != system.channels:
        raise ValueError("schedule/system channel mismatch")
    if schedule.kind == "piecewise_constant":
        return 0.0
    weighted = system.weighted_interactions()
    single = spectral_norm(weighted[0]) if system.channels == 1 else None
    total = 0.0
    for (a, b), seg in zip(schedule.intervals(), schedule.segments):
        if seg.is_constant or b <= a:
            continue

        def integrand(t, seg=seg):
            d = seg.derivative(t)
            if not np.all(np.isfinite(d)):
                raise ValueError(f"undefined derivative at t={t}")
            if single is not None:
                return abs(d[0]) * single
            return spectral_norm(sum(di * w for di, w in zip(d, weighted)))

        val, _ = integrate.quad(integrand, a, b, epsabs=M_QUAD_TOL, epsrel=M_QUAD_TOL, limit=200)
        total += val
    return float(total)


def stability_constant_L(c: float, M: float) -> float:
    """``c**11 * exp(4 c**2 M)``."""
    if c < 1 or M < 0:
        raise ValueError("need c >= 1 and M >= 0")
    return c**11 * math.exp(4.0 * c * c * M)


def stability_constant_c2(c: float, M: float) -> float:
    """The smaller ``c**8 * exp(2 c**2 M)`` available for a single C2 segment."""
    if c < 1 or M < 0:
        raise ValueError("need c >= 1 and M >= 0")
    return c**8 * math.exp(2.0 * c * c * M)


@dataclass(frozen=True)
class SystemConstants:
    m: float
    c: float
    M: float
    L: float

    @classmethod
    def from_cm(cls, m: float, c: float, M: float) -> "SystemConstants":
        return cls(m=float(m), c=float(c), M=float(M), L=stability_constant_L(c, M))

    @property
    def L_c2(self) -> float:
        return stability_constant_c2(self.c, self.M)

    def to_dict(self) -> dict:
        return {"m": self.m, "c": self.c, "M": self.M, "L": self.L, "L_c2": self.L_c2}


def system_to_json(system: FormLinearSystem) -> dict:
    out = {
        "dim": system.dim,
        "h0": matrix_to_json(system.h0),
        "interactions": [matrix_to_json(h) for h in system.interactions],
        "control_box": system.control_box.tolist(),
        "m": system.m,
    }
    if system.model is not None:
        out["model"] = system.model
    return out


def system_from_json(obj: dict) -> FormLinearSystem:
    if not isinstance(obj, dict):
        raise ValueError("system: expected a JSON object")
    for key in ("dim", "h0", "interactions", "control_box"):
        if key not in obj:
            raise ValueError(f"system: missing field '{key}'")
    h0 = matrix_from_json(obj["h0"], "h0")
    if h0.shape[0] != int(obj["dim"]):
        raise ValueError(f"system: field 'dim'={obj['dim']} disagrees with h0 dimension {h0.shape[0]}")
    hs = [matrix_from_json(h, f"interactions[{i}]") for i, h in enumerate(obj["interactions"])]
    box = obj["control_box"]
    if len(box) != len(hs):
        raise ValueError(f"system: 'control_box' has {len(box)} intervals for {len(hs)} interactions")
    return FormLinearSystem.build(h0, hs, box, m=obj.get("m"), model=obj.get("model"))
