"""Concrete truncated systems: harmonic oscillator, particle in a box, seeded random systems."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .system import FormLinearSystem

MODEL_KINDS = ("oscillator", "box", "random")


def oscillator_position(n: int) -> np.ndarray:
    """Position operator in the number basis, ``x = (a + a^†) / sqrt(2)``."""
    off = np.sqrt(np.arange(1, n) / 2.0)
    return np.diag(off, 1) + np.diag(off, -1)


def oscillator_position_squared(n: int) -> np.ndarray:
    """Exact matrix elements of ``x^2`` (not the square of the truncated ``x``)."""
    k = np.arange(n)
    off = np.sqrt((k[:-2] + 1.0) * (k[:-2] + 2.0)) / 2.0
    return np.diag(k + 0.5) + np.diag(off, 2) + np.diag(off, -2)


def harmonic_oscillator(N: int, coupling: float = 1.0, channels: int = 1) -> FormLinearSystem:
    """``h0 = diag(k + 1/2)``, dipole ``coupling * x``; a second channel adds ``x^2`` on ``[-0.5, 0.5]``."""
    if N < 2:
        raise ValueError("oscillator needs N >= 2")
    if channels not in (1, 2):
        raise ValueError("oscillator supports 1 or 2 channels")
    h0 = np.diag(np.arange(N) + 0.5)
    hs = [coupling * oscillator_position(N)]
    box = [[-1.0, 1.0]]
    if channels == 2:
        # x^2 >= 0 and u >= -1/2 keeps H(u) >= 0 in the full space
        hs.append(coupling * oscillator_position_squared(N))
        box.append([-0.5, 0.5])
    return FormLinearSystem.build(h0, hs, box, model={
        "kind": "oscillator", "dim": N, "coupling": coupling, "channels": channels})


def box_dipole(N: int) -> np.ndarray:
    """``<k| x |l>`` for the infinite well on ``[0, 1]``, ``k, l = 1..N``."""
    k = np.arange(1, N + 1, dtype=float)
    kk, ll = np.meshgrid(k, k, indexing="ij")
    with np.errstate(divide="ignore", invalid="ignore"):
        x = -8.0 * kk * ll / (math.pi**2 * (kk**2 - ll**2) ** 2)
    odd = (np.abs(kk - ll).astype(int) % 2) == 1
    x = np.where(odd, x, 0.0)
    np.fill_diagonal(x, 0.5)
    return x


def particle_in_box(N: int, coupling: float = 1.0) -> FormLinearSystem:
    """``h0 = diag(k^2 pi^2)``, ``k = 1..N``, with dipole ``coupling * x``."""
    if N < 2:
        raise ValueError("box needs N >= 2")
    h0 = np.diag((np.arange(1, N + 1) * math.pi) ** 2)
    return FormLinearSystem.build(h0, [coupling * box_dipole(N)], [[-1.0, 1.0]], model={
        "kind": "box", "dim": N, "coupling": coupling, "channels": 1})


def random_system(N: int, p: int = 1, seed: int = 0) -> FormLinearSystem:
    """Random drift with ``k^1.5`` growth and interactions scaled to unit ``||.||_{+,-}``.

    Each interaction is ``R`` with entries damped by ``(1 + lambda_k)^{-1/2}``
    on both sides, then divided by its ``||.||_{+,-}`` norm.
    """
    if N < 2 or p < 1:
        raise ValueError("random system needs N >= 2 and p >= 1")
    rng = np.random.default_rng(seed)
    k = np.arange(1, N + 1, dtype=float)
    lam = np.sort(k**1.5 * (1.0 + 0.1 * rng.uniform(-1.0, 1.0, N)))
    h0 = np.diag(lam)
    damp = (1.0 + lam) ** -0.5
    isq = 1.0 / np.sqrt(1.0 + lam)
    hs = []
    for _ in range(p):
        r = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
        r = 0.5 * (r + r.conj().T)
        h = damp[:, None] * r * damp[None, :]
        w = isq[:, None] * h * isq[None, :]
        hs.append(h / np.linalg.norm(w, 2))
    return FormLinearSystem.build(h0, hs, [[-1.0, 1.0]] * p, model={
        "kind": "random", "dim": N, "channels": p, "seed": seed})


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    dim: int
    channels: int = 1
    params: dict = field(default_factory=dict)

    def build(self) -> FormLinearSystem:
        if self.kind == "oscillator":
            return harmonic_oscillator(self.dim, self.params.get("coupling", 1.0), self.channels)
        if self.kind == "box":
            if self.channels != 1:
                raise ValueError("box model has one channel")
            return particle_in_box(self.dim, self.params.get("coupling", 1.0))
        if self.kind == "random":
            return random_system(self.dim, self.channels, int(self.params.get("seed", 0)))
        raise ValueError(f"unknown model kind '{self.kind}', expected one of {MODEL_KINDS}")
