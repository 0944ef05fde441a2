"""Dense Hermitian linear algebra and the norms of a scale of Hilbert spaces.

A reference operator ``a0 = h0 + (m + 1)`` fixes the scale
``H+ ⊂ H ⊂ H-`` with ``||phi||_± = ||a0^{±1/2} phi||``.  Operators between
the spaces are measured by weighting with the appropriate half powers.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

HERMITIAN_RTOL = 1e-12
EIGEN_FLOOR = 1e-14
# below this dimension spectral norms come from a full SVD
SVD_MAX_DIM = 128
POWER_ITER_TOL = 1e-12


class NotPositiveDefiniteError(ValueError):
    def __init__(self, smallest: float):
        super().__init__(f"matrix is not positive definite: smallest eigenvalue {smallest:.6g}")
        self.smallest = smallest


def as_hermitian(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a complex square array, checking Hermiticity."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    scale = max(float(np.max(np.abs(a))), 1e-300)
    defect = float(np.max(np.abs(a - a.conj().T)))
    if defect > HERMITIAN_RTOL * scale:
        raise ValueError(f"{name} is not Hermitian (defect {defect:.3g}, scale {scale:.3g})")
    return a


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def hermitian_power(a, exponent: float) -> np.ndarray:
    """``a**exponent`` for Hermitian ``a`` and exponent in {-1, -1/2, 1/2, 1}.

    Computed through the eigendecomposition.  Negative powers require a
    positive definite matrix; eigenvalues in ``(-tol, 1e-14)`` are clamped
    with a warning, anything more negative is rejected.
    """
    if exponent not in (-1, -0.5, 0.5, 1):
        raise ValueError(f"unsupported exponent {exponent}")
    a = as_hermitian(a)
    if exponent == 1:
        return a.copy()
    w, v = np.linalg.eigh(a)
    scale = max(float(np.max(np.abs(w))), 1.0)
    tol = 1e-10 * scale
    smallest = float(w[0])
    if exponent < 0 and smallest <= -tol:
        raise NotPositiveDefiniteError(smallest)
    if exponent > 0 and smallest < -tol:
        raise NotPositiveDefiniteError(smallest)
    if smallest < EIGEN_FLOOR and exponent < 0:
        logger.warning("clamping eigenvalue %.3g to %.0e before negative power", smallest, EIGEN_FLOOR)
        w = np.maximum(w, EIGEN_FLOOR)
    elif smallest < 0:
        w = np.maximum(w, 0.0)
    return hermitize((v * w**exponent) @ v.conj().T)


def spectral_norm(m: np.ndarray) -> float:
    """Largest singular value; full SVD for small matrices, power iteration above."""
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    if max(m.shape) < SVD_MAX_DIM:
        return float(np.linalg.svd(m, compute_uv=False)[0])
    return _power_norm(m)


def _power_norm(m: np.ndarray, max_iter: int = 10_000) -> float:
    rng = np.random.default_rng(0)
    x = rng.standard_normal(m.shape[1]) + 1j * rng.standard_normal(m.shape[1])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = m.conj().T @ (m @ x)
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            return 0.0
        x = y / ny
        if abs(ny - lam) <= POWER_ITER_TOL * ny:
            break
        lam = ny
    return float(np.linalg.norm(m @ x))


@dataclass(frozen=True)
class ScaleFrame:
    """Reference operator ``a0 = h0 + (m+1)`` with cached half powers."""

    a0: np.ndarray
    a0_sqrt: np.ndarray = field(repr=False)
    a0_inv_sqrt: np.ndarray = field(repr=False)
    m: float = 0.0

    @classmethod
    def from_h0(cls, h0, m: float = 0.0) -> "ScaleFrame":
        if m < 0:
            raise ValueError("lower bound m must be non-negative")
        h0 = as_hermitian(h0, "h0")
        return cls.from_operator(h0 + (m + 1.0) * np.eye(h0.shape[0]), m=m)

    @classmethod
    def from_operator(cls, a0, m: float = 0.0) -> "ScaleFrame":
        a0 = as_hermitian(a0, "a0")
        w, v = np.linalg.eigh(a0)
        if w[0] < 1.0 - 1e-10:
            raise NotPositiveDefiniteError(float(w[0]))
        sq = hermitize((v * np.sqrt(w)) @ v.conj().T)
        isq = hermitize((v / np.sqrt(w)) @ v.conj().T)
        return cls(a0=a0, a0_sqrt=sq, a0_inv_sqrt=isq, m=float(m))

    @property
    def dim(self) -> int:
        return self.a0.shape[0]

    def norm_plus(self, phi) -> float:
        return float(np.linalg.norm(self.a0_sqrt @ phi))

    def norm_minus(self, phi) -> float:
        return float(np.linalg.norm(self.a0_inv_sqrt @ phi))


def _check_dim(n: int, *arrays) -> None:
    for a in arrays:
        if a.shape[0] != n or (a.ndim == 2 and a.shape[1] != n):
            raise ValueError(f"dimension mismatch: expected {n}, got shape {a.shape}")


def weighted_norm(phi, frame_op, sign: str = "plus") -> float:
    """``||frame_op^{±1/2} phi||`` for a positive definite ``frame_op``.

    ``frame_op`` may be a matrix or a :class:`ScaleFrame`.
    """
    phi = np.asarray(phi, dtype=complex)
    if sign not in ("plus", "minus"):
        raise ValueError("sign must be 'plus' or 'minus'")
    if isinstance(frame_op, ScaleFrame):
        _check_dim(frame_op.dim, phi)
        return frame_op.norm_plus(phi) if sign == "plus" else frame_op.norm_minus(phi)
    a = np.asarray(frame_op, dtype=complex)
    _check_dim(a.shape[0], phi)
    if sign == "plus":
        q = np.vdot(phi, a @ phi).real
    else:
        q = np.vdot(phi, np.linalg.solve(a, phi)).real
    return float(np.sqrt(max(q, 0.0)))


def norm_plus_minus(v, frame: ScaleFrame) -> float:
    """Norm of ``v`` as a map ``H+ -> H-``."""
    v = np.asarray(v, dtype=complex)
    _check_dim(frame.dim, v)
    return spectral_norm(frame.a0_inv_sqrt @ v @ frame.a0_inv_sqrt)


def norm_minus_plus(v, frame: ScaleFrame) -> float:
    """Norm of ``v`` as a map ``H- -> H+``."""
    v = np.asarray(v, dtype=complex)
    _check_dim(frame.dim, v)
    return spectral_norm(frame.a0_sqrt @ v @ frame.a0_sqrt)


def matrix_to_json(a) -> dict:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("only square matrices serialize")
    return {
        "dim": int(a.shape[0]),
        "re": a.real.ravel().tolist(),
        "im": a.imag.ravel().tolist(),
    }


def matrix_from_json(obj: dict, name: str = "matrix") -> np.ndarray:
    for key in ("dim", "re"):
        if key not in obj:
            raise ValueError(f"{name}: missing field '{key}'")
    n = int(obj["dim"])
    re = np.asarray(obj["re"], dtype=float)
    im = np.asarray(obj.get("im", np.zeros(n * n)), dtype=float)
    if re.size != n * n or im.size != n * n:
        raise ValueError(f"{name}: expected {n * n} entries for dim {n}, got re={re.size}, im={im.size}")
    return (re + 1j * im).reshape(n, n)
