"""Jones and Mueller/Stokes calculus for fully polarized light.

Conventions used throughout the package:

* angles in public functions are degrees;
* Mueller matrices act on column Stokes vectors (``M @ s``), and a chain of
  elements is written right-to-left, the first element the beam meets being
  the rightmost factor;
* Stokes parameters follow s1 = |c0|^2 - |c1|^2, s2 = 2 Re(c0* c1),
  s3 = 2 Im(c0* c1) for a Jones vector (c0, c1) in the horizontal/vertical
  basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ALGEBRA_TOL = 1e-12
TRIG_TOL = 1e-9

# Pauli basis in Stokes order: s0 <-> I, s1 <-> Z, s2 <-> X, s3 <-> Y
_STOKES_PAULI = (
    np.eye(2, dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
)


class NotNormalizedError(ValueError):
    pass


class NotUnitaryError(ValueError):
    pass


@dataclass(frozen=True)
class JonesVector:
    """Complex amplitudes of the horizontal (c0) and vertical (c1) field."""

    c0: complex
    c1: complex

    @classmethod
    def from_array(cls, a) -> JonesVector:
        a = np.asarray(a, dtype=complex).reshape(2)
        return cls(complex(a[0]), complex(a[1]))

    @property
    def array(self) -> np.ndarray:
        return np.array([self.c0, self.c1], dtype=complex)

    @property
    def norm(self) -> float:
        return math.sqrt(abs(self.c0) ** 2 + abs(self.c1) ** 2)

    def is_normalized(self, tol: float = TRIG_TOL) -> bool:
        return abs(self.norm - 1.0) <= tol

    def normalized(self) -> JonesVector:
        n = self.norm
        if n == 0:
            raise NotNormalizedError("zero Jones vector has no direction")
        return JonesVector(self.c0 / n, self.c1 / n)

    def inner(self, other: JonesVector) -> complex:
        """<self|other>."""
        return self.c0.conjugate() * other.c0 + self.c1.conjugate() * other.c1


@dataclass(frozen=True)
class StokesVector:
    s0: float
    s1: float
    s2: float
    s3: float

    @classmethod
    def from_array(cls, a) -> StokesVector:
        a = np.asarray(a, dtype=float).reshape(4)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @property
    def array(self) -> np.ndarray:
        return np.array([self.s0, self.s1, self.s2, self.s3], dtype=float)

    @property
    def degree_of_polarization(self) -> float:
        if self.s0 <= 0:
            return 0.0
        return math.sqrt(self.s1**2 + self.s2**2 + self.s3**2) / self.s0

    def is_physical(self, tol: float = TRIG_TOL) -> bool:
        return self.s0 >= 0 and math.sqrt(self.s1**2 + self.s2**2 + self.s3**2) <= self.s0 + tol

    def allclose(self, other: StokesVector, tol: float = ALGEBRA_TOL) -> bool:
        return bool(np.allclose(self.array, other.array, rtol=0.0, atol=tol))


@dataclass(frozen=True, eq=False)
class JonesOperator:
    """A lossless (unitary) 2x2 polarization element."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (2, 2):
            raise ValueError(f"Jones operator must be 2x2, got {m.shape}")
        if not is_unitary(m, ALGEBRA_TOL):
            raise NotUnitaryError("Jones operator is not unitary")
        object.__setattr__(self, "matrix", m)

    def __matmul__(self, other):
        if isinstance(other, JonesOperator):
            return JonesOperator(self.matrix @ other.matrix)
        if isinstance(other, JonesVector):
            return JonesVector.from_array(self.matrix @ other.array)
        return NotImplemented

    @property
    def dagger(self) -> JonesOperator:
        return JonesOperator(self.matrix.conj().T)

    def allclose(self, other: JonesOperator, tol: float = ALGEBRA_TOL) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, rtol=0.0, atol=tol))


@dataclass(frozen=True, eq=False)
class MuellerMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"Mueller matrix must be 4x4, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    def __matmul__(self, other):
        if isinstance(other, MuellerMatrix):
            return MuellerMatrix(self.matrix @ other.matrix)
        if isinstance(other, StokesVector):
            return apply_mueller(self, other)
        return NotImplemented

    def allclose(self, other: MuellerMatrix, tol: float = ALGEBRA_TOL) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, rtol=0.0, atol=tol))


IDENTITY_MUELLER = MuellerMatrix(np.eye(4))


def is_unitary(m: np.ndarray, tol: float = ALGEBRA_TOL) -> bool:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    return bool(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) <= tol)


def _cos_sin(deg: float) -> tuple[float, float]:
    # exact values at multiples of 90 deg keep integer-angle grids free of 1e-17 noise
    r = math.fmod(deg, 360.0)
    if r % 90.0 == 0.0:
        q = int(r // 90.0) % 4
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[q]
    rad = math.radians(r)
    return math.cos(rad), math.sin(rad)


def linear_state(angle: float) -> JonesVector:
    """Linear polarization at ``angle`` degrees from horizontal."""
    c, s = _cos_sin(angle)
    return JonesVector(complex(c), complex(s))


def linear_angle(state: JonesVector) -> float:
    """Orientation of the polarization ellipse in degrees, in [0, 180)."""
    st = jones_to_stokes(state.normalized())
    return math.degrees(0.5 * math.atan2(st.s2, st.s1)) % 180.0


def same_ray(a: JonesVector | np.ndarray, b: JonesVector | np.ndarray, tol: float = TRIG_TOL) -> bool:
    """Equality up to global phase: |<a|b>| == |a||b|."""
    va = a.array if isinstance(a, JonesVector) else np.asarray(a, dtype=complex)
    vb = b.array if isinstance(b, JonesVector) else np.asarray(b, dtype=complex)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        return na == nb
    overlap = np.vdot(va, vb)
    if abs(overlap) == 0:
        return False
    phase = overlap / abs(overlap)
    return bool(np.max(np.abs(vb / nb - phase * va / na)) <= tol)


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = _cos_sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def half_wave_plate_matrix(m: float) -> np.ndarray:
    c, s = _cos_sin(2.0 * m)
    return np.array([[c, s], [s, -c]], dtype=complex)


def rotation_operator(theta: float) -> JonesOperator:
    """Rotate linear polarization by ``theta`` degrees (counter-clockwise)."""
    return JonesOperator(rotation_matrix(theta))


def half_wave_plate_jones(m: float) -> JonesOperator:
    """Ideal half-wave plate with fast axis at ``m`` degrees.

    Reflects a linear polarization angle a to 2m - a.
    """
    return JonesOperator(half_wave_plate_matrix(m))


def half_wave_plate_mueller(m: float) -> MuellerMatrix:
    """Mueller matrix of an ideal half-wave plate with fast axis at ``m`` degrees.

    Parameters
    ----------
    m : float
        Fast-axis angle in degrees, any real value.

    Returns
    -------
    MuellerMatrix
        ``[[1,0,0,0],[0,cos4m,sin4m,0],[0,sin4m,-cos4m,0],[0,0,0,-1]]``.
        The matrix is symmetric and squares to the identity.
    """
    c, s = _cos_sin(4.0 * m)
    return MuellerMatrix(
        np.array(
            [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, c, s, 0.0],
                [0.0, s, -c, 0.0],
                [0.0, 0.0, 0.0, -1.0],
            ]
        )
    )


def linear_polarizer_mueller(angle: float) -> MuellerMatrix:
    """Ideal linear polarizer with transmission axis at ``angle`` degrees."""
    c, s = _cos_sin(2.0 * angle)
    return MuellerMatrix(
        0.5
        * np.array(
            [
                [1.0, c, s, 0.0],
                [c, c * c, c * s, 0.0],
                [s, c * s, s * s, 0.0],
                [0.0, 0.0, 0.0, 0.0],
            ]
        )
    )


def apply_mueller(m: MuellerMatrix, s: StokesVector) -> StokesVector:
    return StokesVector.from_array(m.matrix @ s.array)


def compose_mueller(*elements: MuellerMatrix) -> MuellerMatrix:
    """Product for a beam meeting ``elements`` in the given order.

    ``compose_mueller(A, B, C)`` returns ``C @ B @ A``.
    """
    out = np.eye(4)
    for e in elements:
        out = e.matrix @ out
    return MuellerMatrix(out)


def jones_to_stokes(v: JonesVector, intensity: float = 1.0) -> StokesVector:
    if intensity < 0:
        raise ValueError("intensity must be nonnegative")
    if not v.is_normalized(TRIG_TOL):
        raise NotNormalizedError(f"Jones vector has norm {v.norm!r}, expected 1")
    c0, c1 = v.c0, v.c1
    cross = c0.conjugate() * c1
    return StokesVector(
        float(intensity),
        float(intensity * (abs(c0) ** 2 - abs(c1) ** 2)),
        float(2.0 * intensity * cross.real),
        float(2.0 * intensity * cross.imag),
    )


def stokes_to_jones(s: StokesVector) -> JonesVector:
    """A normalized Jones vector for a fully polarized Stokes vector.

    The global phase is fixed by making c0 real and nonnegative.
    """
    if s.s0 <= 0:
        raise ValueError("Stokes vector carries no intensity")
    s1, s2, s3 = s.s1 / s.s0, s.s2 / s.s0, s.s3 / s.s0
    p = math.sqrt(s1 * s1 + s2 * s2 + s3 * s3)
    if p < 1e-12:
        raise ValueError("unpolarized light has no Jones vector")
    s1, s2, s3 = s1 / p, s2 / p, s3 / p
    c0 = math.sqrt(max(0.0, (1.0 + s1) / 2.0))
    if c0 < 1e-9:
        return JonesVector(0j, 1 + 0j)
    c1 = complex(s2, s3) / (2.0 * c0)
    return JonesVector(complex(c0), c1).normalized()


def jones_to_mueller(u: JonesOperator | np.ndarray) -> MuellerMatrix:
    """Mueller matrix induced by a unitary Jones operator.

    Entry (i, j) is Tr(sigma_i U sigma_j U^dagger) / 2 in the Stokes-ordered
    Pauli basis, so ``jones_to_stokes(u @ v) == jones_to_mueller(u) @ jones_to_stokes(v)``.
    """
    mat = u.matrix if isinstance(u, JonesOperator) else np.asarray(u, dtype=complex)
    if mat.shape != (2, 2) or not is_unitary(mat, ALGEBRA_TOL):
        raise NotUnitaryError("jones_to_mueller needs a 2x2 unitary")
    udag = mat.conj().T
    out = np.empty((4, 4))
    for i, si in enumerate(_STOKES_PAULI):
        for j, sj in enumerate(_STOKES_PAULI):
            out[i, j] = 0.5 * np.trace(si @ mat @ sj @ udag).real
    return MuellerMatrix(out)
