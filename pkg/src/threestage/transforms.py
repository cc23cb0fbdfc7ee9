"""Commuting transformation families used as the secret operations.

Every family exposes its elements as :class:`UnitaryTransform` objects and
records whether its members commute exactly or only up to a global phase.
Two-qubit basis states are ordered |00>, |01>, |10>, |11> (indices 0..3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .polarization import ALGEBRA_TOL, JonesVector, is_unitary, rotation_operator

EXACT = "exact"
PHASE = "phase"


@dataclass(frozen=True, eq=False)
class UnitaryTransform:
    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        n = m.shape[0] if m.ndim == 2 else 0
        if m.ndim != 2 or m.shape != (n, n) or n < 2 or n & (n - 1):
            raise ValueError(f"unitary must be square with power-of-two size, got {m.shape}")
        if not is_unitary(m, ALGEBRA_TOL):
            raise ValueError(f"{self.label or 'matrix'} is not unitary")
        object.__setattr__(self, "matrix", m)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def dagger(self) -> UnitaryTransform:
        return UnitaryTransform(self.matrix.conj().T, f"{self.label}^dagger")

    def __matmul__(self, other):
        if isinstance(other, UnitaryTransform):
            return UnitaryTransform(self.matrix @ other.matrix, f"{self.label}*{other.label}")
        if isinstance(other, JonesVector):
            return JonesVector.from_array(self.matrix @ other.array)
        if isinstance(other, np.ndarray):
            return self.matrix @ other
        return NotImplemented

    def __call__(self, state):
        return self @ state


_PAULI = {
    "I": np.array([[1, 0], [0, 1]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

_QUATERNIONS = (
    np.array([[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], dtype=complex),
    np.array([[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]], dtype=complex),
    np.array([[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]], dtype=complex),
    np.eye(4, dtype=complex),
)


def pauli(which: str) -> UnitaryTransform:
    try:
        return UnitaryTransform(_PAULI[which.upper()], f"pauli.{which.upper()}")
    except KeyError:
        raise ValueError(f"unknown Pauli operator {which!r}") from None


def hadamard_pair(which: str) -> UnitaryTransform:
    """K is the do-nothing element, L the Hadamard."""
    w = which.upper()
    if w == "K":
        return UnitaryTransform(np.eye(2), "hadamard.K")
    if w == "L":
        return UnitaryTransform(np.array([[1, 1], [1, -1]]) / math.sqrt(2), "hadamard.L")
    raise ValueError(f"hadamard pair element must be K or L, got {which!r}")


def two_qubit_permutations() -> tuple[UnitaryTransform, UnitaryTransform]:
    u_a = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
    u_b = np.array([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])
    return UnitaryTransform(u_a, "permutation.A"), UnitaryTransform(u_b, "permutation.B")


def two_qubit_dft() -> UnitaryTransform:
    m = 0.5 * np.array(
        [
            [1, 1, 1, 1],
            [1, 1j, -1, -1j],
            [1, -1, 1, -1],
            [1, -1j, -1, 1j],
        ]
    )
    return UnitaryTransform(m, "dft")


def quaternion_set() -> list[UnitaryTransform]:
    return [UnitaryTransform(q, f"quaternion.{i + 1}") for i, q in enumerate(_QUATERNIONS)]


def rotation(theta: float) -> UnitaryTransform:
    return UnitaryTransform(rotation_operator(theta).matrix, f"rotation({theta:g})")


def _check_dims(a: UnitaryTransform, b: UnitaryTransform) -> None:
    if a.dimension != b.dimension:
        raise ValueError(f"dimension mismatch: {a.dimension} vs {b.dimension}")


def commutes(a: UnitaryTransform, b: UnitaryTransform, tol: float = ALGEBRA_TOL) -> bool:
    _check_dims(a, b)
    ab = a.matrix @ b.matrix
    ba = b.matrix @ a.matrix
    return bool(np.max(np.abs(ab - ba)) <= tol)


def commutes_up_to_phase(
    a: UnitaryTransform, b: UnitaryTransform, tol: float = ALGEBRA_TOL
) -> Optional[complex]:
    """Return lambda with AB = lambda * BA and |lambda| = 1, or None."""
    _check_dims(a, b)
    ab = a.matrix @ b.matrix
    ba = b.matrix @ a.matrix
    idx = np.unravel_index(np.argmax(np.abs(ba)), ba.shape)
    lam = ab[idx] / ba[idx]
    if abs(abs(lam) - 1.0) > tol:
        return None
    if np.max(np.abs(ab - lam * ba)) > tol:
        return None
    # snap to the nearest root of unity so callers can compare against +-1, +-i
    for root in (1, -1, 1j, -1j):
        if abs(lam - root) <= tol:
            return complex(root)
    return complex(lam)


def recovers_ray(a: UnitaryTransform, b: UnitaryTransform, state, tol: float = ALGEBRA_TOL) -> bool:
    """True when B^dagger A^dagger B A maps ``state`` onto its own ray."""
    _check_dims(a, b)
    v = state.array if isinstance(state, JonesVector) else np.asarray(state, dtype=complex)
    out = b.matrix.conj().T @ a.matrix.conj().T @ b.matrix @ a.matrix @ v
    overlap = np.vdot(v, out)
    if abs(overlap) == 0:
        return False
    phase = overlap / abs(overlap)
    return bool(np.max(np.abs(out - phase * v)) <= tol)


@dataclass(frozen=True)
class TransformFamily:
    """A set of transformations Alice and Bob pick their secret element from.

    ``elements`` is empty for the continuous rotation family, whose random
    element is an angle drawn uniformly on [0, 360).
    """

    name: str
    dimension: int
    commutation: str
    elements: tuple = field(default=(), repr=False)
    _sampler: Optional[Callable] = field(default=None, repr=False, compare=False)

    @property
    def is_continuous(self) -> bool:
        return not self.elements

    def random_element(self, rng: np.random.Generator) -> UnitaryTransform:
        if self.is_continuous:
            return self._sampler(rng)
        return self.elements[int(rng.integers(len(self.elements)))]

    def enumerate(self, grid: int = 360) -> list[UnitaryTransform]:
        """Every element, or ``grid`` equally spaced rotations for the continuous family."""
        if self.is_continuous:
            return [rotation(360.0 * i / grid) for i in range(grid)]
        return list(self.elements)


def _make_families() -> dict[str, TransformFamily]:
    perm_a, perm_b = two_qubit_permutations()
    return {
        "rotation": TransformFamily(
            "rotation", 2, EXACT, (), lambda rng: rotation(float(rng.uniform(0.0, 360.0)))
        ),
        "pauli": TransformFamily("pauli", 2, PHASE, tuple(pauli(w) for w in "IXYZ")),
        "hadamard": TransformFamily("hadamard", 2, EXACT, (hadamard_pair("K"), hadamard_pair("L"))),
        "permutation": TransformFamily("permutation", 4, EXACT, (perm_a, perm_b)),
        "dft": TransformFamily(
            "dft", 4, EXACT, (UnitaryTransform(np.eye(4), "dft.identity"), two_qubit_dft())
        ),
        "quaternion": TransformFamily("quaternion", 4, PHASE, tuple(quaternion_set())),
    }


FAMILIES: dict[str, TransformFamily] = _make_families()


def get_family(name: str) -> TransformFamily:
    try:
        return FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown transformation family {name!r}; choose from {sorted(FAMILIES)}") from None


def commutation_table(family: TransformFamily, grid: int = 24) -> list[tuple[str, str, Optional[complex]]]:
    """Measured pairwise phase lambda for every ordered pair of family elements."""
    elems = family.enumerate(grid)
    return [(a.label, b.label, commutes_up_to_phase(a, b)) for a in elems for b in elems]


def family_behaviour(family: TransformFamily, grid: int = 24) -> str:
    """EXACT if every pair commutes, PHASE if some pair only commutes up to phase.

    Raises ValueError if any pair fails to commute even projectively.
    """
    result = EXACT
    for la, lb, lam in commutation_table(family, grid):
        if lam is None:
            raise ValueError(f"{la} and {lb} do not commute, even up to phase")
        if abs(lam - 1) > ALGEBRA_TOL:
            result = PHASE
    return result


def masking_probability(family: TransformFamily, basis_state, grid: int = 360) -> float:
    """Probability that a uniformly chosen element moves a basis state off itself.

    ``basis_state`` is a JonesVector (|0> or |1>) for two-dimensional families
    or a basis index for any family. The result is the average over elements
    of the computational-basis measurement probability of any outcome other
    than the input index. For the rotation family the average uses ``grid``
    equally spaced angles, which is exact for the degree-2 trigonometric
    polynomial involved.
    """
    if isinstance(basis_state, JonesVector):
        v = basis_state.array
        hits = np.flatnonzero(np.abs(np.abs(v) - 1.0) <= ALGEBRA_TOL)
        if v.shape[0] != family.dimension or hits.size != 1:
            raise ValueError("basis_state must be a computational basis vector")
        index = int(hits[0])
    else:
        index = int(basis_state)
        if not 0 <= index < family.dimension:
            raise ValueError(f"basis index {index} out of range for dimension {family.dimension}")
    elems = family.enumerate(grid)
    stay = [abs(u.matrix[index, index]) ** 2 for u in elems]
    return float(1.0 - math.fsum(stay) / len(elems))


def superposition_probability(family: TransformFamily, index: int = 0, grid: int = 360) -> float:
    """Fraction of elements that take basis state ``index`` out of the computational basis."""
    elems = family.enumerate(grid)
    count = 0
    for u in elems:
        column = np.abs(u.matrix[:, index]) ** 2
        if np.max(column) < 1.0 - ALGEBRA_TOL:
            count += 1
    return count / len(elems)


def closed_up_to_phase(elements, tol: float = ALGEBRA_TOL) -> bool:
    """Every product of two elements equals some element times a unit phase."""
    mats = [e.matrix for e in elements]
    for a in mats:
        for b in mats:
            p = a @ b
            if not any(_phase_equal(p, c, tol) for c in mats):
                return False
    return True


def closed_exactly(elements, tol: float = ALGEBRA_TOL) -> bool:
    mats = [e.matrix for e in elements]
    return all(
        any(np.max(np.abs(a @ b - c)) <= tol for c in mats) for a in mats for b in mats
    )


def _phase_equal(a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    idx = np.unravel_index(np.argmax(np.abs(b)), b.shape)
    if abs(b[idx]) == 0:
        return False
    lam = a[idx] / b[idx]
    return abs(abs(lam) - 1) <= tol and bool(np.max(np.abs(a - lam * b)) <= tol)
