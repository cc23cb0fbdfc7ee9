from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .polarization import JonesVector, StokesVector, jones_to_stokes, linear_state


@dataclass(frozen=True, eq=False)
class PhotonPulse:
    """``photon_count`` photons sharing one polarization state.

    ``state`` is a normalized complex amplitude vector: a Jones vector for
    polarization encodings, or a 4-vector for the two-qubit families.
    ``intensity`` scales with the number of photons left in the pulse.
    """

    photon_count: int
    state: np.ndarray
    intensity: float = 1.0

    def __post_init__(self):
        if self.photon_count < 1:
            raise ValueError(f"a pulse needs at least one photon, got {self.photon_count}")
        v = self.state
        if not (isinstance(v, np.ndarray) and v.dtype == complex and v.ndim == 1):
            v = np.asarray(v, dtype=complex).reshape(-1)
        norm = math.sqrt(np.vdot(v, v).real)
        if norm == 0:
            raise ValueError("pulse state must be nonzero")
        if abs(norm - 1.0) > 1e-12:
            v = v / norm
        object.__setattr__(self, "state", v)

    @classmethod
    def linear(cls, angle: float, photon_count: int = 1, intensity: float = 1.0) -> PhotonPulse:
        return cls(photon_count, linear_state(angle).array, intensity)

    @property
    def dimension(self) -> int:
        return self.state.shape[0]

    @property
    def polarization(self) -> JonesVector:
        if self.dimension != 2:
            raise ValueError("only two-dimensional pulses have a polarization")
        return JonesVector(complex(self.state[0]), complex(self.state[1]))

    @property
    def stokes(self) -> StokesVector:
        return jones_to_stokes(self.polarization, self.intensity)

    def with_state(self, state) -> PhotonPulse:
        return PhotonPulse(self.photon_count, state, self.intensity)

    @classmethod
    def trusted(cls, photon_count: int, state: np.ndarray, intensity: float = 1.0) -> PhotonPulse:
        """Skip validation; ``state`` must already be a normalized complex vector."""
        out = object.__new__(cls)
        object.__setattr__(out, "photon_count", photon_count)
        object.__setattr__(out, "state", state)
        object.__setattr__(out, "intensity", intensity)
        return out

    def evolved(self, state: np.ndarray) -> PhotonPulse:
        """Copy with ``state``, trusted to be normalized (output of a unitary)."""
        return PhotonPulse.trusted(self.photon_count, state, self.intensity)

    def with_photons(self, n: int) -> PhotonPulse:
        if n < 1:
            raise ValueError(f"a pulse needs at least one photon, got {n}")
        return PhotonPulse.trusted(n, self.state, self.intensity * n / self.photon_count)

    def probabilities(self) -> np.ndarray:
        """Born-rule probabilities over the computational basis."""
        return np.abs(self.state) ** 2
