"""Two-arm polarization detector with extinction leakage and dark clicks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ERASURE = -1

MAX = "max"
PROPORTIONAL = "proportional"


@dataclass(frozen=True)
class DetectorModel:
    """Detector pair behind the 0-degree and 90-degree analyzers.

    ``extinction_ratio`` leaks 1/ratio of each arm's intensity into the other
    arm (``math.inf`` disables leakage). ``rule`` picks the decision model:

    * ``"max"``: the arm with the greater intensity wins, ties broken at random;
    * ``"proportional"``: each photon clicks arm 1 with probability
      I1 / (I0 + I1) and the arm with more clicks wins. For a one-photon
      pulse this is the Born rule.

    A dark click replaces the slot outcome with a uniformly random arm.
    """

    extinction_ratio: float = 500.0
    dark_click_probability: float = 0.0
    rule: str = MAX

    def __post_init__(self):
        if not self.extinction_ratio > 0:
            raise ValueError("extinction ratio must be positive")
        if not 0.0 <= self.dark_click_probability <= 1.0:
            raise ValueError("dark click probability must lie in [0, 1]")
        if self.rule not in (MAX, PROPORTIONAL):
            raise ValueError(f"unknown decision rule {self.rule!r}")

    @classmethod
    def ideal(cls) -> DetectorModel:
        """No leakage, no dark clicks, Born-rule photon counting."""
        return cls(math.inf, 0.0, PROPORTIONAL)

    def leaked(self, i0: float, i1: float) -> tuple[float, float]:
        if math.isinf(self.extinction_ratio):
            return i0, i1
        r = self.extinction_ratio
        return i0 + i1 / r, i1 + i0 / r


def detector_click(
    intensities: tuple[float, float],
    detector: DetectorModel,
    rng: np.random.Generator,
    photons: int = 1,
) -> int:
    """Return 0, 1 or ERASURE for light reaching the (0-degree, 90-degree) arms."""
    i0, i1 = intensities
    if i0 < 0 or i1 < 0:
        raise ValueError("intensities must be nonnegative")
    if detector.dark_click_probability > 0 and rng.random() < detector.dark_click_probability:
        return int(rng.integers(2))
    i0, i1 = detector.leaked(i0, i1)
    total = i0 + i1
    if total <= 0:
        return ERASURE
    if detector.rule == MAX:
        if i0 > i1:
            return 0
        if i1 > i0:
            return 1
        return int(rng.integers(2))
    p1 = i1 / total
    if p1 <= 0.0:
        return 0
    if p1 >= 1.0:
        return 1
    if photons == 1:
        return int(rng.random() < p1)
    ones = int(rng.binomial(photons, p1))
    if 2 * ones > photons:
        return 1
    if 2 * ones < photons:
        return 0
    return int(rng.integers(2))
