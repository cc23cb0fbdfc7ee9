"""Free-space optical bench: every element in beam order, as Mueller matrices.

Beam order::

    laser -> 50/50 splitter -+- upper: shutter(1) -> polarizer 90 -> mirror -+
                             +- lower: shutter(0) -> polarizer 0  -> mirror -+
    -> combiner -> HWP Alice1 (x) -> HWP Bob1 (y) -> mirror -> HWP Alice2 (-x)
    -> mirror -> HWP Bob2 (-y) -> splitter -+- polarizer 90 -> detector 1
                                            +- polarizer 0  -> detector 0

Stokes intensities are in units of the laser output power.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .detector import ERASURE, DetectorModel, detector_click
from .polarization import (
    IDENTITY_MUELLER,
    MuellerMatrix,
    StokesVector,
    apply_mueller,
    compose_mueller,
    half_wave_plate_mueller,
    linear_polarizer_mueller,
    stokes_to_jones,
)
from .protocol import BENCH, SessionTranscript, run_session
from .pulse import PhotonPulse
from .timing import Limits, TimingReport, schedule_session


def _pair(v) -> tuple:
    if isinstance(v, str):
        v = [p for p in v.replace(",", " ").split() if p]
    a, b = (float(x) for x in v)
    return (a, b)


@dataclass(frozen=True)
class BenchConfig:
    """Hardware constants of the bench and the current plate angles.

    Units: wavelength nm, source_power mW, source_extinction ratio (x:1),
    shutter_max_rate Hz, shutter_min_on ms, rotator_max_speed deg/s,
    rotator_range deg, plate angles and source_angle deg.
    """

    wavelength: float = 632.8
    source_power: float = 0.8
    source_extinction: float = 500.0
    shutter_max_rate: float = 25.0
    shutter_min_on: float = 10.0
    rotator_max_speed: float = 25.0
    rotator_range: float = 360.0
    alice_plate_angles: tuple = (0.0, 0.0)
    bob_plate_angles: tuple = (0.0, 0.0)
    source_angle: float = 45.0

    def __post_init__(self):
        object.__setattr__(self, "alice_plate_angles", _pair(self.alice_plate_angles))
        object.__setattr__(self, "bob_plate_angles", _pair(self.bob_plate_angles))
        for name in (
            "wavelength",
            "source_power",
            "source_extinction",
            "shutter_max_rate",
            "shutter_min_on",
            "rotator_max_speed",
            "rotator_range",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("alice_plate_angles", "bob_plate_angles"):
            a, b = getattr(self, name)
            if abs(math.remainder(a + b, 360.0)) > 1e-9:
                raise ValueError(f"{name} must be (angle, -angle), got ({a}, {b})")

    @classmethod
    def with_angles(cls, x: float, y: float, **kw) -> BenchConfig:
        return cls(alice_plate_angles=(x, -x), bob_plate_angles=(y, -y), **kw)

    @property
    def x(self) -> float:
        return self.alice_plate_angles[0]

    @property
    def y(self) -> float:
        return self.bob_plate_angles[0]

    @property
    def limits(self) -> Limits:
        return Limits.from_config(self)

    @classmethod
    def from_mapping(cls, values: dict) -> BenchConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown bench config keys: {sorted(unknown)}")
        kw = {k: (v if k.endswith("_angles") else float(v)) for k, v in values.items()}
        return cls(**kw)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> BenchConfig:
        """Read ``key = value`` lines; keys are the field names."""
        return cls.from_mapping(read_flat_config(path))


def read_flat_config(path: Union[str, Path]) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string("[top]\n" + Path(path).read_text())
    return dict(parser["top"])


@dataclass(frozen=True)
class Element:
    name: str
    mueller: MuellerMatrix


def _shutter(name: str, is_open: bool) -> Element:
    return Element(name, IDENTITY_MUELLER if is_open else MuellerMatrix(np.zeros((4, 4))))


HALF = MuellerMatrix(0.5 * np.eye(4))


@dataclass(frozen=True)
class BeamPath:
    """Elements in the order the light meets them, for one bit slot."""

    upper: tuple  # carries "1"
    lower: tuple  # carries "0"
    plates: tuple
    arm1: tuple
    arm0: tuple

    def names(self) -> list:
        return (
            ["laser", "splitter"]
            + [e.name for e in self.upper]
            + [e.name for e in self.lower]
            + ["combiner"]
            + [e.name for e in self.plates]
            + ["splitter"]
            + [e.name for e in self.arm1]
            + [e.name for e in self.arm0]
        )


def beam_path(config: BenchConfig, bit: int) -> BeamPath:
    x, mx = config.alice_plate_angles
    y, my = config.bob_plate_angles
    return BeamPath(
        upper=(
            _shutter("shutter1", bit == 1),
            Element("polarizer90", linear_polarizer_mueller(90.0)),
            Element("mirror1", IDENTITY_MUELLER),
        ),
        lower=(
            _shutter("shutter0", bit == 0),
            Element("polarizer0", linear_polarizer_mueller(0.0)),
            Element("mirror2", IDENTITY_MUELLER),
        ),
        plates=(
            Element("alice1", half_wave_plate_mueller(x)),
            Element("bob1", half_wave_plate_mueller(y)),
            Element("mirror3", IDENTITY_MUELLER),
            Element("alice2", half_wave_plate_mueller(mx)),
            Element("mirror4", IDENTITY_MUELLER),
            Element("bob2", half_wave_plate_mueller(my)),
        ),
        arm1=(Element("analyzer90", linear_polarizer_mueller(90.0)), Element("detector1", IDENTITY_MUELLER)),
        arm0=(Element("analyzer0", linear_polarizer_mueller(0.0)), Element("detector0", IDENTITY_MUELLER)),
    )


def source_stokes(config: BenchConfig) -> StokesVector:
    """Laser output: unit intensity, polarized fraction set by the extinction ratio."""
    r = config.source_extinction
    dop = 1.0 if math.isinf(r) else (r - 1.0) / (r + 1.0)
    a = math.radians(2.0 * config.source_angle)
    return StokesVector(1.0, dop * math.cos(a), dop * math.sin(a), 0.0)


def _through(elements: Sequence[Element], s: StokesVector) -> StokesVector:
    return apply_mueller(compose_mueller(*(e.mueller for e in elements)), s)


def split(s: StokesVector) -> tuple:
    """Ideal lossless, polarization-neutral 50/50 split."""
    half = apply_mueller(HALF, s)
    return half, half


def combine(upper: StokesVector, lower: StokesVector) -> StokesVector:
    """Pass whichever arm is lit; both lit at once is a shutter misconfiguration."""
    if upper.s0 > 0 and lower.s0 > 0:
        raise ValueError("both shutters open: the combiner would mix the two encodings")
    return upper if upper.s0 > 0 else lower


def encode_stage(config: BenchConfig, bit: int) -> StokesVector:
    upper, lower = split(source_stokes(config))
    path = beam_path(config, bit)
    return combine(_through(path.upper, upper), _through(path.lower, lower))


_ANALYZER0 = linear_polarizer_mueller(0.0)
_ANALYZER90 = linear_polarizer_mueller(90.0)


def analyze(s: StokesVector) -> tuple:
    """Intensities at detector 0 and detector 1 after the output splitter."""
    a1, a0 = split(s)
    # a crossed polarizer can leave -1e-17 of rounding residue
    return (
        max(0.0, apply_mueller(_ANALYZER0, a0).s0),
        max(0.0, apply_mueller(_ANALYZER90, a1).s0),
    )


def plate_product(x: float, y: float, order: str = "physical") -> MuellerMatrix:
    """Combined Mueller matrix of the four plates.

    ``physical`` follows the beam: Alice(x), Bob(y), Alice(-x), Bob(-y),
    i.e. M(-y) M(-x) M(y) M(x). ``written`` applies x, -x, y, -y in that
    order, which is not the identity in general.
    """
    m = half_wave_plate_mueller
    if order == "physical":
        return compose_mueller(m(x), m(y), m(-x), m(-y))
    if order == "written":
        return compose_mueller(m(x), m(-x), m(y), m(-y))
    raise ValueError(f"unknown order {order!r}")


@dataclass(frozen=True)
class BenchOutcome:
    bit: int
    stokes_in: StokesVector
    stokes_out: StokesVector
    intensities: tuple

    @property
    def normalized_out(self) -> StokesVector:
        return StokesVector.from_array(self.stokes_out.array / self.stokes_out.s0)

    def power_mw(self, config: BenchConfig) -> float:
        return self.stokes_out.s0 * config.source_power


def bench_transmit_bit(
    bit: int,
    config: BenchConfig = BenchConfig(),
    detector: Optional[DetectorModel] = None,
    rng: Optional[np.random.Generator] = None,
) -> BenchOutcome:
    """Propagate one bit slot through the whole bench and read the detectors."""
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit!r}")
    s_in = encode_stage(config, bit)
    s_out = _through(beam_path(config, bit).plates, s_in)
    intensities = analyze(s_out)
    outcome = detector_click(intensities, detector or DetectorModel(), rng or np.random.default_rng(0))
    return BenchOutcome(outcome, s_in, s_out, intensities)


def bench_encoder(config: BenchConfig):
    # the source side never changes during a run, so each bit's light is fixed
    light = [encode_stage(config, bit) for bit in (0, 1)]
    states = [(stokes_to_jones(s).array, s.s0) for s in light]

    def encode(bit: int, photon_count: int) -> PhotonPulse:
        state, intensity = states[bit]
        return PhotonPulse(photon_count, state, intensity)

    return encode


def bench_analyzer(pulse: PhotonPulse) -> tuple:
    return analyze(pulse.stokes)


def encode_message(data: Union[bytes, str]) -> list:
    """Bits of ``data``, most significant bit of each byte first."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return [(byte >> (7 - i)) & 1 for byte in data for i in range(8)]


def decode_message(bits: Sequence[int], true_length: Optional[int] = None) -> bytes:
    """Inverse of :func:`encode_message`; ``true_length`` drops block padding first."""
    if true_length is not None:
        bits = list(bits)[:true_length]
    if len(bits) % 8:
        raise ValueError(f"{len(bits)} bits is not a whole number of bytes")
    out = bytearray()
    for k in range(0, len(bits), 8):
        byte = 0
        for b in bits[k : k + 8]:
            if b not in (0, 1):
                raise ValueError(f"cannot decode bit value {b!r}")
            byte = (byte << 1) | int(b)
        out.append(byte)
    return bytes(out)


@dataclass
class BenchRun:
    decoded: bytes
    timing: TimingReport
    transcript: SessionTranscript
    erasures: int = 0
    block_angles: list = field(default_factory=list)


def bench_run(
    message: Union[bytes, str],
    config: BenchConfig = BenchConfig(),
    rng_seed: int = 0,
    *,
    detector: Optional[DetectorModel] = None,
    slot_ms: float = 40.0,
    block_size: int = 8,
    rekey_gap_ms: Optional[float] = None,
    photon_count: int = 1,
) -> BenchRun:
    """Send ``message`` through the bench with fresh plate angles every block.

    Plates start homed at 0 degrees; the schedule inserts the rotator travel
    before each block. Erased slots decode as 0 and are counted.
    """
    bits = encode_message(message)
    if not bits:
        raise ValueError("empty message: nothing to transmit")
    # fail on infeasible slots before spending time on the optics
    schedule_session(bits[:1], [(0.0, 0.0)], slot_ms, config.limits)
    transcript = run_session(
        bits,
        BENCH,
        rng_seed,
        block_size=block_size,
        detector=detector or DetectorModel(),
        photon_count=photon_count,
        encoder=bench_encoder(config),
        analyzer=bench_analyzer,
    )
    angles = [(k.theta_a, k.theta_b) for k in transcript.keys]
    timing = schedule_session(bits, angles, slot_ms, config.limits, block_size, rekey_gap_ms)
    decoded_bits = [0 if b == ERASURE else b for b in transcript.decoded]
    return BenchRun(
        decode_message(decoded_bits),
        timing,
        transcript,
        erasures=transcript.erasures,
        block_angles=angles,
    )
