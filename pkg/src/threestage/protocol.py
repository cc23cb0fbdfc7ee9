"""Three-stage protocol engine.

Alice encodes a bit, applies her secret transform and sends (stage 1); Bob
applies his and returns it (stage 2); Alice undoes hers and sends again
(stage 3); Bob undoes his and measures (step 4, local). Three modes share
the same message flow:

``rotation``
    polarization rotations R(theta_a), R(theta_b) and their inverses;
``bench``
    half-wave plates at x, y, -x, -y as on the free-space bench;
``abstract``
    elements U_A, U_B drawn from a :class:`~threestage.transforms.TransformFamily`,
    undone with their conjugate transposes.

Secret material lives only in :class:`BlockKey`; a :class:`StageMessage`
carries nothing but the pulse and its position in the session.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .detector import ERASURE, DetectorModel, detector_click
from .polarization import JonesOperator, half_wave_plate_matrix, rotation_matrix
from .pulse import PhotonPulse
from .transforms import TransformFamily, UnitaryTransform, commutes_up_to_phase, get_family

ROTATION = "rotation"
BENCH = "bench"
ABSTRACT = "abstract"
MODES = (ROTATION, BENCH, ABSTRACT)

BIT_ANGLE = (0.0, 90.0)
DEFAULT_BLOCK_SIZE = 8

ALICE_TO_BOB = "alice->bob"
BOB_TO_ALICE = "bob->alice"

Channel = Callable[[str, "StageMessage"], "StageMessage"]
Analyzer = Callable[[PhotonPulse], tuple]
Encoder = Callable[[int, int], PhotonPulse]


class ProtocolViolation(Exception):
    """A stage message arrived out of order or for the wrong block."""


@dataclass(frozen=True)
class BlockKey:
    """Secret transforms for one block.

    An endpoint that only knows its own half leaves the other one as None.
    """

    block_index: int
    theta_a: Optional[float] = None
    theta_b: Optional[float] = None
    u_a: Optional[UnitaryTransform] = field(default=None, repr=False)
    u_b: Optional[UnitaryTransform] = field(default=None, repr=False)
    # operator matrices built on first use, keyed by (party, inverse, mode)
    _ops: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.block_index < 0:
            raise ValueError("block_index must be nonnegative")
        for name in ("theta_a", "theta_b"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v < 360.0:
                raise ValueError(f"{name}={v} outside [0, 360)")


@dataclass(frozen=True)
class StageMessage:
    stage: int
    block_index: int
    bit_index: int
    pulse: PhotonPulse

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ValueError(f"stage must be 1, 2 or 3, got {self.stage}")

    def with_pulse(self, pulse: PhotonPulse) -> StageMessage:
        return StageMessage(self.stage, self.block_index, self.bit_index, pulse)

    def to_record(self) -> dict:
        rec = {
            "stage": self.stage,
            "block_index": self.block_index,
            "bit_index": self.bit_index,
            "photon_count": self.pulse.photon_count,
        }
        if self.pulse.dimension == 2:
            rec["stokes"] = list(self.pulse.stokes.array)
        else:
            rec["state"] = [[z.real, z.imag] for z in self.pulse.state]
        return rec


@dataclass
class SessionTranscript:
    mode: str
    block_size: int
    true_length: int
    sent_bits: list = field(default_factory=list)
    records: list = field(default_factory=list)  # (direction, StageMessage)
    outcomes: list = field(default_factory=list)  # per padded bit: 0, 1 or ERASURE
    recovered: list = field(default_factory=list)  # Bob's state after undoing his transform
    keys: list = field(default_factory=list, repr=False)  # simulator-side view only, never logged

    @property
    def decoded(self) -> list:
        return self.outcomes[: self.true_length]

    @property
    def bit_errors(self) -> int:
        return sum(1 for s, d in zip(self.sent_bits, self.decoded) if d != ERASURE and d != s)

    @property
    def erasures(self) -> int:
        return sum(1 for d in self.decoded if d == ERASURE)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"direction": d, **m.to_record()}) for d, m in self.records]
        lines.append(
            json.dumps(
                {
                    "result": True,
                    "mode": self.mode,
                    "block_size": self.block_size,
                    "true_length": self.true_length,
                    "decoded": self.decoded,
                }
            )
        )
        return "\n".join(lines) + "\n"


def _check_bit(bit: int) -> int:
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit!r}")
    return int(bit)


def encode_bit(bit: int, mode: str = ROTATION, dimension: int = 2) -> np.ndarray:
    """State for a bit: 0 and 90 degree polarization, or basis state |bit>."""
    _check_bit(bit)
    if mode == ABSTRACT:
        v = np.zeros(dimension, dtype=complex)
        v[bit] = 1.0
        return v
    return np.array([1.0, 0.0], dtype=complex) if bit == 0 else np.array([0.0, 1.0], dtype=complex)


@lru_cache(maxsize=None)
def _encoded(bit: int, mode: str, dimension: int) -> np.ndarray:
    v = encode_bit(bit, mode, dimension)
    v.setflags(write=False)
    return v


def _plate_matrix(mode: str, angle: float) -> np.ndarray:
    if mode == ROTATION:
        m = rotation_matrix(angle)
    elif mode == BENCH:
        m = half_wave_plate_matrix(angle)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    m.setflags(write=False)
    return m


def _operator(key: BlockKey, party: str, inverse: bool, mode: str) -> np.ndarray:
    slot = (party, inverse, mode)
    m = key._ops.get(slot)
    if m is None:
        m = key._ops[slot] = _build_operator(key, party, inverse, mode)
    return m


def _build_operator(key: BlockKey, party: str, inverse: bool, mode: str) -> np.ndarray:
    if mode == ABSTRACT:
        u = key.u_a if party == "a" else key.u_b
        if u is None:
            raise ValueError(f"key lacks U_{party.upper()}")
        return u.matrix.conj().T if inverse else u.matrix
    theta = key.theta_a if party == "a" else key.theta_b
    if theta is None:
        raise ValueError(f"key lacks theta_{party}")
    if mode == ROTATION and inverse:
        # a real rotation is undone by its transpose
        return _operator(key, party, False, mode).T
    return _plate_matrix(mode, -theta if inverse else theta)


def _apply(matrix: np.ndarray, msg_pulse: PhotonPulse) -> PhotonPulse:
    # every operator here is unitary, so the norm needs no re-check
    return msg_pulse.evolved(matrix @ msg_pulse.state)


def alice_stage1(
    bit: int,
    key: BlockKey,
    *,
    bit_index: int = 0,
    mode: str = ROTATION,
    photon_count: int = 1,
    encoder: Optional[Encoder] = None,
) -> StageMessage:
    """Encode ``bit`` and apply Alice's transform.

    ``encoder(bit, photon_count)`` can replace the ideal 0/90 degree source.
    """
    if encoder is not None:
        pulse = encoder(_check_bit(bit), photon_count)
    else:
        dim = key.u_a.dimension if mode == ABSTRACT and key.u_a is not None else 2
        if photon_count < 1:
            raise ValueError(f"a pulse needs at least one photon, got {photon_count}")
        pulse = PhotonPulse.trusted(photon_count, _encoded(_check_bit(bit), mode, dim))
    pulse = _apply(_operator(key, "a", False, mode), pulse)
    return StageMessage(1, key.block_index, bit_index, pulse)


def _expect(msg: StageMessage, stage: int, key: BlockKey) -> None:
    if msg.stage != stage:
        raise ProtocolViolation(f"expected stage {stage}, received stage {msg.stage}")
    if msg.block_index != key.block_index:
        raise ProtocolViolation(
            f"message for block {msg.block_index} does not match key for block {key.block_index}"
        )


def bob_stage2(msg: StageMessage, key: BlockKey, *, mode: str = ROTATION) -> StageMessage:
    _expect(msg, 1, key)
    return StageMessage(2, msg.block_index, msg.bit_index, _apply(_operator(key, "b", False, mode), msg.pulse))


def alice_stage3(msg: StageMessage, key: BlockKey, *, mode: str = ROTATION) -> StageMessage:
    _expect(msg, 2, key)
    return StageMessage(3, msg.block_index, msg.bit_index, _apply(_operator(key, "a", True, mode), msg.pulse))


def bob_undo(msg: StageMessage, key: BlockKey, *, mode: str = ROTATION) -> PhotonPulse:
    """Bob's final inverse transform, before measurement."""
    _expect(msg, 3, key)
    return _apply(_operator(key, "b", True, mode), msg.pulse)


def born_intensities(pulse: PhotonPulse) -> tuple:
    """Light reaching the (0, 1) detector arms; any weight outside them is lost."""
    p = pulse.probabilities()
    return pulse.intensity * float(p[0]), pulse.intensity * float(p[1])


def measure(
    pulse: PhotonPulse,
    detector: DetectorModel,
    rng: np.random.Generator,
    analyzer: Optional[Analyzer] = None,
) -> int:
    if pulse.dimension > 2:
        p = pulse.probabilities()
        lost = float(p[2:].sum())
        if lost > 1e-12 and rng.random() < lost:
            return ERASURE
    intensities = (analyzer or born_intensities)(pulse)
    return detector_click(intensities, detector, rng, photons=pulse.photon_count)


def bob_stage4(
    msg: StageMessage,
    key: BlockKey,
    detector: Optional[DetectorModel] = None,
    rng: Optional[np.random.Generator] = None,
    *,
    mode: str = ROTATION,
    analyzer: Optional[Analyzer] = None,
) -> int:
    """Undo Bob's transform and measure; returns 0, 1 or ERASURE."""
    pulse = bob_undo(msg, key, mode=mode)
    return measure(pulse, detector or DetectorModel.ideal(), rng or np.random.default_rng(0), analyzer)


def pad_bits(bits: Sequence[int], block_size: int) -> list:
    bits = [_check_bit(b) for b in bits]
    short = (-len(bits)) % block_size
    return bits + [0] * short


def draw_angle(rng: np.random.Generator) -> float:
    # same double as rng.uniform(0, 360), without the per-call argument handling
    a = 360.0 * rng.random()
    return 0.0 if a >= 360.0 else a


class Alice:
    """Sender endpoint state: her own key stream and nothing of Bob's."""

    def __init__(self, rng: np.random.Generator, mode: str = ROTATION, family: Optional[TransformFamily] = None):
        self.rng = rng
        self.mode = mode
        self.family = family
        self.keys: dict[int, BlockKey] = {}

    def key(self, block_index: int) -> BlockKey:
        if block_index not in self.keys:
            if self.mode == ABSTRACT:
                self.keys[block_index] = BlockKey(block_index, u_a=self.family.random_element(self.rng))
            else:
                self.keys[block_index] = BlockKey(block_index, theta_a=draw_angle(self.rng))
        return self.keys[block_index]


class Bob(Alice):
    def key(self, block_index: int) -> BlockKey:
        if block_index not in self.keys:
            if self.mode == ABSTRACT:
                self.keys[block_index] = BlockKey(block_index, u_b=self.family.random_element(self.rng))
            else:
                self.keys[block_index] = BlockKey(block_index, theta_b=draw_angle(self.rng))
        return self.keys[block_index]


def session_rngs(rng_seed: int) -> tuple:
    """Independent generators for Alice, Bob and Bob's detector."""
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(rng_seed).spawn(3))


def _merge(a: BlockKey, b: BlockKey) -> BlockKey:
    return BlockKey(a.block_index, a.theta_a, b.theta_b, a.u_a, b.u_b)


def run_session(
    bits: Iterable[int],
    mode: str = ROTATION,
    rng_seed: int = 0,
    *,
    block_size: int = DEFAULT_BLOCK_SIZE,
    family: Optional[TransformFamily | str] = None,
    detector: Optional[DetectorModel] = None,
    channel: Optional[Channel] = None,
    photon_count: int = 1,
    turnaround: Optional[JonesOperator] = None,
    analyzer: Optional[Analyzer] = None,
    encoder: Optional[Encoder] = None,
    keep_records: bool = True,
) -> SessionTranscript:
    """Send ``bits`` through the full three-stage exchange.

    A fresh key is drawn per block of ``block_size`` bits; the bit string is
    padded with zeros to whole blocks. ``channel`` sees every transmission and
    may replace the message (an eavesdropper); ``turnaround`` is an optional
    polarization element applied on every pass between the parties.
    ``encoder`` and ``analyzer`` swap in a physical source and detection
    stage (see :mod:`threestage.bench`).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if block_size < 1:
        raise ValueError("block_size must be positive")
    if mode == ABSTRACT:
        family = get_family(family or "pauli") if not isinstance(family, TransformFamily) else family
    bits = list(bits)
    true_length = len(bits)
    padded = pad_bits(bits, block_size)
    detector = detector or DetectorModel.ideal()
    alice_rng, bob_rng, det_rng = session_rngs(rng_seed)
    alice, bob = Alice(alice_rng, mode, family), Bob(bob_rng, mode, family)
    transcript = SessionTranscript(mode, block_size, true_length, sent_bits=bits)
    turn = turnaround.matrix if turnaround is not None else None

    def send(direction: str, msg: StageMessage) -> StageMessage:
        if turn is not None:
            msg = msg.with_pulse(_apply(turn, msg.pulse))
        if channel is not None:
            msg = channel(direction, msg)
        if keep_records:
            transcript.records.append((direction, msg))
        return msg

    for i, bit in enumerate(padded):
        block, j = divmod(i, block_size)
        ka, kb = alice.key(block), bob.key(block)
        if j == 0:
            if mode == ABSTRACT and commutes_up_to_phase(ka.u_a, kb.u_b) is None:
                raise ProtocolViolation(f"{ka.u_a.label} and {kb.u_b.label} do not commute")
            transcript.keys.append(_merge(ka, kb))
        m1 = send(ALICE_TO_BOB, alice_stage1(bit, ka, bit_index=j, mode=mode, photon_count=photon_count, encoder=encoder))
        m2 = send(BOB_TO_ALICE, bob_stage2(m1, kb, mode=mode))
        m3 = send(ALICE_TO_BOB, alice_stage3(m2, ka, mode=mode))
        final = bob_undo(m3, kb, mode=mode)
        transcript.recovered.append(final)
        transcript.outcomes.append(measure(final, detector, det_rng, analyzer))
    return transcript


def angle_of(pulse: PhotonPulse) -> float:
    """Direction of a real Jones vector in degrees, in [0, 360)."""
    c0, c1 = pulse.state
    return math.degrees(math.atan2(c1.real, c0.real)) % 360.0
