"""Fixed-size big-endian frames.

Every frame starts with a 14-byte header::

    magic "3SQP" | version u8 | msg_type u8 | session_id u64

followed by a body whose size depends only on ``msg_type``:

=========  ====================================================  =====
type       body                                                  total
=========  ====================================================  =====
HELLO      block_size u8, mode u8, message_bits u32, photons u32    24
HELLO_ACK  same as HELLO                                            24
STAGE      stage u8, block u32, bit u8, photons u32, stokes 4xf64   56
DONE       byte_count u32                                           18
ERROR      error code u8                                            15
=========  ====================================================  =====

No field ever carries a key angle or transform.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Union

MAGIC = b"3SQP"
VERSION = 1

HELLO = 1
HELLO_ACK = 2
STAGE = 3
DONE = 4
ERROR = 5
TYPE_NAMES = {HELLO: "HELLO", HELLO_ACK: "HELLO_ACK", STAGE: "STAGE", DONE: "DONE", ERROR: "ERROR"}

HEADER = struct.Struct(">4sBBQ")
HELLO_BODY = struct.Struct(">BBII")
STAGE_BODY = struct.Struct(">BIBI4d")
DONE_BODY = struct.Struct(">I")
ERROR_BODY = struct.Struct(">B")

# bytes needed to read magic, version and type
PEEK_SIZE = 6

FRAME_SIZE = {
    HELLO: HEADER.size + HELLO_BODY.size,
    HELLO_ACK: HEADER.size + HELLO_BODY.size,
    STAGE: HEADER.size + STAGE_BODY.size,
    DONE: HEADER.size + DONE_BODY.size,
    ERROR: HEADER.size + ERROR_BODY.size,
}

# decode failures, also sent as ERROR frame codes
BAD_MAGIC = "bad_magic"
UNSUPPORTED_VERSION = "unsupported_version"
TRUNCATED = "truncated"
MALFORMED_PAYLOAD = "malformed_payload"
UNKNOWN_TYPE = "unknown_type"
PROTOCOL_VIOLATION = "protocol_violation"
UNSUPPORTED_MODE = "unsupported_mode"
ERROR_CODES = {
    BAD_MAGIC: 1,
    UNSUPPORTED_VERSION: 2,
    TRUNCATED: 3,
    MALFORMED_PAYLOAD: 4,
    UNKNOWN_TYPE: 5,
    PROTOCOL_VIOLATION: 6,
    UNSUPPORTED_MODE: 7,
}
ERROR_NAMES = {v: k for k, v in ERROR_CODES.items()}

# two-dimensional session modes that fit a Stokes payload
MODE_CODES = {"rotation": 0, "bench": 1, "abstract:pauli": 2, "abstract:hadamard": 3}
MODE_NAMES = {v: k for k, v in MODE_CODES.items()}

U8, U32, U64 = 0xFF, 0xFFFFFFFF, 0xFFFFFFFFFFFFFFFF
STOKES_TOL = 1e-9


class DecodeError(ValueError):
    """A byte string is not a valid frame; ``code`` names the reason."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class EncodeError(ValueError):
    pass


@dataclass(frozen=True)
class SessionParams:
    block_size: int = 8
    mode: str = "rotation"
    message_bits: int = 0
    photon_count: int = 1

    def problems(self) -> list:
        out = []
        if not 1 <= self.block_size <= U8:
            out.append(f"block_size {self.block_size} outside 1..255")
        if self.mode not in MODE_CODES:
            out.append(f"mode {self.mode!r} not in {sorted(MODE_CODES)}")
        if not 0 <= self.message_bits <= U32:
            out.append("message_bits out of u32 range")
        if not 1 <= self.photon_count <= U32:
            out.append("photon_count outside 1..2^32-1")
        return out


@dataclass(frozen=True)
class Hello:
    session_id: int
    params: SessionParams
    ack: bool = False

    @property
    def msg_type(self) -> int:
        return HELLO_ACK if self.ack else HELLO


@dataclass(frozen=True)
class Stage:
    session_id: int
    stage: int
    block_index: int
    bit_index: int
    photon_count: int
    stokes: tuple

    msg_type = STAGE


@dataclass(frozen=True)
class Done:
    session_id: int
    byte_count: int

    msg_type = DONE


@dataclass(frozen=True)
class Error:
    session_id: int
    code: int

    msg_type = ERROR

    @property
    def reason(self) -> str:
        return ERROR_NAMES.get(self.code, f"code {self.code}")


Frame = Union[Hello, Stage, Done, Error]


def stokes_problem(stokes) -> str:
    """Empty string when ``stokes`` is four finite values describing physical light."""
    if len(stokes) != 4:
        return "stokes needs 4 components"
    if not all(math.isfinite(v) for v in stokes):
        return "non-finite stokes component"
    s0, s1, s2, s3 = stokes
    if s0 <= 0:
        return "stokes s0 must be positive"
    if math.sqrt(s1 * s1 + s2 * s2 + s3 * s3) > s0 * (1.0 + STOKES_TOL):
        return "stokes vector is more than fully polarized"
    return ""


def _check_u(name: str, value: int, top: int) -> None:
    if not isinstance(value, int) or not 0 <= value <= top:
        raise EncodeError(f"{name}={value!r} does not fit the field")


def encode_frame(frame: Frame) -> bytes:
    if not isinstance(frame, (Hello, Stage, Done, Error)):
        raise EncodeError(f"not a frame: {frame!r}")
    _check_u("session_id", frame.session_id, U64)
    head = HEADER.pack(MAGIC, VERSION, frame.msg_type, frame.session_id)
    if isinstance(frame, Stage):
        if frame.stage not in (1, 2, 3):
            raise EncodeError(f"stage {frame.stage} outside 1..3")
        _check_u("block_index", frame.block_index, U32)
        _check_u("bit_index", frame.bit_index, U8)
        _check_u("photon_count", frame.photon_count, U32)
        if frame.photon_count < 1:
            raise EncodeError("photon_count must be at least 1")
        problem = stokes_problem(frame.stokes)
        if problem:
            raise EncodeError(problem)
        return head + STAGE_BODY.pack(
            frame.stage, frame.block_index, frame.bit_index, frame.photon_count, *map(float, frame.stokes)
        )
    if isinstance(frame, Hello):
        problems = frame.params.problems()
        if problems:
            raise EncodeError("; ".join(problems))
        p = frame.params
        return head + HELLO_BODY.pack(p.block_size, MODE_CODES[p.mode], p.message_bits, p.photon_count)
    if isinstance(frame, Done):
        _check_u("byte_count", frame.byte_count, U32)
        return head + DONE_BODY.pack(frame.byte_count)
    _check_u("code", frame.code, U8)
    return head + ERROR_BODY.pack(frame.code)


def frame_size(data: bytes) -> int:
    """Total size of the frame starting at ``data`` from its first 6 bytes."""
    if len(data) < PEEK_SIZE:
        raise DecodeError(TRUNCATED, f"need {PEEK_SIZE} header bytes, have {len(data)}")
    if bytes(data[:4]) != MAGIC:
        raise DecodeError(BAD_MAGIC, f"magic {bytes(data[:4])!r}")
    if data[4] != VERSION:
        raise DecodeError(UNSUPPORTED_VERSION, f"version {data[4]}")
    size = FRAME_SIZE.get(data[5])
    if size is None:
        raise DecodeError(UNKNOWN_TYPE, f"message type {data[5]}")
    return size


def decode_frame(data: bytes) -> Frame:
    """Parse the frame at the start of ``data``.

    Only the bytes its type declares are read; anything after them is left
    alone (use :func:`frame_size` to step through a buffer).
    """
    size = frame_size(data)
    if len(data) < size:
        raise DecodeError(TRUNCATED, f"{TYPE_NAMES[data[5]]} frame needs {size} bytes, have {len(data)}")
    _, _, msg_type, session_id = HEADER.unpack_from(data)
    if msg_type == STAGE:
        stage, block, bit, photons, *stokes = STAGE_BODY.unpack_from(data, HEADER.size)
        if stage not in (1, 2, 3):
            raise DecodeError(MALFORMED_PAYLOAD, f"stage {stage}")
        if photons < 1:
            raise DecodeError(MALFORMED_PAYLOAD, "zero photon_count")
        problem = stokes_problem(stokes)
        if problem:
            raise DecodeError(MALFORMED_PAYLOAD, problem)
        return Stage(session_id, stage, block, bit, photons, tuple(stokes))
    if msg_type in (HELLO, HELLO_ACK):
        block_size, mode, bits, photons = HELLO_BODY.unpack_from(data, HEADER.size)
        if mode not in MODE_NAMES:
            raise DecodeError(MALFORMED_PAYLOAD, f"mode code {mode}")
        params = SessionParams(block_size, MODE_NAMES[mode], bits, photons)
        problems = params.problems()
        if problems:
            raise DecodeError(MALFORMED_PAYLOAD, "; ".join(problems))
        return Hello(session_id, params, ack=msg_type == HELLO_ACK)
    if msg_type == DONE:
        (count,) = DONE_BODY.unpack_from(data, HEADER.size)
        return Done(session_id, count)
    (code,) = ERROR_BODY.unpack_from(data, HEADER.size)
    return Error(session_id, code)


def frame_record(frame: Frame) -> dict:
    """JSON-friendly view of a frame."""
    rec = {"type": TYPE_NAMES[frame.msg_type], "session_id": frame.session_id}
    if isinstance(frame, Stage):
        rec.update(
            stage=frame.stage,
            block_index=frame.block_index,
            bit_index=frame.bit_index,
            photon_count=frame.photon_count,
            stokes=list(frame.stokes),
        )
    elif isinstance(frame, Hello):
        p = frame.params
        rec.update(block_size=p.block_size, mode=p.mode, message_bits=p.message_bits, photon_count=p.photon_count)
    elif isinstance(frame, Done):
        rec["byte_count"] = frame.byte_count
    else:
        rec["error"] = frame.reason
    return rec
