import json
import math
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from threestage.net.wire import (
    BAD_MAGIC,
    ERROR_CODES,
    FRAME_SIZE,
    MALFORMED_PAYLOAD,
    MODE_CODES,
    PROTOCOL_VIOLATION,
    STAGE,
    TRUNCATED,
    UNKNOWN_TYPE,
    UNSUPPORTED_VERSION,
    DecodeError,
    Done,
    EncodeError,
    Error,
    Hello,
    SessionParams,
    Stage,
    decode_frame,
    encode_frame,
    frame_record,
    frame_size,
)

GOLDEN = json.loads((Path(__file__).parent / "data" / "golden_frames.json").read_text())

GOLDEN_FRAMES = {
    "stage_s1_b0_i0_n1_h": Stage(1, 1, 0, 0, 1, (1.0, 1.0, 0.0, 0.0)),
    "stage_s3_b7_i5_n10_v": Stage(0x0102030405060708, 3, 7, 5, 10, (0.5, -0.5, 0.0, 0.0)),
    "hello_rotation": Hello(1, SessionParams(8, "rotation", 40, 1)),
    "hello_ack_rotation": Hello(1, SessionParams(8, "rotation", 40, 1), ack=True),
    "hello_bench": Hello(42, SessionParams(4, "bench", 8192, 2)),
    "done": Done(1, 5),
    "error_protocol_violation": Error(1, ERROR_CODES[PROTOCOL_VIOLATION]),
}

H_STAGE = GOLDEN_FRAMES["stage_s1_b0_i0_n1_h"]


def stokes_points():
    # fully polarized directions scaled by intensity, plus partly polarized ones
    return st.tuples(
        st.floats(1e-6, 1e6),
        st.floats(0, math.pi),
        st.floats(0, 2 * math.pi),
        st.floats(0, 1),
    ).map(
        lambda t: (
            t[0],
            t[0] * t[3] * math.sin(t[1]) * math.cos(t[2]),
            t[0] * t[3] * math.sin(t[1]) * math.sin(t[2]),
            t[0] * t[3] * math.cos(t[1]),
        )
    )


stage_frames = st.builds(
    Stage,
    st.integers(0, 2**64 - 1),
    st.integers(1, 3),
    st.integers(0, 2**32 - 1),
    st.integers(0, 255),
    st.integers(1, 2**32 - 1),
    stokes_points(),
)
hello_frames = st.builds(
    Hello,
    st.integers(0, 2**64 - 1),
    st.builds(
        SessionParams,
        st.integers(1, 255),
        st.sampled_from(sorted(MODE_CODES)),
        st.integers(0, 2**32 - 1),
        st.integers(1, 2**32 - 1),
    ),
    st.booleans(),
)
other_frames = st.one_of(
    st.builds(Done, st.integers(0, 2**64 - 1), st.integers(0, 2**32 - 1)),
    st.builds(Error, st.integers(0, 2**64 - 1), st.integers(0, 255)),
)
any_frame = st.one_of(stage_frames, hello_frames, other_frames)


# golden vectors


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_golden_encode(name):
    assert encode_frame(GOLDEN_FRAMES[name]).hex() == GOLDEN[name]


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_golden_decode(name):
    assert decode_frame(bytes.fromhex(GOLDEN[name])) == GOLDEN_FRAMES[name]


def test_stage_prefix_and_length():
    data = encode_frame(H_STAGE)
    assert len(data) == 56 == 4 + 1 + 1 + 8 + 1 + 4 + 1 + 4 + 32
    assert data[:6] == bytes([0x33, 0x53, 0x51, 0x50, 0x01, 0x03])


def test_frame_sizes():
    assert FRAME_SIZE == {1: 24, 2: 24, 3: 56, 4: 18, 5: 15}


# round trips


@settings(max_examples=2000, deadline=None)
@given(any_frame)
def test_round_trip(frame):
    data = encode_frame(frame)
    assert len(data) == FRAME_SIZE[frame.msg_type]
    assert decode_frame(data) == frame
    assert encode_frame(decode_frame(data)) == data


def test_ten_thousand_random_stage_frames():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        v = rng.normal(size=3)
        s0 = float(rng.uniform(0.01, 10))
        vec = s0 * rng.uniform() * v / np.linalg.norm(v)
        f = Stage(
            int(rng.integers(0, 2**63)),
            int(rng.integers(1, 4)),
            int(rng.integers(0, 2**32)),
            int(rng.integers(0, 256)),
            int(rng.integers(1, 2**32)),
            (s0, *map(float, vec)),
        )
        data = encode_frame(f)
        assert len(data) == 56
        assert decode_frame(data) == f


def test_trailing_bytes_ignored():
    data = encode_frame(H_STAGE)
    assert decode_frame(data + b"\xff" * 10) == H_STAGE
    assert frame_size(data + b"junk") == 56


# decode errors


def code_of(data):
    with pytest.raises(DecodeError) as exc:
        decode_frame(data)
    return exc.value.code


def test_bad_magic():
    assert code_of(b"XXXX" + encode_frame(H_STAGE)[4:]) == BAD_MAGIC


def test_bad_version():
    data = bytearray(encode_frame(H_STAGE))
    data[4] = 2
    assert code_of(bytes(data)) == UNSUPPORTED_VERSION


def test_unknown_type():
    data = bytearray(encode_frame(H_STAGE))
    data[5] = 9
    assert code_of(bytes(data)) == UNKNOWN_TYPE


def test_truncated():
    data = encode_frame(H_STAGE)
    assert code_of(data[:40]) == TRUNCATED
    assert code_of(data[:3]) == TRUNCATED
    assert code_of(b"") == TRUNCATED


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_stokes(bad):
    data = bytearray(encode_frame(H_STAGE))
    struct.pack_into(">d", data, 24 + 8, bad)
    assert code_of(bytes(data)) == MALFORMED_PAYLOAD


def test_unphysical_stokes():
    data = bytearray(encode_frame(H_STAGE))
    struct.pack_into(">d", data, 24 + 16, 5.0)  # s2 > s0
    assert code_of(bytes(data)) == MALFORMED_PAYLOAD
    struct.pack_into(">4d", data, 24, -1.0, 0.0, 0.0, 0.0)
    assert code_of(bytes(data)) == MALFORMED_PAYLOAD


def test_bad_stage_fields():
    data = bytearray(encode_frame(H_STAGE))
    data[14] = 4
    assert code_of(bytes(data)) == MALFORMED_PAYLOAD
    data = bytearray(encode_frame(H_STAGE))
    data[20:24] = b"\x00\x00\x00\x00"
    assert code_of(bytes(data)) == MALFORMED_PAYLOAD


def test_bad_hello_fields():
    data = bytearray(encode_frame(GOLDEN_FRAMES["hello_rotation"]))
    data[15] = 99  # mode code
    assert code_of(bytes(data)) == MALFORMED_PAYLOAD
    data = bytearray(encode_frame(GOLDEN_FRAMES["hello_rotation"]))
    data[14] = 0  # block size
    assert code_of(bytes(data)) == MALFORMED_PAYLOAD


# encode errors


@pytest.mark.parametrize(
    "frame",
    [
        Stage(1, 0, 0, 0, 1, (1, 1, 0, 0)),
        Stage(1, 1, 2**32, 0, 1, (1, 1, 0, 0)),
        Stage(1, 1, 0, 256, 1, (1, 1, 0, 0)),
        Stage(1, 1, 0, 0, 0, (1, 1, 0, 0)),
        Stage(2**64, 1, 0, 0, 1, (1, 1, 0, 0)),
        Stage(1, 1, 0, 0, 1, (1, 2, 0, 0)),
        Stage(1, 1, 0, 0, 1, (1, math.nan, 0, 0)),
        Stage(1, 1, 0, 0, 1, (1, 1, 0)),
        Hello(1, SessionParams(0)),
        Hello(1, SessionParams(mode="abstract:dft")),
        Done(1, -1),
        Error(1, 256),
    ],
)
def test_encode_rejects(frame):
    with pytest.raises(EncodeError):
        encode_frame(frame)


def test_encode_rejects_non_frame():
    with pytest.raises(EncodeError):
        encode_frame(SessionParams())


# structure


def test_no_key_fields_in_frames():
    for cls in (Stage, Hello, Done, Error, SessionParams):
        names = set(cls.__dataclass_fields__)
        assert not any("theta" in n or "angle" in n or n.startswith("u_") for n in names)


def test_frame_records():
    assert frame_record(H_STAGE) == {
        "type": "STAGE",
        "session_id": 1,
        "stage": 1,
        "block_index": 0,
        "bit_index": 0,
        "photon_count": 1,
        "stokes": [1.0, 1.0, 0.0, 0.0],
    }
    assert frame_record(Error(3, 6))["error"] == PROTOCOL_VIOLATION
    assert frame_record(Done(3, 2))["byte_count"] == 2
    assert frame_record(GOLDEN_FRAMES["hello_bench"])["mode"] == "bench"
    assert Error(1, 200).reason == "code 200"


# fuzz


def test_fuzz_random_bytes():
    rng = np.random.default_rng(7)
    for _ in range(20_000):
        data = rng.bytes(int(rng.integers(0, 80)))
        try:
            decode_frame(data)
        except DecodeError:
            pass


def test_fuzz_mutated_frames():
    rng = np.random.default_rng(8)
    seeds = [bytes.fromhex(h) for h in GOLDEN.values()]
    accepted = 0
    for _ in range(20_000):
        data = bytearray(seeds[int(rng.integers(len(seeds)))])
        for _ in range(int(rng.integers(1, 4))):
            data[int(rng.integers(len(data)))] = int(rng.integers(256))
        cut = int(rng.integers(len(data) // 2, len(data) + 1))
        try:
            frame = decode_frame(bytes(data[:cut]))
        except DecodeError as exc:
            assert exc.code in ERROR_CODES
            continue
        accepted += 1
        # whatever decodes must re-encode to the bytes it came from
        assert encode_frame(frame) == bytes(data[: FRAME_SIZE[data[5]]])
    assert accepted > 0


@given(st.binary(max_size=100))
def test_decode_is_total(data):
    try:
        frame = decode_frame(data)
    except DecodeError:
        return
    assert frame.msg_type in FRAME_SIZE and data[5] != 0


def test_stage_type_constant():
    assert STAGE == 3 and Stage.msg_type == 3
