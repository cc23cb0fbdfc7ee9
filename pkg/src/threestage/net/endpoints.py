"""Alice and Bob as socket endpoints exchanging wire frames.

Each side holds only its own key stream. With equal seeds a networked
session makes the same random draws as :func:`threestage.protocol.run_session`,
so the two can be compared bit for bit.
"""

from __future__ import annotations

import json
import socket
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..bench import decode_message, encode_message
from ..detector import ERASURE, DetectorModel
from ..polarization import StokesVector, stokes_to_jones
from ..protocol import (
    ABSTRACT,
    Alice,
    Bob,
    ProtocolViolation,
    StageMessage,
    alice_stage1,
    alice_stage3,
    bob_stage2,
    bob_stage4,
    pad_bits,
    session_rngs,
)
from ..pulse import PhotonPulse
from ..transforms import get_family
from . import wire
from .wire import DecodeError, Done, Error, Hello, SessionParams, Stage

DEFAULT_TIMEOUT = 30.0
SENT = "sent"
RECEIVED = "received"


class TransportError(ConnectionError):
    """The byte stream closed or failed."""


class SessionAborted(Exception):
    """The session stopped early; ``transcript`` holds everything exchanged so far."""

    def __init__(self, reason: str, transcript: NetTranscript):
        super().__init__(reason)
        self.reason = reason
        self.transcript = transcript


class FrameStream:
    """Frame-at-a-time reads and writes over a connected socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        while n:
            try:
                chunk = self.sock.recv(n)
            except OSError as exc:
                raise TransportError(str(exc)) from exc
            if not chunk:
                raise TransportError("connection closed by peer")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def read_raw(self) -> bytes:
        """Read one frame's bytes; raises DecodeError (with the bytes read) on a bad header."""
        head = self._read_exact(wire.PEEK_SIZE)
        try:
            size = wire.frame_size(head)
        except DecodeError as exc:
            exc.raw = head
            raise
        return head + self._read_exact(size - wire.PEEK_SIZE)

    def write_raw(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise TransportError(str(exc)) from exc


@dataclass
class NetTranscript:
    role: str
    session_id: int = 0
    params: Optional[SessionParams] = None
    frames: list = field(default_factory=list)  # (SENT | RECEIVED, Frame)
    bits: list = field(default_factory=list)  # Alice: plaintext bits; Bob: decoded bits

    @property
    def stage_frames(self) -> int:
        return sum(1 for _, f in self.frames if isinstance(f, Stage))

    def to_jsonl(self) -> str:
        lines = [json.dumps({"direction": d, **wire.frame_record(f)}) for d, f in self.frames]
        lines.append(json.dumps({"result": True, "role": self.role, "bits": self.bits}))
        return "\n".join(lines) + "\n"


@dataclass
class SessionResult:
    transcript: NetTranscript
    message: bytes = b""
    byte_count: int = 0


class _Peer:
    """Frame I/O plus transcript bookkeeping shared by both endpoints."""

    def __init__(self, sock: socket.socket, transcript: NetTranscript):
        self.stream = FrameStream(sock)
        self.transcript = transcript

    def send(self, frame) -> None:
        self.stream.write_raw(wire.encode_frame(frame))
        self.transcript.frames.append((SENT, frame))

    def recv(self):
        try:
            frame = wire.decode_frame(self.stream.read_raw())
        except DecodeError as exc:
            self.fail(exc.code, str(exc))
        except TransportError as exc:
            raise SessionAborted(f"transport: {exc}", self.transcript) from exc
        self.transcript.frames.append((RECEIVED, frame))
        if isinstance(frame, Error):
            raise SessionAborted(f"peer reported error: {frame.reason}", self.transcript)
        return frame

    def fail(self, code: str, reason: str):
        try:
            self.send(Error(self.transcript.session_id, wire.ERROR_CODES[code]))
        except TransportError:
            pass
        raise SessionAborted(reason, self.transcript)


def _mode_setup(params: SessionParams) -> tuple:
    if params.mode.startswith("abstract:"):
        family = get_family(params.mode.split(":", 1)[1])
        if family.dimension != 2:
            raise ValueError(f"family {family.name} does not fit a Stokes payload")
        return ABSTRACT, family
    return params.mode, None


def pulse_to_stage(msg: StageMessage, session_id: int) -> Stage:
    return Stage(session_id, msg.stage, msg.block_index, msg.bit_index, msg.pulse.photon_count, tuple(msg.pulse.stokes.array.tolist()))


def stage_to_message(frame: Stage) -> StageMessage:
    s = StokesVector(*frame.stokes)
    unit = StokesVector(1.0, s.s1 / s.s0, s.s2 / s.s0, s.s3 / s.s0)
    pulse = PhotonPulse(frame.photon_count, stokes_to_jones(unit).array, s.s0)
    return StageMessage(frame.stage, frame.block_index, frame.bit_index, pulse)


def _expect_stage(peer: _Peer, frame, stage: int, block: int, bit: int) -> Stage:
    if not isinstance(frame, Stage):
        peer.fail(wire.PROTOCOL_VIOLATION, f"expected STAGE {stage}, got {wire.TYPE_NAMES[frame.msg_type]}")
    if (frame.stage, frame.block_index, frame.bit_index) != (stage, block, bit):
        peer.fail(
            wire.PROTOCOL_VIOLATION,
            f"expected stage {stage} of block {block} bit {bit}, "
            f"got stage {frame.stage} of block {frame.block_index} bit {frame.bit_index}",
        )
    return frame


def alice_endpoint(
    sock: socket.socket,
    message: bytes | str,
    rng_seed: int = 0,
    *,
    block_size: int = 8,
    mode: str = "rotation",
    photon_count: int = 1,
    session_id: int = 1,
) -> SessionResult:
    """Send ``message`` over a connected socket; returns once Bob reports DONE."""
    bits = encode_message(message)
    params = SessionParams(block_size, mode, len(bits), photon_count)
    problems = params.problems()
    if problems:
        raise ValueError("; ".join(problems))
    proto_mode, family = _mode_setup(params)
    transcript = NetTranscript("alice", session_id, params, bits=list(bits))
    peer = _Peer(sock, transcript)
    alice = Alice(session_rngs(rng_seed)[0], proto_mode, family)
    try:
        peer.send(Hello(session_id, params))
        ack = peer.recv()
        if not (isinstance(ack, Hello) and ack.ack and ack.params == params):
            peer.fail(wire.PROTOCOL_VIOLATION, f"bad handshake reply {ack!r}")
        for i, bit in enumerate(pad_bits(bits, block_size)):
            block, j = divmod(i, block_size)
            key = alice.key(block)
            m1 = alice_stage1(bit, key, bit_index=j, mode=proto_mode, photon_count=photon_count)
            peer.send(pulse_to_stage(m1, session_id))
            m2 = stage_to_message(_expect_stage(peer, peer.recv(), 2, block, j))
            peer.send(pulse_to_stage(alice_stage3(m2, key, mode=proto_mode), session_id))
        done = peer.recv()
        if not isinstance(done, Done):
            peer.fail(wire.PROTOCOL_VIOLATION, f"expected DONE, got {wire.TYPE_NAMES[done.msg_type]}")
    except TransportError as exc:
        raise SessionAborted(f"transport: {exc}", transcript) from exc
    return SessionResult(transcript, byte_count=done.byte_count)


def bob_endpoint(sock: socket.socket, rng_seed: int = 0, detector: Optional[DetectorModel] = None) -> SessionResult:
    """Answer one session on a connected socket and decode the message."""
    transcript = NetTranscript("bob")
    peer = _Peer(sock, transcript)
    _, bob_rng, det_rng = session_rngs(rng_seed)
    detector = detector or DetectorModel.ideal()
    try:
        hello = peer.recv()
        if not (isinstance(hello, Hello) and not hello.ack):
            peer.fail(wire.PROTOCOL_VIOLATION, "session must open with HELLO")
        transcript.session_id, transcript.params = hello.session_id, hello.params
        params = hello.params
        try:
            proto_mode, family = _mode_setup(params)
        except (KeyError, ValueError) as exc:
            peer.fail(wire.UNSUPPORTED_MODE, str(exc))
        if params.message_bits % 8:
            peer.fail(wire.MALFORMED_PAYLOAD, "message length is not whole bytes")
        bob = Bob(bob_rng, proto_mode, family)
        peer.send(Hello(hello.session_id, params, ack=True))
        n_padded = -(-params.message_bits // params.block_size) * params.block_size
        outcomes = transcript.bits = []
        for i in range(n_padded):
            block, j = divmod(i, params.block_size)
            key = bob.key(block)
            m1 = stage_to_message(_expect_stage(peer, peer.recv(), 1, block, j))
            try:
                m2 = bob_stage2(m1, key, mode=proto_mode)
            except ProtocolViolation as exc:
                peer.fail(wire.PROTOCOL_VIOLATION, str(exc))
            peer.send(pulse_to_stage(m2, hello.session_id))
            m3 = stage_to_message(_expect_stage(peer, peer.recv(), 3, block, j))
            outcomes.append(bob_stage4(m3, key, detector, det_rng, mode=proto_mode))
        decoded = outcomes[: params.message_bits]
        transcript.bits = decoded
        peer.send(Done(hello.session_id, params.message_bits // 8))
    except TransportError as exc:
        raise SessionAborted(f"transport: {exc}", transcript) from exc
    message = decode_message([0 if b == ERASURE else b for b in decoded])
    return SessionResult(transcript, message=message, byte_count=len(message))


def connect(host: str, port: int, timeout: float = DEFAULT_TIMEOUT) -> socket.socket:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock


def listen(host: str = "127.0.0.1", port: int = 0, backlog: int = 8) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    sock.listen(backlog)
    return sock


class BobServer:
    """Listener answering each connection in its own thread with isolated session state.

    Connection ``i`` (counting from 0) uses seed ``rng_seed + i``.
    """

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        rng_seed: int = 0,
        *,
        timeout: float = DEFAULT_TIMEOUT,
        on_result: Optional[Callable] = None,
    ):
        self.listener = listen(host, port)
        self.rng_seed = rng_seed
        self.timeout = timeout
        self.on_result = on_result
        self.results: list = []  # SessionResult or SessionAborted, in completion order
        self._lock = threading.Lock()
        self._threads: list = []

    @property
    def address(self) -> tuple:
        return self.listener.getsockname()[:2]

    def _handle(self, conn: socket.socket, index: int) -> None:
        conn.settimeout(self.timeout)
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        with conn:
            try:
                result = bob_endpoint(conn, self.rng_seed + index)
            except SessionAborted as exc:
                result = exc
        with self._lock:
            self.results.append(result)
        if self.on_result is not None:
            self.on_result(result)

    def serve(self, sessions: Optional[int] = None) -> list:
        """Accept ``sessions`` connections (forever if None), then wait for them."""
        index = 0
        try:
            while sessions is None or index < sessions:
                try:
                    conn, _ = self.listener.accept()
                except OSError:
                    break
                t = threading.Thread(target=self._handle, args=(conn, index), daemon=True)
                t.start()
                self._threads.append(t)
                index += 1
        finally:
            for t in self._threads:
                t.join()
        return self.results

    def serve_in_background(self, sessions: Optional[int] = None) -> threading.Thread:
        t = threading.Thread(target=self.serve, args=(sessions,), daemon=True)
        t.start()
        return t

    def close(self) -> None:
        self.listener.close()


def send_message(
    host: str,
    port: int,
    message: bytes | str,
    rng_seed: int = 0,
    *,
    timeout: float = DEFAULT_TIMEOUT,
    **params,
) -> SessionResult:
    with connect(host, port, timeout) as sock:
        return alice_endpoint(sock, message, rng_seed, **params)
