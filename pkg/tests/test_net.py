import socket
import threading

import numpy as np
import pytest

from threestage.adversary import BeamSplit, InterceptResend, NoEve
from threestage.bench import encode_message
from threestage.net import wire
from threestage.net.endpoints import (
    RECEIVED,
    SENT,
    BobServer,
    FrameStream,
    SessionAborted,
    alice_endpoint,
    bob_endpoint,
    connect,
    listen,
    send_message,
)
from threestage.net.proxy import EveProxy, eve_proxy
from threestage.net.wire import Done, Error, Hello, SessionParams, Stage
from threestage.protocol import ALICE_TO_BOB, run_session


class Background:
    """Run ``fn`` in a thread and keep its result or exception."""

    def __init__(self, fn, *args, **kw):
        self.result = self.error = None

        def target():
            try:
                self.result = fn(*args, **kw)
            except BaseException as exc:  # noqa: BLE001 - reported by get()
                self.error = exc

        self.thread = threading.Thread(target=target, daemon=True)
        self.thread.start()

    def get(self, timeout=60):
        self.thread.join(timeout)
        assert not self.thread.is_alive(), "background task hung"
        if self.error is not None:
            raise self.error
        return self.result


def pair():
    a, b = socket.socketpair()
    a.settimeout(30)
    b.settimeout(30)
    return a, b


def loopback(message, seed=0, **params):
    a, b = pair()
    with a, b:
        bob = Background(bob_endpoint, b, seed)
        alice = alice_endpoint(a, message, seed, **params)
        return alice, bob.get()


def fake_alice(sock, frames):
    """Send raw frames one at a time, reading one reply frame after each send marked True."""
    stream = FrameStream(sock)
    replies = []
    for frame, wait in frames:
        stream.write_raw(frame if isinstance(frame, bytes) else wire.encode_frame(frame))
        if wait:
            replies.append(wire.decode_frame(stream.read_raw()))
    return replies


HELLO8 = Hello(1, SessionParams(8, "rotation", 8, 1))
H = (1.0, 1.0, 0.0, 0.0)


# clean sessions


def test_hello_loopback():
    alice, bob = loopback("hello", seed=3)
    assert bob.message == b"hello"
    assert alice.byte_count == 5
    assert len(alice.transcript.frames) == 2 + 3 * 40 + 1 == 123
    assert len(bob.transcript.frames) == 123
    assert alice.transcript.stage_frames == bob.transcript.stage_frames == 120


def test_three_stage_frames_per_bit():
    _, bob = loopback("ab", seed=1)
    per_bit = {}
    for _, f in bob.transcript.frames:
        if isinstance(f, Stage):
            per_bit.setdefault((f.block_index, f.bit_index), []).append(f.stage)
    assert len(per_bit) == 16
    assert all(stages == [1, 2, 3] for stages in per_bit.values())


def test_frame_directions():
    alice, _ = loopback("a", seed=1)
    kinds = [(d, type(f).__name__, getattr(f, "stage", None)) for d, f in alice.transcript.frames]
    assert kinds[:2] == [(SENT, "Hello", None), (RECEIVED, "Hello", None)]
    assert kinds[2:5] == [(SENT, "Stage", 1), (RECEIVED, "Stage", 2), (SENT, "Stage", 3)]
    assert kinds[-1] == (RECEIVED, "Done", None)


def test_empty_message():
    alice, bob = loopback(b"", seed=0)
    assert bob.message == b""
    types = [type(f).__name__ for _, f in alice.transcript.frames]
    assert types == ["Hello", "Hello", "Done"]


def test_network_matches_in_memory_session():
    msg = "net"
    alice, bob = loopback(msg, seed=12)
    mem = run_session(encode_message(msg), rng_seed=12)
    wire_stokes = [f.stokes for _, f in bob.transcript.frames if isinstance(f, Stage)]
    mem_stokes = [tuple(m.pulse.stokes.array.tolist()) for _, m in mem.records]
    # Bob rebuilds a Jones vector from each payload, so allow rounding residue
    np.testing.assert_allclose(wire_stokes, mem_stokes, atol=1e-12)
    assert bob.transcript.bits == mem.decoded


@pytest.mark.parametrize("mode", ["bench", "abstract:pauli", "abstract:hadamard"])
def test_other_modes(mode):
    _, bob = loopback("mode", seed=2, mode=mode)
    assert bob.message == b"mode"


def test_block_size_and_photons_carried():
    alice, bob = loopback("xyz", seed=2, block_size=5, photon_count=4)
    assert bob.message == b"xyz"
    assert bob.transcript.params == SessionParams(5, "rotation", 24, 4)
    assert all(f.photon_count == 4 for _, f in bob.transcript.frames if isinstance(f, Stage))


def test_transcript_jsonl_has_no_key_material():
    alice, bob = loopback("k", seed=5)
    text = alice.transcript.to_jsonl() + bob.transcript.to_jsonl()
    assert "theta" not in text and "angle" not in text
    assert text.count('"type": "STAGE"') == 48


def test_invalid_alice_params():
    a, b = pair()
    with a, b:
        with pytest.raises(ValueError):
            alice_endpoint(a, "x", block_size=0)


# violations


def test_out_of_order_stage_aborts():
    a, b = pair()
    with a, b:
        bob = Background(bob_endpoint, b, 0)
        replies = fake_alice(a, [(HELLO8, True), (Stage(1, 3, 0, 0, 1, H), True)])
        with pytest.raises(SessionAborted) as exc:
            bob.get()
    assert replies[0].ack
    assert replies[1] == Error(1, wire.ERROR_CODES[wire.PROTOCOL_VIOLATION])
    assert "expected stage 1" in exc.value.reason
    assert len(exc.value.transcript.frames) == 4


def test_wrong_bit_index_aborts():
    a, b = pair()
    with a, b:
        bob = Background(bob_endpoint, b, 0)
        replies = fake_alice(a, [(HELLO8, True), (Stage(1, 1, 0, 3, 1, H), True)])
        with pytest.raises(SessionAborted):
            bob.get()
    assert replies[1].reason == wire.PROTOCOL_VIOLATION


def test_session_must_start_with_hello():
    a, b = pair()
    with a, b:
        bob = Background(bob_endpoint, b, 0)
        replies = fake_alice(a, [(Stage(1, 1, 0, 0, 1, H), True)])
        with pytest.raises(SessionAborted):
            bob.get()
    assert replies[0].reason == wire.PROTOCOL_VIOLATION


def test_version_mismatch():
    data = bytearray(wire.encode_frame(HELLO8))
    data[4] = 7
    a, b = pair()
    with a, b:
        bob = Background(bob_endpoint, b, 0)
        replies = fake_alice(a, [(bytes(data), True)])
        with pytest.raises(SessionAborted):
            bob.get()
    assert replies[0].reason == wire.UNSUPPORTED_VERSION


def test_partial_byte_length_rejected():
    a, b = pair()
    with a, b:
        bob = Background(bob_endpoint, b, 0)
        replies = fake_alice(a, [(Hello(1, SessionParams(8, "rotation", 5, 1)), True)])
        with pytest.raises(SessionAborted):
            bob.get()
    assert replies[0].reason == wire.MALFORMED_PAYLOAD


def test_connection_loss_mid_bit():
    a, b = pair()
    bob = Background(bob_endpoint, b, 0)
    with a:
        fake_alice(a, [(HELLO8, True), (Stage(1, 1, 0, 0, 1, H), True)])
    with pytest.raises(SessionAborted) as exc:
        bob.get()
    b.close()
    assert "transport" in exc.value.reason
    frames = exc.value.transcript.frames
    assert [type(f).__name__ for _, f in frames] == ["Hello", "Hello", "Stage", "Stage"]


def test_alice_sees_bob_error():
    # a Bob that answers the handshake with an ERROR frame
    a, b = pair()
    with a, b:

        def rude_bob():
            stream = FrameStream(b)
            stream.read_raw()
            stream.write_raw(wire.encode_frame(Error(1, 7)))

        t = Background(rude_bob)
        with pytest.raises(SessionAborted) as exc:
            alice_endpoint(a, "x", 0)
        t.get()
    assert "unsupported_mode" in exc.value.reason


# server


def test_server_handles_concurrent_sessions():
    server = BobServer(rng_seed=100)
    with server.listener:
        runner = server.serve_in_background(sessions=3)
        host, port = server.address
        senders = [Background(send_message, host, port, f"msg{i}", i) for i in range(3)]
        for s in senders:
            s.get()
        runner.join(30)
    assert sorted(r.message for r in server.results) == [b"msg0", b"msg1", b"msg2"]


def test_closed_port_raises():
    sock = listen()
    port = sock.getsockname()[1]
    sock.close()
    with pytest.raises(OSError):
        connect("127.0.0.1", port, timeout=2)


# proxy


def proxied(message, strategy, seed=0, eve_seed=0, **params):
    server = BobServer(rng_seed=seed)
    with server.listener:
        runner = server.serve_in_background(sessions=1)
        proxy = eve_proxy(server.address, strategy, eve_seed)
        with proxy.listener:
            alice = send_message(*proxy.address, message, seed, **params)
            proxy.wait(30)
        runner.join(30)
    (bob,) = server.results
    return alice, bob, proxy


def test_noop_proxy_is_transparent():
    msg = "clear"
    direct_alice, direct_bob = loopback(msg, seed=4)
    alice, bob, proxy = proxied(msg, NoEve(), seed=4)
    assert bob.message == direct_bob.message == b"clear"
    direct_bytes = [wire.encode_frame(f) for _, f in direct_alice.transcript.frames]
    proxied_bytes = [wire.encode_frame(f) for _, f in alice.transcript.frames]
    assert proxied_bytes == direct_bytes
    sent = [wire.encode_frame(f) for d, f in alice.transcript.frames if d == SENT]
    assert proxy.frames[ALICE_TO_BOB] == sent
    assert proxy.passed_verbatim == 0 and proxy.errors == []


def test_proxy_intercept_disturbs():
    rng = np.random.default_rng(0)
    message = rng.bytes(1250)  # 10^4 bits
    alice, bob, proxy = proxied(message, InterceptResend(0.0, 1), seed=9, eve_seed=9)
    bits = encode_message(message)
    errors = sum(1 for x, y in zip(bits, bob.transcript.bits) if x != y)
    assert abs(errors / len(bits) - 0.25) < 0.02
    report = proxy.report(bits, bob.transcript.bits)
    assert report.bob_errors == errors


def test_proxy_beamsplit():
    rng = np.random.default_rng(1)
    message = rng.bytes(1250)
    alice, bob, proxy = proxied(message, BeamSplit(1), seed=3, eve_seed=3, photon_count=2)
    assert bob.message == message
    assert all(f.photon_count == 1 for _, f in bob.transcript.frames if isinstance(f, Stage) and f.stage == 1)
    report = proxy.report(encode_message(message), bob.transcript.bits)
    assert report.bob_errors == 0
    assert abs(report.eve_bit_accuracy - 0.5) < 0.02


def test_proxy_forwards_garbage_verbatim():
    target = listen()
    received = []

    def sink():
        conn, _ = target.accept()
        with conn:
            conn.settimeout(10)
            while chunk := conn.recv(4096):
                received.append(chunk)

    t = Background(sink)
    proxy = EveProxy(target.getsockname()[:2], NoEve())
    proxy.start()
    junk = b"\x00garbage that is not a frame" * 3
    good = wire.encode_frame(Done(1, 0))
    with connect(*proxy.address) as s:
        s.sendall(good + junk)
    proxy.wait(10)
    t.get()
    target.close()
    proxy.close()
    assert b"".join(received) == good + junk
    assert proxy.passed_verbatim == 1


def test_proxy_reports_unreachable_target():
    sock = listen()
    dead = sock.getsockname()[:2]
    sock.close()
    proxy = EveProxy(dead, NoEve(), timeout=2)
    proxy.start()
    with connect(*proxy.address) as s:
        s.settimeout(5)
        assert s.recv(10) == b""
    proxy.wait(10)
    proxy.close()
    assert proxy.errors and "connect" in proxy.errors[0]
