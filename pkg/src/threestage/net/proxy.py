"""Eve as a man-in-the-middle TCP proxy.

One forwarding thread per direction reads a whole frame, lets the strategy
act on STAGE payloads, and writes it on before reading the next, so at most
one frame per direction is in flight. Frames that fail to decode are passed
on untouched; after a bad header the direction falls back to raw copying.
"""

from __future__ import annotations

import socket
import threading
from typing import Optional, Sequence

import numpy as np

from ..adversary import AttackReport, BeamSplit, Eavesdropper, EveStrategy
from ..protocol import ALICE_TO_BOB, BOB_TO_ALICE
from . import wire
from .endpoints import DEFAULT_TIMEOUT, FrameStream, TransportError, connect, listen, pulse_to_stage, stage_to_message
from .wire import DecodeError, Hello, Stage


class EveProxy:
    """Accept Alice on ``listen_addr``, dial Bob at ``target``, tamper in between."""

    def __init__(
        self,
        target: tuple,
        strategy: EveStrategy,
        rng_seed: int = 0,
        *,
        listen_addr: tuple = ("127.0.0.1", 0),
        timeout: float = DEFAULT_TIMEOUT,
    ):
        self.target = target
        self.strategy = strategy
        self.rng_seed = rng_seed
        self.timeout = timeout
        self.listener = listen(*listen_addr)
        self.eve = Eavesdropper(strategy, np.random.default_rng(rng_seed))
        self.params: Optional[wire.SessionParams] = None
        self.frames = {ALICE_TO_BOB: [], BOB_TO_ALICE: []}  # raw bytes as forwarded
        self.passed_verbatim = 0
        self.errors: list = []
        self._lock = threading.Lock()
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple:
        return self.listener.getsockname()[:2]

    def _tamper(self, direction: str, raw: bytes) -> bytes:
        try:
            frame = wire.decode_frame(raw)
        except DecodeError:
            self.passed_verbatim += 1
            return raw
        if isinstance(frame, Hello) and not frame.ack:
            self.params = frame.params
            self.eve.block_size = frame.params.block_size
        if not isinstance(frame, Stage):
            return raw
        original = stage_to_message(frame)
        with self._lock:
            msg = self.eve(direction, original)
        if msg.pulse is original.pulse:
            return raw  # untouched pulses go out byte for byte
        return wire.encode_frame(pulse_to_stage(msg, frame.session_id))

    def _pump(self, direction: str, src: socket.socket, dst: socket.socket) -> None:
        reader, writer = FrameStream(src), FrameStream(dst)
        raw_mode = False
        try:
            while True:
                if raw_mode:
                    chunk = src.recv(65536)
                    if not chunk:
                        break
                    writer.write_raw(chunk)
                    continue
                try:
                    raw = reader.read_raw()
                except DecodeError as exc:
                    # unknown framing from here on: copy bytes as they come
                    self.passed_verbatim += 1
                    writer.write_raw(exc.raw)
                    raw_mode = True
                    continue
                out = self._tamper(direction, raw)
                self.frames[direction].append(out)
                writer.write_raw(out)
        except TransportError as exc:
            if "closed by peer" not in str(exc):
                self.errors.append(f"{direction}: {exc}")
        except OSError as exc:
            self.errors.append(f"{direction}: {exc}")
        finally:
            try:
                dst.shutdown(socket.SHUT_WR)
            except OSError:
                pass

    def run_once(self) -> None:
        """Relay a single Alice connection until both sides hang up."""
        alice, _ = self.listener.accept()
        alice.settimeout(self.timeout)
        alice.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            bob = connect(*self.target, timeout=self.timeout)
        except OSError as exc:
            self.errors.append(f"connect to {self.target}: {exc}")
            alice.close()
            raise
        with alice, bob:
            threads = [
                threading.Thread(target=self._pump, args=(ALICE_TO_BOB, alice, bob), daemon=True),
                threading.Thread(target=self._pump, args=(BOB_TO_ALICE, bob, alice), daemon=True),
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()

    def start(self) -> threading.Thread:
        self._thread = threading.Thread(target=self._run_quietly, daemon=True)
        self._thread.start()
        return self._thread

    def _run_quietly(self) -> None:
        try:
            self.run_once()
        except OSError:
            pass

    def wait(self, timeout: Optional[float] = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    def close(self) -> None:
        self.listener.close()

    def report(self, alice_bits: Sequence[int], bob_bits: Sequence[int]) -> AttackReport:
        """Score the session once the true plaintext and Bob's decode are known."""
        guesses = self.eve.guesses(len(alice_bits))
        photons = self.params.photon_count if self.params else 1
        return AttackReport.from_counts(
            self.strategy.describe(), self.rng_seed, photons, list(alice_bits), list(bob_bits), guesses
        )


def eve_proxy(target: tuple, strategy: EveStrategy, rng_seed: int = 0, **kw) -> EveProxy:
    """Start a proxy in the background and return it; read ``.address`` to connect Alice."""
    if isinstance(strategy, BeamSplit) and strategy.k < 1:
        raise ValueError("beam split needs k >= 1")
    proxy = EveProxy(target, strategy, rng_seed, **kw)
    proxy.start()
    return proxy
