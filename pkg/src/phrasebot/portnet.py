"""Named-port publish/subscribe middleware over TCP.

A single broker process routes newline-delimited UTF-8 frames between
named ports (topics such as ``/SpeechRecognition/Sentence``).  Modules
open out-ports to publish and subscribe to topics to receive; the broker
topology is invisible to them.  Delivery is at-most-once with unbounded
in-memory queues per subscriber; messages published before a
subscription exists are never replayed.

Wire format, one frame per line::

    <topic> <timestamp> <payload>

Lines that do not start with ``/`` are control commands (``open``,
``sub``) answered with ``ok`` or ``err <code> [detail]``.
"""

from __future__ import annotations

import argparse
import logging
import os
import queue
import socket
import threading
import time
from dataclasses import dataclass

log = logging.getLogger(__name__)

DEFAULT_BROKER_PORT = 7601
BROKER_PORT_ENV = "PHRASEBOT_BROKER_PORT"


class PortNetError(Exception):
    """Base class for middleware failures."""


class InvalidPortName(PortNetError):
    pass


class NameCollision(PortNetError):
    pass


class BrokerUnreachable(PortNetError):
    pass


class ClosedHandle(PortNetError):
    pass


def validate_port_name(name: str) -> str:
    """Check a slash-separated port name; returns it unchanged."""
    if not name.startswith("/"):
        raise InvalidPortName(f"port name must start with '/': {name!r}")
    if any(ch.isspace() for ch in name):
        raise InvalidPortName(f"port name contains whitespace: {name!r}")
    if any(seg == "" for seg in name[1:].split("/")):
        raise InvalidPortName(f"port name has empty segment: {name!r}")
    return name


@dataclass(frozen=True)
class PortMessage:
    topic: str
    timestamp: float
    payload: str


def format_frame(msg: PortMessage) -> bytes:
    return f"{msg.topic} {msg.timestamp!r} {msg.payload}\n".encode("utf-8")


def parse_frame(line: str) -> PortMessage:
    parts = line.split(" ", 2)
    if len(parts) < 2:
        raise PortNetError(f"malformed frame: {line!r}")
    payload = parts[2] if len(parts) == 3 else ""
    return PortMessage(topic=parts[0], timestamp=float(parts[1]), payload=payload)


def default_broker_port() -> int:
    return int(os.environ.get(BROKER_PORT_ENV, DEFAULT_BROKER_PORT))


# --------------------------------------------------------------------------
# session clock: timestamps are seconds since session start
# --------------------------------------------------------------------------

_session_t0: float | None = None
_clock_lock = threading.Lock()


def reset_session_clock(t0: float | None = None) -> None:
    global _session_t0
    with _clock_lock:
        _session_t0 = time.monotonic() if t0 is None else t0


def session_time() -> float:
    global _session_t0
    with _clock_lock:
        if _session_t0 is None:
            _session_t0 = time.monotonic()
        return time.monotonic() - _session_t0


# --------------------------------------------------------------------------
# broker
# --------------------------------------------------------------------------


class _Subscriber:
    """Broker-side fan-out endpoint: one queue + writer thread per socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.queue: queue.Queue[bytes | None] = queue.Queue()
        self.alive = True
        self.thread = threading.Thread(target=self._drain, daemon=True)
        self.thread.start()

    def _drain(self) -> None:
        while True:
            data = self.queue.get()
            if data is None:
                break
            try:
                self.sock.sendall(data)
            except OSError:
                self.alive = False
                break

    def push(self, data: bytes) -> None:
        if self.alive:
            self.queue.put(data)

    def stop(self) -> None:
        self.alive = False
        self.queue.put(None)


class Broker:
    """Central message broker; serves each TCP connection on its own thread."""

    def __init__(self, port: int | None = None, host: str = "127.0.0.1"):
        self.host = host
        self._requested_port = default_broker_port() if port is None else port
        self._server: socket.socket | None = None
        self._lock = threading.Lock()
        self._subs: dict[str, list[_Subscriber]] = {}
        self._out_names: set[str] = set()
        self._running = False

    @property
    def port(self) -> int:
        if self._server is None:
            raise PortNetError("broker not started")
        return self._server.getsockname()[1]

    def start(self) -> "Broker":
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((self.host, self._requested_port))
        server.listen(64)
        self._server = server
        self._running = True
        threading.Thread(target=self._accept_loop, daemon=True).start()
        log.info("broker listening on %s:%d", self.host, self.port)
        return self

    def stop(self) -> None:
        self._running = False
        with self._lock:
            for subs in self._subs.values():
                for sub in subs:
                    sub.stop()
            self._subs.clear()
            self._out_names.clear()
        if self._server is not None:
            try:
                self._server.close()
            except OSError:
                pass

    def _accept_loop(self) -> None:
        assert self._server is not None
        while self._running:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: socket.socket) -> None:
        out_name: str | None = None
        subscriber: _Subscriber | None = None
        reader = conn.makefile("r", encoding="utf-8", newline="\n")
        try:
            for line in reader:
                line = line.rstrip("\n")
                if line.startswith("/"):
                    self._route(line)
                else:
                    reply, out_name, subscriber = self._control(
                        line, conn, out_name, subscriber
                    )
                    conn.sendall(reply.encode("utf-8") + b"\n")
        except (OSError, ValueError):
            pass
        finally:
            with self._lock:
                if out_name is not None:
                    self._out_names.discard(out_name)
                if subscriber is not None:
                    for subs in self._subs.values():
                        if subscriber in subs:
                            subs.remove(subscriber)
                    subscriber.stop()
            try:
                conn.close()
            except OSError:
                pass

    def _route(self, line: str) -> None:
        topic = line.split(" ", 1)[0]
        data = line.encode("utf-8") + b"\n"
        with self._lock:
            targets = list(self._subs.get(topic, ()))
        for sub in targets:
            sub.push(data)

    def _control(self, line, conn, out_name, subscriber):
        parts = line.split()
        if len(parts) == 3 and parts[0] == "open" and parts[1] in ("in", "out"):
            cmd, direction, name = parts
        elif len(parts) == 2 and parts[0] == "sub":
            cmd, direction, name = "sub", "in", parts[1]
        else:
            return f"err bad-command {line}", out_name, subscriber
        try:
            validate_port_name(name)
        except InvalidPortName as exc:
            return f"err invalid-name {exc}", out_name, subscriber
        if direction == "out":
            with self._lock:
                if name in self._out_names:
                    return f"err name-collision {name}", out_name, subscriber
                self._out_names.add(name)
            return "ok", name, subscriber
        # in-port / subscription: start receiving from this point on
        sub = _Subscriber(conn)
        with self._lock:
            self._subs.setdefault(name, []).append(sub)
        return "ok", out_name, sub


# --------------------------------------------------------------------------
# client handles
# --------------------------------------------------------------------------


def _connect(host: str, port: int) -> socket.socket:
    try:
        sock = socket.create_connection((host, port), timeout=5.0)
    except OSError as exc:
        raise BrokerUnreachable(f"cannot reach broker at {host}:{port}: {exc}") from exc
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock


def _handshake(sock: socket.socket, command: str) -> None:
    sock.sendall(command.encode("utf-8") + b"\n")
    reply = b""
    while not reply.endswith(b"\n"):
        chunk = sock.recv(4096)
        if not chunk:
            raise BrokerUnreachable("broker closed connection during handshake")
        reply += chunk
    text = reply.decode("utf-8").strip()
    if text == "ok":
        return
    if "name-collision" in text:
        raise NameCollision(text)
    if "invalid-name" in text:
        raise InvalidPortName(text)
    raise PortNetError(text)


class OutPort:
    """Publisher handle bound to one topic."""

    def __init__(self, name: str, host: str = "127.0.0.1", port: int | None = None):
        validate_port_name(name)
        self.name = name
        self._sock = _connect(host, port if port is not None else default_broker_port())
        _handshake(self._sock, f"open out {name}")
        self._last_ts: float | None = None
        self._closed = False

    def publish(self, payload: str, at: float | None = None) -> PortMessage:
        if self._closed:
            raise ClosedHandle(f"out-port {self.name} is closed")
        if "\n" in payload:
            raise ValueError("payload must not contain newline")
        ts = session_time() if at is None else float(at)
        if self._last_ts is not None and ts < self._last_ts:
            raise ValueError(
                f"timestamp regression on {self.name}: {ts} < {self._last_ts}"
            )
        self._last_ts = ts
        msg = PortMessage(self.name, ts, payload)
        try:
            self._sock.sendall(format_frame(msg))
        except OSError as exc:
            self._closed = True
            raise ClosedHandle(f"out-port {self.name}: {exc}") from exc
        return msg

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass


class Subscription:
    """Receiver handle; poll with :meth:`next_message`.

    A single subscription must not be polled from two consumers at once.
    """

    def __init__(self, name: str, host: str = "127.0.0.1", port: int | None = None):
        validate_port_name(name)
        self.name = name
        self._sock = _connect(host, port if port is not None else default_broker_port())
        _handshake(self._sock, f"sub {name}")
        self._queue: queue.Queue[PortMessage] = queue.Queue()
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        reader = self._sock.makefile("r", encoding="utf-8", newline="\n")
        try:
            for line in reader:
                self._queue.put(parse_frame(line.rstrip("\n")))
        except (OSError, ValueError):
            pass

    def next_message(self, timeout: float = 1.0) -> PortMessage | None:
        """Oldest queued message, or None once `timeout` seconds elapse."""
        if self._closed:
            raise ClosedHandle(f"subscription {self.name} is closed")
        try:
            if timeout <= 0:
                return self._queue.get_nowait()
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass


def open_port(
    name: str,
    direction: str,
    host: str = "127.0.0.1",
    port: int | None = None,
) -> OutPort | Subscription:
    """Register a named port with the broker.

    Out-ports publish; in-ports receive (equivalent to :func:`subscribe`).
    Duplicate out-port names are rejected by the broker.
    """
    if direction == "out":
        return OutPort(name, host=host, port=port)
    if direction == "in":
        return Subscription(name, host=host, port=port)
    raise ValueError(f"direction must be 'in' or 'out', got {direction!r}")


def subscribe(
    name: str, host: str = "127.0.0.1", port: int | None = None
) -> Subscription:
    return Subscription(name, host=host, port=port)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Run the port middleware broker.")
    parser.add_argument(
        "--broker-port",
        type=int,
        default=None,
        help=f"TCP port (default {DEFAULT_BROKER_PORT}, env {BROKER_PORT_ENV})",
    )
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    port = args.broker_port if args.broker_port is not None else default_broker_port()
    broker = Broker(port=port).start()
    print(f"broker listening on {broker.host}:{broker.port}")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        broker.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
