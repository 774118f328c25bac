"""Operator console gateway: bridges broker topics to JSON sockets.

Consoles connect over TCP and exchange newline-delimited JSON frames.
Outbound frames are :data:`BRIDGED_TOPICS` traffic re-encoded as typed
events (``asr``/``state``/``robot_speech``/``display``); ``state``
events additionally carry the sentences the active grammar accepts, so
the console can render one answer button per candidate utterance.
Inbound frames are operator commands (``wizard_utterance``/``abort``),
validated against the active grammar server-side and forwarded to the
dialogue node on ``/Operator/Command``.

Every console connection sees every bridged message exactly once, in
the order the gateway received it (one fan-out queue per connection fed
by a single sequencer thread).  The full frame vocabulary is documented
in ``docs/gateway-protocol.md``.
"""

from __future__ import annotations

import argparse
import json
import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass

from . import portnet
from .dialogue import (
    PORT_ASR,
    PORT_DISPLAY,
    PORT_OPERATOR,
    PORT_SAY,
    PORT_SPEECH_STATUS,
    PORT_STATE,
    Script,
    builtin_grammar_path,
    load_script,
)
from .grammar import GrammarError, compile_grammar, enumerate_language, load_grammar

log = logging.getLogger(__name__)

DEFAULT_GATEWAY_PORT = 7602

# topic -> console event type; /Robot/Say carries text, /Robot/SpeechStatus
# carries start/end status, both surfaced as robot_speech
BRIDGED_TOPICS = {
    PORT_ASR: "asr",
    PORT_STATE: "state",
    PORT_SAY: "robot_speech",
    PORT_SPEECH_STATUS: "robot_speech",
    PORT_DISPLAY: "display",
}


class GatewayError(Exception):
    code = "gateway-error"


class UnbridgedTopicError(GatewayError):
    code = "unbridged-topic"


class MalformedCommandError(GatewayError):
    code = "malformed-json"


class UnknownCommandError(GatewayError):
    code = "unknown-type"


class UtteranceNotInGrammarError(GatewayError):
    code = "utterance-not-in-grammar"


def encode_event(msg: portnet.PortMessage) -> dict:
    """Re-encode one broker message as a console event frame."""
    kind = BRIDGED_TOPICS.get(msg.topic)
    if kind is None:
        raise UnbridgedTopicError(f"topic {msg.topic} is not bridged")
    event: dict = {"type": kind, "t": msg.timestamp}
    if kind == "state":
        event["name"] = msg.payload
    elif msg.topic == PORT_SPEECH_STATUS:
        event["status"] = msg.payload
    else:
        event["text"] = msg.payload
    return event


@dataclass(frozen=True)
class OperatorCommand:
    kind: str  # wizard_utterance | abort
    text: str | None = None

    @property
    def port_payload(self) -> str:
        return f"wizard {self.text}" if self.kind == "wizard_utterance" else "abort"


def decode_command(frame: str, sentences=None) -> OperatorCommand:
    """Parse and validate one inbound console frame.

    When ``sentences`` is given, wizard text must be one of them (the
    sentences the active grammar accepts); the check is skipped when
    None so the pure decoder stays usable without session state.
    """
    try:
        raw = json.loads(frame)
    except json.JSONDecodeError as exc:
        raise MalformedCommandError(f"bad JSON frame: {exc}") from exc
    if not isinstance(raw, dict):
        raise MalformedCommandError("frame must be a JSON object")
    kind = raw.get("type")
    if kind == "abort":
        return OperatorCommand("abort")
    if kind != "wizard_utterance":
        raise UnknownCommandError(f"unknown command type {kind!r}")
    text = raw.get("text")
    if not isinstance(text, str) or not text.strip():
        raise MalformedCommandError("wizard_utterance needs nonempty text")
    text = text.strip()
    if sentences is not None and text not in sentences:
        raise UtteranceNotInGrammarError(
            f"{text!r} is not accepted by the active grammar"
        )
    return OperatorCommand("wizard_utterance", text=text)


class _ConsoleWriter:
    """Per-connection fan-out queue + writer thread."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.queue: queue.Queue[bytes | None] = queue.Queue()
        self.alive = True
        threading.Thread(target=self._drain, daemon=True).start()

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


def _frame_bytes(event: dict) -> bytes:
    return json.dumps(event, sort_keys=True).encode("utf-8") + b"\n"


class GatewayServer:
    """Newline-JSON TCP server bridging the broker to operator consoles."""

    def __init__(
        self,
        gateway_port: int | None = None,
        host: str = "127.0.0.1",
        broker_host: str = "127.0.0.1",
        broker_port: int | None = None,
        script: Script | None = None,
    ):
        self.host = host
        self._requested_port = (
            DEFAULT_GATEWAY_PORT if gateway_port is None else gateway_port
        )
        self._broker_host = broker_host
        self._broker_port = broker_port
        self._script = script if script is not None else load_script()
        self._sentence_cache: dict[str, tuple[str, ...]] = {}
        self._server: socket.socket | None = None
        self._command_out: portnet.OutPort | None = None
        self._subs: list[portnet.Subscription] = []
        self._inbox: queue.Queue[portnet.PortMessage] = queue.Queue()
        self._clients: list[_ConsoleWriter] = []
        self._lock = threading.Lock()
        self._state: str | None = None
        self._last_state_event: dict | None = None
        self._running = False

    @property
    def port(self) -> int:
        if self._server is None:
            raise GatewayError("gateway not started")
        return self._server.getsockname()[1]

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> "GatewayServer":
        self._running = True
        self._command_out = portnet.OutPort(
            PORT_OPERATOR, host=self._broker_host, port=self._broker_port
        )
        for topic in BRIDGED_TOPICS:
            sub = portnet.subscribe(
                topic, host=self._broker_host, port=self._broker_port
            )
            self._subs.append(sub)
            threading.Thread(target=self._pump, args=(sub,), daemon=True).start()
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((self.host, self._requested_port))
        server.listen(16)
        self._server = server
        self._running = True
        threading.Thread(target=self._sequence, daemon=True).start()
        threading.Thread(target=self._accept_loop, daemon=True).start()
        log.info("gateway listening on %s:%d", self.host, self.port)
        return self

    def stop(self) -> None:
        self._running = False
        for sub in self._subs:
            sub.close()
        if self._command_out is not None:
            self._command_out.close()
        with self._lock:
            for client in self._clients:
                client.stop()
            self._clients.clear()
        if self._server is not None:
            try:
                self._server.close()
            except OSError:
                pass

    # -- broker -> consoles ---------------------------------------------------

    def _pump(self, sub: portnet.Subscription) -> None:
        while self._running:
            try:
                msg = sub.next_message(timeout=0.2)
            except portnet.PortNetError:
                return
            if msg is not None:
                self._inbox.put(msg)

    def _sequence(self) -> None:
        while self._running:
            try:
                msg = self._inbox.get(timeout=0.2)
            except queue.Empty:
                continue
            try:
                event = encode_event(msg)
            except UnbridgedTopicError:
                continue
            if event["type"] == "state":
                event["sentences"] = list(self.sentences_for_state(event["name"]))
                with self._lock:
                    self._state = event["name"]
                    self._last_state_event = event
            data = _frame_bytes(event)
            with self._lock:
                targets = list(self._clients)
            for client in targets:
                client.push(data)

    def sentences_for_state(self, name: str) -> tuple[str, ...]:
        """Everything the state's grammar accepts; empty when no speech
        is expected there (or the state is unknown to the script)."""
        spec = self._script.states.get(name)
        if spec is None or spec.kind != "speech" or not spec.grammar:
            return ()
        if spec.grammar not in self._sentence_cache:
            try:
                fst = compile_grammar(
                    load_grammar(builtin_grammar_path(spec.grammar)),
                    grammar_id=spec.grammar,
                )
                self._sentence_cache[spec.grammar] = tuple(
                    sorted(enumerate_language(fst))
                )
            except (OSError, GrammarError) as exc:
                log.warning("cannot enumerate grammar %s: %s", spec.grammar, exc)
                return ()
        return self._sentence_cache[spec.grammar]

    def active_sentences(self) -> tuple[str, ...]:
        with self._lock:
            state = self._state
        return () if state is None else self.sentences_for_state(state)

    # -- console connections ----------------------------------------------------

    def _accept_loop(self) -> None:
        assert self._server is not None
        while self._running:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            writer = _ConsoleWriter(conn)
            with self._lock:
                self._clients.append(writer)
                snapshot = self._last_state_event
            # the hello confirms registration: everything bridged after it
            # is guaranteed to reach this console
            writer.push(_frame_bytes({"type": "hello", "t": portnet.session_time()}))
            if snapshot is not None:
                # late joiners need the current state to render anything
                writer.push(_frame_bytes(snapshot))
            threading.Thread(
                target=self._serve_client, args=(conn, writer), daemon=True
            ).start()

    def _serve_client(self, conn: socket.socket, writer: _ConsoleWriter) -> None:
        reader = conn.makefile("r", encoding="utf-8", newline="\n")
        try:
            for line in reader:
                line = line.strip()
                if not line:
                    continue
                try:
                    command = decode_command(line, sentences=self.active_sentences())
                except GatewayError as exc:
                    writer.push(
                        _frame_bytes(
                            {"type": "error", "error": exc.code, "detail": str(exc)}
                        )
                    )
                    continue
                assert self._command_out is not None
                try:
                    self._command_out.publish(command.port_payload)
                except portnet.PortNetError as exc:
                    writer.push(
                        _frame_bytes(
                            {"type": "error", "error": "broker-lost", "detail": str(exc)}
                        )
                    )
        except (OSError, ValueError):
            pass
        finally:
            with self._lock:
                if writer in self._clients:
                    self._clients.remove(writer)
            writer.stop()
            try:
                conn.close()
            except OSError:
                pass


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        description="Bridge broker topics to operator console sockets."
    )
    parser.add_argument(
        "--gateway-port",
        type=int,
        default=DEFAULT_GATEWAY_PORT,
        help=f"console TCP port (default {DEFAULT_GATEWAY_PORT})",
    )
    parser.add_argument(
        "--broker-port",
        type=int,
        default=None,
        help="broker TCP port (default from the middleware environment)",
    )
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    server = GatewayServer(
        gateway_port=args.gateway_port, broker_port=args.broker_port
    ).start()
    print(f"gateway listening on {server.host}:{server.port}")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
