"""Healthy Living interaction script as an explicit state machine.

The machine is a pure event-in / actions-out transducer: feeding a
:class:`DialogueEvent` to :meth:`DialogueMachine.advance` returns the
next state name and the list of :class:`TransitionAction` effects
(robot speech, screen text, grammar switches, timers).  All wording
lives in a JSON script file so prompts are editable without code
changes.

State kinds
-----------
robot      robot monologue; advances when its speech ends
speech     expects a child utterance; emits set_grammar + say + display
exercise   movement session; advances on the energy report event
terminal   Farewell (and the implicit Aborted sink)

The adaptation states retry in place on silence; three consecutive
silent results during them abort the session (fail-fast), as does an
operator abort from any state.

:class:`DialogueNode` wraps the machine in a live runtime: it consumes
recognition results and operator commands from the port middleware and
publishes speech, display, grammar and state traffic back onto it.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import queue
import threading
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from . import portnet

log = logging.getLogger(__name__)

SILENCE_WORD = "!SIL"
ABORTED = "Aborted"
MAX_SILENT_ADAPT_RESULTS = 3
ROBOT_WORDS_PER_SECOND = 2.5

# port names spoken by the live runtime
PORT_ASR = "/SpeechRecognition/Sentence"
PORT_OPERATOR = "/Operator/Command"
PORT_SAY = "/Robot/Say"
PORT_SPEECH_STATUS = "/Robot/SpeechStatus"
PORT_GRAMMAR = "/Dialogue/Grammar"
PORT_DISPLAY = "/Display/Text"
PORT_STATE = "/Dialogue/State"


class DialogueError(Exception):
    pass


class IllegalEventError(DialogueError):
    """Event not legal in the current state."""


class StateExpectsNoSpeech(DialogueError):
    pass


# --------------------------------------------------------------------------
# events and actions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DialogueEvent:
    kind: str  # recognized | timeout | robot_speech_ended | energy_session_done | wizard | operator_abort
    text: str | None = None
    joules: float | None = None


def recognized(text: str) -> DialogueEvent:
    if text != text.lower() and text != SILENCE_WORD:
        raise ValueError("recognized text must be lowercase")
    return DialogueEvent("recognized", text=text)


def timeout() -> DialogueEvent:
    return DialogueEvent("timeout")


def robot_speech_ended() -> DialogueEvent:
    return DialogueEvent("robot_speech_ended")


def energy_session_done(joules: float) -> DialogueEvent:
    if not math.isfinite(joules) or joules < 0:
        raise ValueError(f"joules must be finite and >= 0, got {joules}")
    return DialogueEvent("energy_session_done", joules=joules)


def wizard(text: str) -> DialogueEvent:
    if text != text.lower() and text != SILENCE_WORD:
        raise ValueError("wizard text must be lowercase")
    return DialogueEvent("wizard", text=text)


def operator_abort() -> DialogueEvent:
    return DialogueEvent("operator_abort")


@dataclass(frozen=True)
class TransitionAction:
    kind: str  # say | display | set_grammar | start_timer | report | abort
    text: str | None = None
    grammar_id: str | None = None
    seconds: float | None = None


def say(text: str) -> TransitionAction:
    if not text:
        raise ValueError("say text must be nonempty")
    return TransitionAction("say", text=text)


def display(text: str) -> TransitionAction:
    if not text:
        raise ValueError("display text must be nonempty")
    return TransitionAction("display", text=text)


def set_grammar(grammar_id: str) -> TransitionAction:
    return TransitionAction("set_grammar", grammar_id=grammar_id)


def start_timer(seconds: float) -> TransitionAction:
    return TransitionAction("start_timer", seconds=seconds)


def report(text: str) -> TransitionAction:
    return TransitionAction("report", text=text)


def abort_action() -> TransitionAction:
    return TransitionAction("abort")


# --------------------------------------------------------------------------
# script
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StateSpec:
    name: str
    kind: str  # robot | speech | exercise | terminal
    say: str | None = None
    next: str | None = None
    grammar: str | None = None
    display: str | None = None
    options: tuple[str, ...] = ()
    correct: str | None = None
    acknowledge: bool = False
    retry_on_silence: bool = False
    session: int | None = None


@dataclass(frozen=True)
class Script:
    states: dict[str, StateSpec]
    order: tuple[str, ...]
    timeout_seconds: float

    @property
    def initial(self) -> str:
        return self.order[0]

    def speech_states(self) -> list[str]:
        return [n for n in self.order if self.states[n].kind == "speech"]


def _data_path(name: str) -> Path:
    return Path(str(resources.files("phrasebot").joinpath("data"))) / name


def builtin_grammar_path(grammar_id: str) -> Path:
    return _data_path("grammars") / f"{grammar_id}.gram"


def load_script(path: str | Path | None = None) -> Script:
    """Load a dialogue script; defaults to the packaged Healthy Living one."""
    raw = json.loads(
        Path(path).read_text(encoding="utf-8")
        if path is not None
        else _data_path("healthy_living.json").read_text(encoding="utf-8")
    )
    states: dict[str, StateSpec] = {}
    order: list[str] = []
    for entry in raw["states"]:
        spec = StateSpec(
            name=entry["name"],
            kind=entry["kind"],
            say=entry.get("say"),
            next=entry.get("next"),
            grammar=entry.get("grammar"),
            display=entry.get("display"),
            options=tuple(entry.get("options", ())),
            correct=entry.get("correct"),
            acknowledge=entry.get("acknowledge", False),
            retry_on_silence=entry.get("retry_on_silence", False),
            session=entry.get("session"),
        )
        states[spec.name] = spec
        order.append(spec.name)
    script = Script(
        states=states,
        order=tuple(order),
        timeout_seconds=float(raw.get("timeout_seconds", 10)),
    )
    for spec in states.values():
        if spec.kind != "terminal" and spec.next not in states:
            raise DialogueError(f"state {spec.name} continues to unknown {spec.next}")
        if spec.kind == "speech" and not spec.grammar:
            raise DialogueError(f"speech state {spec.name} has no grammar")
    return script


# --------------------------------------------------------------------------
# machine
# --------------------------------------------------------------------------


class DialogueMachine:
    """Deterministic walk over the script with fail-fast silence handling.

    Holds the little context the script needs: per-session energies and
    the consecutive-silence counter for the adaptation stage.
    """

    def __init__(self, script: Script | None = None):
        self.script = script if script is not None else load_script()
        self.state = self.script.initial
        self.energies: dict[int, float] = {}
        self._last_energy = 0.0
        self._silence_run = 0
        self._started = False

    @property
    def finished(self) -> bool:
        return self.state == ABORTED or self.script.states[self.state].kind == "terminal"

    def start(self) -> list[TransitionAction]:
        """Enter the initial state and return its entry actions."""
        self._started = True
        return self._entry_actions(self.state)

    def grammar_for_state(self, name: str | None = None) -> str:
        spec = self.script.states[name if name is not None else self.state]
        if spec.kind != "speech":
            raise StateExpectsNoSpeech(f"{spec.name} expects no speech")
        assert spec.grammar is not None
        return spec.grammar

    # -- transitions ------------------------------------------------------

    def advance(self, event: DialogueEvent) -> tuple[str, list[TransitionAction]]:
        if not self._started:
            raise DialogueError("call start() before advance()")
        if self.state == ABORTED:
            return ABORTED, []
        if event.kind == "operator_abort":
            return self._abort()
        spec = self.script.states[self.state]
        handler = {
            "robot": self._advance_robot,
            "speech": self._advance_speech,
            "exercise": self._advance_exercise,
            "terminal": self._advance_terminal,
        }[spec.kind]
        return handler(spec, event)

    def _abort(self) -> tuple[str, list[TransitionAction]]:
        self.state = ABORTED
        return ABORTED, [abort_action()]

    def _goto(
        self, name: str, lead: list[TransitionAction] | None = None
    ) -> tuple[str, list[TransitionAction]]:
        self.state = name
        return name, (lead or []) + self._entry_actions(name)

    def _entry_actions(self, name: str) -> list[TransitionAction]:
        spec = self.script.states[name]
        actions: list[TransitionAction] = []
        if spec.kind == "speech":
            assert spec.grammar is not None
            actions.append(set_grammar(spec.grammar))
        if spec.say:
            actions.append(say(spec.say.replace("{energy}", f"{self._last_energy:.1f}")))
        if spec.kind == "speech" and spec.display:
            actions.append(display(spec.display))
        return actions

    def _advance_robot(self, spec, event):
        if event.kind == "robot_speech_ended":
            assert spec.next is not None
            return self._goto(spec.next)
        raise IllegalEventError(f"{event.kind} in {spec.name}")

    def _advance_terminal(self, spec, event):
        if event.kind == "robot_speech_ended":
            return self.state, []
        raise IllegalEventError(f"{event.kind} in {spec.name}")

    def _advance_exercise(self, spec, event):
        if event.kind == "robot_speech_ended":
            return self.state, []  # exercise runs until the energy report
        if event.kind == "energy_session_done":
            assert spec.session is not None and spec.next is not None
            assert event.joules is not None
            self.energies[spec.session] = event.joules
            self._last_energy = event.joules
            lead = [report(f"session {spec.session} used {event.joules:.1f} joules")]
            return self._goto(spec.next, lead)
        raise IllegalEventError(f"{event.kind} in {spec.name}")

    def _advance_speech(self, spec, event):
        if event.kind == "robot_speech_ended":
            return self.state, [start_timer(self.script.timeout_seconds)]
        if event.kind not in ("recognized", "wizard", "timeout"):
            raise IllegalEventError(f"{event.kind} in {spec.name}")
        text = event.text if event.kind != "timeout" else SILENCE_WORD
        assert spec.next is not None
        if text == SILENCE_WORD:
            if spec.retry_on_silence:
                self._silence_run += 1
                if self._silence_run >= MAX_SILENT_ADAPT_RESULTS:
                    return self._abort()
                return self._goto(spec.name)  # re-prompt the same phrase
            return self._goto(spec.next)
        if spec.retry_on_silence:
            self._silence_run = 0
        lead: list[TransitionAction] = []
        if spec.acknowledge:
            phrase = " ".join("my" if w == "your" else w for w in text.split())
            lead.append(say(f"ok i will {phrase}"))
        if spec.correct is not None:
            lead.append(
                display(
                    "correct"
                    if text == spec.correct
                    else f"wrong. the correct answer was. {spec.correct}"
                )
            )
        return self._goto(spec.next, lead)


# --------------------------------------------------------------------------
# exercise-session helpers
# --------------------------------------------------------------------------


def compute_energy(speeds: list[tuple[float, float]], mass: float) -> float:
    """Kinetic-energy style movement score: sum of 0.5 * m * v^2 * dt.

    A stand-in for the full skeletal-tracking computation; the shape
    (nonnegative, quadratic in speed) is what the script relies on.
    """
    if mass <= 0:
        raise ValueError("mass must be positive")
    total = 0.0
    for speed, dt in speeds:
        if speed < 0 or dt <= 0:
            raise ValueError(f"need speed >= 0 and dt > 0, got ({speed}, {dt})")
        total += 0.5 * mass * speed * speed * dt
    return total


def pitch_for_speed(speed: float) -> float:
    """Movement-speed sonification: 220 Hz at rest, saturating at 880 Hz."""
    if speed < 0:
        raise ValueError("speed must be >= 0")
    return 880.0 - 660.0 * math.exp(-speed)


def speech_seconds(text: str, words_per_second: float = ROBOT_WORDS_PER_SECOND) -> float:
    """Robot speech duration model used by the simulator."""
    return len(text.split()) / words_per_second


# --------------------------------------------------------------------------
# live runtime over the port middleware
# --------------------------------------------------------------------------


class DialogueNode:
    """Run the machine as a live node on the message broker.

    Subscribes to recognition results and operator commands; publishes
    robot speech, speech status, grammar switches, display text and the
    current state.  All inbound traffic and internal timers funnel into
    one queue consumed by a single loop thread, so event handling is
    strictly serialized.

    ``time_scale`` stretches every simulated duration (robot speech,
    exercise blocks); 0 makes them instantaneous, which is what tests
    want.  ``energy_fn(session_index)`` supplies the joules reported at
    the end of each exercise block (no motion tracking here).
    """

    def __init__(
        self,
        broker_port: int | None = None,
        host: str = "127.0.0.1",
        script: Script | None = None,
        time_scale: float = 1.0,
        exercise_seconds: float = 10.0,
        energy_fn=None,
    ):
        if time_scale < 0:
            raise ValueError("time_scale must be >= 0")
        self.machine = DialogueMachine(script)
        self._host = host
        self._broker_port = broker_port
        self._time_scale = time_scale
        self._exercise_seconds = exercise_seconds
        self._energy_fn = energy_fn if energy_fn is not None else lambda session: 0.0
        self._queue: queue.Queue[portnet.PortMessage] = queue.Queue()
        self._timers: list[tuple[float, int, str, object]] = []
        self._timer_seq = 0
        self._pending_says: list[str] = []
        self._speaking = False
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._out: dict[str, portnet.OutPort] = {}
        self._subs: list[portnet.Subscription] = []

    @property
    def state(self) -> str:
        return self.machine.state

    def start(self) -> "DialogueNode":
        for name in (PORT_SAY, PORT_SPEECH_STATUS, PORT_GRAMMAR, PORT_DISPLAY, PORT_STATE):
            self._out[name] = portnet.OutPort(name, host=self._host, port=self._broker_port)
        for name in (PORT_ASR, PORT_OPERATOR):
            sub = portnet.subscribe(name, host=self._host, port=self._broker_port)
            self._subs.append(sub)
            t = threading.Thread(target=self._pump, args=(sub,), daemon=True)
            t.start()
            self._threads.append(t)
        loop = threading.Thread(target=self._run, daemon=True)
        loop.start()
        self._threads.append(loop)
        return self

    def stop(self) -> None:
        self._stop.set()
        for sub in self._subs:
            sub.close()
        for port in self._out.values():
            port.close()

    # -- plumbing -----------------------------------------------------------

    def _pump(self, sub: portnet.Subscription) -> None:
        while not self._stop.is_set():
            try:
                msg = sub.next_message(timeout=0.2)
            except portnet.PortNetError:
                return
            if msg is not None:
                self._queue.put(msg)

    def _publish(self, port: str, payload: str) -> None:
        try:
            self._out[port].publish(payload)
        except portnet.PortNetError:
            log.warning("publish on closed port %s dropped", port)

    def _schedule(self, delay: float, kind: str, payload: object = None) -> None:
        self._timer_seq += 1
        heapq.heappush(
            self._timers,
            (time.monotonic() + delay * self._time_scale, self._timer_seq, kind, payload),
        )

    # -- main loop ----------------------------------------------------------

    def _run(self) -> None:
        self._publish(PORT_STATE, self.machine.state)
        self._handle_actions(self.machine.start())
        while not self._stop.is_set():
            now = time.monotonic()
            while self._timers and self._timers[0][0] <= now:
                _, _, kind, payload = heapq.heappop(self._timers)
                self._fire_timer(kind, payload)
            wait = 0.05
            if self._timers:
                wait = min(wait, max(self._timers[0][0] - time.monotonic(), 0.0))
            try:
                msg = self._queue.get(timeout=wait)
            except queue.Empty:
                continue
            self._handle_message(msg)

    def _fire_timer(self, kind: str, payload: object) -> None:
        if kind == "robot_end":
            self._publish(PORT_SPEECH_STATUS, "end")
            self._speaking = False
            before = self.machine.state
            self._feed(robot_speech_ended())
            spec = self.machine.script.states.get(before)
            if spec is not None and spec.kind == "exercise":
                joules = max(0.0, float(self._energy_fn(spec.session)))
                self._schedule(self._exercise_seconds, "energy", joules)
            if not self._speaking and self._pending_says:
                self._begin_say(self._pending_says.pop(0))
        elif kind == "energy":
            self._feed(energy_session_done(payload))

    def _handle_message(self, msg: portnet.PortMessage) -> None:
        if msg.topic == PORT_ASR:
            if msg.payload == SILENCE_WORD:
                self._feed(timeout())
            else:
                try:
                    event = recognized(msg.payload)
                except ValueError as exc:
                    log.warning("bad recognition payload %r: %s", msg.payload, exc)
                    return
                self._feed(event)
        elif msg.topic == PORT_OPERATOR:
            if msg.payload == "abort":
                self._feed(operator_abort())
            elif msg.payload.startswith("wizard "):
                try:
                    event = wizard(msg.payload[len("wizard "):])
                except ValueError as exc:
                    log.warning("bad wizard payload %r: %s", msg.payload, exc)
                    return
                self._feed(event)
            else:
                log.warning("unknown operator command %r", msg.payload)

    def _feed(self, event: DialogueEvent) -> None:
        try:
            state, actions = self.machine.advance(event)
        except DialogueError as exc:
            log.warning("dropped %s in %s: %s", event.kind, self.machine.state, exc)
            return
        self._publish(PORT_STATE, state)
        self._handle_actions(actions)

    def _handle_actions(self, actions: list[TransitionAction]) -> None:
        says: list[str] = []
        for action in actions:
            if action.kind == "say":
                says.append(action.text or "")
            elif action.kind == "set_grammar":
                self._publish(PORT_GRAMMAR, action.grammar_id or "")
            elif action.kind in ("display", "report"):
                self._publish(PORT_DISPLAY, action.text or "")
            # start_timer: the recognizer's utterance timeout is the
            # single timeout authority, as in simulation; abort needs no
            # extra traffic beyond the state publish
        if says:
            text = " ".join(says)
            if self._speaking:
                self._pending_says.append(text)
            else:
                self._begin_say(text)

    def _begin_say(self, text: str) -> None:
        self._speaking = True
        self._publish(PORT_SAY, text)
        self._publish(PORT_SPEECH_STATUS, "start")
        self._schedule(speech_seconds(text), "robot_end")
