"""Synthetic end-to-end sessions: virtual child, robot clock, seeded noise.

Everything a live deployment wraps around the recognizer and the dialogue
machine — microphone frames, robot speech timing, gate events, ground-truth
transcription — is generated here on a deterministic virtual clock.  A full
session runs in milliseconds, every byte reproducible from a seed, and comes
with the gold annotation a human transcriber would have produced, so the
scoring tools can be checked against an oracle that knows the truth exactly.

The simulated child is cooperative but imperfect: answers are drawn from the
active grammar's choice set, end-of-speech messages arrive late by a
configurable delay, observation frames are smeared across confusable words,
and utterances are occasionally disfluent (a false start or a trailing
word that never comes).
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from random import Random
from typing import Iterable, Mapping, Sequence

from .decoder import (
    DecodeResult,
    ObservationFrame,
    OnlineRecognizer,
    RecognizerConfig,
    UtteranceSegment,
)
from .dialogue import (
    DialogueMachine,
    Script,
    builtin_grammar_path,
    compute_energy,
    energy_session_done,
    load_script,
    recognized,
    robot_speech_ended,
    speech_seconds,
    timeout,
)
from .grammar import (
    Alt,
    Expr,
    GrammarAst,
    GrammarFst,
    Opt,
    RuleRef,
    Seq,
    SILENCE_WORD,
    Token,
    compile_grammar,
    enumerate_language,
    load_grammar,
)

EXERCISE_SESSION_SECONDS = 10.0
CHILD_MASS_KG = 30.0
SEGMENT_TOLERANCE = 0.05  # seconds; boundary slack before an error label

_MAX_FRAMES = 500_000  # hard stop for a runaway session (virtual seconds)


class SimulatorError(Exception):
    pass


# --------------------------------------------------------------------------
# end-of-speech delay model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DelaySpec:
    """How long after the robot stops talking the "stopped" message lands."""

    kind: str  # fixed | uniform
    a: float
    b: float

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "uniform"):
            raise ValueError(f"unknown delay kind {self.kind!r}")
        if self.a < 0 or self.b < self.a:
            raise ValueError(f"need 0 <= a <= b, got ({self.a}, {self.b})")


def fixed(seconds: float) -> DelaySpec:
    return DelaySpec("fixed", seconds, seconds)


def uniform(a: float, b: float) -> DelaySpec:
    return DelaySpec("uniform", a, b)


def eos_delay_sample(spec: DelaySpec, seed: int, k: int) -> float:
    """The k-th delay of the seeded stream (k = 0, 1, ...)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if spec.kind == "fixed":
        return spec.a
    rng = Random(seed)
    value = spec.a
    for _ in range(k + 1):
        value = rng.uniform(spec.a, spec.b)
    return value


# --------------------------------------------------------------------------
# session configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SessionConfig:
    seed: int = 0
    confusion_p: float = 0.0
    eos_delay: DelaySpec = field(default_factory=lambda: uniform(0.3, 0.7))
    disfluency_p: float = 0.0
    frames_per_word: int = 30  # child speaking rate
    frame_rate: int = 100
    age_tag: str = "child"      # metadata only
    fluency_tag: str = "typical"  # metadata only

    def __post_init__(self) -> None:
        if not 0.0 <= self.confusion_p < 1.0:
            raise ValueError("confusion_p must be in [0, 1)")
        if not 0.0 <= self.disfluency_p <= 1.0:
            raise ValueError("disfluency_p must be in [0, 1]")
        if self.frames_per_word <= 0 or self.frame_rate <= 0:
            raise ValueError("rates must be positive")


# --------------------------------------------------------------------------
# confusion noise
# --------------------------------------------------------------------------


def confusable_sets(
    ast: GrammarAst, silence: bool = True
) -> dict[str, tuple[str, ...]]:
    """Words competing in the same alternation, keyed by word.

    Two words are confusable when they appear in different branches of
    some alternation — the realistic failure mode for multiple-choice
    recognition.  With ``silence`` the implicit top-level choice between
    the public rules and the silence token contributes as well, which is
    what lets quiet frames be mistaken for speech and vice versa.
    """
    memo: dict[str, frozenset[str]] = {}

    def words(expr: Expr) -> frozenset[str]:
        if isinstance(expr, Token):
            return frozenset((expr.word,))
        if isinstance(expr, RuleRef):
            return rule_words(expr.name)
        if isinstance(expr, Seq):
            out: frozenset[str] = frozenset()
            for item in expr.items:
                out |= words(item)
            return out
        if isinstance(expr, Alt):
            out = frozenset()
            for branch in expr.branches:
                out |= words(branch)
            return out
        return words(expr.item)  # Opt

    def rule_words(name: str) -> frozenset[str]:
        if name not in memo:
            memo[name] = words(ast.rules[name])
        return memo[name]

    pairs: dict[str, set[str]] = {}

    def note(branch_sets: list[frozenset[str]]) -> None:
        for i, mine in enumerate(branch_sets):
            others: set[str] = set()
            for j, theirs in enumerate(branch_sets):
                if j != i:
                    others |= theirs
            for w in mine:
                pairs.setdefault(w, set()).update(others)

    def walk(expr: Expr) -> None:
        if isinstance(expr, Alt):
            note([words(b) for b in expr.branches])
            for branch in expr.branches:
                walk(branch)
        elif isinstance(expr, Seq):
            for item in expr.items:
                walk(item)
        elif isinstance(expr, Opt):
            walk(expr.item)

    for body in ast.rules.values():
        walk(body)
    top = [rule_words(name) for name in ast.publics]
    if silence:
        top.append(frozenset((SILENCE_WORD,)))
    if len(top) > 1:
        note(top)
    return {
        w: tuple(sorted(others - {w}))
        for w, others in sorted(pairs.items())
        if others - {w}
    }


def corrupt_frame(
    posteriors: Mapping[str, float],
    p: float,
    rng: Random,
    confusables: Mapping[str, Sequence[str]],
) -> dict[str, float]:
    """One frame through the confusion channel.

    With probability p the true symbol is swapped for one of its
    confusables; either way the output spreads p of the mass uniformly
    over the observed symbol's confusable set, so the frame stays a
    valid distribution and the per-frame arithmetic is exact.
    """
    if p == 0.0:
        return dict(posteriors)
    true = max(sorted(posteriors), key=lambda s: posteriors[s])
    team = confusables.get(true, ())
    if not team:
        return dict(posteriors)
    observed = true
    if rng.random() < p:
        observed = team[rng.randrange(len(team))]
        team = confusables.get(observed, ())
        if not team:
            return {observed: 1.0}
    out = {observed: 1.0 - p}
    share = p / len(team)
    for sym in team:
        out[sym] = share
    return out


def corrupt_observations(
    frames: Sequence[Mapping[str, float]],
    p: float,
    seed: int,
    confusables: Mapping[str, Sequence[str]],
) -> list[dict[str, float]]:
    """Seeded confusion over a whole clean frame sequence."""
    if not 0.0 <= p < 1.0:
        raise ValueError("p must be in [0, 1)")
    rng = Random(seed)
    return [corrupt_frame(f, p, rng, confusables) for f in frames]


# --------------------------------------------------------------------------
# disfluency
# --------------------------------------------------------------------------


def disfluent_form(
    words: tuple[str, ...], rng: Random
) -> tuple[tuple[str, ...], str, str]:
    """Corrupt an utterance the way young speakers do.

    Returns (spoken words, marked transcription, mode).  A false start
    repeats the first word ("go- go left"); a truncation drops the last
    word and marks the new final word as cut off ("please stand-").
    Stripping the markers from the transcription recovers exactly the
    spoken words.
    """
    mode = rng.choice(("repeat", "truncate")) if len(words) > 1 else "repeat"
    if mode == "repeat":
        spoken = (words[0],) + words
        marked = f"{words[0]}- " + " ".join(words)
    else:
        spoken = words[:-1]
        cut = list(spoken)
        cut[-1] += "-"
        marked = " ".join(cut)
    return spoken, marked, mode


# --------------------------------------------------------------------------
# gold annotation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GoldRow:
    segment: UtteranceSegment
    speaker: str  # child | robot
    fluent: bool = True
    expected: bool = True

    def __post_init__(self) -> None:
        if self.speaker not in ("child", "robot"):
            raise ValueError(f"unknown speaker {self.speaker!r}")


@dataclass
class GoldAnnotation:
    rows: list[GoldRow]

    def __post_init__(self) -> None:
        prev_end = -math.inf
        for row in self.rows:
            if row.segment.start < prev_end - 1e-9:
                raise ValueError(
                    f"gold rows overlap near t={row.segment.start:.3f}"
                )
            prev_end = row.segment.end

    def child_rows(self) -> list[GoldRow]:
        return [r for r in self.rows if r.speaker == "child"]

    def robot_rows(self) -> list[GoldRow]:
        return [r for r in self.rows if r.speaker == "robot"]


def write_gold_tsv(annotation: GoldAnnotation, path: str | Path) -> None:
    """Transcription-tool shape: start<TAB>end<TAB>speaker<TAB>text."""
    lines = [
        f"{row.segment.start!r}\t{row.segment.end!r}\t{row.speaker}\t{row.segment.text}"
        for row in annotation.rows
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_timeline(timeline: Iterable[dict], path: str | Path) -> None:
    """Session record, one JSON object per line (decoder replay format)."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in timeline:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def write_result_log(rows: Iterable[dict], path: str | Path) -> None:
    """Recognition log, one JSON object per line (scoring input format)."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# boundary oracle
# --------------------------------------------------------------------------


def boundary_labels(
    start_delta: float, end_delta: float, tolerance: float = SEGMENT_TOLERANCE
) -> tuple[str, ...]:
    """Taxonomy labels from signed boundary deltas (auto minus gold)."""
    labels = []
    if start_delta > tolerance:
        labels.append("late_start")
    elif start_delta < -tolerance:
        labels.append("early_start")
    if end_delta > tolerance:
        labels.append("late_end")
    elif end_delta < -tolerance:
        labels.append("early_end")
    return tuple(labels)


@dataclass(frozen=True)
class BoundaryOracle:
    """Analytic prediction of the recognizer's segment boundaries.

    Computed from the session's own arithmetic: the listening window
    opens readback seconds before the (late) end-of-speech message, so
    auto start minus gold start is the delay minus the readback, frame
    rounded; the endpoint fires a fixed count after the last word first
    appears.  ``exact`` marks rows where that arithmetic is airtight
    (no confusion noise, nothing truncated, window not clamped past the
    first word).
    """

    utterance: int  # index into GoldAnnotation.child_rows()
    start_delta: float
    end_delta: float
    exact: bool
    labels: tuple[str, ...]


# --------------------------------------------------------------------------
# session runner
# --------------------------------------------------------------------------


@dataclass
class SessionRun:
    config: SessionConfig
    gold: GoldAnnotation
    results: list[DecodeResult]
    log_rows: list[dict]
    timeline: list[dict]
    oracle: list[BoundaryOracle]
    states: list[str]
    transcript: list[tuple[float, str, str]]
    dropped: list[tuple[str, DecodeResult]]

    @property
    def final_state(self) -> str:
        return self.states[-1]


_BUILTIN_CACHE: dict[str, tuple[GrammarFst, tuple[str, ...], dict]] = {}


def _builtin(grammar_id: str) -> tuple[GrammarFst, tuple[str, ...], dict]:
    """Compiled grammar, its answer sentences, and its confusable map."""
    if grammar_id not in _BUILTIN_CACHE:
        ast = load_grammar(builtin_grammar_path(grammar_id))
        fst = compile_grammar(ast, silence=True, grammar_id=grammar_id)
        answers = tuple(
            sorted(enumerate_language(fst) - {SILENCE_WORD})
        )
        _BUILTIN_CACHE[grammar_id] = (fst, answers, confusable_sets(ast))
    return _BUILTIN_CACHE[grammar_id]


class _Driver:
    """Closed-loop co-simulation of recognizer + dialogue on virtual time."""

    def __init__(
        self,
        config: SessionConfig,
        rec_config: RecognizerConfig | None,
        script: Script | None,
    ):
        self.cfg = config
        self.rec_cfg = rec_config if rec_config is not None else RecognizerConfig()
        if self.rec_cfg.frame_rate != config.frame_rate:
            raise SimulatorError(
                "recognizer and session frame rates differ "
                f"({self.rec_cfg.frame_rate} vs {config.frame_rate})"
            )
        self.script = script if script is not None else load_script()
        self.machine = DialogueMachine(self.script)
        self.rec = OnlineRecognizer(self.rec_cfg)
        self.rate = config.frame_rate
        self.rng_child = Random(config.seed ^ 0xC41D)
        self.rng_noise = Random(config.seed ^ 0x5EED)
        self.rng_energy = Random(config.seed ^ 0xE4E7)
        self.heap: list[tuple[float, int, str, object]] = []
        self.seq = itertools.count()
        self.delay_k = 0
        self.robot_speaking = False
        self.child_sched: dict[int, str] = {}
        self.child_end_time = 0.0
        self.answers: tuple[str, ...] = ()
        self.confusables: dict | None = None
        self.timeline: list[dict] = []
        self.gold_rows: list[GoldRow] = []
        self.results: list[DecodeResult] = []
        self.log_rows: list[dict] = []
        self.oracle: list[BoundaryOracle] = []
        self.states: list[str] = [self.machine.state]
        self.transcript: list[tuple[float, str, str]] = []
        self.dropped: list[tuple[str, DecodeResult]] = []
        self.child_count = 0

    # -- event plumbing ---------------------------------------------------

    def push(self, t: float, kind: str, payload: object = None) -> None:
        heapq.heappush(self.heap, (t, next(self.seq), kind, payload))

    def emit_gate(self, speaking: bool, t: float) -> None:
        self.rec.set_gate(speaking, t)
        self.timeline.append({"ev": "gate", "speaking": speaking, "t": t})
        self.robot_speaking = speaking

    def emit_grammar(self, grammar_id: str) -> None:
        fst, answers, conf = _builtin(grammar_id)
        self.rec.set_grammar(fst)
        self.timeline.append({"ev": "grammar", "id": grammar_id})
        self.answers = answers
        self.confusables = conf

    # -- dialogue actions ---------------------------------------------------

    def handle_actions(self, t: float, actions) -> None:
        says: list[str] = []
        for action in actions:
            if action.kind == "say":
                says.append(action.text)
            elif action.kind == "set_grammar":
                self.emit_grammar(action.grammar_id)
            elif action.kind == "start_timer":
                # the recognizer's own utterance timeout is the single
                # timeout authority in simulation; note it and move on
                self.transcript.append((t, action.kind, f"{action.seconds:g}"))
            else:  # display | report | abort
                self.transcript.append((t, action.kind, action.text or ""))
        if says:
            # consecutive says are one breath for the robot: one gate pair;
            # never start while the child is still finishing an answer
            self.push(max(t, self.child_end_time), "say", " ".join(says))

    def on_say(self, t: float, text: str) -> None:
        if self.robot_speaking:
            raise SimulatorError("robot told to speak over itself")
        self.emit_gate(True, t)
        self.push(t + speech_seconds(text), "robot_end", (t, text))

    def on_robot_end(self, t: float, payload) -> None:
        t0, text = payload
        self.gold_rows.append(
            GoldRow(UtteranceSegment(t0, t, text, "gold"), "robot")
        )
        d = eos_delay_sample(self.cfg.eos_delay, self.cfg.seed, self.delay_k)
        self.delay_k += 1
        self.push(t + d, "gate_off", None)
        if self.script.states[self.machine.state].kind == "speech":
            self.schedule_child(t, d)

    def on_gate_off(self, t: float) -> None:
        before = self.script.states.get(self.machine.state)
        self.emit_gate(False, t)
        state, actions = self.machine.advance(robot_speech_ended())
        self.note_state(state)
        self.handle_actions(t, actions)
        if before is not None and before.kind == "exercise":
            # the prompt for this exercise block just ended: the child
            # moves for a while, then the tracking stack reports energy
            speeds = [(self.rng_energy.uniform(0.4, 1.6), 1.0) for _ in range(10)]
            joules = compute_energy(speeds, CHILD_MASS_KG)
            self.push(t + EXERCISE_SESSION_SECONDS, "energy", joules)

    def on_energy(self, t: float, joules: float) -> None:
        state, actions = self.machine.advance(energy_session_done(joules))
        self.note_state(state)
        self.handle_actions(t, actions)

    def note_state(self, state: str) -> None:
        if state != self.states[-1]:
            self.states.append(state)

    # -- the synthetic child ------------------------------------------------

    def schedule_child(self, speech_end: float, delay: float) -> None:
        if not self.answers:
            raise SimulatorError(
                f"speech state {self.machine.state} has no compiled answers"
            )
        sentence = self.rng_child.choice(self.answers)
        words = tuple(sentence.split())
        spoken, marked, mode = words, sentence, None
        if self.rng_child.random() < self.cfg.disfluency_p:
            spoken, marked, mode = disfluent_form(words, self.rng_child)
        rate, step = self.rate, self.cfg.frames_per_word
        start_f = math.ceil(speech_end * rate - 1e-9)
        for j, word in enumerate(spoken):
            for f in range(start_f + j * step, start_f + (j + 1) * step):
                self.child_sched[f] = word
        end_f = start_f + len(spoken) * step
        self.child_end_time = end_f / rate
        stripped = " ".join(spoken)
        self.gold_rows.append(
            GoldRow(
                UtteranceSegment(start_f / rate, end_f / rate, marked, "gold"),
                "child",
                fluent=mode is None,
                expected=stripped in self.answers,
            )
        )
        # analytic boundary prediction, same rounding as the recognizer
        window_f = max(
            int(round((speech_end + delay - self.rec_cfg.readback) * rate + 1e-9)),
            0,
        )
        final_f = start_f + (len(spoken) - 1) * step + self.rec_cfg.stability_k
        exact = (
            self.cfg.confusion_p == 0.0
            and mode != "truncate"
            and window_f < start_f + step
        )
        start_delta = (window_f - start_f) / rate
        end_delta = (final_f - end_f) / rate
        self.oracle.append(
            BoundaryOracle(
                utterance=self.child_count,
                start_delta=start_delta,
                end_delta=end_delta,
                exact=exact,
                labels=boundary_labels(start_delta, end_delta),
            )
        )
        self.child_count += 1

    # -- recognition results ------------------------------------------------

    def on_result(self, result: DecodeResult, t: float) -> None:
        self.results.append(result)
        spec = self.script.states.get(self.machine.state)
        if spec is None or spec.kind != "speech" or self.machine.finished:
            # a stale window closed outside a question (e.g. during an
            # exercise period): nothing is listening, drop it
            self.dropped.append((self.machine.state, result))
            return
        self.log_rows.append(
            {
                "start": result.segment.start,
                "end": result.segment.end,
                "text": result.segment.text,
                "kind": result.endpoint_kind,
                "grammar": result.grammar_id,
                "state": self.machine.state,
                "options": list(spec.options),
            }
        )
        if result.words == (SILENCE_WORD,):
            event = timeout()
        else:
            event = recognized(" ".join(result.words))
        state, actions = self.machine.advance(event)
        self.note_state(state)
        self.handle_actions(t, actions)

    # -- main loop ----------------------------------------------------------

    def run(self) -> SessionRun:
        self.handle_actions(0.0, self.machine.start())
        i = 0
        while True:
            t = i / self.rate
            while self.heap and self.heap[0][0] <= t + 1e-9:
                ev_t, _, kind, payload = heapq.heappop(self.heap)
                if kind == "say":
                    self.on_say(ev_t, payload)
                elif kind == "robot_end":
                    self.on_robot_end(ev_t, payload)
                elif kind == "gate_off":
                    self.on_gate_off(ev_t)
                else:
                    self.on_energy(ev_t, payload)
            if self.machine.finished and not self.heap and not self.child_sched:
                break
            if i >= _MAX_FRAMES:
                raise SimulatorError("session did not terminate")
            sym = self.child_sched.pop(i, SILENCE_WORD)
            posteriors: dict[str, float] = {sym: 1.0}
            if self.cfg.confusion_p > 0.0 and self.confusables is not None:
                posteriors = corrupt_frame(
                    posteriors, self.cfg.confusion_p, self.rng_noise, self.confusables
                )
            self.rec.feed([ObservationFrame(i, posteriors)])
            self.timeline.append({"i": i, "p": posteriors})
            self.rec.step()
            result = self.rec.poll_result((i + 1) / self.rate)
            if result is not None:
                self.on_result(result, (i + 1) / self.rate)
            i += 1
        self.rec.close()
        return SessionRun(
            config=self.cfg,
            gold=GoldAnnotation(self.gold_rows),
            results=self.results,
            log_rows=self.log_rows,
            timeline=self.timeline,
            oracle=self.oracle,
            states=self.states,
            transcript=self.transcript,
            dropped=self.dropped,
        )


def run_session(
    config: SessionConfig,
    rec_config: RecognizerConfig | None = None,
    script: Script | None = None,
) -> SessionRun:
    """Drive one full scripted session against a real recognizer.

    The robot speaks on the virtual clock, the child answers from the
    active grammar, and every frame/gate/grammar event is mirrored into
    a replayable timeline.
    """
    return _Driver(config, rec_config, script).run()


def generate_session(
    config: SessionConfig,
    rec_config: RecognizerConfig | None = None,
    script: Script | None = None,
) -> tuple[list[dict], GoldAnnotation]:
    """Timeline plus gold annotation for one session."""
    run = run_session(config, rec_config, script)
    return run.timeline, run.gold


# --------------------------------------------------------------------------
# isolated-utterance corpus (noise-sensitivity measurements)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusUtterance:
    grammar_id: str
    words: tuple[str, ...]
    frames: tuple[dict, ...]  # clean posteriors, one per frame


def make_utterance_corpus(
    count: int = 200,
    frames_per_word: int = 8,
    seed: int = 0,
    lead: int = 3,
    trail: int = 3,
    grammar_ids: Sequence[str] | None = None,
) -> list[CorpusUtterance]:
    """Fixed bank of clean single-utterance frame streams."""
    if grammar_ids is None:
        script = load_script()
        seen: list[str] = []
        for name in script.speech_states():
            gid = script.states[name].grammar
            if gid and gid not in seen:
                seen.append(gid)
        grammar_ids = seen
    rng = Random(seed)
    corpus: list[CorpusUtterance] = []
    for _ in range(count):
        gid = rng.choice(list(grammar_ids))
        _, answers, _ = _builtin(gid)
        words = tuple(rng.choice(answers).split())
        frames: list[dict] = [{SILENCE_WORD: 1.0}] * lead
        for word in words:
            frames.extend({word: 1.0} for _ in range(frames_per_word))
        frames.extend({SILENCE_WORD: 1.0} for _ in range(trail))
        corpus.append(CorpusUtterance(gid, words, tuple(frames)))
    return corpus


def corpus_accuracy(
    corpus: Sequence[CorpusUtterance], p: float, seed: int
) -> float:
    """Fraction of corpus utterances recognized verbatim at confusion p."""
    correct = 0
    for j, utt in enumerate(corpus):
        fst, _, conf = _builtin(utt.grammar_id)
        frames = corrupt_observations(
            utt.frames, p, (seed * 1_000_003 + j) % 2**32, conf
        )
        horizon = len(frames)
        rec = OnlineRecognizer(
            RecognizerConfig(
                readback=0.0,
                stability_k=10_000,
                utterance_timeout=horizon / 100,
                beam=256,
            )
        )
        rec.set_grammar(fst)  # bench window, no gating
        result = None
        for i, posteriors in enumerate(frames):
            rec.feed([ObservationFrame(i, posteriors)])
            rec.step()
            result = result or rec.poll_result((i + 1) / 100)
        if result is not None and result.words == utt.words:
            correct += 1
    return correct / len(corpus)
