"""Online grammar-constrained recognizer over symbolic observation streams.

The acoustic front-end is replaced by per-frame posterior distributions
over word symbols (including the non-speech symbol ``!SIL``), which
keeps every decoding decision — token passing over the grammar FST,
robot-speech gating with read-back, early/timeout endpointing, run-time
grammar switching, session recording and bit-identical file replay —
intact and testable without audio models.

Decoding model
--------------
A hypothesis assigns every frame of the decode window to one symbol:
optional leading silence, then each sentence word over one or more
consecutive frames, then optional trailing silence.  Tokens live at
three kinds of positions:

* ``start``     — consuming leading silence at the FST start state;
* ``(arc, i)``  — inside arc ``i``, consuming that arc's word;
* ``(rest, s)`` — past final state ``s``, consuming trailing silence
  (the final weight is folded in on entry).

Per frame each token pays ``-ln P(symbol)`` plus any arc weight it
crosses; tokens merging at the same position keep the best score
(Viterbi).  A hypothesis is *final* when its position closes a complete
sentence; the early endpoint fires once the best final hypothesis has
remained unchanged for K consecutive frames after first appearing.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Callable, Iterable

from .grammar import SILENCE_WORD, Arc, GrammarFst

Posteriors = dict[str, float]


class DecoderError(Exception):
    pass


class OutOfOrderFrame(DecoderError):
    pass


class GateSequenceError(DecoderError):
    pass


class FrameValueError(DecoderError):
    pass


class MissingRecordFile(DecoderError):
    pass


class MalformedRecord(DecoderError):
    pass


# --------------------------------------------------------------------------
# data types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class UtteranceSegment:
    """A timed transcription span; shared by decoder output, gold
    annotations and the evaluation pipeline."""

    start: float
    end: float
    text: str
    source: str  # gold | auto

    def __post_init__(self) -> None:
        if not (0.0 <= self.start <= self.end):
            raise ValueError(f"need 0 <= start <= end, got [{self.start}, {self.end}]")
        if not self.text:
            raise ValueError("segment text must be nonempty")
        if self.source not in ("gold", "auto"):
            raise ValueError(f"source must be gold or auto, got {self.source!r}")


@dataclass(frozen=True)
class ObservationFrame:
    index: int
    posteriors: Posteriors


def validate_frame(frame: ObservationFrame) -> None:
    total = 0.0
    for sym, p in frame.posteriors.items():
        if not (0.0 <= p <= 1.0):
            raise FrameValueError(f"P({sym})={p} outside [0,1] at frame {frame.index}")
        total += p
    if not (1.0 - 1e-6 < total < 1.0 + 1e-6):
        raise FrameValueError(f"posteriors sum to {total} at frame {frame.index}")


@dataclass
class RecognizerConfig:
    readback: float = 0.5
    frame_rate: int = 100
    stability_k: int = 30
    utterance_timeout: float = 10.0
    beam: int = 64
    ring_capacity: int = 3000
    source: str = "live"
    record_path: str | Path | None = None
    log_dir: str | Path | None = None

    def __post_init__(self) -> None:
        if self.readback < 0:
            raise ValueError("readback must be >= 0")
        if self.stability_k < 1:
            raise ValueError("stability K must be >= 1")
        if self.utterance_timeout <= 0:
            raise ValueError("utterance timeout must be > 0")
        if self.frame_rate <= 0 or self.beam < 1 or self.ring_capacity < 1:
            raise ValueError("frame_rate, beam and ring_capacity must be positive")


@dataclass(frozen=True)
class DecodeResult:
    segment: UtteranceSegment
    words: tuple[str, ...]
    score: float
    endpoint_kind: str  # early | timeout
    grammar_id: str
    frame_span: tuple[int, int] | None  # first/last decoded frame index


# --------------------------------------------------------------------------
# audio ring
# --------------------------------------------------------------------------


class AudioRing:
    """Fixed-capacity frame buffer addressed by absolute frame index."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._frames: dict[int, ObservationFrame] = {}
        self.cursor = 0  # next index to be written

    @property
    def floor(self) -> int:
        return max(0, self.cursor - self.capacity)

    def append(self, frame: ObservationFrame) -> None:
        if frame.index < self.cursor:
            raise OutOfOrderFrame(
                f"frame {frame.index} not after cursor {self.cursor - 1}"
            )
        self._frames[frame.index] = frame
        self.cursor = frame.index + 1
        floor = self.floor
        for idx in [i for i in self._frames if i < floor]:
            del self._frames[idx]

    def read(self, index: int) -> ObservationFrame:
        if not (self.floor <= index < self.cursor):
            raise IndexError(
                f"frame {index} outside ring window [{self.floor}, {self.cursor})"
            )
        return self._frames[index]

    def frames_in(self, first: int, last: int) -> Iterable[ObservationFrame]:
        """Stored frames with first <= index < last, in index order."""
        for idx in range(max(first, self.floor), min(last, self.cursor)):
            frame = self._frames.get(idx)
            if frame is not None:
                yield frame


# --------------------------------------------------------------------------
# token passing
# --------------------------------------------------------------------------

_START = ("start", -1)


@dataclass(frozen=True)
class _Hyp:
    score: float
    words: tuple[str, ...]


class _Search:
    """Viterbi token set over one grammar FST, advanced frame by frame."""

    def __init__(self, fst: GrammarFst, beam: int):
        self.fst = fst
        self.beam = beam
        self.adj: dict[int, list[tuple[int, Arc]]] = {}
        for idx, arc in enumerate(fst.arcs):
            self.adj.setdefault(arc.src, []).append((idx, arc))
        self.tokens: dict[tuple[str, int], _Hyp] = {_START: _Hyp(0.0, ())}

    def _offer(
        self,
        table: dict[tuple[str, int], _Hyp],
        key: tuple[str, int],
        score: float,
        words: tuple[str, ...],
    ) -> None:
        cur = table.get(key)
        if cur is None or score < cur.score or (score == cur.score and words < cur.words):
            table[key] = _Hyp(score, words)

    def advance(self, posteriors: Posteriors) -> None:
        def cost(word: str) -> float | None:
            p = posteriors.get(word, 0.0)
            return -math.log(p) if p > 0.0 else None

        def enter_arcs(new, state: int, hyp: _Hyp) -> None:
            for arc_idx, arc in self.adj.get(state, ()):
                word = self.fst.word_of(arc.isym)
                c = cost(word)
                if c is not None:
                    self._offer(
                        new,
                        ("arc", arc_idx),
                        hyp.score + arc.weight + c,
                        hyp.words + (word,),
                    )

        sil = cost(SILENCE_WORD)
        new: dict[tuple[str, int], _Hyp] = {}
        for key, hyp in self.tokens.items():
            kind, idx = key
            if kind == "start":
                if sil is not None:
                    self._offer(new, _START, hyp.score + sil, ())
                enter_arcs(new, self.fst.start, hyp)
            elif kind == "arc":
                arc = self.fst.arcs[idx]
                word_cost = cost(self.fst.word_of(arc.isym))
                if word_cost is not None:
                    self._offer(new, key, hyp.score + word_cost, hyp.words)
                enter_arcs(new, arc.dst, hyp)
                if arc.dst in self.fst.finals and sil is not None:
                    self._offer(
                        new,
                        ("rest", arc.dst),
                        hyp.score + self.fst.finals[arc.dst] + sil,
                        hyp.words,
                    )
            else:  # rest
                if sil is not None:
                    self._offer(new, key, hyp.score + sil, hyp.words)
        if len(new) > self.beam:
            ranked = sorted(new.items(), key=lambda kv: (kv[1].score, kv[0]))
            new = dict(ranked[: self.beam])
        self.tokens = new

    def best_partial(self) -> _Hyp | None:
        if not self.tokens:
            return None
        return min(self.tokens.values(), key=lambda h: (h.score, h.words))

    def best_final(self) -> _Hyp | None:
        best: _Hyp | None = None
        for (kind, idx), hyp in self.tokens.items():
            if kind == "rest":
                readout = hyp
            elif kind == "arc":
                arc = self.fst.arcs[idx]
                if arc.dst not in self.fst.finals:
                    continue
                readout = _Hyp(hyp.score + self.fst.finals[arc.dst], hyp.words)
            else:
                continue
            if best is None or (readout.score, readout.words) < (best.score, best.words):
                best = readout
        return best


# --------------------------------------------------------------------------
# online recognizer
# --------------------------------------------------------------------------


class OnlineRecognizer:
    """Streaming recognizer with gating, endpointing and session replay.

    Lifecycle: a decode window opens when the robot stops speaking
    (``set_gate(False, t)``), rewound by the configured read-back; it
    closes at the early endpoint, at the utterance timeout, or when the
    robot starts speaking again.  Between endpoint and the next
    gate-open the recognizer is idle: frames are buffered and recorded
    but not decoded.

    Parameters
    ----------
    config : RecognizerConfig, optional
        Timing and search parameters; defaults match the live system.
    on_result : callable, optional
        Called with each DecodeResult as it is finalized (used by the
        runtime to publish on the sentence port).
    """

    def __init__(
        self,
        config: RecognizerConfig | None = None,
        on_result: Callable[[DecodeResult], None] | None = None,
    ):
        self.config = config if config is not None else RecognizerConfig()
        self.ring = AudioRing(self.config.ring_capacity)
        self.on_result = on_result
        self._fst: GrammarFst | None = None
        self._search: _Search | None = None
        self._speaking = False
        self._active = False
        self._pristine = True  # no gate event and no window yet
        self._window_gated = False
        self._ungate_time = 0.0
        self._window_start_time = 0.0
        self._next_idx = 0
        self._stable_words: tuple[str, ...] | None = None
        self._stable_count = 0
        self._consumed: tuple[int, int] | None = None
        self._pending: list[DecodeResult] = []
        self._record_fh = None
        self._source = self.config.source
        self._source_path: Path | None = None
        self._grammar_cache: dict[str, GrammarFst] = {}

    # -- public API --------------------------------------------------------

    def set_grammar(self, fst: GrammarFst) -> None:
        """Install the search space for the next utterance.

        Mid-utterance switches discard the current hypothesis (a stale
        search space must not answer for the new question).
        """
        self._record({"ev": "grammar", "id": fst.grammar_id})
        self._fst = fst
        if self._active and not self._speaking:
            self._log(
                f"grammar switch to {fst.grammar_id} mid-utterance: hypothesis aborted"
            )
            self._open_window(
                self._next_idx / self.config.frame_rate,
                self._ungate_time,
                gated=self._window_gated,
            )
            return
        self._log(f"grammar set: {fst.grammar_id}")
        if self._pristine and not self._speaking:
            # bench use without gating: start listening immediately
            now = self.ring.cursor / self.config.frame_rate
            self._open_window(now, now, gated=False)

    def feed(self, frames: Iterable[ObservationFrame]) -> None:
        """Append frames to the ring (and the session record)."""
        for frame in frames:
            validate_frame(frame)
            self.ring.append(frame)
            self._record({"i": frame.index, "p": frame.posteriors})

    def set_gate(self, robot_speaking: bool, at: float) -> None:
        """Robot speech start/end; events must alternate."""
        self._pristine = False
        if robot_speaking:
            if self._speaking:
                raise GateSequenceError("double robot-speech start")
            self._speaking = True
            if self._active and self._window_gated and self._consumed is not None:
                # recognition window forced shut mid-utterance
                self._finalize(end_time=at, kind="timeout")
            elif self._active:
                # nothing decoded yet (or an ungated bench window): the
                # window yields silently — back-to-back robot utterances
                # must not synthesize empty results
                self._active = False
                self._search = None
                self._log("empty listening window discarded at gate start")
            self._log(f"gate on at {at:.3f}")
        else:
            if not self._speaking:
                raise GateSequenceError("double robot-speech end")
            self._speaking = False
            self._log(f"gate off at {at:.3f}")
            self._open_window(at - self.config.readback, at, gated=True)
        self._record({"ev": "gate", "speaking": robot_speaking, "t": at})

    def step(self) -> str | None:
        """Consume pending frames; return the current best partial text."""
        if self._speaking or not self._active or self._search is None:
            return None
        frames = list(self.ring.frames_in(self._next_idx, self.ring.cursor))
        if not frames:
            return None
        for frame in frames:
            self._next_idx = frame.index + 1
            self._search.advance(frame.posteriors)
            self._consumed = (
                (frame.index, frame.index)
                if self._consumed is None
                else (self._consumed[0], frame.index)
            )
            if self._update_stability():
                self._finalize(
                    end_time=frame.index / self.config.frame_rate, kind="early"
                )
                break
        partial = self._search.best_partial() if self._search else None
        return " ".join(partial.words) if partial is not None else None

    def poll_result(self, now: float) -> DecodeResult | None:
        """Finalized result, if any: early endpoint, forced gate close,
        or utterance timeout at `now`."""
        if not self._speaking and self._active:
            self.step()
            if (
                self._active
                and now - self._ungate_time >= self.config.utterance_timeout
            ):
                self._finalize(
                    end_time=self._ungate_time + self.config.utterance_timeout,
                    kind="timeout",
                )
        return self._pending.pop(0) if self._pending else None

    def select_source(self, source: str, path: str | Path | None = None) -> None:
        """Choose live feeding or replay from a session record file."""
        if source not in ("live", "file"):
            raise ValueError(f"source must be live or file, got {source!r}")
        if source == "file":
            if path is None or not Path(path).exists():
                raise MissingRecordFile(f"no session record at {path!r}")
            self._source_path = Path(path)
        self._source = source
        self._log(f"source: {source}" + (f" {path}" if path else ""))

    def run_file(
        self, grammar_resolver: Callable[[str], GrammarFst] | None = None
    ) -> list[DecodeResult]:
        """Replay a recorded session; returns all results in order.

        The record's own gate/grammar events drive the run, so a replay
        reproduces the original live results exactly.
        """
        if self._source != "file" or self._source_path is None:
            raise DecoderError("select_source('file', path) first")
        resolver = grammar_resolver if grammar_resolver is not None else self._builtin_grammar
        results: list[DecodeResult] = []

        def drain() -> None:
            while self._pending:
                results.append(self._pending.pop(0))

        for lineno, raw in enumerate(
            self._source_path.read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"line {lineno}: {exc}") from exc
            if "i" in obj:
                frame = ObservationFrame(index=int(obj["i"]), posteriors=obj["p"])
                self.feed([frame])
                self.step()
                result = self.poll_result((frame.index + 1) / self.config.frame_rate)
                if result is not None:
                    results.append(result)
            elif obj.get("ev") == "gate":
                self.set_gate(bool(obj["speaking"]), float(obj["t"]))
                drain()
            elif obj.get("ev") == "grammar":
                self.set_grammar(resolver(obj["id"]))
            else:
                raise MalformedRecord(f"line {lineno}: unknown record entry {raw!r}")
        drain()
        return results

    def close(self) -> None:
        if self._record_fh is not None:
            self._record_fh.close()
            self._record_fh = None

    # -- internals ----------------------------------------------------------

    def _builtin_grammar(self, grammar_id: str) -> GrammarFst:
        if grammar_id not in self._grammar_cache:
            from . import dialogue
            from .grammar import compile_file

            self._grammar_cache[grammar_id] = compile_file(
                dialogue.builtin_grammar_path(grammar_id), silence=True
            )
        return self._grammar_cache[grammar_id]

    def _open_window(
        self, start_time: float, ungate_time: float, gated: bool
    ) -> None:
        rate = self.config.frame_rate
        start_frame = max(int(round(start_time * rate + 1e-9)), self.ring.floor, 0)
        self._window_start_time = start_frame / rate
        self._next_idx = start_frame
        self._ungate_time = ungate_time
        self._search = _Search(self._fst, self.config.beam) if self._fst else None
        self._active = self._fst is not None
        self._window_gated = gated
        self._stable_words = None
        self._stable_count = 0
        self._consumed = None

    def _update_stability(self) -> bool:
        assert self._search is not None
        best = self._search.best_final()
        if best is None or best.words == (SILENCE_WORD,):
            # silence never endpoints early: no-answer is only reported
            # at the utterance timeout
            self._stable_words = None
            self._stable_count = 0
            return False
        if best.words == self._stable_words:
            self._stable_count += 1
        else:
            self._stable_words = best.words
            self._stable_count = 0
        return self._stable_count >= self.config.stability_k

    def _finalize(self, end_time: float, kind: str) -> None:
        assert self._fst is not None
        best = self._search.best_final() if self._search is not None else None
        if best is not None:
            words, score = best.words, best.score
        else:
            words, score = (SILENCE_WORD,), math.inf
        segment = UtteranceSegment(
            start=self._window_start_time,
            end=max(end_time, self._window_start_time),
            text=" ".join(words),
            source="auto",
        )
        result = DecodeResult(
            segment=segment,
            words=words,
            score=score,
            endpoint_kind=kind,
            grammar_id=self._fst.grammar_id,
            frame_span=self._consumed,
        )
        self._active = False
        self._pending.append(result)
        self._log(
            f"result [{segment.start:.3f}, {segment.end:.3f}] {kind}: {segment.text}"
        )
        if self.on_result is not None:
            self.on_result(result)

    def _record(self, obj: dict) -> None:
        if self.config.record_path is None:
            return
        if self._record_fh is None:
            self._record_fh = open(self.config.record_path, "w", encoding="utf-8")
        self._record_fh.write(json.dumps(obj, sort_keys=True) + "\n")
        self._record_fh.flush()

    def _log(self, message: str) -> None:
        if self.config.log_dir is None:
            return
        log_dir = Path(self.config.log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        log_path = log_dir / f"asr-{date.today().isoformat()}.log"
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(f"{time.time():.3f} {message}\n")
