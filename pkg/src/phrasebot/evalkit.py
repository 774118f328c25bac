"""Transcription scoring: fluency and expectedness labels, the
minor-disfluency rule, two-stage segment matching, boundary-error
taxonomy, accuracy/WER metrics, and report generation.

Input shapes are the ones the rest of the stack produces: gold
annotations as tab-separated ``start end speaker text`` rows with
transcription markers (``*word`` mispronounced, ``word-`` false start),
and recognition logs as JSON lines with ``start``/``end``/``text`` plus
the multiple-choice options that were on screen.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Collection, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

from .decoder import UtteranceSegment
from .dialogue import builtin_grammar_path, load_script
from .grammar import SILENCE_WORD, compile_grammar, enumerate_language, load_grammar

DEFAULT_TOLERANCE = 0.05  # seconds of boundary slack before an error label

TAXONOMY_LABELS = ("early_start", "late_start", "early_end", "late_end")


class EvalError(Exception):
    pass


class MarkerSyntaxError(EvalError):
    pass


class LogParseError(EvalError):
    pass


class GoldParseError(EvalError):
    pass


# --------------------------------------------------------------------------
# transcription markers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TranscribedUtterance:
    """A gold transcription with its annotation markers parsed out."""

    segment: UtteranceSegment
    words: tuple[str, ...]  # marker-stripped
    mispronounced: tuple[int, ...]  # word positions flagged with *
    false_starts: tuple[int, ...]  # word positions flagged with -


def parse_markers(segment: UtteranceSegment) -> TranscribedUtterance:
    """Split a transcription into clean words and marker positions.

    A word may carry one leading ``*`` (mispronounced) and/or one
    trailing ``-`` (false start); anything else involving the marker
    characters is a syntax error.
    """
    words: list[str] = []
    mis: list[int] = []
    false_starts: list[int] = []
    for idx, token in enumerate(segment.text.split()):
        core = token
        if core.startswith("*"):
            mis.append(idx)
            core = core[1:]
        if core.endswith("-"):
            false_starts.append(idx)
            core = core[:-1]
        if not core or "*" in core or core.endswith("-"):
            raise MarkerSyntaxError(
                f"bad marker syntax in token {token!r} of {segment.text!r}"
            )
        words.append(core)
    return TranscribedUtterance(
        segment=segment,
        words=tuple(words),
        mispronounced=tuple(mis),
        false_starts=tuple(false_starts),
    )


def classify_fluency(utterance: TranscribedUtterance) -> str:
    """``disfluent`` iff any marker is present."""
    return "disfluent" if utterance.mispronounced or utterance.false_starts else "fluent"


# --------------------------------------------------------------------------
# expectedness
# --------------------------------------------------------------------------


def _script_phrases(only_multiple_choice: bool) -> tuple[str, ...]:
    script = load_script()
    phrases: list[str] = []
    for name in script.speech_states():
        spec = script.states[name]
        if only_multiple_choice and not spec.options:
            continue
        fst = compile_grammar(
            load_grammar(builtin_grammar_path(spec.grammar)),
            silence=False,
            grammar_id=spec.grammar,
        )
        for phrase in sorted(enumerate_language(fst)):
            if phrase not in phrases:
                phrases.append(phrase)
    return tuple(phrases)


_VOCAB_CACHE: dict[bool, tuple[str, ...]] = {}


def expected_vocabulary() -> tuple[str, ...]:
    """Every phrase a session can ask for, in script order."""
    if False not in _VOCAB_CACHE:
        _VOCAB_CACHE[False] = _script_phrases(only_multiple_choice=False)
    return _VOCAB_CACHE[False]


def multiple_choice_vocabulary() -> tuple[str, ...]:
    """Only the phrases offered as on-screen choices, in script order."""
    if True not in _VOCAB_CACHE:
        _VOCAB_CACHE[True] = _script_phrases(only_multiple_choice=True)
    return _VOCAB_CACHE[True]


def classify_expected(text: str, vocabulary: Collection[str] | None = None) -> str:
    """``expected`` iff the text is a known phrase or the silence tag."""
    vocab = expected_vocabulary() if vocabulary is None else vocabulary
    return "expected" if text == SILENCE_WORD or text in vocab else "unexpected"


def minor_disfluency_match(
    text: str, accepted: Sequence[str]
) -> str | None:
    """The accepted answer whose words the utterance covers > 75%.

    Marker characters in the utterance are ignored; coverage is over the
    answer's distinct words.  Ties break toward higher coverage, then
    earlier answer order; strictly more than three quarters is required.
    """
    spoken = {tok.lstrip("*").rstrip("-") for tok in text.split()}
    best: str | None = None
    best_cover = 0.75
    for answer in accepted:
        answer_words = set(answer.split())
        cover = len(answer_words & spoken) / len(answer_words)
        if cover > best_cover:
            best, best_cover = answer, cover
    return best


# --------------------------------------------------------------------------
# segment matching and boundary taxonomy
# --------------------------------------------------------------------------


def _overlaps(a: UtteranceSegment, b: UtteranceSegment) -> bool:
    return a.start < b.end and b.start < a.end


def _distance(gold: UtteranceSegment, auto: UtteranceSegment) -> float:
    return abs(auto.start - gold.start) + abs(auto.end - gold.end)


def _check_ordered(segments: Sequence[UtteranceSegment], name: str) -> None:
    for a, b in zip(segments, segments[1:]):
        if b.start < a.start:
            raise EvalError(f"{name} segments are not time-ordered at t={b.start}")


def match_segments(
    gold: Sequence[UtteranceSegment], auto: Sequence[UtteranceSegment]
) -> list[tuple[UtteranceSegment, UtteranceSegment | None]]:
    """Pair each gold segment with its best automatic segment.

    Stage one looks for an overlapping segment with the identical
    transcription; stage two falls back to the overlapping segment with
    the smallest |start delta| + |end delta|.  A gold segment with no
    overlapping candidate gets None.  Matching is injective: an
    automatic segment is consumed by the first gold segment (in time
    order) that claims it.
    """
    _check_ordered(gold, "gold")
    _check_ordered(auto, "auto")
    free = set(range(len(auto)))
    pairs: list[tuple[UtteranceSegment, UtteranceSegment | None]] = []
    for g in gold:
        candidates = [(i, auto[i]) for i in sorted(free) if _overlaps(g, auto[i])]
        chosen: int | None = None
        same_text = [(_distance(g, a), i) for i, a in candidates if a.text == g.text]
        if same_text:
            chosen = min(same_text)[1]
        elif candidates:
            chosen = min((_distance(g, a), i) for i, a in candidates)[1]
        if chosen is None:
            pairs.append((g, None))
        else:
            free.discard(chosen)
            pairs.append((g, auto[chosen]))
    return pairs


def classify_segment_errors(
    gold: UtteranceSegment,
    auto: UtteranceSegment,
    tolerance: float = DEFAULT_TOLERANCE,
) -> frozenset[str]:
    """Boundary-error labels for a matched pair; empty set = aligned."""
    if not _overlaps(gold, auto):
        raise EvalError(
            f"segments do not overlap: gold [{gold.start}, {gold.end}] "
            f"vs auto [{auto.start}, {auto.end}]"
        )
    labels = set()
    if auto.start < gold.start - tolerance:
        labels.add("early_start")
    elif auto.start > gold.start + tolerance:
        labels.add("late_start")
    if auto.end < gold.end - tolerance:
        labels.add("early_end")
    elif auto.end > gold.end + tolerance:
        labels.add("late_end")
    return frozenset(labels)


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def accuracy(correct: int, total: int) -> float:
    """Percentage to one decimal place."""
    if total <= 0:
        raise EvalError("accuracy undefined for zero total")
    if not 0 <= correct <= total:
        raise EvalError(f"need 0 <= correct <= total, got {correct}/{total}")
    return round(100.0 * correct / total, 1)


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    """Word error rate: 100 * (S + D + I) / len(reference)."""
    if not reference:
        raise EvalError("WER undefined for an empty reference")
    n, m = len(reference), len(hypothesis)
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        row = [i] + [0] * m
        for j in range(1, m + 1):
            sub = prev[j - 1] + (reference[i - 1] != hypothesis[j - 1])
            row[j] = min(sub, prev[j] + 1, row[j - 1] + 1)
        prev = row
    return 100.0 * prev[m] / n


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------


@dataclass
class EvalReport:
    tolerance: float
    total_gold: int
    total_auto: int
    fluent: int
    disfluent: int
    expected: int  # among fluent
    unexpected: int  # among fluent
    scoring_pool: int  # fluent & expected, the recognition-accuracy filter
    taxonomy_pool: int  # fluent & in-vocabulary, the matching filter
    matched: int
    unmatched: int
    correct: int
    taxonomy: dict[str, int]
    mc_total: int
    mc_correct: int
    minor_total: int
    minor_correct: int
    accuracy_overall: float | None
    accuracy_multiple_choice: float | None
    accuracy_minor_disfluent: float | None
    accuracy_with_minor: float | None

    def validate(self) -> None:
        checks = [
            self.fluent + self.disfluent == self.total_gold,
            self.expected + self.unexpected == self.fluent,
            self.scoring_pool == self.expected,
            self.matched + self.unmatched == self.taxonomy_pool,
            0 <= self.correct <= self.scoring_pool,
            0 <= self.mc_correct <= self.mc_total <= self.scoring_pool,
            0 <= self.minor_correct <= self.minor_total <= self.disfluent,
        ]
        if not all(checks):
            raise EvalError(f"inconsistent report counts: {self.to_json()}")

    def to_json(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "utterances": {"gold": self.total_gold, "auto": self.total_auto},
            "fluency": {"fluent": self.fluent, "disfluent": self.disfluent},
            "expectedness": {
                "expected": self.expected,
                "unexpected": self.unexpected,
            },
            "pools": {
                "scoring": self.scoring_pool,
                "taxonomy": self.taxonomy_pool,
            },
            "matching": {"matched": self.matched, "unmatched": self.unmatched},
            "segmentation_errors": dict(self.taxonomy),
            "recognition": {
                "correct": self.correct,
                "multiple_choice": {
                    "correct": self.mc_correct,
                    "total": self.mc_total,
                },
                "minor_disfluent": {
                    "correct": self.minor_correct,
                    "total": self.minor_total,
                },
            },
            "accuracy": {
                "overall": self.accuracy_overall,
                "multiple_choice": self.accuracy_multiple_choice,
                "minor_disfluent": self.accuracy_minor_disfluent,
                "with_minor_disfluencies": self.accuracy_with_minor,
            },
        }


def _maybe_accuracy(correct: int, total: int) -> float | None:
    return accuracy(correct, total) if total > 0 else None


def build_report(
    gold: Sequence[UtteranceSegment],
    auto_rows: Sequence[Mapping],
    tolerance: float = DEFAULT_TOLERANCE,
    vocabulary: Collection[str] | None = None,
    choices: Sequence[str] | None = None,
) -> EvalReport:
    """Score one session timeline of gold child segments against a log.

    ``auto_rows`` are recognition-log entries (dicts with start, end,
    text and the on-screen options).  The taxonomy is computed over the
    fluent in-vocabulary pool; recognition accuracy over the same pool
    with unmatched utterances counted as errors; the minor-disfluency
    rule rescues disfluent utterances that mostly contain an accepted
    multiple-choice answer.
    """
    vocab = expected_vocabulary() if vocabulary is None else vocabulary
    mc_vocab = tuple(multiple_choice_vocabulary() if choices is None else choices)
    parsed = [parse_markers(seg) for seg in gold]
    auto_segments = [
        UtteranceSegment(
            float(row["start"]), float(row["end"]), str(row["text"]), "auto"
        )
        for row in auto_rows
    ]
    pairs = match_segments([u.segment for u in parsed], auto_segments)

    fluent = [u for u in parsed if classify_fluency(u) == "fluent"]
    disfluent_count = len(parsed) - len(fluent)
    expected = [
        u for u in fluent if classify_expected(u.segment.text, vocab) == "expected"
    ]
    unexpected_count = len(fluent) - len(expected)
    in_pool = {id(u.segment) for u in expected}

    taxonomy = {label: 0 for label in TAXONOMY_LABELS}
    taxonomy["aligned"] = 0
    matched = unmatched = correct = 0
    mc_total = mc_correct = 0
    minor_total = minor_correct = 0
    for (g, a), utterance in zip(pairs, parsed):
        if id(g) in in_pool:
            if a is None:
                unmatched += 1
            else:
                matched += 1
                labels = classify_segment_errors(g, a, tolerance)
                if labels:
                    for label in labels:
                        taxonomy[label] += 1
                else:
                    taxonomy["aligned"] += 1
                if a.text == g.text:
                    correct += 1
            if g.text in mc_vocab:
                mc_total += 1
                if a is not None and a.text == g.text:
                    mc_correct += 1
        elif classify_fluency(utterance) == "disfluent":
            rescue = minor_disfluency_match(g.text, mc_vocab)
            if rescue is not None:
                minor_total += 1
                if a is not None and a.text == rescue:
                    minor_correct += 1

    report = EvalReport(
        tolerance=tolerance,
        total_gold=len(parsed),
        total_auto=len(auto_segments),
        fluent=len(fluent),
        disfluent=disfluent_count,
        expected=len(expected),
        unexpected=unexpected_count,
        scoring_pool=len(expected),
        taxonomy_pool=len(expected),
        matched=matched,
        unmatched=unmatched,
        correct=correct,
        taxonomy=taxonomy,
        mc_total=mc_total,
        mc_correct=mc_correct,
        minor_total=minor_total,
        minor_correct=minor_correct,
        accuracy_overall=_maybe_accuracy(correct, len(expected)),
        accuracy_multiple_choice=_maybe_accuracy(mc_correct, mc_total),
        accuracy_minor_disfluent=_maybe_accuracy(minor_correct, minor_total),
        accuracy_with_minor=_maybe_accuracy(
            mc_correct + minor_correct, mc_total + minor_total
        ),
    )
    report.validate()
    return report


def format_report(report: EvalReport) -> str:
    """Human-readable aligned table."""

    def line(label: str, value) -> str:
        shown = "-" if value is None else value
        return f"  {label:<30}{shown:>10}"

    rows = [
        "session evaluation",
        line("gold utterances", report.total_gold),
        line("auto segments", report.total_auto),
        line("fluent", report.fluent),
        line("disfluent", report.disfluent),
        line("expected (of fluent)", report.expected),
        line("unexpected (of fluent)", report.unexpected),
        line("scoring pool", report.scoring_pool),
        line("taxonomy pool", report.taxonomy_pool),
        line("matched", report.matched),
        line("unmatched", report.unmatched),
        "segmentation errors",
    ]
    for label in (*TAXONOMY_LABELS, "aligned"):
        rows.append(line(label, report.taxonomy[label]))
    rows += [
        "recognition accuracy",
        line("overall %", report.accuracy_overall),
        line("multiple choice %", report.accuracy_multiple_choice),
        line("minor disfluencies %", report.accuracy_minor_disfluent),
        line("with minor disfluencies %", report.accuracy_with_minor),
    ]
    return "\n".join(rows)


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------


def read_gold_tsv(path: str | Path) -> list[tuple[UtteranceSegment, str]]:
    """Rows of (segment, speaker) from a start/end/speaker/text table."""
    rows: list[tuple[UtteranceSegment, str]] = []
    for lineno, raw in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 4:
            raise GoldParseError(f"{path} line {lineno}: expected 4 columns")
        try:
            segment = UtteranceSegment(
                float(parts[0]), float(parts[1]), parts[3], "gold"
            )
        except ValueError as exc:
            raise GoldParseError(f"{path} line {lineno}: {exc}") from exc
        rows.append((segment, parts[2]))
    return rows


def read_result_log(path: str | Path) -> list[dict]:
    """JSON-lines recognition log -> list of row dicts."""
    rows: list[dict] = []
    for lineno, raw in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not raw.strip():
            continue
        try:
            row = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise LogParseError(f"{path} line {lineno}: {exc}") from exc
        if not isinstance(row, dict) or not {"start", "end", "text"} <= set(row):
            raise LogParseError(
                f"{path} line {lineno}: need start/end/text fields"
            )
        rows.append(row)
    return rows


def read_log_dir(path: str | Path) -> list[dict]:
    """All recognition logs under a directory, in filename order."""
    rows: list[dict] = []
    for entry in sorted(Path(path).iterdir()):
        if entry.is_file():
            rows.extend(read_result_log(entry))
    return rows


# --------------------------------------------------------------------------
# command line
# --------------------------------------------------------------------------


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="evalkit", description="score recognition logs against gold annotations"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    rep = sub.add_parser("report", help="build a session evaluation report")
    rep.add_argument("--gold", required=True, help="gold annotation TSV")
    rep.add_argument("--logs", required=True, help="directory of recognition logs")
    rep.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    rep.add_argument("--out", default="report.json", help="JSON report path")
    args = parser.parse_args(argv)

    try:
        gold_rows = read_gold_tsv(args.gold)
        auto_rows = read_log_dir(args.logs)
        report = build_report(
            [seg for seg, speaker in gold_rows if speaker == "child"],
            auto_rows,
            tolerance=args.tolerance,
        )
    except EvalError as exc:
        print(f"evalkit: {exc}", file=sys.stderr)
        return 1
    Path(args.out).write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(format_report(report))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
