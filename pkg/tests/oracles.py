"""Independent reference implementations used to cross-check results.

Every oracle here takes the slow-but-obvious route (exhaustive
enumeration, naive recursion) so that a test comparing production code
against an oracle pits two genuinely different algorithms against each
other.  Nothing in this module imports the modules it is used to check,
beyond the compiled-grammar data type it shares with them.
"""

from __future__ import annotations

import math
import random
import struct
import wave
from itertools import combinations

from phrasebot.grammar import (
    SILENCE_WORD,
    GrammarFst,
    compile_grammar,
    enumerate_paths,
    parse_jsgf,
)


def _neglog(p: float) -> float:
    return -math.log(p) if p > 0.0 else math.inf


def enumerate_alignments(
    fst: GrammarFst, frames: list[dict[str, float]]
) -> list[tuple[float, tuple[str, ...]]]:
    """Score every complete decoding of ``frames`` against ``fst``.

    A complete decoding picks one sentence accepted by the grammar and
    assigns every frame, in order, to: leading silence, then each
    sentence word over at least one consecutive frame, then trailing
    silence.  Its score is the sentence's path weight (branch penalties
    plus final weight) plus ``-ln P(symbol)`` for every frame.

    Returns ``(score, words)`` for each finite-score decoding.  The
    length of the returned list is the instance's complete-path count.
    """
    horizon = len(frames)
    sil_cost = [_neglog(f.get(SILENCE_WORD, 0.0)) for f in frames]
    out: list[tuple[float, tuple[str, ...]]] = []
    for words, path_weight in enumerate_paths(fst):
        k = len(words)
        if k == 0 or k > horizon:
            continue
        word_cost = [[_neglog(f.get(w, 0.0)) for f in frames] for w in words]
        # Cut points c_0 < c_1 < ... < c_k: word i covers frames
        # [c_i, c_{i+1}); frames before c_0 are leading silence and
        # frames from c_k on are trailing silence.
        for cuts in combinations(range(horizon + 1), k + 1):
            score = path_weight
            score += sum(sil_cost[j] for j in range(cuts[0]))
            for i in range(k):
                score += sum(word_cost[i][j] for j in range(cuts[i], cuts[i + 1]))
            score += sum(sil_cost[j] for j in range(cuts[k], horizon))
            if math.isfinite(score):
                out.append((score, words))
    return out


def oracle_best_decode(
    fst: GrammarFst, frames: list[dict[str, float]]
) -> tuple[float, tuple[str, ...], float]:
    """Best decoding and its word-level margin.

    Returns ``(score, words, margin)`` where ``margin`` is the gap
    between the best score and the best score achieved by any *other*
    word sequence (``inf`` when only one sequence has finite score).
    When no decoding has finite score the words are the silence symbol
    and the score is ``inf``.
    """
    alignments = enumerate_alignments(fst, frames)
    if not alignments:
        return math.inf, (SILENCE_WORD,), math.inf
    best_score, best_words = min(alignments, key=lambda a: (a[0], a[1]))
    others = [s for s, w in alignments if w != best_words]
    margin = min(others) - best_score if others else math.inf
    return best_score, best_words, margin


# --------------------------------------------------------------------------
# seeded decode instances (shared by module tests and the acceptance run)
# --------------------------------------------------------------------------

_INSTANCE_GRAMMARS = [
    # source, max frame count keeping the complete-path count <= 200
    ("#JSGF V1.0; grammar oa; public <top> = yes | no;", 10),
    ("#JSGF V1.0; grammar ob; public <top> = go (left | right) | stop;", 7),
    ("#JSGF V1.0; grammar oc; public <top> = [please] stand up;", 7),
    ("#JSGF V1.0; grammar od; public <top> = one | two | three;", 9),
]


def make_decode_instance(
    rng: random.Random,
) -> tuple[GrammarFst, list[dict[str, float]]]:
    """A random (grammar, posterior stream) pair with <= 200 complete paths.

    The stream follows a randomly chosen accepted sentence with random
    lead/trail silence; every frame gives most of its mass to the
    scheduled symbol and spreads the rest over the whole vocabulary, so
    all decodings have finite score.
    """
    source, max_frames = _INSTANCE_GRAMMARS[rng.randrange(len(_INSTANCE_GRAMMARS))]
    ast = parse_jsgf(source)
    fst = compile_grammar(ast, silence=True, grammar_id=ast.name)
    sentences = sorted(
        {words for words, _ in enumerate_paths(fst) if words != (SILENCE_WORD,)}
    )
    target = sentences[rng.randrange(len(sentences))]
    total = rng.randint(len(target) + 1, max_frames)

    # random schedule: lead silence, >=1 frame per word, trail silence
    slack = total - len(target)
    lead = rng.randint(0, slack)
    extras = [0] * len(target)
    for _ in range(slack - lead - rng.randint(0, slack - lead)):
        extras[rng.randrange(len(target))] += 1
    schedule: list[str] = [SILENCE_WORD] * lead
    for word, extra in zip(target, extras):
        schedule.extend([word] * (1 + extra))
    schedule.extend([SILENCE_WORD] * (total - len(schedule)))

    vocab = sorted(fst.vocabulary()) + [SILENCE_WORD]
    frames = []
    for scheduled in schedule:
        main = rng.uniform(0.4, 0.95)
        raw = {sym: rng.uniform(0.05, 1.0) for sym in vocab if sym != scheduled}
        norm = sum(raw.values())
        posteriors = {sym: (1.0 - main) * v / norm for sym, v in raw.items()}
        posteriors[scheduled] = main
        frames.append(posteriors)
    return fst, frames


# --------------------------------------------------------------------------
# audio measurement
# --------------------------------------------------------------------------


def read_pcm16(path) -> tuple[list[float], int]:
    """Read a 16-bit PCM mono WAV by hand (wave + struct, no numpy)."""
    with wave.open(str(path), "rb") as fh:
        assert fh.getnchannels() == 1 and fh.getsampwidth() == 2
        count = fh.getnframes()
        raw = fh.readframes(count)
        rate = fh.getframerate()
    ints = struct.unpack(f"<{count}h", raw)
    return [v / 32767.0 for v in ints], rate


def oracle_rms(samples: list[float]) -> float:
    """Plain-loop RMS, the reference for any vectorized implementation."""
    assert samples
    return math.sqrt(sum(x * x for x in samples) / len(samples))


def oracle_file_snr_db(clean_path, mixed_path) -> float:
    """Measured SNR of a produced mix: subtract the clean file from the
    mixed file sample by sample and compare RMS levels."""
    clean, rate_c = read_pcm16(clean_path)
    mixed, rate_m = read_pcm16(mixed_path)
    assert rate_c == rate_m and len(clean) == len(mixed)
    noise = [m - c for m, c in zip(mixed, clean)]
    return 20.0 * math.log10(oracle_rms(clean) / oracle_rms(noise))


# --------------------------------------------------------------------------
# edit distance
# --------------------------------------------------------------------------


def oracle_edit_distance(ref: tuple[str, ...], hyp: tuple[str, ...]) -> int:
    """Word edit distance by plain recursion over all edit paths."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    return min(
        oracle_edit_distance(ref[1:], hyp[1:]) + (0 if ref[0] == hyp[0] else 1),
        oracle_edit_distance(ref[1:], hyp) + 1,
        oracle_edit_distance(ref, hyp[1:]) + 1,
    )
