import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phrasebot import evalkit as ek
from phrasebot.decoder import RecognizerConfig, UtteranceSegment
from phrasebot.simulator import SessionConfig, fixed, run_session, uniform, write_gold_tsv

from oracles import oracle_edit_distance


def gold(start, end, text):
    return UtteranceSegment(start, end, text, "gold")


def auto(start, end, text):
    return UtteranceSegment(start, end, text, "auto")


def clean_run(seed=7):
    return run_session(
        SessionConfig(seed=seed, eos_delay=fixed(0.0)),
        rec_config=RecognizerConfig(readback=0.0),
    )


# -- markers and fluency ----------------------------------------------------


def test_fluent_when_no_markers():
    u = ek.parse_markers(gold(0.0, 1.0, "moved quickly for ten seconds"))
    assert ek.classify_fluency(u) == "fluent"
    assert u.words == ("moved", "quickly", "for", "ten", "seconds")
    assert u.mispronounced == () and u.false_starts == ()


def test_false_start_marks_disfluent():
    u = ek.parse_markers(gold(0.0, 1.0, "moved qui- quickly for ten seconds"))
    assert ek.classify_fluency(u) == "disfluent"
    assert u.false_starts == (1,)
    assert u.words[1] == "qui"


def test_mispronunciation_marks_disfluent():
    u = ek.parse_markers(gold(0.0, 1.0, "*zeno start the quiz"))
    assert ek.classify_fluency(u) == "disfluent"
    assert u.mispronounced == (0,)
    assert u.words == ("zeno", "start", "the", "quiz")


def test_both_markers_on_one_word():
    u = ek.parse_markers(gold(0.0, 1.0, "*qui- quickly"))
    assert u.mispronounced == (0,)
    assert u.false_starts == (0,)
    assert u.words == ("qui", "quickly")


@pytest.mark.parametrize("text", ["he*llo", "*", "-", "a --", "stop x*-"])
def test_bad_marker_syntax_rejected(text):
    with pytest.raises(ek.MarkerSyntaxError):
        ek.parse_markers(gold(0.0, 1.0, text))


# -- expectedness -----------------------------------------------------------


def test_vocabulary_comes_from_the_dialogue_script():
    vocab = ek.expected_vocabulary()
    assert len(vocab) == len(set(vocab))
    assert "hello zeeno i am ready to start" in vocab
    mc = ek.multiple_choice_vocabulary()
    assert set(mc) < set(vocab)
    assert "hello zeeno i am ready to start" not in mc


def test_classify_expected_spec_cases():
    assert ek.classify_expected("hello zeeno i am ready to start") == "expected"
    assert ek.classify_expected("!SIL") == "expected"
    assert ek.classify_expected("i like robots") == "unexpected"


def test_classify_expected_honors_custom_vocabulary():
    assert ek.classify_expected("i like robots", ["i like robots"]) == "expected"
    assert ek.classify_expected("hello zeeno i am ready to start", ["x"]) == "unexpected"


# -- minor disfluency rule --------------------------------------------------


def test_minor_match_above_threshold():
    got = ek.minor_disfluency_match(
        "moved quickly for twenty", ["moved quickly for twenty seconds"]
    )
    assert got == "moved quickly for twenty seconds"


def test_minor_match_rejects_sixty_percent():
    assert ek.minor_disfluency_match("a b c", ["a b c d e"]) is None


def test_minor_match_threshold_is_strict():
    assert ek.minor_disfluency_match("a b c", ["a b c d"]) is None


def test_minor_match_strips_markers():
    got = ek.minor_disfluency_match("moved quick- *quickly for twenty", ["moved quickly for twenty seconds"])
    assert got == "moved quickly for twenty seconds"


def test_minor_match_prefers_higher_coverage_then_first():
    answers = ["walked slowly for ten seconds", "moved quickly for ten seconds"]
    got = ek.minor_disfluency_match("moved quickly for ten", answers)
    assert got == "moved quickly for ten seconds"
    # full tie on coverage -> earliest answer wins
    tied = ["go left now", "go right now"]
    assert ek.minor_disfluency_match("go left right now", tied) == "go left now"


# -- matching ---------------------------------------------------------------


def test_match_prefers_identical_text_over_tighter_overlap():
    g = gold(1.0, 2.0, "testing a b c")
    a1 = auto(0.9, 2.1, "testing a b c")
    a2 = auto(1.1, 1.9, "hello zeeno")
    assert ek.match_segments([g], [a1, a2]) == [(g, a1)]


def test_match_falls_back_to_minimum_distance():
    g = gold(1.0, 2.0, "x")
    far = auto(0.8, 1.5, "y")  # distance 0.7
    near = auto(0.95, 2.02, "z")  # distance 0.07
    assert ek.match_segments([g], [far, near]) == [(g, near)]


def test_match_requires_overlap():
    g = gold(1.0, 2.0, "x")
    assert ek.match_segments([g], [auto(3.0, 4.0, "x")]) == [(g, None)]
    # touching boundaries do not overlap
    assert ek.match_segments([g], [auto(2.0, 3.0, "x")]) == [(g, None)]


def test_match_is_injective():
    g1 = gold(1.0, 2.0, "x")
    g2 = gold(1.5, 2.5, "x")
    shared = auto(1.4, 2.1, "x")
    pairs = ek.match_segments([g1, g2], [shared])
    assert pairs == [(g1, shared), (g2, None)]


def test_match_rejects_unordered_input():
    with pytest.raises(ek.EvalError):
        ek.match_segments([gold(2.0, 3.0, "a"), gold(1.0, 1.5, "b")], [])
    with pytest.raises(ek.EvalError):
        ek.match_segments([], [auto(2.0, 3.0, "a"), auto(1.0, 1.5, "b")])


@given(st.lists(st.tuples(st.floats(0, 50), st.floats(0.1, 3)), max_size=12), st.randoms())
@settings(max_examples=60, deadline=None)
def test_match_never_reuses_an_auto_segment(spans, rng):
    spans = sorted(spans)
    golds = []
    autos = []
    t = 0.0
    for offset, width in spans:
        start = t + offset
        golds.append(gold(start, start + width, "w"))
        jitter = rng.uniform(-0.2, 0.2)
        autos.append(auto(max(0.0, start + jitter), start + width + 0.1, "w"))
        t = start + width
    pairs = ek.match_segments(golds, autos)
    chosen = [a for _, a in pairs if a is not None]
    assert len(chosen) == len({id(a) for a in chosen})


# -- boundary taxonomy ------------------------------------------------------


def test_early_start_label():
    labels = ek.classify_segment_errors(gold(2.00, 4.50, "w"), auto(1.60, 4.50, "w"))
    assert labels == {"early_start"}


def test_early_end_label():
    labels = ek.classify_segment_errors(gold(2.00, 4.50, "w"), auto(2.00, 4.30, "w"))
    assert labels == {"early_end"}


def test_identical_segments_are_aligned():
    assert ek.classify_segment_errors(gold(2.0, 4.5, "w"), auto(2.0, 4.5, "w")) == frozenset()


def test_deviation_at_tolerance_is_aligned():
    labels = ek.classify_segment_errors(gold(2.0, 4.5, "w"), auto(1.95, 4.55, "w"))
    assert labels == frozenset()


def test_taxonomy_requires_overlap():
    with pytest.raises(ek.EvalError):
        ek.classify_segment_errors(gold(1.0, 2.0, "w"), auto(2.5, 3.0, "w"))


@given(
    st.floats(-0.5, 0.5),
    st.floats(-0.5, 0.5),
)
@settings(max_examples=120, deadline=None)
def test_taxonomy_labels_mutually_exclusive(ds, de):
    g = gold(10.0, 12.0, "w")
    a_start, a_end = 10.0 + ds, 12.0 + de
    if not (a_start < g.end and g.start < a_end) or a_start > a_end:
        return
    labels = ek.classify_segment_errors(g, auto(max(a_start, 0.0), a_end, "w"))
    assert not {"early_start", "late_start"} <= labels
    assert not {"early_end", "late_end"} <= labels


# -- metrics ----------------------------------------------------------------


@pytest.mark.parametrize(
    "correct,total,want",
    [(2582, 2770, 93.2), (1616, 1771, 91.2), (136, 184, 73.9), (1752, 1955, 89.6), (0, 10, 0.0)],
)
def test_accuracy_values(correct, total, want):
    assert ek.accuracy(correct, total) == want


def test_accuracy_rejects_bad_counts():
    with pytest.raises(ek.EvalError):
        ek.accuracy(1, 0)
    with pytest.raises(ek.EvalError):
        ek.accuracy(5, 4)


def test_wer_identity_and_deletion():
    assert ek.wer("go left".split(), "go left".split()) == 0.0
    assert ek.wer("testing one two three".split(), "testing one three".split()) == 25.0


def test_wer_empty_reference_rejected():
    with pytest.raises(ek.EvalError):
        ek.wer([], ["a"])


def test_wer_matches_exhaustive_alignment():
    rng = random.Random(41)
    words = ["go", "stop", "left", "right", "now", "slow"]
    for _ in range(150):
        ref = tuple(rng.choice(words) for _ in range(rng.randint(1, 6)))
        hyp = tuple(rng.choice(words) for _ in range(rng.randint(0, 6)))
        assert ek.wer(ref, hyp) == pytest.approx(100.0 * oracle_edit_distance(ref, hyp) / len(ref))


@given(
    st.lists(st.sampled_from("abcd"), min_size=1, max_size=8),
    st.lists(st.sampled_from("abcd"), max_size=8),
)
@settings(max_examples=80, deadline=None)
def test_wer_bounds(ref, hyp):
    got = ek.wer(ref, hyp)
    assert 0.0 <= got <= 100.0 * max(len(ref), len(hyp)) / len(ref)


# -- report pipeline --------------------------------------------------------


def test_clean_session_reports_perfect_accuracy():
    run = clean_run()
    rep = ek.build_report([r.segment for r in run.gold.child_rows()], run.log_rows)
    assert rep.accuracy_overall == 100.0
    assert rep.accuracy_multiple_choice == 100.0
    assert rep.unmatched == 0
    assert rep.taxonomy == {
        "early_start": 0,
        "late_start": 0,
        "early_end": 0,
        "late_end": 0,
        "aligned": rep.matched,
    }


@pytest.mark.parametrize("delay,label", [(0.7, "late_start"), (0.3, "early_start")])
def test_fixed_delay_shifts_every_start(delay, label):
    run = run_session(SessionConfig(seed=1, eos_delay=fixed(delay)))
    rep = ek.build_report([r.segment for r in run.gold.child_rows()], run.log_rows)
    assert rep.taxonomy[label] == rep.matched
    assert rep.taxonomy["aligned"] == 0


@pytest.mark.parametrize("seed", range(4))
def test_taxonomy_matches_simulator_oracle(seed):
    run = run_session(SessionConfig(seed=seed, eos_delay=uniform(0.3, 0.7)))
    gold_child = [r.segment for r in run.gold.child_rows()]
    autos = [auto(float(r["start"]), float(r["end"]), str(r["text"])) for r in run.log_rows]
    pairs = ek.match_segments(gold_child, autos)
    assert len(pairs) == len(run.oracle)
    for (g, a), orc in zip(pairs, run.oracle):
        assert a is not None
        assert ek.classify_segment_errors(g, a) == frozenset(orc.labels)


def test_report_counts_stay_consistent_under_noise():
    run = run_session(SessionConfig(seed=3, confusion_p=0.1, disfluency_p=0.3))
    rep = ek.build_report([r.segment for r in run.gold.child_rows()], run.log_rows)
    rep.validate()
    assert rep.fluent + rep.disfluent == rep.total_gold
    assert rep.expected + rep.unexpected == rep.fluent
    assert rep.matched + rep.unmatched == rep.taxonomy_pool


def test_minor_disfluency_rescues_in_report():
    answers = ek.multiple_choice_vocabulary()
    answer = answers[0]
    trunc = " ".join(answer.split()[:-1])
    gold_rows = [gold(1.0, 3.0, trunc + "-")]
    autos = [{"start": 1.0, "end": 3.0, "text": answer}]
    rep = ek.build_report(gold_rows, autos)
    assert rep.disfluent == 1
    assert rep.minor_total == 1 and rep.minor_correct == 1
    assert rep.accuracy_minor_disfluent == 100.0


def test_empty_log_reports_zero_totals():
    run = clean_run()
    rep = ek.build_report([r.segment for r in run.gold.child_rows()], [])
    assert rep.total_auto == 0
    assert rep.matched == 0
    assert rep.unmatched == rep.scoring_pool
    assert rep.accuracy_overall == 0.0


def test_empty_gold_reports_none_accuracies():
    rep = ek.build_report([], [])
    assert rep.total_gold == 0
    assert rep.accuracy_overall is None
    assert rep.accuracy_with_minor is None


def test_report_json_and_table_round_trip():
    run = clean_run()
    rep = ek.build_report([r.segment for r in run.gold.child_rows()], run.log_rows)
    blob = json.dumps(rep.to_json(), sort_keys=True)
    assert json.loads(blob)["accuracy"]["overall"] == 100.0
    table = ek.format_report(rep)
    assert "overall %" in table and "100.0" in table


# -- file formats and CLI ---------------------------------------------------


def test_gold_tsv_round_trip(tmp_path):
    run = clean_run()
    path = tmp_path / "gold.tsv"
    write_gold_tsv(run.gold, path)
    rows = ek.read_gold_tsv(path)
    assert [seg for seg, speaker in rows if speaker == "child"] == [
        r.segment for r in run.gold.child_rows()
    ]


def test_gold_tsv_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("1.0\t2.0\tchild\tgo\nnope\n", encoding="utf-8")
    with pytest.raises(ek.GoldParseError, match="line 2"):
        ek.read_gold_tsv(path)


def test_result_log_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "log.jsonl"
    path.write_text('{"start": 1, "end": 2, "text": "go"}\n{oops\n', encoding="utf-8")
    with pytest.raises(ek.LogParseError, match="line 2"):
        ek.read_result_log(path)
    path.write_text('{"start": 1}\n', encoding="utf-8")
    with pytest.raises(ek.LogParseError, match="line 1"):
        ek.read_result_log(path)


def test_cli_writes_report_json(tmp_path, capsys):
    run = clean_run()
    gold_path = tmp_path / "gold.tsv"
    write_gold_tsv(run.gold, gold_path)
    logdir = tmp_path / "logs"
    logdir.mkdir()
    (logdir / "session0.jsonl").write_text(
        "".join(json.dumps(r, sort_keys=True) + "\n" for r in run.log_rows),
        encoding="utf-8",
    )
    out = tmp_path / "report.json"
    code = ek.main(
        ["report", "--gold", str(gold_path), "--logs", str(logdir), "--out", str(out)]
    )
    assert code == 0
    blob = json.loads(out.read_text(encoding="utf-8"))
    assert blob["accuracy"]["overall"] == 100.0
    assert "session evaluation" in capsys.readouterr().out


def test_cli_reports_parse_failures(tmp_path, capsys):
    gold_path = tmp_path / "gold.tsv"
    gold_path.write_text("broken\n", encoding="utf-8")
    logdir = tmp_path / "logs"
    logdir.mkdir()
    code = ek.main(["report", "--gold", str(gold_path), "--logs", str(logdir)])
    assert code == 1
    assert "evalkit:" in capsys.readouterr().err
