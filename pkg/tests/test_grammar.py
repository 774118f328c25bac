"""Grammar pipeline tests: parser, AST oracle, FST compilation, lexicon."""

import math
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from phrasebot import grammar as G
from phrasebot.grammar import (
    Alt,
    GrammarAst,
    GrammarSyntaxError,
    GrammarValidationError,
    LanguageLimitExceeded,
    Opt,
    RecursiveRuleError,
    RuleRef,
    Seq,
    Token,
    UnresolvedRuleError,
    compile_grammar,
    enumerate_language,
    enumerate_paths,
    expand_ast,
    format_jsgf,
    lexicon_lookup,
    load_lexicon,
    parse_jsgf,
)

DATA = Path(__file__).resolve().parents[1] / "src" / "phrasebot" / "data"
FIXTURES = sorted((DATA / "grammars").glob("*.gram"))


def g(body: str) -> GrammarAst:
    return parse_jsgf(f"#JSGF V1.0;\ngrammar t;\n{body}")


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def test_parse_simple_sequence():
    ast = parse_jsgf(
        "#JSGF V1.0; grammar g; public <s> = hello zeeno i am ready to start;"
    )
    assert ast.name == "g"
    assert ast.publics == ("s",)
    body = ast.rules["s"]
    assert isinstance(body, Seq) and len(body.items) == 7
    assert all(isinstance(i, Token) for i in body.items)


def test_parse_group_alternation_inside_sequence():
    ast = g("public <c> = put your (left|right) arm up;")
    body = ast.rules["c"]
    assert isinstance(body, Seq) and len(body.items) == 5
    assert isinstance(body.items[2], Alt) and len(body.items[2].branches) == 2


def test_parse_lowercases_words():
    ast = g("public <s> = Hello ZEENO;")
    assert expand_ast(ast) == {"hello zeeno"}


def test_header_required():
    with pytest.raises(GrammarSyntaxError):
        parse_jsgf("grammar g; public <s> = hi;")
    with pytest.raises(GrammarSyntaxError):
        parse_jsgf("#JSGF V2.0; public <s> = hi;")


def test_missing_semicolon_names_line():
    text = "#JSGF V1.0;\ngrammar g;\npublic <s> = hello zeeno\n"
    with pytest.raises(GrammarSyntaxError) as exc:
        parse_jsgf(text)
    assert exc.value.line == 4  # failure surfaces at end of input


def test_comments_are_skipped():
    ast = g("// leading comment\npublic <s> = a /* inline */ b; // trailing")
    assert expand_ast(ast) == {"a b"}


def test_unresolved_rule():
    with pytest.raises(UnresolvedRuleError):
        g("public <s> = <missing>;")


def test_recursive_rule():
    with pytest.raises(RecursiveRuleError):
        g("public <s> = a <t>; <t> = b <s>;")


def test_no_public_rule_rejected():
    with pytest.raises(GrammarValidationError):
        g("<s> = hi;")


def test_nullable_public_rejected():
    with pytest.raises(GrammarValidationError):
        g("public <s> = [hi];")


def test_duplicate_rule_rejected():
    with pytest.raises(GrammarSyntaxError):
        g("public <s> = a; <s> = b;")


# --------------------------------------------------------------------------
# language: AST expansion vs FST enumeration
# --------------------------------------------------------------------------


def test_optional_expansion():
    ast = g("public <s> = a [b] c;")
    assert expand_ast(ast) == {"a c", "a b c"}
    fst = compile_grammar(ast, silence=False)
    assert enumerate_language(fst) == {"a c", "a b c"}


def test_four_command_grammar_plus_silence_has_five_sentences():
    ast = G.load_grammar(DATA / "grammars" / "cmd1.gram")
    fst = compile_grammar(ast, silence=True)
    lang = enumerate_language(fst)
    assert len(lang) == 5
    assert G.SILENCE_WORD in lang
    assert "put your left arm up" in lang
    assert "make a sad face" in lang


def test_single_sentence_no_silence_identity():
    ast = g("public <s> = testing one two three;")
    fst = compile_grammar(ast, silence=False)
    assert enumerate_language(fst) == {"testing one two three"}


def test_silence_adds_exactly_one_sentence():
    for path in FIXTURES:
        ast = G.load_grammar(path)
        with_sil = enumerate_language(compile_grammar(ast, silence=True))
        without = enumerate_language(compile_grammar(ast, silence=False))
        assert with_sil == without | {G.SILENCE_WORD}, path.name
        assert G.SILENCE_WORD not in without, path.name


def test_fixture_grammars_match_ast_expansion():
    assert len(FIXTURES) == 10
    for path in FIXTURES:
        ast = G.load_grammar(path)
        fst = compile_grammar(ast, silence=True)
        assert enumerate_language(fst) == expand_ast(ast, silence=True), path.name


def test_quiz_grammar_language_is_the_answer_set():
    ast = G.load_grammar(DATA / "grammars" / "q1.gram")
    lang = enumerate_language(compile_grammar(ast, silence=True))
    assert lang == {
        "stood still for ten seconds",
        "moved slowly for ten seconds",
        "moved quickly for ten seconds",
        "moved quickly for twenty seconds",
        "!SIL",
    }


def test_enumerate_limit():
    ast = g("public <s> = (a|b) (c|d) (e|f);")
    fst = compile_grammar(ast, silence=False)
    assert len(enumerate_language(fst, limit=8)) == 8
    with pytest.raises(LanguageLimitExceeded):
        enumerate_language(fst, limit=7)


# --------------------------------------------------------------------------
# weights
# --------------------------------------------------------------------------


def test_flat_alternation_paths_equal_weight():
    ast = g("public <s> = a | b | c;")
    paths = enumerate_paths(compile_grammar(ast, silence=False))
    assert len(paths) == 3
    for _, w in paths:
        assert w == pytest.approx(math.log(3), abs=1e-12)


def test_silence_is_a_top_level_branch():
    # single phrase + silence: the classic two-path decoding grammar
    ast = g("public <s> = testing a b c;")
    paths = dict(enumerate_paths(compile_grammar(ast, silence=True)))
    assert paths[("!SIL",)] == pytest.approx(math.log(2), abs=1e-12)
    assert paths[("testing", "a", "b", "c")] == pytest.approx(math.log(2), abs=1e-12)


def test_optional_costs_a_binary_choice():
    ast = g("public <s> = a [b];")
    paths = dict(enumerate_paths(compile_grammar(ast, silence=False)))
    assert paths[("a",)] == pytest.approx(math.log(2), abs=1e-12)
    assert paths[("a", "b")] == pytest.approx(math.log(2), abs=1e-12)


def test_all_path_weights_finite_nonnegative():
    for path in FIXTURES:
        fst = compile_grammar(G.load_grammar(path), silence=True)
        for _, w in enumerate_paths(fst):
            assert math.isfinite(w) and w >= 0.0


def test_no_epsilon_arcs_remain():
    for path in FIXTURES:
        fst = compile_grammar(G.load_grammar(path), silence=True)
        eps = fst.symbols[G.EPS]
        assert all(a.isym != eps and a.osym != eps for a in fst.arcs)
        assert set(fst.symbols.values()) == set(range(len(fst.symbols)))


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    fst = compile_grammar(G.load_grammar(DATA / "grammars" / "q3.gram"))
    out = tmp_path / "q3.fst"
    fst.save(out)
    loaded = G.GrammarFst.load(out)
    assert loaded.grammar_id == "q3"
    assert enumerate_language(loaded) == enumerate_language(fst)
    assert loaded.symbols == fst.symbols
    assert loaded.finals == fst.finals


def test_compile_is_bit_exact_across_runs(tmp_path):
    a, b = tmp_path / "a.fst", tmp_path / "b.fst"
    compile_grammar(G.load_grammar(DATA / "grammars" / "cmd1.gram")).save(a)
    compile_grammar(G.load_grammar(DATA / "grammars" / "cmd1.gram")).save(b)
    assert a.read_bytes() == b.read_bytes()
    assert Path(str(a) + ".syms").read_bytes() == Path(str(b) + ".syms").read_bytes()


# --------------------------------------------------------------------------
# property tests against the AST oracle
# --------------------------------------------------------------------------

_words = st.sampled_from(["a", "b", "c", "d", "e"])
_leaf = st.one_of(
    _words.map(Token),
    st.just(RuleRef("aux")),
)


def _inner(children):
    return st.one_of(
        st.lists(children, min_size=2, max_size=3).map(lambda xs: Seq(tuple(xs))),
        st.lists(children, min_size=2, max_size=3).map(lambda xs: Alt(tuple(xs))),
        children.map(Opt),
    )


_expr = st.recursive(_leaf, _inner, max_leaves=6)
_aux_body = st.lists(_words, min_size=1, max_size=3).map(
    lambda ws: Alt(tuple(Token(w) for w in ws)) if len(ws) > 1 else Token(ws[0])
)


@st.composite
def _small_grammars(draw):
    body = Seq((Token(draw(_words)), draw(_expr)))  # leading token: never nullable
    return GrammarAst(
        name="t", rules={"main": body, "aux": draw(_aux_body)}, publics=("main",)
    )


@settings(max_examples=150, deadline=None)
@given(_small_grammars(), st.booleans())
def test_property_fst_language_equals_ast_expansion(ast, silence):
    fst = compile_grammar(ast, silence=silence)
    assert enumerate_language(fst, limit=100_000) == expand_ast(ast, silence=silence)


@settings(max_examples=150, deadline=None)
@given(_small_grammars())
def test_property_pretty_print_round_trip(ast):
    assert parse_jsgf(format_jsgf(ast)) == ast


@settings(max_examples=100, deadline=None)
@given(_small_grammars())
def test_property_weights_finite_nonnegative(ast):
    for _, w in enumerate_paths(compile_grammar(ast, silence=True)):
        assert math.isfinite(w) and w >= 0.0


def test_fixture_files_round_trip_through_printer():
    for path in FIXTURES:
        ast = G.load_grammar(path)
        assert parse_jsgf(format_jsgf(ast)) == ast, path.name


# --------------------------------------------------------------------------
# lexicon
# --------------------------------------------------------------------------


def test_lexicon_direct_lookup():
    lex = load_lexicon(DATA / "lexicon.txt")
    pron = lexicon_lookup(lex, "testing")
    assert not pron.fallback
    assert pron.phones == (("t", "eh", "s", "t", "ih", "ng"),)


def test_lexicon_multiple_pronunciations():
    lex = load_lexicon(DATA / "lexicon.txt")
    pron = lexicon_lookup(lex, "a")
    assert len(pron.phones) == 2


def test_lexicon_fallback_flagged():
    lex = load_lexicon(DATA / "lexicon.txt")
    pron = lexicon_lookup(lex, "zeeno")
    assert pron.fallback
    assert pron.phones == (("z", "e", "e", "n", "o"),)


def test_lexicon_empty_word_rejected():
    lex = load_lexicon(DATA / "lexicon.txt")
    with pytest.raises(ValueError):
        lexicon_lookup(lex, "")


def test_lexicon_inventory_covers_entries():
    lex = load_lexicon(DATA / "lexicon.txt")
    for prons in lex.entries.values():
        for pron in prons:
            assert set(pron) <= lex.phone_inventory


def test_compile_attaches_pronunciations():
    lex = load_lexicon(DATA / "lexicon.txt")
    fst = compile_grammar(
        G.load_grammar(DATA / "grammars" / "adapt1.gram"), lexicon=lex
    )
    assert fst.pronunciations["zeeno"].fallback
    assert not fst.pronunciations["hello"].fallback
