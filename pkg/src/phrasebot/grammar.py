"""JSGF-subset grammars compiled to weighted word FSTs.

The pipeline mirrors classic phrase-grammar tooling: parse a ``.gram``
file into an AST, validate it (no recursion, no empty sentences, at
least one public rule), compile to a finite-state machine with epsilon
arcs, then remove epsilons to obtain a weighted FST whose accepted
language is exactly the grammar's sentence set, optionally extended
with the single silence sentence ``!SIL``.

Weights are negative log probabilities under uniform branching: every
n-way alternation contributes ``ln(n)`` to each branch, so all
sentences of a flat n-way choice grammar carry equal weight.

The supported JSGF subset: ``#JSGF V1.0;`` header, ``grammar name;``
declaration, rule definitions ``public <r> = ...;`` with sequences,
``|`` alternation, ``[...]`` optionals, ``(...)`` grouping and
``<rule>`` references.  No recursion, Kleene operators, imports, tags
or inline weights.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Union

SILENCE_WORD = "!SIL"
EPS = "<eps>"


# --------------------------------------------------------------------------
# errors
# --------------------------------------------------------------------------


class GrammarError(Exception):
    """Base class for grammar failures."""


class GrammarSyntaxError(GrammarError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnresolvedRuleError(GrammarError):
    pass


class RecursiveRuleError(GrammarError):
    pass


class GrammarValidationError(GrammarError):
    pass


class LanguageLimitExceeded(GrammarError):
    pass


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    word: str


@dataclass(frozen=True)
class RuleRef:
    name: str


@dataclass(frozen=True)
class Seq:
    items: tuple["Expr", ...]


@dataclass(frozen=True)
class Alt:
    branches: tuple["Expr", ...]


@dataclass(frozen=True)
class Opt:
    item: "Expr"


Expr = Union[Token, RuleRef, Seq, Alt, Opt]


@dataclass
class GrammarAst:
    """Parsed grammar: named rules plus the subset marked public.

    Rule order is definition order; ``publics`` preserves it, which
    fixes branch order (and therefore state numbering) in the compiled
    FST.
    """

    name: str
    rules: dict[str, Expr]
    publics: tuple[str, ...]


# --------------------------------------------------------------------------
# scanner / parser
# --------------------------------------------------------------------------

_WORD_RE = re.compile(r"[A-Za-z0-9'!_-]+")


@dataclass(frozen=True)
class _Tok:
    kind: str  # word | ruleref | punct | eof
    value: str
    line: int
    col: int


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def _advance(self, n: int) -> None:
        chunk = self.text[self.pos : self.pos + n]
        self.pos += n
        newlines = chunk.count("\n")
        if newlines:
            self.line += newlines
            self.col = len(chunk) - chunk.rfind("\n")
        else:
            self.col += n

    def _skip_space_and_comments(self) -> None:
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch.isspace():
                self._advance(1)
            elif self.text.startswith("//", self.pos):
                end = self.text.find("\n", self.pos)
                self._advance((end if end != -1 else len(self.text)) - self.pos)
            elif self.text.startswith("/*", self.pos):
                end = self.text.find("*/", self.pos + 2)
                if end == -1:
                    raise GrammarSyntaxError("unterminated comment", self.line, self.col)
                self._advance(end + 2 - self.pos)
            else:
                return

    def tokens(self) -> Iterator[_Tok]:
        while True:
            self._skip_space_and_comments()
            line, col = self.line, self.col
            if self.pos >= len(self.text):
                yield _Tok("eof", "", line, col)
                return
            ch = self.text[self.pos]
            if ch in "=;|[]()":
                self._advance(1)
                yield _Tok("punct", ch, line, col)
                continue
            if ch == "<":
                end = self.text.find(">", self.pos)
                if end == -1:
                    raise GrammarSyntaxError("unterminated rule name", line, col)
                name = self.text[self.pos + 1 : end].strip().lower()
                if not name or not _WORD_RE.fullmatch(name):
                    raise GrammarSyntaxError(f"bad rule name <{name}>", line, col)
                self._advance(end + 1 - self.pos)
                yield _Tok("ruleref", name, line, col)
                continue
            m = _WORD_RE.match(self.text, self.pos)
            if m:
                self._advance(len(m.group()))
                yield _Tok("word", m.group().lower(), line, col)
                continue
            raise GrammarSyntaxError(f"unexpected character {ch!r}", line, col)


class _Parser:
    def __init__(self, tokens: Iterator[_Tok]):
        self._tokens = tokens
        self._cur = next(self._tokens)

    def _bump(self) -> _Tok:
        tok = self._cur
        self._cur = next(self._tokens)
        return tok

    def _expect_punct(self, ch: str, why: str) -> None:
        if self._cur.kind != "punct" or self._cur.value != ch:
            raise GrammarSyntaxError(
                f"expected {ch!r} {why}, found {self._cur.value!r}",
                self._cur.line,
                self._cur.col,
            )
        self._bump()

    def parse_grammar(self) -> GrammarAst:
        name = "grammar"
        if self._cur.kind == "word" and self._cur.value == "grammar":
            self._bump()
            if self._cur.kind != "word":
                raise GrammarSyntaxError(
                    "expected grammar name", self._cur.line, self._cur.col
                )
            name = self._bump().value
            self._expect_punct(";", "after grammar declaration")
        rules: dict[str, Expr] = {}
        publics: list[str] = []
        while self._cur.kind != "eof":
            public = False
            if self._cur.kind == "word" and self._cur.value == "public":
                public = True
                self._bump()
            if self._cur.kind != "ruleref":
                raise GrammarSyntaxError(
                    f"expected <rule> definition, found {self._cur.value!r}",
                    self._cur.line,
                    self._cur.col,
                )
            tok = self._bump()
            if tok.value in rules:
                raise GrammarSyntaxError(
                    f"duplicate rule <{tok.value}>", tok.line, tok.col
                )
            self._expect_punct("=", f"after <{tok.value}>")
            expr = self.parse_alternation()
            self._expect_punct(";", f"to end rule <{tok.value}>")
            rules[tok.value] = expr
            if public:
                publics.append(tok.value)
        return GrammarAst(name=name, rules=rules, publics=tuple(publics))

    def parse_alternation(self) -> Expr:
        branches = [self.parse_sequence()]
        while self._cur.kind == "punct" and self._cur.value == "|":
            self._bump()
            branches.append(self.parse_sequence())
        return branches[0] if len(branches) == 1 else Alt(tuple(branches))

    def parse_sequence(self) -> Expr:
        items: list[Expr] = []
        while True:
            unit = self._maybe_unit()
            if unit is None:
                break
            items.append(unit)
        if not items:
            raise GrammarSyntaxError(
                "empty expansion", self._cur.line, self._cur.col
            )
        return items[0] if len(items) == 1 else Seq(tuple(items))

    def _maybe_unit(self) -> Expr | None:
        tok = self._cur
        if tok.kind == "word":
            if tok.value in ("public", "grammar"):
                return None  # start of the next declaration
            self._bump()
            return Token(tok.value)
        if tok.kind == "ruleref":
            self._bump()
            return RuleRef(tok.value)
        if tok.kind == "punct" and tok.value == "[":
            self._bump()
            inner = self.parse_alternation()
            self._expect_punct("]", "to close optional")
            return Opt(inner)
        if tok.kind == "punct" and tok.value == "(":
            self._bump()
            inner = self.parse_alternation()
            self._expect_punct(")", "to close group")
            return inner
        return None


def _split_header(text: str) -> str:
    """Validate the mandatory ``#JSGF V1.0;`` header and blank it out,
    so the scanner sees the body at its original line/column positions."""
    idx = 0
    while idx < len(text) and text[idx].isspace():
        idx += 1
    prefix = text[:idx]
    line, col = prefix.count("\n") + 1, idx - prefix.rfind("\n")
    if idx >= len(text):
        raise GrammarSyntaxError("empty grammar file", line, col)
    semi = text.find(";", idx)
    if not text.startswith("#JSGF", idx) or semi == -1:
        raise GrammarSyntaxError("missing '#JSGF V1.0;' header", line, col)
    header = text[idx : semi + 1]
    if " ".join(header.split()) != "#JSGF V1.0;":
        raise GrammarSyntaxError("missing '#JSGF V1.0;' header", line, col)
    masked = "".join(ch if ch == "\n" else " " for ch in header)
    return text[:idx] + masked + text[semi + 1 :]


def parse_jsgf(text: str) -> GrammarAst:
    """Parse JSGF-subset text into a validated :class:`GrammarAst`.

    Raises
    ------
    GrammarSyntaxError
        On malformed input, with line and column.
    UnresolvedRuleError, RecursiveRuleError, GrammarValidationError
        On undefined references, rule cycles, missing public rules or
        rules that can match the empty sentence.
    """
    body = _split_header(text)
    parser = _Parser(_Scanner(body).tokens())
    ast = parser.parse_grammar()
    _validate(ast)
    return ast


def load_grammar(path: str | Path) -> GrammarAst:
    return parse_jsgf(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


def _refs(expr: Expr) -> Iterator[str]:
    if isinstance(expr, RuleRef):
        yield expr.name
    elif isinstance(expr, Seq):
        for item in expr.items:
            yield from _refs(item)
    elif isinstance(expr, Alt):
        for br in expr.branches:
            yield from _refs(br)
    elif isinstance(expr, Opt):
        yield from _refs(expr.item)


def _validate(ast: GrammarAst) -> None:
    if not ast.publics:
        raise GrammarValidationError("grammar has no public rule")
    for rname, expr in ast.rules.items():
        for ref in _refs(expr):
            if ref not in ast.rules:
                raise UnresolvedRuleError(f"<{rname}> references undefined <{ref}>")
    # cycle check by DFS with an explicit visiting stack
    WHITE, GREY, BLACK = 0, 1, 2
    color = {name: WHITE for name in ast.rules}

    def visit(name: str, trail: list[str]) -> None:
        color[name] = GREY
        trail.append(name)
        for ref in _refs(ast.rules[name]):
            if color[ref] == GREY:
                cycle = " -> ".join(trail[trail.index(ref) :] + [ref])
                raise RecursiveRuleError(f"rule cycle: {cycle}")
            if color[ref] == WHITE:
                visit(ref, trail)
        trail.pop()
        color[name] = BLACK

    for name in ast.rules:
        if color[name] == WHITE:
            visit(name, [])
    # speech grammars must not accept the empty sentence
    nullable: dict[str, bool] = {}

    def is_nullable(expr: Expr) -> bool:
        if isinstance(expr, Token):
            return False
        if isinstance(expr, Opt):
            return True
        if isinstance(expr, Seq):
            return all(is_nullable(i) for i in expr.items)
        if isinstance(expr, Alt):
            return any(is_nullable(b) for b in expr.branches)
        if expr.name not in nullable:
            nullable[expr.name] = is_nullable(ast.rules[expr.name])
        return nullable[expr.name]

    for pub in ast.publics:
        if is_nullable(ast.rules[pub]):
            raise GrammarValidationError(
                f"public rule <{pub}> can match the empty sentence"
            )


# --------------------------------------------------------------------------
# pretty printer (round-trips through parse_jsgf)
# --------------------------------------------------------------------------


def format_jsgf(ast: GrammarAst) -> str:
    # ctx is where the expression sits; nested Seq/Alt need parentheses
    # to survive re-parsing structurally intact.
    def fmt(expr: Expr, ctx: str) -> str:
        if isinstance(expr, Token):
            return expr.word
        if isinstance(expr, RuleRef):
            return f"<{expr.name}>"
        if isinstance(expr, Opt):
            return f"[{fmt(expr.item, 'opt')}]"
        if isinstance(expr, Seq):
            text = " ".join(fmt(i, "seq") for i in expr.items)
            return f"({text})" if ctx == "seq" else text
        text = " | ".join(fmt(b, "alt") for b in expr.branches)
        return f"({text})" if ctx in ("seq", "alt") else text

    lines = ["#JSGF V1.0;", f"grammar {ast.name};", ""]
    for rname, expr in ast.rules.items():
        prefix = "public " if rname in ast.publics else ""
        lines.append(f"{prefix}<{rname}> = {fmt(expr, 'top')};")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# language expansion directly on the AST (reference oracle)
# --------------------------------------------------------------------------


def expand_ast(ast: GrammarAst, silence: bool = False) -> set[str]:
    """Enumerate the grammar's language by recursive set expansion.

    Independent of the FST pipeline on purpose: this is the oracle the
    compiled transducer is checked against.
    """

    def expand(expr: Expr) -> set[tuple[str, ...]]:
        if isinstance(expr, Token):
            return {(expr.word,)}
        if isinstance(expr, RuleRef):
            return expand(ast.rules[expr.name])
        if isinstance(expr, Opt):
            return expand(expr.item) | {()}
        if isinstance(expr, Alt):
            out: set[tuple[str, ...]] = set()
            for br in expr.branches:
                out |= expand(br)
            return out
        combos: set[tuple[str, ...]] = {()}
        for item in expr.items:
            combos = {a + b for a in combos for b in expand(item)}
        return combos

    sentences: set[str] = set()
    for pub in ast.publics:
        sentences |= {" ".join(words) for words in expand(ast.rules[pub]) if words}
    if silence:
        sentences.add(SILENCE_WORD)
    return sentences


# --------------------------------------------------------------------------
# FST
# --------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Arc:
    src: int
    isym: int
    osym: int
    weight: float
    dst: int


@dataclass
class GrammarFst:
    """Weighted word transducer: the recognizer's search space.

    ``symbols`` maps words to integer ids with ``<eps>`` fixed at 0;
    no epsilon arcs survive compilation.  ``finals`` maps final states
    to exit weights.
    """

    grammar_id: str
    start: int
    num_states: int
    arcs: tuple[Arc, ...]
    finals: dict[int, float]
    symbols: dict[str, int]
    pronunciations: dict[str, "Pronunciation"] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.id_to_word = {i: w for w, i in self.symbols.items()}
        by_src: dict[int, list[Arc]] = {}
        for arc in self.arcs:
            by_src.setdefault(arc.src, []).append(arc)
        self.by_src = by_src

    def arcs_from(self, state: int) -> list[Arc]:
        return self.by_src.get(state, [])

    def word_of(self, symbol_id: int) -> str:
        return self.id_to_word[symbol_id]

    def vocabulary(self, include_silence: bool = True) -> list[str]:
        words = [w for w in self.symbols if w != EPS]
        if not include_silence:
            words = [w for w in words if w != SILENCE_WORD]
        return sorted(words)

    # ---- text serialization: arcs `from to input output weight`,
    # ---- finals `state weight`, symbols in a `.syms` sidecar
    def save(self, path: str | Path) -> None:
        path = Path(path)
        lines = [f"# grammar: {self.grammar_id}"]
        for arc in self.arcs:
            lines.append(
                f"{arc.src} {arc.dst} {arc.isym} {arc.osym} {arc.weight!r}"
            )
        for state in sorted(self.finals):
            lines.append(f"{state} {self.finals[state]!r}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        sym_lines = [
            f"{word} {idx}" for word, idx in sorted(self.symbols.items(), key=lambda kv: kv[1])
        ]
        Path(str(path) + ".syms").write_text("\n".join(sym_lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GrammarFst":
        path = Path(path)
        grammar_id = "grammar"
        arcs: list[Arc] = []
        finals: dict[int, float] = {}
        for raw in path.read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# grammar:"):
                    grammar_id = line.split(":", 1)[1].strip()
                continue
            parts = line.split()
            if len(parts) == 5:
                src, dst, isym, osym = (int(p) for p in parts[:4])
                arcs.append(Arc(src, isym, osym, float(parts[4]), dst))
            elif len(parts) == 2:
                finals[int(parts[0])] = float(parts[1])
            else:
                raise GrammarError(f"malformed FST line: {raw!r}")
        symbols: dict[str, int] = {}
        for raw in Path(str(path) + ".syms").read_text(encoding="utf-8").splitlines():
            if raw.strip():
                word, idx = raw.rsplit(" ", 1)
                symbols[word] = int(idx)
        states = {a.src for a in arcs} | {a.dst for a in arcs} | set(finals) | {0}
        return cls(
            grammar_id=grammar_id,
            start=0,
            num_states=max(states) + 1,
            arcs=tuple(arcs),
            finals=finals,
            symbols=symbols,
        )


def compile_grammar(
    ast: GrammarAst,
    silence: bool = True,
    lexicon: "Lexicon | None" = None,
    grammar_id: str | None = None,
) -> GrammarFst:
    """Compile an AST into an epsilon-free weighted FST.

    The machine accepts exactly the AST's sentence set; with
    ``silence`` it additionally accepts the one-token sentence
    ``!SIL``.  Every n-way alternation (the silence option counts as a
    top-level branch) adds ``ln(n)`` to each branch.
    """
    # -- stage 1: FSM with epsilon arcs (word labels as strings)
    arcs: list[tuple[int, str | None, float, int]] = []
    n_states = 0

    def new_state() -> int:
        nonlocal n_states
        n_states += 1
        return n_states - 1

    def emit(expr: Expr) -> tuple[int, int]:
        if isinstance(expr, Token):
            s, e = new_state(), new_state()
            arcs.append((s, expr.word, 0.0, e))
            return s, e
        if isinstance(expr, RuleRef):
            return emit(ast.rules[expr.name])
        if isinstance(expr, Seq):
            pairs = [emit(item) for item in expr.items]
            for (_, prev_end), (next_start, _) in zip(pairs, pairs[1:]):
                arcs.append((prev_end, None, 0.0, next_start))
            return pairs[0][0], pairs[-1][1]
        if isinstance(expr, Alt):
            s, e = new_state(), new_state()
            w = math.log(len(expr.branches))
            for br in expr.branches:
                bs, be = emit(br)
                arcs.append((s, None, w, bs))
                arcs.append((be, None, 0.0, e))
            return s, e
        # optional: a 2-way choice between the item and skipping it
        s, e = new_state(), new_state()
        w = math.log(2.0)
        bs, be = emit(expr.item)
        arcs.append((s, None, w, bs))
        arcs.append((be, None, 0.0, e))
        arcs.append((s, None, w, e))
        return s, e

    top_branches: list[Expr] = [RuleRef(p) for p in ast.publics]
    if silence:
        top_branches.append(Token(SILENCE_WORD))
    top: Expr = top_branches[0] if len(top_branches) == 1 else Alt(tuple(top_branches))
    start, final = emit(top)

    # -- stage 2: weighted epsilon removal (tropical: min over paths)
    eps_out: dict[int, list[tuple[float, int]]] = {}
    word_out: dict[int, list[tuple[str, float, int]]] = {}
    for src, word, w, dst in arcs:
        if word is None:
            eps_out.setdefault(src, []).append((w, dst))
        else:
            word_out.setdefault(src, []).append((word, w, dst))

    _assert_eps_acyclic(eps_out, n_states)

    def closure(state: int) -> dict[int, float]:
        import heapq

        best = {state: 0.0}
        heap = [(0.0, state)]
        while heap:
            d, s = heapq.heappop(heap)
            if d > best.get(s, math.inf):
                continue
            for w, t in eps_out.get(s, ()):
                nd = d + w
                if nd < best.get(t, math.inf):
                    best[t] = nd
                    heapq.heappush(heap, (nd, t))
        return best

    new_arcs: dict[tuple[int, str, int], float] = {}
    new_finals: dict[int, float] = {}
    for s in range(n_states):
        for t, w in closure(s).items():
            for word, w2, dst in word_out.get(t, ()):
                key = (s, word, dst)
                cand = w + w2
                if cand < new_arcs.get(key, math.inf):
                    new_arcs[key] = cand
            if t == final:
                if w < new_finals.get(s, math.inf):
                    new_finals[s] = w

    # -- stage 3: trim + deterministic BFS renumbering
    fwd: dict[int, list[tuple[str, float, int]]] = {}
    for (s, word, dst), w in new_arcs.items():
        fwd.setdefault(s, []).append((word, w, dst))
    reach = {start}
    frontier = [start]
    while frontier:
        s = frontier.pop()
        for _, _, dst in fwd.get(s, ()):
            if dst not in reach:
                reach.add(dst)
                frontier.append(dst)
    rev: dict[int, list[int]] = {}
    for (s, _, dst), _w in new_arcs.items():
        rev.setdefault(dst, []).append(s)
    coreach = set(new_finals)
    frontier = list(new_finals)
    while frontier:
        s = frontier.pop()
        for p in rev.get(s, ()):
            if p not in coreach:
                coreach.add(p)
                frontier.append(p)
    keep = reach & coreach
    if start not in keep:
        raise GrammarValidationError("grammar accepts no sentence")

    order: dict[int, int] = {start: 0}
    queue = [start]
    while queue:
        s = queue.pop(0)
        for word, w, dst in sorted(fwd.get(s, ())):
            if dst in keep and dst not in order:
                order[dst] = len(order)
                queue.append(dst)

    words = sorted({word for (_, word, _) in new_arcs})
    symbols = {EPS: 0, **{w: i + 1 for i, w in enumerate(words)}}
    final_arcs = sorted(
        Arc(order[s], symbols[word], symbols[word], w, order[dst])
        for (s, word, dst), w in new_arcs.items()
        if s in keep and dst in keep
    )
    finals = {order[s]: w for s, w in new_finals.items() if s in keep}

    prons: dict[str, Pronunciation] = {}
    if lexicon is not None:
        prons = {w: lexicon_lookup(lexicon, w) for w in words}

    return GrammarFst(
        grammar_id=grammar_id if grammar_id is not None else ast.name,
        start=0,
        num_states=len(order),
        arcs=tuple(final_arcs),
        finals=finals,
        symbols=symbols,
        pronunciations=prons,
    )


def _assert_eps_acyclic(eps_out: dict[int, list[tuple[float, int]]], n: int) -> None:
    indeg = [0] * n
    for outs in eps_out.values():
        for _, dst in outs:
            indeg[dst] += 1
    queue = [s for s in range(n) if indeg[s] == 0]
    seen = 0
    while queue:
        s = queue.pop()
        seen += 1
        for _, dst in eps_out.get(s, ()):
            indeg[dst] -= 1
            if indeg[dst] == 0:
                queue.append(dst)
    if seen != n:
        raise GrammarError("epsilon cycle in constructed FSM")


def enumerate_language(fst: GrammarFst, limit: int = 10_000) -> set[str]:
    """All word sequences the FST accepts, as space-joined sentences.

    Walks the compiled graph directly (never the AST), so it serves as
    the FST-side half of the language-equivalence check.
    """
    sentences: set[str] = set()
    for words, _w in _paths(fst):
        sentences.add(" ".join(words))
        if len(sentences) > limit:
            raise LanguageLimitExceeded(f"language exceeds {limit} sentences")
    return sentences


def enumerate_paths(fst: GrammarFst, limit: int = 100_000) -> list[tuple[tuple[str, ...], float]]:
    """Complete paths as (words, total weight incl. final weight)."""
    out = []
    for words, w in _paths(fst):
        out.append((words, w))
        if len(out) > limit:
            raise LanguageLimitExceeded(f"more than {limit} paths")
    return sorted(out)


def _paths(fst: GrammarFst) -> Iterator[tuple[tuple[str, ...], float]]:
    eps_id = fst.symbols.get(EPS, 0)
    stack: list[tuple[int, tuple[str, ...], float]] = [(fst.start, (), 0.0)]
    while stack:
        state, words, w = stack.pop()
        if len(words) > fst.num_states:
            raise GrammarError("cycle in compiled FST")
        if state in fst.finals:
            yield words, w + fst.finals[state]
        for arc in fst.arcs_from(state):
            if arc.isym == eps_id:
                raise GrammarError("epsilon arc survived compilation")
            stack.append((arc.dst, words + (fst.word_of(arc.isym),), w + arc.weight))


def compile_file(
    path: str | Path,
    silence: bool = True,
    lexicon: "Lexicon | None" = None,
) -> GrammarFst:
    ast = load_grammar(path)
    return compile_grammar(ast, silence=silence, lexicon=lexicon, grammar_id=ast.name)


# --------------------------------------------------------------------------
# lexicon
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Pronunciation:
    phones: tuple[tuple[str, ...], ...]
    fallback: bool


@dataclass
class Lexicon:
    entries: dict[str, tuple[tuple[str, ...], ...]]
    phone_inventory: frozenset[str]


def load_lexicon(path: str | Path) -> Lexicon:
    """Read a pronunciation dictionary: lines ``WORD ph1 ph2 ...``.

    Repeated words accumulate alternate pronunciations; words are
    lowercased on load.
    """
    entries: dict[str, list[tuple[str, ...]]] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise GrammarError(f"lexicon line needs phones: {raw!r}")
        entries.setdefault(parts[0].lower(), []).append(tuple(parts[1:]))
    inventory = frozenset(ph for prons in entries.values() for p in prons for ph in p)
    return Lexicon(
        entries={w: tuple(p) for w, p in entries.items()},
        phone_inventory=inventory,
    )


def lexicon_lookup(lex: Lexicon, word: str) -> Pronunciation:
    """Dictionary pronunciations, or a one-phone-per-letter fallback.

    The fallback keeps unknown words (robot names and similar) usable;
    callers can surface the ``fallback`` flag to spot missing entries.
    """
    if not word:
        raise ValueError("word must be nonempty")
    key = word.lower()
    if key in lex.entries:
        return Pronunciation(phones=lex.entries[key], fallback=False)
    letters = tuple(ch for ch in key if ch.isalpha())
    return Pronunciation(phones=(letters,), fallback=True)
