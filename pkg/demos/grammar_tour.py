"""Walk every grammar the tutoring script ships and show its language.

Each dialogue state that listens for the child names one of these
grammars; compiling one gives a weighted transducer whose complete
paths are exactly the sentences the recognizer will accept there
(plus lone silence, so a quiet child is a legal outcome, not an error).
"""

from phrasebot.dialogue import builtin_grammar_path, load_script
from phrasebot.grammar import compile_grammar, enumerate_language, load_grammar

script = load_script()
seen: list[str] = []
for name in script.speech_states():
    gid = script.states[name].grammar
    if gid and gid not in seen:
        seen.append(gid)

for gid in seen:
    ast = load_grammar(builtin_grammar_path(gid))
    language = sorted(enumerate_language(compile_grammar(ast, silence=False)))
    states = [n for n in script.order if script.states[n].grammar == gid]
    print(f"{gid}  (used by {', '.join(states)})")
    for sentence in language:
        print(f"    {sentence}")
    print()

distinct: set[str] = set()
for gid in seen:
    ast = load_grammar(builtin_grammar_path(gid))
    distinct |= enumerate_language(compile_grammar(ast, silence=False))
print(f"{len(seen)} grammars, {len(distinct)} distinct phrases a child can say")
