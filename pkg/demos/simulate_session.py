"""Simulate one full tutoring session and score it.

No sockets, no threads: the simulator plants a child with a known
answer schedule, streams word posteriors through the online recognizer,
and keeps the gold annotation it used to do so.  We then hand the gold
rows and the recognizer's log to the evaluation pipeline and print the
same table the `evalkit` command produces.

Try making the child harder to hear:

    $ python3 demos/simulate_session.py --confusion 0.2 --seed 3

Accuracy drops, the taxonomy fills in, and the unmatched row starts
counting utterances the recognizer missed outright.
"""

import argparse
import sys

from phrasebot.decoder import UtteranceSegment
from phrasebot.evalkit import build_report, format_report, match_segments
from phrasebot.simulator import SessionConfig, run_session, uniform


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--confusion", type=float, default=0.0,
                        help="per-frame probability of a confusable observation")
    parser.add_argument("--disfluency", type=float, default=0.0,
                        help="per-utterance probability of a marked disfluency")
    args = parser.parse_args(argv)

    run = run_session(
        SessionConfig(
            seed=args.seed,
            confusion_p=args.confusion,
            disfluency_p=args.disfluency,
            eos_delay=uniform(0.3, 0.7),
        )
    )

    print(f"# prompts and feedback shown on screen (seed={args.seed})")
    for t, who, text in run.transcript:
        if who in ("display", "report"):
            print(f"{t:7.2f}s  {who:>7}  {text}")

    gold = [row.segment for row in run.gold.child_rows()]
    autos = [
        UtteranceSegment(float(r["start"]), float(r["end"]), str(r["text"]), "auto")
        for r in run.log_rows
    ]
    print("\n# what the child said vs. what the recognizer heard")
    for planted, heard in match_segments(gold, autos):
        mark = "=" if heard is not None and heard.text == planted.text else "!"
        got = heard.text if heard is not None else "(missed)"
        print(f"{planted.start:7.2f}s  {mark}  {planted.text!r:42} -> {got!r}")

    print(f"\nfinal state: {run.final_state}")
    if run.dropped:
        print(f"(recognizer results ignored outside speech states: {len(run.dropped)})")

    report = build_report(gold, run.log_rows)
    print()
    print(format_report(report))
    return 0


if __name__ == "__main__":
    sys.exit(main())
