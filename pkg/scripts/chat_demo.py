#!/usr/bin/env python3
"""Terminal chat against a pipeline artifact, no HTTP service involved.

Usage:
    python scripts/build_demo_artifacts.py --out artifacts
    python scripts/chat_demo.py artifacts/expansion-demo

Type movie opinions ("I loved Billy Madison (1995)"); blank line exits.
"""

import argparse
import sys

from convrec.artifacts import from_pretrained
from convrec.protocol import Dialog, Role, Utterance, append_utterance, parse_dialog


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("pipeline", help="pipeline artifact directory")
    parser.add_argument("--top-k", type=int, default=None)
    args = parser.parse_args()

    pipeline = from_pretrained(args.pipeline)
    print(f"loaded {type(pipeline).__name__}; say something (blank line quits)")

    dialog: Dialog | None = None
    while True:
        try:
            text = input("you> ").strip()
        except EOFError:
            break
        if not text:
            break
        turn = Utterance(role=Role.USER, text=text)
        dialog = Dialog((turn,)) if dialog is None else append_utterance(dialog, turn)
        kwargs = {"rec": {"top_k": args.top_k}} if args.top_k is not None else {}
        out = pipeline.response(dialog, **kwargs)
        print(f"sys> {out.text}")
        names = pipeline.catalog.id_to_entity
        for item, score in out.recommendations.items:
            print(f"       {score:+.3f}  {names[item]}")
        reply = parse_dialog("System: " + out.text).utterances[0]
        dialog = append_utterance(dialog, reply)
    return 0


if __name__ == "__main__":
    sys.exit(main())
