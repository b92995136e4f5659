"""Reference child for the external black-box protocol: y = 1[x0 >= 0].

Run as ``python -m rope_explain.echo_child [--n-features N] [--mode MODE]``.
The non-default modes misbehave on purpose, for protocol tests:

  malformed     answer the first prediction request with non-JSON text
  wrong-id      answer with an id one larger than requested
  die-after=K   exit abruptly after K prediction replies
  hang          never answer prediction requests
"""

import argparse
import json
import os
import sys


def label(x):
    return 1 if x[0] >= 0 else 0


def send(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-features", type=int, default=2)
    ap.add_argument("--mode", default="ok")
    args = ap.parse_args(argv)
    die_after = None
    if args.mode.startswith("die-after="):
        die_after = int(args.mode.split("=", 1)[1])
    answered = 0

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        msg = json.loads(line)
        kind = msg.get("type")
        if kind == "hello":
            send({"type": "ready", "n_features": args.n_features, "labels": [0, 1]})
            continue
        if kind == "bye":
            return 0
        if die_after is not None and answered >= die_after:
            os._exit(3)
        if args.mode == "hang":
            continue
        if args.mode == "malformed":
            sys.stdout.write("this is not json\n")
            sys.stdout.flush()
            continue
        rid = msg.get("id")
        if args.mode == "wrong-id":
            rid = rid + 1
        if kind == "predict":
            send({"type": "prediction", "id": rid, "y": label(msg["x"])})
        elif kind == "predict_batch":
            send({"type": "predictions", "id": rid, "ys": [label(x) for x in msg["xs"]]})
        answered += 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
