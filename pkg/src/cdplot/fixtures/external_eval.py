#!/usr/bin/env python3
"""Reference external predictor.

Speaks the line protocol on stdin/stdout and answers each feature row
with the value of the expression given as the first argument, e.g.::

    cdplot explain ... --external "python3 external_eval.py 'F - P**2'" \
        --features P,F

The expression uses Python syntax over the announced feature names.
"""

import sys


def main() -> int:
    if len(sys.argv) != 2:
        print("usage: external_eval.py EXPRESSION", file=sys.stderr)
        return 2
    code = compile(sys.argv[1], "<expression>", "eval")

    hello = sys.stdin.readline().split()
    if len(hello) != 4 or hello[:2] != ["HELLO", "CDP/1"]:
        print(f"bad handshake: {' '.join(hello)!r}", file=sys.stderr)
        return 2
    features = hello[3].split(",")
    if len(features) != int(hello[2]):
        print("feature count mismatch", file=sys.stderr)
        return 2
    sys.stdout.write("READY\n")
    sys.stdout.flush()

    while True:
        line = sys.stdin.readline()
        if not line:
            return 1
        words = line.split()
        if words == ["QUIT"]:
            return 0
        if len(words) != 2 or words[0] != "PREDICT":
            print(f"unexpected request: {line!r}", file=sys.stderr)
            return 2
        n = int(words[1])
        answers = []
        for _ in range(n):
            row = [float(cell) for cell in sys.stdin.readline().split(",")]
            env = dict(zip(features, row))
            answers.append(format(float(eval(code, {"__builtins__": {}}, env)), ".17g"))
        sys.stdout.write("\n".join(answers) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    sys.exit(main())
