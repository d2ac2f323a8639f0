"""NDJSON evaluator used by the CLI tests: log density of a bivariate t."""
import json
import math
import sys

NU = 38.0


def log_t(x):
    d = len(x)
    r2 = sum(v * v for v in x)
    return (math.lgamma(0.5 * (NU + d)) - math.lgamma(0.5 * NU)
            - 0.5 * d * math.log(NU * math.pi)
            - 0.5 * (NU + d) * math.log1p(r2 / NU))


def main():
    behaviour = sys.argv[1] if len(sys.argv) > 1 else "ok"
    hello = json.loads(sys.stdin.readline())
    assert hello["dim"] == 2 and len(hello["mode"]) == 2
    for line in sys.stdin:
        req = json.loads(line)
        pts = req["points"]
        if behaviour == "crash":
            sys.exit(7)
        logf = [log_t(p) for p in pts]
        if behaviour == "short":
            logf = logf[:-1]
        if behaviour == "zero-far":
            logf = [None if abs(p[0]) > 2.5 else v for p, v in zip(pts, logf)]
        sys.stdout.write(json.dumps({"id": req["id"], "logf": logf}) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
