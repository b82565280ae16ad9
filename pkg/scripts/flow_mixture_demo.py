#!/usr/bin/env python3
"""Train the 1-d flow on a two-Gaussian mixture and print sample statistics."""
import json
import sys

from taclang.flowpolicy import mixture_benchmark


def main() -> int:
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    report = mixture_benchmark(seed=seed)
    print(json.dumps(report, indent=1, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
