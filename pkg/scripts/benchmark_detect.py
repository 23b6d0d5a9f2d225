#!/usr/bin/env python3
"""Time detect_aliased_seabed on synthetic scenes of a given size."""
import argparse
import os
import statistics
import sys
import time

ROOT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT_DIR not in sys.path:
    sys.path.insert(0, ROOT_DIR)

from detect import detect_aliased_seabed
from detect_config import DetectionConfig
from synthetic import make_alias_scene


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=1000)
    ap.add_argument("--cols", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    bundle, _ = make_alias_scene(args.rows, args.cols, seed=0)
    cfg = DetectionConfig(workers=args.workers)
    timings = []
    for _ in range(max(1, args.repeat)):
        t0 = time.perf_counter()
        result = detect_aliased_seabed(bundle.echogram, bundle.angles, cfg=cfg)
        timings.append(time.perf_counter() - t0)

    print(
        f"{args.rows}x{args.cols} workers={args.workers}: "
        f"median {statistics.median(timings):.3f}s, min {min(timings):.3f}s, "
        f"cells={int(result.mask.bits.sum())}, T={result.t_used}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
