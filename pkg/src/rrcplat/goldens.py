"""Golden test vectors shared with the web client.

The browser editor solves the same 8-unknown rectification system the
server does; these vectors keep the two implementations in lockstep.
Run: python -m rrcplat.goldens --count 1000 -o golden_homography.json
"""

from __future__ import annotations

import argparse
import json
import math
import random
from pathlib import Path

from .geometry import canonicalize_quad, rectification_homography, warp_sample


def _random_quad(rng: random.Random) -> list[float]:
    while True:
        cx = rng.uniform(0, 1200)
        cy = rng.uniform(0, 800)
        base = rng.uniform(0, math.tau)
        gaps = [rng.uniform(0.35, 1.0) for _ in range(4)]
        total = sum(gaps)
        flat: list[float] = []
        acc = base
        for g in gaps:
            r = rng.uniform(8, 280)
            flat.extend((cx + r * math.cos(acc), cy + r * math.sin(acc)))
            acc += g / total * math.tau
        try:
            return [round(v, 4) for v in canonicalize_quad(flat).flat()]
        except Exception:
            continue


def generate(count: int, seed: int = 20260809) -> list[dict]:
    rng = random.Random(seed)
    vectors = []
    for _ in range(count):
        flat = _random_quad(rng)
        quad = canonicalize_quad(flat)
        out_w = rng.randrange(16, 400)
        out_h = rng.randrange(16, 200)
        h = rectification_homography(quad, out_w, out_h)
        mid = ((quad.corners[0][0] + quad.corners[1][0]) / 2,
               (quad.corners[0][1] + quad.corners[1][1]) / 2)
        vectors.append(
            {
                "quad": flat,
                "out_w": out_w,
                "out_h": out_h,
                "homography": [list(row) for row in h.m],
                "top_mid_mapped": list(warp_sample(h, mid)),
            }
        )
    return vectors


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--count", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=20260809)
    parser.add_argument("-o", "--out", required=True)
    args = parser.parse_args(argv)
    data = generate(args.count, args.seed)
    Path(args.out).write_text(json.dumps(data) + "\n", encoding="utf-8")
    print(f"wrote {len(data)} vectors to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
