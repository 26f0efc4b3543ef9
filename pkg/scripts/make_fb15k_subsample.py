"""Cut a smaller FB15k: keep the N most frequent entities (default 3,000)
and every triple, in every split, whose head and tail both survive.

    python scripts/make_fb15k_subsample.py --root data --entities 3000
"""

from __future__ import annotations

import argparse
from collections import Counter
from pathlib import Path


def read(path: Path):
    with open(path, encoding="utf-8") as f:
        return [tuple(line.split()) for line in f if line.strip()]


def main(argv=None) -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--root", type=Path, default=Path("data"))
    ap.add_argument("--entities", type=int, default=3000)
    ap.add_argument("--out", default="fb15k_3k")
    args = ap.parse_args(argv)
    splits = {s: read(args.root / "fb15k" / f"{s}.txt") for s in ("train", "valid", "test")}
    counts = Counter()
    for h, _, t in splits["train"]:
        counts[h] += 1
        counts[t] += 1
    # ties broken by name so the cut is reproducible
    keep = {e for e, _ in sorted(counts.items(), key=lambda x: (-x[1], x[0]))[:args.entities]}
    out = args.root / args.out
    out.mkdir(parents=True, exist_ok=True)
    for s, triples in splits.items():
        kept = [x for x in triples if x[0] in keep and x[2] in keep]
        (out / f"{s}.txt").write_text("".join("\t".join(x) + "\n" for x in kept), encoding="utf-8")
        print(f"{s}: {len(kept)} of {len(triples)} triples")


if __name__ == "__main__":
    main()
