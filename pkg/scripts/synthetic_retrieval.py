"""Planted-cluster sentence retrieval: 20 clusters x 50 documents, each query
ranked against 999 sentences from other clusters.

    python scripts/synthetic_retrieval.py [--mode sentence_embedding] [--dim 20] [--epochs 5]
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from checks import sentence_retrieval  # noqa: E402


def main(argv=None) -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--mode", default="sentence_embedding")
    ap.add_argument("--dim", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    random, trained, _, ex = sentence_retrieval(args.seed, args.dim, args.epochs, args.mode,
                                                labels=args.mode.startswith("multitask"))
    print("random model")
    print(random.table())
    print(f"trained model ({ex['train_report'].seconds:.1f}s)")
    print(trained.table())


if __name__ == "__main__":
    main()
