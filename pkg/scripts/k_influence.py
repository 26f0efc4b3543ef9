"""Epochs completed under a fixed time budget as the number of negatives grows.

    python scripts/k_influence.py --config fb15k_3k_dim50 --budget 300 --ks 1 10 100
    python scripts/k_influence.py --synthetic --budget 5
"""

from __future__ import annotations

import argparse

import numpy as np

from embedall.experiments import ExperimentConfig, k_influence
from embedall.samplers import TrainMode
from embedall.synthetic import encode, structured_kg, triple_records
from embedall.trainer import TrainConfig, train


def synthetic(ks, budget, dim=50):
    corpus, dic = encode(triple_records(structured_kg(100, 150, 50, 200_000, np.random.default_rng(0))), "triple")
    out = {}
    for k in ks:
        cfg = TrainConfig(mode=TrainMode("knowledge_graph"), dim=dim, k=k, epochs=1_000_000, time_budget=budget)
        out[k] = train(cfg, corpus, dic)[1].epochs_completed
    return out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="fb15k_3k_dim50")
    ap.add_argument("--synthetic", action="store_true", help="use a generated 15,000-entity graph")
    ap.add_argument("--budget", type=float, default=300.0)
    ap.add_argument("--ks", type=int, nargs="+", default=[1, 10, 100])
    args = ap.parse_args(argv)
    epochs = synthetic(args.ks, args.budget) if args.synthetic else \
        k_influence(ExperimentConfig.load(args.config), args.ks, args.budget)
    base = epochs[args.ks[0]]
    print(f"{'k':>6}{'epochs':>12}{'ratio':>10}")
    for k in args.ks:
        print(f"{k:>6}{epochs[k]:>12.3f}{base / epochs[k]:>10.2f}")


if __name__ == "__main__":
    main()
