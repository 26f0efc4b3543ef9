"""Run one or more reproduction configs and write a results JSON per run.

    python scripts/reproduce.py ag_news_ngrams1 fb15k_dim50 [--lr-grid] [--out results]
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from embedall.experiments import ExperimentConfig, data_root, run_classification, run_link_prediction


def main(argv=None) -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("configs", nargs="+", help="config names under scripts/configs or JSON paths")
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--lr-grid", action="store_true", help="sweep the config's lr_grid and keep the best")
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    for name in args.configs:
        cfg = ExperimentConfig.load(name)
        if not cfg.available():
            print(f"{cfg.name}: dataset missing under {data_root()}; see scripts/prepare_datasets.py")
            continue
        runner = run_classification if cfg.task == "classification" else run_link_prediction
        key = "accuracy" if cfg.task == "classification" else "filtered_hits10"
        lrs = cfg.lr_grid if args.lr_grid and cfg.lr_grid else [cfg.train.get("base_lr", 0.05)]
        runs = [runner(cfg, base_lr=lr) for lr in lrs]
        for r in runs:
            print(f"{cfg.name} lr={r['config']['train']['base_lr']}: {key}={r[key]:.4f} "
                  f"({r['train_seconds']:.0f}s)")
        best = max(runs, key=lambda r: r[key])
        best["lr_sweep"] = {str(r["config"]["train"]["base_lr"]): r[key] for r in runs}
        (args.out / f"{cfg.name}.json").write_text(json.dumps(best, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
