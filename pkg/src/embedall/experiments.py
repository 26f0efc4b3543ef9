"""Reproduction runs on public datasets, driven by JSON configs.

Datasets live under a data root (``$EMBEDALL_DATA``, default ``./data``) in
the layout produced by ``scripts/prepare_datasets.py``::

    ag_news/{train,test}.txt        labeled_text
    dbpedia/{train,test}.txt        labeled_text
    yelp15/{train,test}.txt         labeled_text
    fb15k/{train,valid,test}.txt    triple
    fb15k_3k/{train,valid,test}.txt triple (3,000-entity subsample)
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .evaluator import KgEvalConfig, evaluate_classification, evaluate_link_prediction, kg_triples
from .io_formats import kg_entity_ids, load_corpus, load_known_triples
from .samplers import TrainMode
from .trainer import TrainConfig, train

CONFIG_DIR = Path(__file__).resolve().parents[2] / "scripts" / "configs"


def data_root() -> Path:
    return Path(os.environ.get("EMBEDALL_DATA", "data"))


@dataclass
class ExperimentConfig:
    name: str
    task: str                      # "classification" or "link_prediction"
    dataset: str                   # directory under the data root
    fmt: str = "labeled_text"
    ngrams: int = 1
    bucket: int = 2_000_000
    min_count: int = 1
    lowercase: bool = False
    train: dict = field(default_factory=dict)   # TrainConfig fields; "mode" as a string
    lr_grid: list[float] = field(default_factory=list)

    @classmethod
    def load(cls, path_or_name: str | Path) -> "ExperimentConfig":
        p = Path(path_or_name)
        if not p.suffix:
            p = CONFIG_DIR / f"{p}.json"
        return cls(**json.loads(p.read_text()))

    def train_config(self, **override) -> TrainConfig:
        kw = dict(self.train)
        kw.update(override)
        mode = kw.pop("mode", "classification")
        return TrainConfig(mode=TrainMode.parse(mode, kw.pop("window", 2), kw.pop("max_distance", None)), **kw)

    def paths(self, root: Path | None = None) -> dict[str, Path]:
        base = (root or data_root()) / self.dataset
        splits = ("train", "valid", "test") if self.task == "link_prediction" else ("train", "test")
        return {s: base / f"{s}.txt" for s in splits}

    def available(self, root: Path | None = None) -> bool:
        return all(p.is_file() for p in self.paths(root).values())


def run_classification(cfg: ExperimentConfig, root: Path | None = None, **override) -> dict:
    paths = cfg.paths(root)
    t0 = time.perf_counter()
    corpus, dic = load_corpus(paths["train"], cfg.fmt, "build", min_count=cfg.min_count,
                              ngram_order=cfg.ngrams, bucket_count=cfg.bucket, lowercase=cfg.lowercase)
    test, _ = load_corpus(paths["test"], cfg.fmt, dic, lowercase=cfg.lowercase)
    tc = cfg.train_config(**override)
    model, report = train(tc, corpus, dic)
    train_seconds = time.perf_counter() - t0
    acc = evaluate_classification(model, test, dic.label_ids())
    return {
        "name": cfg.name, "accuracy": acc, "train_records": len(corpus), "test_records": len(test),
        "train_seconds": train_seconds, "total_seconds": time.perf_counter() - t0,
        "epochs_completed": report.epochs_completed, "final_mean_loss": report.final_mean_loss,
        "config": asdict(cfg) | {"train": tc.to_dict()},
    }


def run_link_prediction(cfg: ExperimentConfig, root: Path | None = None, **override) -> dict:
    """Train on the train split and report raw and filtered metrics on test;
    the filter set is train + valid + test."""
    paths = cfg.paths(root)
    t0 = time.perf_counter()
    corpus, dic = load_corpus(paths["train"], "triple", "build")
    test, _ = load_corpus(paths["test"], "triple", dic)
    tc = cfg.train_config(**override)
    model, report = train(tc, corpus, dic)
    train_seconds = time.perf_counter() - t0
    known = load_known_triples([paths["train"], paths["valid"], paths["test"]], dic)
    ents = kg_entity_ids(dic)
    triples = kg_triples(test)
    raw = evaluate_link_prediction(model, triples, ents, KgEvalConfig("raw", known))
    filt = evaluate_link_prediction(model, triples, ents, KgEvalConfig("filtered", known))
    return {
        "name": cfg.name, "raw_hits10": raw.hits_at[10], "raw_mean_rank": raw.mean_rank,
        "filtered_hits10": filt.hits_at[10], "filtered_mean_rank": filt.mean_rank,
        "entities": int(ents.size), "train_records": len(corpus), "test_records": len(test),
        "epochs_completed": report.epochs_completed, "train_seconds": train_seconds,
        "total_seconds": time.perf_counter() - t0, "config": asdict(cfg) | {"train": tc.to_dict()},
    }


def k_influence(cfg: ExperimentConfig, ks, budget_seconds: float, root: Path | None = None) -> dict[int, float]:
    """Epochs completed within a fixed wall-clock budget for each k."""
    corpus, dic = load_corpus(cfg.paths(root)["train"], "triple", "build")
    out = {}
    for k in ks:
        tc = cfg.train_config(k=int(k), epochs=1_000_000, time_budget=budget_seconds)
        _, report = train(tc, corpus, dic)
        out[int(k)] = report.epochs_completed
    return out
