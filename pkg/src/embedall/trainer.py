"""Outer SGD loop: epochs, hogwild worker threads, learning-rate decay,
time budget, validation and progress reporting."""

from __future__ import annotations

import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .dictionary import Dictionary
from .model_core import (
    DEFAULT_MARGIN,
    EmbeddingModel,
    _forward,
    _step,
    _workspace,
    _instance_arrays,
    loss_code,
    sim_code,
)
from .samplers import Corpus, Sampler, TrainingInstance, TrainMode, _make_instance

LR_FLOOR = 1e-5
VALIDATION_SEED = 20170912
MAX_CHUNK = 8192
BUDGET_CHUNK = 1024  # finer pieces so a time budget is checked often


@dataclass
class TrainConfig:
    epochs: int = 5
    base_lr: float = 0.05
    k: int = 10
    threads: int = 1
    seed: int = 0
    mode: TrainMode = field(default_factory=lambda: TrainMode("classification"))
    loss: str = "margin"
    margin: float = DEFAULT_MARGIN
    sim: str = "cosine"
    dim: int = 10
    max_norm: float | None = 10.0
    p_drop: float = 0.0
    time_budget: float | None = None
    validation_fraction: float = 0.0
    constant_lr: bool = False
    norm_exponent: float = 0.0
    share_embeddings: bool = True
    dtype: str = "float32"
    verbose: bool = False

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = TrainMode.parse(self.mode)
        sim_code(self.sim)
        loss_code(self.loss)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.max_norm is not None and self.max_norm <= 0:
            raise ValueError("max_norm must be positive (None = unbounded)")
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError("p_drop must be in [0, 1)")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")
        if self.time_budget is not None and self.time_budget <= 0:
            self.time_budget = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = {"spec": str(self.mode), "window": self.mode.window,
                     "max_distance": self.mode.max_distance}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        m = d.pop("mode")
        d["mode"] = TrainMode.parse(m["spec"], m["window"], m["max_distance"])
        return cls(**d)


@dataclass
class TrainReport:
    epochs_completed: float
    final_mean_loss: float
    examples_per_second: float
    epoch_losses: list[float] = field(default_factory=list)
    validation_losses: list[float] = field(default_factory=list)
    steps: int = 0
    skipped_records: int = 0
    seconds: float = 0.0


def learning_rate(t: int, total: int, base_lr: float, constant: bool = False) -> float:
    """Linear decay base_lr * (1 - t/total), floored at LR_FLOOR * base_lr."""
    if constant:
        return base_lr
    return max(base_lr * (1.0 - t / total), LR_FLOOR * base_lr)


@njit(nogil=True, cache=True)
def _run_chunk(L, R, accL, accR, shared, codes, windows, maxds, cumw, feats, ent_ptr, rec_ptr,
               ent_label, elig_flat, elig_ptr, order, t0, stride, total, base_lr, constant_lr, k,
               p_drop, sim_kind, loss_kind, margin, norm_exp, max_norm, rng, cap, update):
    """Run instances for ``order``; returns (loss sum, steps, degenerate draws, last lr)."""
    lhs = np.empty(cap, np.int64)
    rhs = np.empty(cap, np.int64)
    negf = np.empty(k * cap, np.int64)
    negp = np.zeros(k + 1, np.int64)
    tmp_l = np.empty(cap, np.int64)
    tmp_r = np.empty(cap, np.int64)
    tmp_n = np.empty(k * cap, np.int64)
    d = L.shape[1]
    vecs = np.empty((k + 2, d))
    scales = np.empty(k + 2)
    sims = np.empty(k + 1)
    dls = np.empty(k + 1)
    grads = np.empty((k + 2, d))
    loss_sum = 0.0
    steps = 0
    degenerate = 0
    lr = base_lr
    for i in range(order.shape[0]):
        if not constant_lr:
            t = t0 + i * stride
            lr = max(base_lr * (1.0 - t / total), 1e-5 * base_lr)
        nl, nr = _make_instance(codes, windows, maxds, cumw, feats, ent_ptr, rec_ptr, ent_label,
                                elig_flat, elig_ptr, order[i], k, p_drop, rng, lhs, rhs, negf, negp,
                                tmp_l, tmp_r, tmp_n)
        if nl < 0:
            degenerate += 1
            continue
        if update:
            loss = _step(L, R, accL, accR, shared, lhs, nl, rhs, nr, negf, negp, k, sim_kind,
                         loss_kind, margin, norm_exp, lr, max_norm, vecs, scales, sims, dls, grads)
        else:
            loss = _forward(L, R, lhs, nl, rhs, nr, negf, negp, k, sim_kind, loss_kind, margin,
                            norm_exp, vecs, scales, sims, dls)
        loss_sum += loss
        steps += 1
    return loss_sum, steps, degenerate, lr


def _init_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 1])


def thread_rng(seed: int, thread: int) -> np.random.Generator:
    return np.random.default_rng((seed + thread) & 0xFFFFFFFFFFFFFFFF)


def init_model(config: TrainConfig, n_rows: int) -> EmbeddingModel:
    return EmbeddingModel.initialize(
        n_rows, config.dim, _init_rng(config.seed), share_embeddings=config.share_embeddings,
        dtype=np.dtype(config.dtype), max_norm=config.max_norm, sim=config.sim, loss=config.loss,
        margin=config.margin, norm_exponent=config.norm_exponent, hyperparams=config.to_dict(),
    )


def split_validation(corpus: Corpus, fraction: float, seed: int) -> tuple[Corpus, Corpus | None]:
    if fraction <= 0:
        return corpus, None
    perm = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 2]).permutation(len(corpus))
    n_val = max(1, int(round(fraction * len(corpus))))
    return corpus.subset(np.sort(perm[n_val:])), corpus.subset(np.sort(perm[:n_val]))


def train(config: TrainConfig, corpus: Corpus, dictionary: Dictionary | int,
          model: EmbeddingModel | None = None) -> tuple[EmbeddingModel, TrainReport]:
    """Train embeddings on ``corpus``; ``dictionary`` may also be a plain row count."""
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    n_rows = dictionary if isinstance(dictionary, int) else dictionary.size
    train_corpus, held_out = split_validation(corpus, config.validation_fraction, config.seed)
    sampler = Sampler(config.mode, train_corpus)
    trainable = sampler.trainable()
    if trainable.size == 0:
        raise ValueError("no trainable records")
    if model is None:
        model = init_model(config, n_rows)
    elif model.size != n_rows:
        raise ValueError("model rows do not match the dictionary")

    n = trainable.size
    total = config.epochs * n
    threads = config.threads
    shards = [trainable[j::threads] for j in range(threads)]
    rngs = [thread_rng(config.seed, j) for j in range(threads)]
    args = dict(
        codes=sampler.codes, windows=sampler.windows, maxds=sampler.maxds, cumw=sampler.cumw,
        elig_flat=sampler.elig_flat, elig_ptr=sampler.elig_ptr,
        sim_kind=sim_code(config.sim), loss_kind=loss_code(config.loss),
    )
    feats, ent_ptr, rec_ptr, ent_label = train_corpus.arrays()
    radius = np.inf if config.max_norm is None else float(config.max_norm)

    def work(j: int, order: np.ndarray, epoch: int, offset: int):
        return _run_chunk(
            model.lhs, model.rhs, model.acc_lhs, model.acc_rhs, model.share_embeddings,
            args["codes"], args["windows"], args["maxds"], args["cumw"], feats, ent_ptr, rec_ptr,
            ent_label, args["elig_flat"], args["elig_ptr"], order,
            epoch * n + offset * threads + j, threads, total, float(config.base_lr),
            config.constant_lr, config.k, float(config.p_drop), args["sim_kind"], args["loss_kind"],
            float(config.margin), float(config.norm_exponent), radius, rngs[j], sampler.cap, True,
        )

    report = TrainReport(0.0, float("nan"), 0.0, skipped_records=len(train_corpus) - n)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    work(0, trainable[:0], 0, 0)  # compile (or load from cache) before the clock starts
    start = time.perf_counter()
    steps_done = 0
    draws_done = 0
    out_of_time = False
    lr = config.base_lr
    piece = MAX_CHUNK if config.time_budget is None else BUDGET_CHUNK
    try:
        for epoch in range(config.epochs):
            orders = [rng.permutation(shard) for rng, shard in zip(rngs, shards)]
            ep_loss, ep_steps = 0.0, 0
            tenth_loss, tenth_steps = 0.0, 0
            for q in range(10):
                bounds = [(len(o) * q // 10, len(o) * (q + 1) // 10) for o in orders]
                longest = max(b - a for a, b in bounds)
                for s in range(0, longest, piece):
                    jobs = []
                    for j, (a, b) in enumerate(bounds):
                        lo, hi = a + s, min(a + s + piece, b)
                        if lo < hi:
                            jobs.append((j, orders[j][lo:hi], epoch, lo))
                    if pool is None:
                        results = [work(*job) for job in jobs]
                    else:
                        results = list(pool.map(lambda job: work(*job), jobs))
                    for loss_sum, steps, degenerate, last_lr in results:
                        tenth_loss += loss_sum
                        tenth_steps += steps
                        draws_done += steps + degenerate
                        lr = last_lr
                    if config.time_budget is not None and time.perf_counter() - start >= config.time_budget:
                        out_of_time = True
                        break
                ep_loss += tenth_loss
                ep_steps += tenth_steps
                if config.verbose and (tenth_steps or out_of_time):
                    elapsed = max(time.perf_counter() - start, 1e-9)
                    print(f"epoch {draws_done / n:.1f} lr {lr:.6f} loss "
                          f"{tenth_loss / max(tenth_steps, 1):.6f} ex/s {draws_done / elapsed:.0f}",
                          file=sys.stderr)
                tenth_loss, tenth_steps = 0.0, 0
                if out_of_time:
                    break
            steps_done += ep_steps
            if ep_steps:
                report.epoch_losses.append(ep_loss / ep_steps)
            if held_out is not None:
                report.validation_losses.append(
                    validate(model, held_out, config.mode, config.sim, config.loss, config.k, config.margin))
            if out_of_time:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    elapsed = time.perf_counter() - start
    report.epochs_completed = min(draws_done / n, float(config.epochs))
    report.final_mean_loss = report.epoch_losses[-1] if report.epoch_losses else float("nan")
    report.examples_per_second = draws_done / max(elapsed, 1e-9)
    report.steps = steps_done
    report.seconds = elapsed
    return model, report


def train_step(model: EmbeddingModel, instance: TrainingInstance, lr: float, sim: str | None = None,
               loss: str | None = None, margin: float | None = None) -> float:
    """One Adagrad step on ``instance`` in place; returns the pre-update loss."""
    s = sim_code(sim or model.sim)
    l = loss_code(loss or model.loss)
    mu = float(model.margin if margin is None else margin)
    lhs, rhs, negf, negp = _instance_arrays(instance, model.size)
    k = negp.size - 1
    vecs, scales, sims, dls, grads = _workspace(k, model.dim)
    radius = np.inf if model.max_norm is None else float(model.max_norm)
    return float(_step(model.lhs, model.rhs, model.acc_lhs, model.acc_rhs, model.share_embeddings,
                       lhs, lhs.size, rhs, rhs.size, negf, negp, k, s, l, mu,
                       float(model.norm_exponent), float(lr), radius, vecs, scales, sims, dls, grads))


def validate(model: EmbeddingModel, held_out: Corpus, mode: TrainMode, sim: str | None = None,
             loss: str | None = None, k: int = 10, margin: float | None = None,
             seed: int = VALIDATION_SEED) -> float:
    """Mean instance loss over ``held_out`` with dropout off and a fixed seed.

    Negatives are drawn from ``held_out`` itself.
    """
    if len(held_out) == 0:
        raise ValueError("empty held-out set")
    sampler = Sampler(mode, held_out)
    records = sampler.trainable()
    if records.size == 0:
        raise ValueError("no trainable records in held-out set")
    feats, ent_ptr, rec_ptr, ent_label = held_out.arrays()
    loss_sum, steps, _, _ = _run_chunk(
        model.lhs, model.rhs, model.acc_lhs, model.acc_rhs, model.share_embeddings,
        sampler.codes, sampler.windows, sampler.maxds, sampler.cumw, feats, ent_ptr, rec_ptr,
        ent_label, sampler.elig_flat, sampler.elig_ptr, records, 0, 1, 1, 1.0, True, k, 0.0,
        sim_code(sim or model.sim), loss_code(loss or model.loss),
        float(model.margin if margin is None else margin), float(model.norm_exponent), np.inf,
        np.random.default_rng(seed), sampler.cap, False,
    )
    return loss_sum / max(steps, 1)
