"""Embedding parameters and the per-instance math: bag sums, similarity,
ranking losses, their analytic gradients, Adagrad and max-norm projection.

The ``_``-prefixed functions are numba kernels shared by the public helpers
below and by the hogwild training loop, so both paths run identical code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

SIMILARITIES = ("dot", "cosine")
LOSSES = ("margin", "softmax")
ADAGRAD_EPS = 1e-6
DEFAULT_MARGIN = 0.05


def sim_code(kind: str) -> int:
    try:
        return SIMILARITIES.index(kind)
    except ValueError:
        raise ValueError(f"unknown similarity {kind!r}; expected one of {SIMILARITIES}") from None


def loss_code(kind: str) -> int:
    try:
        return LOSSES.index(kind)
    except ValueError:
        raise ValueError(f"unknown loss {kind!r}; expected one of {LOSSES}") from None


# ---------------------------------------------------------------------------
# kernels


@njit(nogil=True, cache=True)
def _embed(M, ids, start, stop, norm_exp, out):
    """Sum rows ``M[ids[start:stop]]`` into ``out``; returns the scale applied."""
    d = out.shape[0]
    for c in range(d):
        out[c] = 0.0
    for j in range(start, stop):
        row = ids[j]
        for c in range(d):
            out[c] += M[row, c]
    n = stop - start
    scale = 1.0
    if norm_exp != 0.0 and n > 0:
        scale = 1.0 / n ** norm_exp
        for c in range(d):
            out[c] *= scale
    return scale


@njit(nogil=True, cache=True)
def _sim(x, y, kind):
    dot = 0.0
    for c in range(x.shape[0]):
        dot += x[c] * y[c]
    if kind == 0:
        return dot
    nx = 0.0
    ny = 0.0
    for c in range(x.shape[0]):
        nx += x[c] * x[c]
        ny += y[c] * y[c]
    denom = math.sqrt(nx) * math.sqrt(ny)
    if denom == 0.0:
        return 0.0
    return dot / denom


@njit(nogil=True, cache=True)
def _add_dsim(x, y, s, kind, coef, out):
    """out += coef * d sim(x, y) / dx."""
    d = x.shape[0]
    if kind == 0:
        for c in range(d):
            out[c] += coef * y[c]
        return
    nx2 = 0.0
    ny2 = 0.0
    for c in range(d):
        nx2 += x[c] * x[c]
        ny2 += y[c] * y[c]
    denom = math.sqrt(nx2) * math.sqrt(ny2)
    if denom == 0.0:
        return
    inv = 1.0 / denom
    for c in range(d):
        out[c] += coef * (y[c] * inv - s * x[c] / nx2)


@njit(nogil=True, cache=True)
def _margin_loss(pos, negs, n, margin):
    total = 0.0
    for i in range(n):
        h = margin - pos + negs[i]
        if h > 0.0:
            total += h
    return total


@njit(nogil=True, cache=True)
def _softmax_loss(pos, negs, n):
    m = pos
    for i in range(n):
        if negs[i] > m:
            m = negs[i]
    z = math.exp(pos - m)
    for i in range(n):
        z += math.exp(negs[i] - m)
    return m + math.log(z) - pos


@njit(nogil=True, cache=True)
def _forward(L, R, lhs, n_l, rhs, n_r, negf, negp, k, sim_kind, loss_kind, margin, norm_exp,
             vecs, scales, sims, dls):
    """Embed a, b, b-_1..b-_k into ``vecs`` rows 0, 1, 2..; fill sims and dL/dsim.

    ``sims[0]`` is sim(a, b); ``sims[1 + i]`` is sim(a, b-_i). Same layout for dls.
    Returns the instance loss.
    """
    scales[0] = _embed(L, lhs, 0, n_l, norm_exp, vecs[0])
    scales[1] = _embed(R, rhs, 0, n_r, norm_exp, vecs[1])
    sims[0] = _sim(vecs[0], vecs[1], sim_kind)
    for i in range(k):
        scales[2 + i] = _embed(R, negf, negp[i], negp[i + 1], norm_exp, vecs[2 + i])
        sims[1 + i] = _sim(vecs[0], vecs[2 + i], sim_kind)
    pos = sims[0]
    negs = sims[1:1 + k]
    if loss_kind == 0:
        loss = _margin_loss(pos, negs, k, margin)
        n_active = 0
        for i in range(k):
            if margin - pos + negs[i] > 0.0:
                dls[1 + i] = 1.0
                n_active += 1
            else:
                dls[1 + i] = 0.0
        dls[0] = -float(n_active)
    else:
        loss = _softmax_loss(pos, negs, k)
        m = pos
        for i in range(k):
            if negs[i] > m:
                m = negs[i]
        z = math.exp(pos - m)
        for i in range(k):
            z += math.exp(negs[i] - m)
        dls[0] = math.exp(pos - m) / z - 1.0
        for i in range(k):
            dls[1 + i] = math.exp(negs[i] - m) / z
    return loss


@njit(nogil=True, cache=True)
def _backward(vecs, sims, dls, k, sim_kind, grads):
    """Gradients of the loss w.r.t. the entity vectors a, b, b-_i."""
    d = vecs.shape[1]
    for e in range(k + 2):
        for c in range(d):
            grads[e, c] = 0.0
    if dls[0] != 0.0:
        _add_dsim(vecs[0], vecs[1], sims[0], sim_kind, dls[0], grads[0])
        _add_dsim(vecs[1], vecs[0], sims[0], sim_kind, dls[0], grads[1])
    for i in range(k):
        if dls[1 + i] != 0.0:
            _add_dsim(vecs[0], vecs[2 + i], sims[1 + i], sim_kind, dls[1 + i], grads[0])
            _add_dsim(vecs[2 + i], vecs[0], sims[1 + i], sim_kind, dls[1 + i], grads[2 + i])


@njit(nogil=True, cache=True)
def _scatter(lhs, n_l, rhs, n_r, negf, negp, k, dls, scales, grads, n_rows, merge_sides):
    """Aggregate entity gradients into per-row gradients.

    Returns (rows, sides, G): unique (side, row) pairs in ascending key order
    with side 0 = lhs matrix, 1 = rhs matrix. With ``merge_sides`` every row is
    reported on side 0 (one shared matrix). Entities with zero dL/dsim do not
    participate.
    """
    d = grads.shape[1]
    pos_active = dls[0] != 0.0
    total = 0
    if pos_active:
        total += n_l + n_r
    else:
        any_neg = False
        for i in range(k):
            if dls[1 + i] != 0.0:
                any_neg = True
        if any_neg:
            total += n_l
    for i in range(k):
        if dls[1 + i] != 0.0:
            total += negp[i + 1] - negp[i]
    keys = np.empty(total, np.int64)
    ents = np.empty(total, np.int64)
    j = 0
    if total > 0:
        for p in range(n_l):
            keys[j] = lhs[p]
            ents[j] = 0
            j += 1
    if pos_active:
        off = 0 if merge_sides else n_rows
        for p in range(n_r):
            keys[j] = rhs[p] + off
            ents[j] = 1
            j += 1
    for i in range(k):
        if dls[1 + i] != 0.0:
            off = 0 if merge_sides else n_rows
            for p in range(negp[i], negp[i + 1]):
                keys[j] = negf[p] + off
                ents[j] = 2 + i
                j += 1
    order = np.argsort(keys, kind="mergesort")
    n_unique = 0
    for q in range(total):
        if q == 0 or keys[order[q]] != keys[order[q - 1]]:
            n_unique += 1
    rows = np.empty(n_unique, np.int64)
    sides = np.empty(n_unique, np.int64)
    G = np.zeros((n_unique, d))
    u = -1
    for q in range(total):
        key = keys[order[q]]
        if q == 0 or key != keys[order[q - 1]]:
            u += 1
            if key >= n_rows:
                rows[u] = key - n_rows
                sides[u] = 1
            else:
                rows[u] = key
                sides[u] = 0
        e = ents[order[q]]
        s = scales[e]
        for c in range(d):
            G[u, c] += s * grads[e, c]
    return rows, sides, G


@njit(nogil=True, cache=True)
def _project_row(M, row, max_norm):
    if not max_norm < np.inf:
        return
    d = M.shape[1]
    n2 = 0.0
    for c in range(d):
        n2 += M[row, c] * M[row, c]
    if n2 > max_norm * max_norm:
        f = max_norm / math.sqrt(n2)
        for c in range(d):
            M[row, c] *= f


@njit(nogil=True, cache=True)
def _adagrad(L, R, accL, accR, rows, sides, G, lr, eps, max_norm):
    d = G.shape[1]
    for u in range(rows.shape[0]):
        row = rows[u]
        if sides[u] == 0:
            M = L
            acc = accL
        else:
            M = R
            acc = accR
        g2 = 0.0
        for c in range(d):
            g2 += G[u, c] * G[u, c]
        acc[row] += g2 / d
        step = lr / math.sqrt(acc[row] + eps)
        for c in range(d):
            M[row, c] -= step * G[u, c]
        _project_row(M, row, max_norm)


@njit(nogil=True, cache=True)
def _step(L, R, accL, accR, shared, lhs, n_l, rhs, n_r, negf, negp, k, sim_kind, loss_kind, margin,
          norm_exp, lr, max_norm, vecs, scales, sims, dls, grads):
    """One SGD step in place; returns the pre-update loss."""
    loss = _forward(L, R, lhs, n_l, rhs, n_r, negf, negp, k, sim_kind, loss_kind, margin, norm_exp,
                    vecs, scales, sims, dls)
    if loss == 0.0:
        return loss
    _backward(vecs, sims, dls, k, sim_kind, grads)
    rows, sides, G = _scatter(lhs, n_l, rhs, n_r, negf, negp, k, dls, scales, grads, L.shape[0], shared)
    _adagrad(L, R, accL, accR, rows, sides, G, lr, ADAGRAD_EPS, max_norm)
    return loss


def _workspace(k: int, dim: int):
    return (np.empty((k + 2, dim)), np.empty(k + 2), np.empty(k + 1), np.empty(k + 1), np.empty((k + 2, dim)))


# ---------------------------------------------------------------------------
# model


@dataclass
class EmbeddingModel:
    """D x d parameter matrices plus Adagrad state.

    With ``share_embeddings`` the rhs matrix and accumulator are the very same
    arrays as the lhs ones.
    """

    lhs: np.ndarray
    rhs: np.ndarray
    acc_lhs: np.ndarray
    acc_rhs: np.ndarray
    max_norm: float | None = 10.0
    sim: str = "cosine"
    loss: str = "margin"
    margin: float = DEFAULT_MARGIN
    norm_exponent: float = 0.0
    hyperparams: dict = field(default_factory=dict)

    @classmethod
    def initialize(
        cls,
        n_rows: int,
        dim: int,
        rng: np.random.Generator,
        share_embeddings: bool = True,
        dtype=np.float32,
        **kwargs,
    ) -> "EmbeddingModel":
        """Rows uniform in [-1/d, 1/d]."""
        bound = 1.0 / dim
        lhs = rng.uniform(-bound, bound, size=(n_rows, dim)).astype(dtype)
        acc_lhs = np.zeros(n_rows)
        if share_embeddings:
            rhs, acc_rhs = lhs, acc_lhs
        else:
            rhs = rng.uniform(-bound, bound, size=(n_rows, dim)).astype(dtype)
            acc_rhs = np.zeros(n_rows)
        return cls(lhs, rhs, acc_lhs, acc_rhs, **kwargs)

    @property
    def dim(self) -> int:
        return self.lhs.shape[1]

    @property
    def size(self) -> int:
        return self.lhs.shape[0]

    @property
    def share_embeddings(self) -> bool:
        return self.rhs is self.lhs

    @property
    def _radius(self) -> float:
        return np.inf if self.max_norm is None else float(self.max_norm)

    def matrix(self, side: str) -> np.ndarray:
        if side == "lhs":
            return self.lhs
        if side == "rhs":
            return self.rhs
        raise ValueError(f"side must be 'lhs' or 'rhs', got {side!r}")

    def copy(self) -> "EmbeddingModel":
        lhs = self.lhs.copy()
        acc_lhs = self.acc_lhs.copy()
        if self.share_embeddings:
            rhs, acc_rhs = lhs, acc_lhs
        else:
            rhs, acc_rhs = self.rhs.copy(), self.acc_rhs.copy()
        return EmbeddingModel(lhs, rhs, acc_lhs, acc_rhs, self.max_norm, self.sim, self.loss,
                              self.margin, self.norm_exponent, dict(self.hyperparams))


def _ids(features: Sequence[int], size: int) -> np.ndarray:
    arr = np.asarray(features, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() >= size):
        raise IndexError("feature id out of range")
    return arr


def embed_entity(features: Sequence[int], side: str, model: EmbeddingModel) -> np.ndarray:
    """Bag-of-features embedding: sum of the selected matrix's rows."""
    M = model.matrix(side)
    ids = _ids(features, model.size)
    out = np.zeros(model.dim)
    _embed(M, ids, 0, ids.size, float(model.norm_exponent), out)
    return out


def similarity(a: np.ndarray, b: np.ndarray, kind: str = "cosine") -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(_sim(a, b, sim_code(kind)))


def margin_loss(pos_sim: float, neg_sims: Sequence[float], margin: float = DEFAULT_MARGIN) -> float:
    """Sum over negatives of max(0, margin - pos_sim + neg_sim)."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    negs = np.asarray(neg_sims, dtype=np.float64)
    if negs.size == 0:
        raise ValueError("need at least one negative")
    return float(_margin_loss(float(pos_sim), negs, negs.size, float(margin)))


def softmax_loss(pos_sim: float, neg_sims: Sequence[float]) -> float:
    negs = np.asarray(neg_sims, dtype=np.float64)
    if negs.size == 0:
        raise ValueError("need at least one negative")
    return float(_softmax_loss(float(pos_sim), negs, negs.size))


def project_max_norm(row: np.ndarray, r: float) -> np.ndarray:
    if r <= 0:
        raise ValueError("radius must be positive")
    row = np.asarray(row, dtype=np.float64)
    n = float(np.linalg.norm(row))
    if n <= r:
        return row.copy()
    return row * (r / n)


@dataclass
class Gradients:
    """Sparse per-row gradients for each side of the similarity."""

    lhs: dict[int, np.ndarray] = field(default_factory=dict)
    rhs: dict[int, np.ndarray] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return bool(self.lhs or self.rhs)

    def merged(self) -> dict[int, np.ndarray]:
        out = {i: g.copy() for i, g in self.lhs.items()}
        for i, g in self.rhs.items():
            out[i] = out[i] + g if i in out else g.copy()
        return out


def _instance_arrays(instance, size: int):
    lhs = _ids(instance.lhs, size)
    rhs = _ids(instance.rhs_pos, size)
    negs = [_ids(n, size) for n in instance.rhs_negs]
    negp = np.zeros(len(negs) + 1, dtype=np.int64)
    negp[1:] = np.cumsum([n.size for n in negs])
    negf = np.concatenate(negs) if negs else np.zeros(0, np.int64)
    return lhs, rhs, negf, negp


def _resolve(model, sim, loss, margin):
    return (sim_code(sim or model.sim), loss_code(loss or model.loss),
            float(model.margin if margin is None else margin))


def instance_loss(instance, model: EmbeddingModel, sim: str | None = None, loss: str | None = None,
                  margin: float | None = None) -> float:
    """Loss of one training instance under the current parameters."""
    s, l, mu = _resolve(model, sim, loss, margin)
    lhs, rhs, negf, negp = _instance_arrays(instance, model.size)
    k = negp.size - 1
    vecs, scales, sims, dls, _ = _workspace(k, model.dim)
    return float(_forward(model.lhs, model.rhs, lhs, lhs.size, rhs, rhs.size, negf, negp, k, s, l, mu,
                          float(model.norm_exponent), vecs, scales, sims, dls))


def step_gradients(instance, model: EmbeddingModel, sim: str | None = None, loss: str | None = None,
                   margin: float | None = None) -> Gradients:
    """Analytic gradient of the instance loss w.r.t. every participating row.

    Rows are reported per side even when the matrices are shared; use
    :meth:`Gradients.merged` for the gradient w.r.t. a shared parameter row.
    """
    s, l, mu = _resolve(model, sim, loss, margin)
    lhs, rhs, negf, negp = _instance_arrays(instance, model.size)
    if lhs.size == 0 or rhs.size == 0:
        raise ValueError("instance needs nonempty lhs and rhs")
    k = negp.size - 1
    vecs, scales, sims, dls, grads = _workspace(k, model.dim)
    value = _forward(model.lhs, model.rhs, lhs, lhs.size, rhs, rhs.size, negf, negp, k, s, l, mu,
                     float(model.norm_exponent), vecs, scales, sims, dls)
    out = Gradients()
    if value == 0.0:
        return out
    _backward(vecs, sims, dls, k, s, grads)
    rows, sides, G = _scatter(lhs, lhs.size, rhs, rhs.size, negf, negp, k, dls, scales, grads,
                              model.size, False)
    for row, side, g in zip(rows, sides, G):
        (out.lhs if side == 0 else out.rhs)[int(row)] = g.copy()
    return out


def adagrad_apply(model: EmbeddingModel, gradients: Gradients, base_lr: float) -> EmbeddingModel:
    """In-place Adagrad update (per-row scalar accumulator) followed by max-norm."""
    if base_lr <= 0:
        raise ValueError("learning rate must be positive")
    if model.share_embeddings:
        items = sorted(gradients.merged().items())
        sides = np.zeros(len(items), dtype=np.int64)
    else:
        items = sorted(gradients.lhs.items()) + sorted(gradients.rhs.items())
        sides = np.array([0] * len(gradients.lhs) + [1] * len(gradients.rhs), dtype=np.int64)
    if not items:
        return model
    rows = np.array([i for i, _ in items], dtype=np.int64)
    G = np.array([g for _, g in items], dtype=np.float64).reshape(len(items), model.dim)
    _adagrad(model.lhs, model.rhs, model.acc_lhs, model.acc_rhs, rows, sides, G, float(base_lr),
             ADAGRAD_EPS, model._radius)
    return model
