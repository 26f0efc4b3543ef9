"""Ranking metrics: candidate ranking, classification accuracy, the raw and
filtered link-prediction protocol, and nearest-neighbour lookup.

Ranks are optimistic: a target's rank is 1 + the number of candidates with a
strictly greater score, so ties never hurt it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .dictionary import Dictionary
from .model_core import EmbeddingModel, _embed, _ids, _sim, embed_entity, sim_code, similarity
from .samplers import Corpus

HITS_AT = (1, 10, 20)
BATCH = 256


@dataclass
class RankingReport:
    hits_at: dict[int, float]
    mean_rank: float
    num_queries: int
    per_query_ranks: list[int] = field(default_factory=list)

    @classmethod
    def from_ranks(cls, ranks: Iterable[int]) -> "RankingReport":
        r = np.asarray(list(ranks), dtype=np.int64)
        if r.size == 0:
            raise ValueError("no queries to report on")
        return cls({k: float(np.mean(r <= k)) for k in HITS_AT}, float(r.mean()), int(r.size), r.tolist())

    def tsv(self) -> str:
        """``hits@1 hits@10 hits@20 mean_rank n`` as one tab-separated line."""
        return "\t".join([*(f"{self.hits_at[k]:.6f}" for k in HITS_AT), f"{self.mean_rank:.4f}",
                          str(self.num_queries)])

    def table(self) -> str:
        lines = [f"{'metric':<10}{'value':>12}"]
        lines += [f"{f'hits@{k}':<10}{self.hits_at[k]:>12.4%}" for k in HITS_AT]
        lines += [f"{'mean rank':<10}{self.mean_rank:>12.2f}", f"{'queries':<10}{self.num_queries:>12d}"]
        return "\n".join(lines)


def _scores(Q: np.ndarray, C: np.ndarray, sim: str) -> np.ndarray:
    """Similarity of every row of Q (m x d) against every row of C (n x d).

    Cosine divides the raw dot products by the norm product (rather than
    normalising first) so exact ties stay exact, as in the scalar kernel.
    """
    dots = Q @ C.T
    if sim == "dot":
        return dots
    if sim != "cosine":
        raise ValueError(f"unknown similarity {sim!r}")
    denom = np.sqrt(np.einsum("ij,ij->i", Q, Q))[:, None] * np.sqrt(np.einsum("ij,ij->i", C, C))[None, :]
    return np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)


def _bag_matrix(model: EmbeddingModel, side: str, bags: Sequence[Sequence[int]]) -> np.ndarray:
    M = model.matrix(side)
    out = np.zeros((len(bags), model.dim))
    for i, bag in enumerate(bags):
        ids = _ids(bag, model.size)
        if ids.size:
            out[i] = M[ids].sum(axis=0, dtype=np.float64)
            if model.norm_exponent:
                out[i] /= ids.size ** model.norm_exponent
    return out


@njit(cache=True)
def _score_bags(M, flat, ptr, q, kind, norm_exp):
    n = ptr.shape[0] - 1
    out = np.empty(n)
    v = np.empty(q.shape[0])
    for i in range(n):
        _embed(M, flat, ptr[i], ptr[i + 1], norm_exp, v)
        out[i] = _sim(q, v, kind)
    return out


def rank_candidates(model: EmbeddingModel, query: Sequence[int], candidates: Sequence[Sequence[int]],
                    sim: str | None = None, target: int = 0) -> tuple[list[int], int]:
    """Candidate indices by descending similarity to the lhs-embedded query,
    plus the optimistic rank of ``candidates[target]``."""
    if not candidates:
        raise ValueError("no candidates")
    if not 0 <= target < len(candidates):
        raise IndexError("target index out of range")
    q = embed_entity(query, "lhs", model)
    flat = _ids([f for c in candidates for f in c], model.size)
    ptr = np.zeros(len(candidates) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(c) for c in candidates])
    scores = _score_bags(model.rhs, flat, ptr, q, sim_code(sim or model.sim), float(model.norm_exponent))
    order = np.argsort(-scores, kind="stable")
    rank = 1 + int(np.sum(scores > scores[target]))
    return order.tolist(), rank


def classification_scores(model: EmbeddingModel, test: Corpus, label_ids: Sequence[int],
                          sim: str | None = None) -> np.ndarray:
    sim = sim or model.sim
    docs = []
    for rec in test:
        docs.append([f for e, m in zip(rec.entities, rec.label_mask or (False,) * len(rec.entities))
                     if not m for f in e])
    D = _bag_matrix(model, "lhs", docs)
    labels = model.rhs[np.asarray(label_ids, dtype=np.int64)].astype(np.float64)
    return _scores(D, labels, sim)


def evaluate_classification(model: EmbeddingModel, test: Corpus, label_ids: Sequence[int],
                            sim: str | None = None) -> float:
    """Fraction of records whose top-scoring label is one of their gold labels.

    Ties go to the lowest label id.
    """
    label_ids = np.unique(np.asarray(label_ids, dtype=np.int64))
    if label_ids.size == 0:
        raise ValueError("no candidate labels")
    gold = [set(rec.labels()) for rec in test]
    if any(not g for g in gold):
        raise ValueError("unlabeled test record")
    if not gold:
        raise ValueError("empty test set")
    pred = label_ids[np.argmax(classification_scores(model, test, label_ids, sim), axis=1)]
    return float(np.mean([p in g for p, g in zip(pred.tolist(), gold)]))


def predict_labels(model: EmbeddingModel, doc_ids: Sequence[int], label_ids: Sequence[int], top_k: int = 1,
                   sim: str | None = None) -> list[tuple[int, float]]:
    label_ids = np.unique(np.asarray(label_ids, dtype=np.int64))
    if len(doc_ids) == 0 or label_ids.size == 0:
        return []
    s = _scores(embed_entity(doc_ids, "lhs", model)[None, :],
                model.rhs[label_ids].astype(np.float64), sim or model.sim)[0]
    order = np.argsort(-s, kind="stable")[:top_k]
    return [(int(label_ids[i]), float(s[i])) for i in order]


# ---------------------------------------------------------------------------
# link prediction


@dataclass
class KgEvalConfig:
    """``known_triples`` holds (h, r, t) with r the relation's lhs-role id."""

    protocol: str = "filtered"
    known_triples: set[tuple[int, int, int]] | None = None

    def __post_init__(self):
        if self.protocol not in ("raw", "filtered"):
            raise ValueError("protocol must be 'raw' or 'filtered'")


def kg_triples(corpus: Corpus) -> np.ndarray:
    """(n, 4) array of [h, r@lhs, r@rhs, t] ids from a triple corpus."""
    sizes = np.diff(corpus.rec_ptr)
    if np.any(sizes != 4) or np.any(np.diff(corpus.ent_ptr) != 1):
        raise ValueError("corpus is not a triple corpus")
    return corpus.feats.reshape(-1, 4).copy()


def _filter_index(known: Iterable[tuple[int, int, int]]):
    tails: dict[tuple[int, int], set[int]] = {}
    heads: dict[tuple[int, int], set[int]] = {}
    for h, r, t in known:
        tails.setdefault((h, r), set()).add(t)
        heads.setdefault((r, t), set()).add(h)
    return heads, tails


def _kg_ranks(scores: np.ndarray, target_pos: np.ndarray, drop: list[np.ndarray]) -> np.ndarray:
    target = scores[np.arange(scores.shape[0]), target_pos]
    better = scores > target[:, None]
    for i, cols in enumerate(drop):
        if cols.size:
            better[i, cols] = False
    return 1 + better.sum(axis=1)


def evaluate_link_prediction(model: EmbeddingModel, test_triples: np.ndarray, entity_ids: Sequence[int],
                             cfg: KgEvalConfig, sim: str | None = None) -> RankingReport:
    """Head and tail corruption ranks over all entities, aggregated.

    Tail corruption scores sim({h, r@lhs}, {t'}); head corruption scores
    sim({h'}, {r@rhs, t}). The filtered protocol ignores substitutions that
    form a known triple other than the test triple itself.
    """
    sim = sim or model.sim
    triples = np.asarray(test_triples, dtype=np.int64).reshape(-1, 4)
    ents = np.asarray(entity_ids, dtype=np.int64)
    pos = {int(e): i for i, e in enumerate(ents)}
    if cfg.protocol == "filtered":
        if cfg.known_triples is None:
            raise ValueError("filtered protocol needs known_triples")
        heads, tails = _filter_index(cfg.known_triples)
    p = model.norm_exponent
    cand_l = model.lhs[ents].astype(np.float64)
    cand_r = model.rhs[ents].astype(np.float64)
    L = model.lhs.astype(np.float64, copy=False)
    R = model.rhs.astype(np.float64, copy=False)
    ranks = []
    for b0 in range(0, triples.shape[0], BATCH):
        chunk = triples[b0:b0 + BATCH]
        h, rl, rr, t = chunk.T
        scale2 = 1.0 / 2 ** p if p else 1.0
        tq = (L[h] + L[rl]) * scale2
        hq = (R[rr] + R[t]) * scale2
        try:
            t_pos = np.array([pos[int(x)] for x in t])
            h_pos = np.array([pos[int(x)] for x in h])
        except KeyError as e:
            raise ValueError(f"test triple entity {e.args[0]} is not a candidate entity") from None
        tail_scores = _scores(tq, cand_r, sim)
        head_scores = _scores(hq, cand_l, sim)
        t_drop: list[np.ndarray] = []
        h_drop: list[np.ndarray] = []
        for hi, ri, ti in zip(h.tolist(), rl.tolist(), t.tolist()):
            if cfg.protocol == "filtered":
                t_drop.append(np.array([pos[x] for x in tails.get((hi, ri), ()) if x != ti and x in pos],
                                       dtype=np.int64))
                h_drop.append(np.array([pos[x] for x in heads.get((ri, ti), ()) if x != hi and x in pos],
                                       dtype=np.int64))
            else:
                t_drop.append(np.zeros(0, np.int64))
                h_drop.append(np.zeros(0, np.int64))
        tr = _kg_ranks(tail_scores, t_pos, t_drop)
        hr = _kg_ranks(head_scores, h_pos, h_drop)
        for a, b in zip(hr.tolist(), tr.tolist()):
            ranks.extend((a, b))
    return RankingReport.from_ranks(ranks)


def brute_force_link_ranks(model: EmbeddingModel, triple: Sequence[int], entity_ids: Sequence[int],
                           cfg: KgEvalConfig, sim: str | None = None) -> tuple[int, int]:
    """(head rank, tail rank) of one triple by explicit enumeration; slow reference."""
    sim = sim or model.sim
    h, rl, rr, t = (int(x) for x in triple)
    known = cfg.known_triples or set()
    tq = embed_entity([h, rl], "lhs", model)
    hq = embed_entity([rr, t], "rhs", model)
    t_true = similarity(tq, embed_entity([t], "rhs", model), sim)
    h_true = similarity(embed_entity([h], "lhs", model), hq, sim)
    tail_rank = head_rank = 1
    for e in entity_ids:
        e = int(e)
        if not (cfg.protocol == "filtered" and e != t and (h, rl, e) in known):
            if similarity(tq, embed_entity([e], "rhs", model), sim) > t_true:
                tail_rank += 1
        if not (cfg.protocol == "filtered" and e != h and (e, rl, t) in known):
            if similarity(embed_entity([e], "lhs", model), hq, sim) > h_true:
                head_rank += 1
    return head_rank, tail_rank


def nearest_neighbors(model: EmbeddingModel, dictionary: Dictionary, query_tokens: Sequence[str], n: int = 10,
                      sim: str | None = None) -> list[tuple[str, float]]:
    """Top-n explicit dictionary features closest to the query's bag embedding."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ids = dictionary.encode(query_tokens)
    if not ids:
        raise ValueError("no known features in query")
    q = embed_entity(ids, "lhs", model)
    feats = model.lhs[:dictionary.n_unigrams].astype(np.float64)
    s = _scores(q[None, :], feats, sim or model.sim)[0]
    order = np.argsort(-s, kind="stable")[:n]
    return [(dictionary.tokens[i], float(s[i])) for i in order]
