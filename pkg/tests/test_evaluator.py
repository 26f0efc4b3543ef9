import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from embedall.dictionary import Dictionary
from embedall.evaluator import (
    KgEvalConfig,
    RankingReport,
    brute_force_link_ranks,
    evaluate_classification,
    evaluate_link_prediction,
    nearest_neighbors,
    rank_candidates,
)
from embedall.model_core import EmbeddingModel
from embedall.samplers import Corpus, Record
from checks import link_oracle_mismatches, random_kg, random_model, rank_oracle_mismatches
from oracles import rank_by_sort


def _model(rows, sim="cosine"):
    L = np.asarray(rows, dtype=np.float64)
    acc = np.zeros(len(L))
    return EmbeddingModel(L, L, acc, acc, max_norm=None, sim=sim)


def test_unique_maximum_ranks_first():
    m = _model([[1, 0], [1, 0.1], [0, 1], [-1, 0]])
    order, rank = rank_candidates(m, [0], [[1], [2], [3]], target=0)
    assert rank == 1 and order == [0, 1, 2]


def test_all_ties_rank_first():
    m = _model([[1, 0], [0, 1], [0, 1], [0, 1]])
    for target in range(3):
        assert rank_candidates(m, [0], [[1], [2], [3]], target=target)[1] == 1


def test_rank_matches_sort_oracle_20_candidates(rng):
    m = random_model(rng, 25, 4, shared=True)
    for _ in range(20):
        cands = [[int(i)] for i in rng.integers(0, 25, 20)]
        target = int(rng.integers(20))
        q = m.lhs[0]
        scores = [float(q @ m.rhs[c[0]]) for c in cands]
        assert rank_candidates(m, [0], cands, "dot", target)[1] == rank_by_sort(scores, target)


def test_rank_oracle_sweep():
    assert rank_oracle_mismatches(300, seed=1) == 0


def test_link_oracle_sweep():
    assert link_oracle_mismatches(150, seed=2) == 0


def test_link_prediction_hand_example():
    # entities 0..2; relation roles 3 (lhs) and 4 (rhs)
    m = _model([[1, 0], [0, 1], [-1, 0], [0.5, 0.5], [0, 0.2]], sim="dot")
    triple = [0, 3, 4, 1]
    cfg = KgEvalConfig("raw", None)
    report = evaluate_link_prediction(m, [triple], [0, 1, 2], cfg)
    # tail query (1.5, 0.5): scores 1.5, 0.5, -1.5 -> target 1 ranks 2
    # head query (0, 1.2): scores 0, 1.2, 0 -> target 0 ranks 2
    assert report.per_query_ranks == [2, 2]
    assert brute_force_link_ranks(m, triple, [0, 1, 2], cfg) == (2, 2)
    filtered = KgEvalConfig("filtered", {(0, 3, 1), (0, 3, 0), (1, 3, 1)})
    assert evaluate_link_prediction(m, [triple], [0, 1, 2], filtered).per_query_ranks == [1, 1]


def test_filtered_needs_known_triples():
    m = _model([[1, 0]] * 5)
    with pytest.raises(ValueError):
        evaluate_link_prediction(m, [[0, 3, 4, 1]], [0, 1, 2], KgEvalConfig("filtered", None))
    with pytest.raises(ValueError):
        KgEvalConfig("semi")


@given(st.integers(0, 2**32 - 1))
def test_filtered_dominates_raw(seed):
    rng = np.random.default_rng(seed)
    n_ent, n_rel = 8, 2
    m = random_model(rng, n_ent + 2 * n_rel, 3, shared=True)
    test = random_kg(rng, n_ent, n_rel, 6)
    known = {(int(a), int(b), int(d)) for a, b, _, d in np.concatenate([test, random_kg(rng, n_ent, n_rel, 20)])}
    ents = list(range(n_ent))
    raw = evaluate_link_prediction(m, test, ents, KgEvalConfig("raw", known))
    fil = evaluate_link_prediction(m, test, ents, KgEvalConfig("filtered", known))
    assert all(f <= r for f, r in zip(fil.per_query_ranks, raw.per_query_ranks))
    assert fil.mean_rank <= raw.mean_rank
    for k in (1, 10, 20):
        assert fil.hits_at[k] >= raw.hits_at[k]


@given(st.lists(st.integers(1, 500), min_size=1, max_size=50))
def test_report_invariants(ranks):
    r = RankingReport.from_ranks(ranks)
    assert r.hits_at[1] <= r.hits_at[10] <= r.hits_at[20] <= 1
    assert r.mean_rank == pytest.approx(np.mean(ranks))
    assert 1 <= r.mean_rank <= max(ranks)
    fields = r.tsv().split("\t")
    assert len(fields) == 5 and int(fields[-1]) == len(ranks)


def _cls_corpus():
    return Corpus.from_records([Record.labeled([0], [2]), Record.labeled([1], [3])])


def test_perfect_classifier():
    # each gold label's embedding equals its document's embedding
    m = _model([[1, 0.2], [-0.3, 1], [1, 0.2], [-0.3, 1]])
    assert evaluate_classification(m, _cls_corpus(), [2, 3]) == 1.0


def test_ties_go_to_lowest_label():
    m = _model([[1, 0], [1, 0], [0, 1], [0, 1]])
    # both labels tie for every document; label 2 wins, so only record 0 is right
    assert evaluate_classification(m, _cls_corpus(), [3, 2]) == 0.5


def test_unlabeled_test_record():
    m = _model([[1, 0]] * 4)
    corpus = Corpus.from_records([Record.labeled([0], [2]), Record.labeled([1], [])])
    with pytest.raises(ValueError, match="unlabeled test record"):
        evaluate_classification(m, corpus, [2, 3])


def test_random_model_is_at_chance():
    rng = np.random.default_rng(0)
    docs = [Record.labeled(rng.integers(0, 50, 5).tolist(), [50 + i % 2]) for i in range(200)]
    corpus = Corpus.from_records(docs)
    accs = [evaluate_classification(EmbeddingModel.initialize(52, 8, np.random.default_rng(s)), corpus, [50, 51])
            for s in range(10)]
    assert abs(np.mean(accs) - 0.5) <= 0.1


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_cosine_classification_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 12, 4, shared=False)
    corpus = Corpus.from_records([Record.labeled(rng.integers(0, 8, 3).tolist(), [8 + i % 4]) for i in range(10)])
    base = evaluate_classification(m, corpus, [8, 9, 10, 11])
    m.lhs *= scale
    assert evaluate_classification(m, corpus, [8, 9, 10, 11]) == base


def _nn_setup():
    d = Dictionary.build([["a", "b", "c"]])
    m = _model([[1, 0], [0.6, 0.8], [-1, 0.1]])
    return m, d


def test_nearest_neighbours():
    m, d = _nn_setup()
    hits = nearest_neighbors(m, d, ["a"], 3)
    assert [t for t, _ in hits] == ["a", "b", "c"]
    assert hits[1][1] == pytest.approx(0.6)
    assert hits[2][1] == pytest.approx(-1 / math.sqrt(1.01))
    assert len(nearest_neighbors(m, d, ["c"], 50)) == 3
    with pytest.raises(ValueError, match="no known features in query"):
        nearest_neighbors(m, d, ["zzz"])
