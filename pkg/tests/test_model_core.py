import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from embedall.model_core import (
    EmbeddingModel,
    Gradients,
    adagrad_apply,
    embed_entity,
    instance_loss,
    margin_loss,
    project_max_norm,
    similarity,
    softmax_loss,
    step_gradients,
)
from embedall.samplers import TrainingInstance
from checks import gradient_errors, random_instance, random_model
from oracles import bag, loss_ref


def _model(rows, shared=True, max_norm=None):
    L = np.asarray(rows, dtype=np.float64)
    acc = np.zeros(len(L))
    if shared:
        return EmbeddingModel(L, L, acc, acc, max_norm=max_norm)
    return EmbeddingModel(L, L.copy(), acc, acc.copy(), max_norm=max_norm)


def test_embed_entity_examples():
    m = _model([[0, 0], [1, 1], [2, -1], [0.1, -0.2]])
    assert embed_entity([], "lhs", m).tolist() == [0, 0]
    np.testing.assert_allclose(embed_entity([3], "lhs", m), [0.1, -0.2])
    np.testing.assert_allclose(embed_entity([1, 2, 2], "lhs", m), m.lhs[1] + 2 * m.lhs[2])
    with pytest.raises(IndexError, match="feature id out of range"):
        embed_entity([4], "lhs", m)


def test_similarity_examples():
    assert similarity([1, 0], [1, 0], "cosine") == 1.0
    assert similarity([1, 0], [0, 1], "dot") == 0.0
    assert similarity([1, 2], [3, 4], "cosine") == pytest.approx(11 / (math.sqrt(5) * 5), abs=1e-12)
    assert similarity([1, 2], [3, 4], "cosine") == pytest.approx(0.98387, abs=1e-5)
    assert similarity([0, 0], [3, 4], "cosine") == 0.0
    with pytest.raises(ValueError, match="dimension mismatch"):
        similarity([1, 2], [1, 2, 3], "dot")


def test_margin_loss_examples():
    assert margin_loss(1.0, [0.0], 0.5) == 0.0
    assert margin_loss(0.0, [0.0, 0.0], 0.5) == pytest.approx(1.0)
    assert margin_loss(0.2, [0.1, 0.6], 0.3) == pytest.approx(0.9)


def test_softmax_loss_examples():
    assert softmax_loss(0, [0]) == pytest.approx(math.log(2))
    assert softmax_loss(0, [0, 0, 0]) == pytest.approx(math.log(4))
    assert softmax_loss(2, [1, 0]) == pytest.approx(-math.log(math.e**2 / (math.e**2 + math.e + 1)))
    assert softmax_loss(2, [1, 0]) == pytest.approx(0.40761, abs=1e-5)
    assert math.isfinite(softmax_loss(1000.0, [-1000.0, 999.0]))


def test_project_examples():
    np.testing.assert_array_equal(project_max_norm(np.array([0.3, 0.4]), 1), [0.3, 0.4])
    np.testing.assert_allclose(project_max_norm(np.array([3.0, 4.0]), 1), [0.6, 0.8])
    np.testing.assert_array_equal(project_max_norm(np.zeros(2), 1), [0, 0])


def test_inactive_hinge_gives_empty_gradient():
    m = _model([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    inst = TrainingInstance([0], [1], [[2]])
    assert instance_loss(inst, m, "dot", "margin", 0.05) == 0.0
    assert not step_gradients(inst, m, "dot", "margin", 0.05)


def test_dot_margin_hand_gradient():
    m = _model([[0.3, -0.1], [0.2, 0.5], [0.4, 0.4]], shared=False)
    inst = TrainingInstance([0], [1], [[2]])
    g = step_gradients(inst, m, "dot", "margin", 0.5)
    np.testing.assert_allclose(g.lhs[0], m.rhs[2] - m.rhs[1])
    np.testing.assert_allclose(g.rhs[1], -m.lhs[0])
    np.testing.assert_allclose(g.rhs[2], m.lhs[0])


def test_gradient_rows_limited_to_instance(rng):
    m = random_model(rng, 20, 4, shared=False)
    inst = TrainingInstance([1, 2], [3], [[4, 5], [6]])
    g = step_gradients(inst, m, "cosine", "softmax")
    assert set(g.lhs) == {1, 2}
    assert set(g.rhs) == {3, 4, 5, 6}


def test_gradients_match_finite_differences_small():
    worst = gradient_errors(200, seed=7)
    assert max(worst.values()) < 1e-4, worst


def test_gradients_with_size_normalisation():
    worst = gradient_errors(80, seed=8, norm_exponent=0.5)
    assert max(worst.values()) < 1e-4, worst


def test_adagrad_scalar_trace():
    m = _model([[0.0]], max_norm=None)
    adagrad_apply(m, Gradients(lhs={0: np.array([2.0])}), 0.1)
    assert m.acc_lhs[0] == pytest.approx(4.0)
    assert m.lhs[0, 0] == pytest.approx(-0.1 / math.sqrt(4 + 1e-6) * 2)
    assert m.lhs[0, 0] == pytest.approx(-0.1, abs=1e-7)


def test_adagrad_zero_gradient_is_noop():
    m = _model([[0.5, 0.5], [1.0, -1.0]])
    before = m.lhs.copy()
    adagrad_apply(m, Gradients(), 0.1)
    adagrad_apply(m, Gradients(lhs={0: np.zeros(2)}), 0.1)
    np.testing.assert_array_equal(m.lhs, before)
    assert m.acc_lhs.tolist() == [0, 0]


def test_adagrad_step_sizes_non_increasing():
    m = _model([[0.0, 0.0]])
    g = np.array([0.3, -0.4])
    steps = []
    for _ in range(20):
        before = m.lhs[0].copy()
        adagrad_apply(m, Gradients(lhs={0: g}), 0.1)
        steps.append(np.linalg.norm(m.lhs[0] - before))
    assert all(b <= a + 1e-15 for a, b in zip(steps, steps[1:]))


def test_adagrad_projects_touched_rows():
    m = _model([[0.0, 0.0], [30.0, 40.0]], max_norm=1.0)
    adagrad_apply(m, Gradients(lhs={0: np.array([-100.0, 0.0])}), 10.0)
    assert np.linalg.norm(m.lhs[0]) <= 1.0 + 1e-12
    assert m.lhs[1].tolist() == [30.0, 40.0]  # untouched rows are left alone


def test_shared_matrices_merge_sides():
    m = _model([[1.0, 0.0], [0.0, 1.0]])
    g = Gradients(lhs={0: np.array([1.0, 0.0])}, rhs={0: np.array([1.0, 0.0])})
    adagrad_apply(m, g, 0.1)
    assert m.acc_lhs[0] == pytest.approx(2.0)  # ||(2, 0)||^2 / 2


def test_initialization_range():
    m = EmbeddingModel.initialize(500, 8, np.random.default_rng(0))
    assert np.abs(m.lhs).max() <= 1 / 8
    assert m.share_embeddings


def test_instance_loss_matches_oracle(rng):
    for _ in range(50):
        m = random_model(rng, 10, 3, shared=bool(rng.integers(2)))
        inst = random_instance(rng, 10)
        for sim in ("dot", "cosine"):
            for loss in ("margin", "softmax"):
                want = loss_ref(m.lhs, m.rhs, inst.lhs, inst.rhs_pos, inst.rhs_negs, sim, loss, 0.3)
                assert instance_loss(inst, m, sim, loss, 0.3) == pytest.approx(want, rel=1e-12, abs=1e-12)


vec = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=8)


@given(vec, st.data())
def test_cosine_bounded(a, data):
    b = data.draw(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=len(a), max_size=len(a)))
    s = similarity(a, b, "cosine")
    assert -1 - 1e-12 <= s <= 1 + 1e-12


@given(vec, st.floats(-10, 10, allow_nan=False), st.data())
def test_dot_is_bilinear(a, alpha, data):
    b = data.draw(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=len(a), max_size=len(a)))
    lhs = similarity(alpha * np.asarray(a), b, "dot")
    rhs = alpha * similarity(a, b, "dot")
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-6)


sims = st.floats(-5, 5, allow_nan=False)


@given(sims, st.lists(sims, min_size=1, max_size=10), st.floats(0.01, 2))
def test_margin_loss_zero_iff_all_satisfied(pos, negs, mu):
    value = margin_loss(pos, negs, mu)
    assert value >= 0
    assert (value == 0) == all(pos - n >= mu for n in negs)


@given(sims, st.lists(sims, min_size=1, max_size=10), st.floats(-50, 50))
def test_softmax_positive_and_shift_invariant(pos, negs, c):
    value = softmax_loss(pos, negs)
    assert value > 0
    assert softmax_loss(pos + c, [n + c for n in negs]) == pytest.approx(value, rel=1e-9, abs=1e-12)


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=6), st.floats(0.01, 50))
def test_projection_lands_in_ball(row, r):
    out = project_max_norm(np.asarray(row), r)
    assert np.linalg.norm(out) <= r * (1 + 1e-12)
    if np.linalg.norm(row) <= r:
        np.testing.assert_array_equal(out, row)


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1.0), st.booleans())
def test_max_norm_and_accumulators_after_updates(seed, radius, shared):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 6, 3, shared)
    m.max_norm = radius
    for M in {id(m.lhs): m.lhs, id(m.rhs): m.rhs}.values():
        M[:] = [project_max_norm(row, radius) for row in M]
    for _ in range(10):
        inst = random_instance(rng, 6)
        before = (m.acc_lhs.copy(), m.acc_rhs.copy())
        adagrad_apply(m, step_gradients(inst, m, "dot", "softmax"), 1.0)
        assert np.all(m.acc_lhs >= before[0]) and np.all(m.acc_rhs >= before[1])
        for M in (m.lhs, m.rhs):
            assert np.all(np.linalg.norm(M, axis=1) <= radius * (1 + 1e-9))


def test_bag_sum_matches_naive_loop(rng):
    m = random_model(rng, 30, 5, shared=True)
    for _ in range(100):
        ids = rng.integers(0, 30, size=rng.integers(0, 10)).tolist()
        np.testing.assert_allclose(embed_entity(ids, "lhs", m), bag(m.lhs, ids), atol=1e-12)
