import math

import numpy as np
import pytest
from scipy import stats

from sharecause import dissemination as dm
from sharecause import synthgen as sg
from sharecause.dissemination import (FactorModel, TrainConfig, TripletBatch, batch_objective,
                                      gradients, init_model, local_loss, sample_triplets, score,
                                      train, weighted_triplet_term)
from sharecause.errors import NumericalError, ValidationError
from sharecause.interactions import InteractionSet
from sharecause.propensity import PropensityTable, fit_neural_propensity


def test_mf_score_examples():
    m = FactorModel("mf", np.array([[1.0, 2.0]]), np.array([[3.0, -1.0], [0.0, 0.0]]))
    assert score(m, 0, 0) == 1.0
    assert score(m, 0, 1) == 0.0
    with pytest.raises(ValidationError):
        score(m, 1, 0)


def test_neural_score_hand_forward(rng):
    m = init_model("neural", 2, 3, 2, hidden_dim=3, seed=4, std=0.5)
    m.b1 = rng.normal(size=3)
    m.b2 = 0.3
    for u in range(2):
        for i in range(3):
            x = np.concatenate([m.U[u], m.V[i]])
            h = [max(0.0, sum(m.W1[k, c] * x[c] for c in range(4)) + m.b1[k]) for k in range(3)]
            ref = sum(h[k] * m.w2[k] for k in range(3)) + m.b2
            assert score(m, u, i) == pytest.approx(ref, rel=1e-12)
    np.testing.assert_allclose(dm.score_matrix(m), score(m, *np.meshgrid(
        np.arange(2), np.arange(3), indexing="ij")), rtol=1e-12)


def test_local_loss_values():
    assert local_loss(0.0) == pytest.approx(0.693147, abs=1e-6)
    assert local_loss(math.log(3)) == pytest.approx(0.287682, abs=1e-6)
    assert local_loss(1e6) == pytest.approx(0.0, abs=1e-300)
    assert local_loss(-1e6) == pytest.approx(1e6)
    s = np.linspace(-30, 30, 101)
    assert np.all(np.diff(local_loss(s)) < 0) and np.all(local_loss(s) > 0)


def test_weighted_term_examples():
    assert weighted_triplet_term(1, 0.5, 0, 1.0, 0.0) == pytest.approx(1.386294, abs=1e-6)
    assert weighted_triplet_term(1, 0.5, 1, 0.25, 0.0, clamp=True) == 0.0
    assert weighted_triplet_term(1, 0.5, 1, 0.25, 0.0, clamp=False) < 0
    for clamp in (True, False):
        assert weighted_triplet_term(0, 0.3, 1, 0.2, 1.5, clamp=clamp) == 0.0
    with pytest.raises(ValidationError):
        weighted_triplet_term(1, 0.0, 0, 1.0, 0.0)


def test_batch_objective_examples(rng):
    m = FactorModel("mf", np.zeros((1, 2)), np.zeros((2, 2)))
    b = TripletBatch([0], [0], [1], [1.0], [0.0], [0.5], [1.0])
    assert batch_objective(m, b) == pytest.approx(1.386294, abs=1e-6)
    assert batch_objective(m, b, lam=1.0) == pytest.approx(1.386294, abs=1e-6)
    with pytest.raises(ValidationError):
        batch_objective(m, TripletBatch([], [], []))
    m = init_model("mf", 4, 5, 3, seed=1, std=1.0)
    t = np.array([[0, 1, 2], [1, 0, 4], [2, 3, 1], [3, 4, 0], [0, 2, 3]])
    y_i, y_j = rng.integers(0, 2, 5).astype(float), rng.integers(0, 2, 5).astype(float)
    th_i, th_j = rng.uniform(0.1, 1, 5), rng.uniform(0.1, 1, 5)
    b = TripletBatch(t[:, 0], t[:, 1], t[:, 2], y_i, y_j, th_i, th_j)
    ref = sum(weighted_triplet_term(y_i[k], th_i[k], y_j[k], th_j[k],
                                    m.U[t[k, 0]] @ (m.V[t[k, 1]] - m.V[t[k, 2]]))
              for k in range(5)) / 5
    ref += 0.1 * (np.sum(m.U ** 2) + np.sum(m.V ** 2))
    assert batch_objective(m, b, lam=0.1) == pytest.approx(ref, rel=1e-12)


def _random_batch(rng, n_u, n_i, n):
    u = rng.integers(n_u, size=n)
    i = rng.integers(n_i, size=n)
    j = (i + 1 + rng.integers(n_i - 1, size=n)) % n_i
    return TripletBatch(u, i, j, rng.integers(0, 2, n).astype(float),
                        rng.integers(0, 2, n).astype(float),
                        rng.uniform(0.2, 1, n), rng.uniform(0.2, 1, n))


def _fd_check(model, batch, lam, clamp, masks, h=1e-5):
    g = gradients(model, batch, lam, clamp, masks)
    for name, P in model.params().items():
        flat = P.reshape(-1)
        fd = np.empty_like(flat)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            fp = batch_objective(model, batch, lam, clamp, masks)
            flat[k] = old - h
            fm = batch_objective(model, batch, lam, clamp, masks)
            flat[k] = old
            fd[k] = (fp - fm) / (2 * h)
        a = np.asarray(g[name]).reshape(-1)
        denom = max(np.linalg.norm(a), np.linalg.norm(fd), 1e-12)
        assert np.linalg.norm(a - fd) / denom < 1e-4, name


@pytest.mark.parametrize("backbone", ["mf", "neural"])
@pytest.mark.parametrize("clamp", [False, True])
def test_gradients_finite_difference(backend, backbone, clamp):
    rng = np.random.default_rng({"mf": 11, "neural": 13}[backbone] + int(clamp))
    for _ in range(3):
        m = init_model(backbone, 5, 6, 3, hidden_dim=4, seed=rng, std=0.7)
        if backbone == "neural":
            m.b1 = rng.normal(scale=0.3, size=4)
        b = _random_batch(rng, 5, 6, 12)
        masks = None
        if backbone == "neural":
            masks = tuple((rng.random((12, 4)) < 0.9) / 0.9 for _ in range(2))
        _fd_check(m, b, 0.05, clamp, masks)


def test_clamped_batch_zero_gradient(backend):
    m = init_model("mf", 2, 3, 2, seed=0, std=1.0)
    b = TripletBatch([0, 1], [0, 1], [1, 2], [1, 1], [1, 1], [0.5, 0.5], [0.25, 0.25])
    g = gradients(m, b, 0.0, clamp=True)
    assert not g["U"].any() and not g["V"].any()


def test_l2_gradient_on_unit_params(backend):
    m = FactorModel("mf", np.ones((2, 2)), np.ones((3, 2)))
    b = TripletBatch([0], [0], [1], [0.0], [0.0])
    g = gradients(m, b, 0.3)
    np.testing.assert_allclose(g["U"], 0.6)
    np.testing.assert_allclose(g["V"], 0.6)


def test_weight_one_reduction(backend, rng):
    y = rng.random((20, 10)) < 0.3
    s = InteractionSet.from_dense(y)
    cfg = TrainConfig(learning_rate=0.05, l2_lambda=1e-3, epochs=5, batch_size=16,
                      embedding_dim=4, seed=3)
    a = train("mf", s, None, cfg)
    b = train("mf", s, PropensityTable.constant(10, 1.0), cfg)
    np.testing.assert_array_equal(a.model.U, b.model.U)
    np.testing.assert_array_equal(a.model.V, b.model.V)
    assert a.loss_trace == b.loss_trace


def test_score_antisymmetry(rng):
    m = init_model("neural", 3, 4, 2, seed=1, std=1.0)
    u, i, j = 1, 0, 3
    assert score(m, u, i) - score(m, u, j) == -(score(m, u, j) - score(m, u, i))


def test_sample_triplets_postconditions(rng):
    y = rng.random((30, 12)) < 0.3
    s = InteractionSet.from_dense(y)
    b = sample_triplets(s, 2000, seed=1)
    assert y[b.users, b.pos].all() and not y[b.users, b.neg].any()
    with pytest.raises(ValidationError):
        sample_triplets(InteractionSet.from_pairs([], [], 2, 2), 5)


def test_negative_sampling_uniform():
    # one user, one positive, 10 candidate negatives
    s = InteractionSet.from_pairs([0], [0], 1, 11)
    b = sample_triplets(s, 100000, seed=2)
    counts = np.bincount(b.neg, minlength=11)[1:]
    assert stats.chisquare(counts).pvalue > 0.01


def test_saturated_users_skipped_or_error():
    s = InteractionSet.from_pairs([0, 0, 1], [0, 1, 0], 2, 2)
    b = sample_triplets(s, 50, seed=0)
    assert np.all(b.users == 1)
    full = InteractionSet.from_dense(np.ones((2, 2), bool))
    with pytest.raises(ValidationError):
        sample_triplets(full, 5)


def _world_set(seed=0):
    w = sg.generate_world(n_users=60, n_items=20, interest_offset=0.0, seed=seed)
    return sg.sample_interactions(w, seed=seed)


@pytest.mark.parametrize("backbone", ["mf", "neural"])
def test_train_deterministic(backend, backbone):
    s = _world_set()
    cfg = TrainConfig(learning_rate=0.01, epochs=3, batch_size=64, embedding_dim=4, seed=9)
    a = train(backbone, s, None, cfg).model
    b = train(backbone, s, None, cfg).model
    for k in a.param_names():
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))


def test_train_zero_lr_keeps_init():
    s = _world_set()
    cfg = TrainConfig(learning_rate=0.0, epochs=2, embedding_dim=4, seed=1)
    m = train("mf", s, None, cfg).model
    ref = init_model("mf", s.n_users, s.n_items, 4, seed=np.random.default_rng(1))
    np.testing.assert_array_equal(m.U, ref.U)


@pytest.mark.parametrize("backbone", ["mf", "neural"])
def test_training_reduces_loss(backbone):
    s = _world_set(1)
    cfg = TrainConfig(learning_rate=0.01, l2_lambda=1e-4, epochs=50, batch_size=128,
                      embedding_dim=8, seed=0)
    trace = train(backbone, s, None, cfg).loss_trace
    assert trace[-1] < trace[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch():
    s = _world_set()
    cfg = TrainConfig(learning_rate=1e200, l2_lambda=1.0, epochs=5, embedding_dim=4,
                      init_std=1.0)
    with pytest.raises(NumericalError) as ei:
        train("mf", s, None, cfg)
    assert ei.value.epoch is not None and ei.value.epoch >= 0


def test_joint_propensity_training_runs():
    s = _world_set()
    X = np.random.default_rng(0).normal(size=(s.n_items, 3))
    prop = fit_neural_propensity(X, s, mode="joint")
    res = train("mf", s, prop, TrainConfig(learning_rate=0.01, epochs=3, embedding_dim=4),
                item_features=X)
    assert res.propensity is not None and res.model.is_finite()
    p = res.propensity.predict(X)
    assert np.all((p >= res.propensity.floor) & (p <= 1))


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(dropout_keep=0.0)
    with pytest.raises(ValidationError):
        TrainConfig(epochs=0)
    assert TrainConfig.for_backbone("neural").learning_rate == 1e-2
