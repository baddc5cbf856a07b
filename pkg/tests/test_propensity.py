import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sharecause.errors import ValidationError
from sharecause.interactions import InteractionSet
from sharecause.propensity import (NeuralPropensityModel, PropensityTable, fit_neural_propensity,
                                   news_propensity, positivity_report, score_propensity,
                                   user_news_propensity)


def _counts_set(counts, n_users=None):
    """Items shared by ``counts[i]`` distinct users each."""
    n_users = n_users or max(max(counts), 1)
    users, items = [], []
    for i, c in enumerate(counts):
        users += list(range(c))
        items += [i] * c
    return InteractionSet.from_pairs(users, items, n_users, len(counts))


def test_news_propensity_examples():
    t = news_propensity(_counts_set([4, 1]), eta=0.5)
    assert t.values[0] == 1.0
    assert t.values[1] == pytest.approx(0.5)
    t = news_propensity(_counts_set([4, 0]), eta=0.5, floor=1e-3)
    assert t.values[1] == 1e-3


def test_news_propensity_empty():
    with pytest.raises(ValidationError):
        news_propensity(InteractionSet.from_pairs([], [], 2, 2))


@pytest.mark.parametrize("eta", [0.0, 1.5])
def test_eta_range(eta):
    with pytest.raises(ValidationError):
        news_propensity(_counts_set([1, 2]), eta=eta)


def test_user_news_examples():
    s = InteractionSet.from_pairs([0, 1], [0, 1], 2, 2)
    t = user_news_propensity(s, np.array([9.0, 16.0]), eta=0.5)
    np.testing.assert_allclose(t.values, [0.75, 1.0])
    s = InteractionSet.from_pairs([0, 1], [0, 1], 2, 2)
    t = user_news_propensity(s, np.array([0.0, 5.0]), eta=0.5, floor=1e-3)
    assert t.values[0] == 1e-3


def test_user_news_missing_follower_named():
    s = InteractionSet.from_pairs([0, 1], [0, 1], 2, 2, user_ids=("alice", "bob"))
    with pytest.raises(ValidationError, match="bob"):
        user_news_propensity(s, {"alice": 3})


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=2, max_size=8).filter(lambda c: max(c) > 0),
       st.integers(1, 5), st.floats(0.1, 1.0))
def test_propensity_properties(counts, scale, eta):
    base = news_propensity(_counts_set(counts), eta=eta)
    scaled = news_propensity(_counts_set([c * scale for c in counts]), eta=eta)
    np.testing.assert_allclose(base.values, scaled.values, rtol=1e-12)
    assert np.all((base.values >= base.floor) & (base.values <= 1.0))
    order = np.argsort(counts, kind="stable")
    assert np.all(np.diff(base.values[order]) >= 0)
    s = _counts_set(counts)
    un = user_news_propensity(s, np.full(s.n_users, 7.0), eta=eta)
    np.testing.assert_allclose(un.values, base.values, rtol=1e-12)


def test_neural_zero_model_is_half():
    m = NeuralPropensityModel(np.zeros(3))
    np.testing.assert_allclose(m.predict(np.eye(3)), 0.5)


def test_neural_pretrain_hits_targets():
    X = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    s = InteractionSet.from_pairs([0], [0], 1, 4)
    targets = np.array([0.1, 0.1, 0.9, 0.9])
    m = fit_neural_propensity(X, s, targets=targets, n_iter=20000, learning_rate=2.0)
    np.testing.assert_allclose(m.predict(X), targets, atol=0.05)
    # identical features, identical outputs
    assert m.predict(X)[0] == m.predict(X)[1]


def test_neural_default_targets_are_news_propensity(rng):
    s = _counts_set([5, 3, 1, 2])
    X = np.eye(4)
    m = fit_neural_propensity(X, s, n_iter=20000, learning_rate=5.0)
    np.testing.assert_allclose(m.predict(X), news_propensity(s).values, atol=0.05)


def test_neural_feature_dimension_checked():
    s = _counts_set([1, 1])
    with pytest.raises(ValidationError):
        fit_neural_propensity(np.ones((3, 2)), s)
    m = NeuralPropensityModel(np.zeros(2))
    with pytest.raises(ValidationError):
        m.predict(np.ones((1, 3)))


def test_joint_mode_returns_flagged_model():
    m = fit_neural_propensity(np.ones((2, 3)), _counts_set([1, 1]), mode="joint")
    assert m.training_mode == "joint" and not m.weight.any()


def test_score_propensity():
    t = PropensityTable("per_item", np.array([0.3, 1e-6]), floor=1e-3)
    assert score_propensity(t, 0, 0) == score_propensity(t, 5, 0) == pytest.approx(0.3)
    assert score_propensity(t, 0, 1) == 1e-3
    m = NeuralPropensityModel(np.array([0.5, -1.0]), 0.2)
    c = np.array([2.0, 0.5])
    assert score_propensity(m, 0, 0, c) == pytest.approx(1 / (1 + np.exp(-(1.0 - 0.5 + 0.2))))
    with pytest.raises(ValidationError):
        score_propensity(m, 0, 0)


def test_positivity_report(rng):
    r = positivity_report(PropensityTable.constant(4, 1.0))
    assert r.min == r.max == 1.0 and not r.warning
    r = positivity_report(PropensityTable("per_item", np.array([1e-3, 1e-3, 0.5, 1.0])),
                          threshold=0.25)
    assert r.warning
    v = rng.uniform(0, 1, 50)
    r = positivity_report(PropensityTable("per_item", v))
    assert r.min == max(v.min(), 1e-3) and r.max == v.max()


def test_per_pair_lookup_and_csv(tmp_path, rng):
    theta = rng.uniform(0.01, 1, (3, 4))
    t = PropensityTable.from_matrix(theta, item_ids=tuple("abcd"), user_ids=("x", "y", "z"))
    np.testing.assert_allclose(t.lookup([2, 0], [1, 3]), [theta[2, 1], theta[0, 3]])
    t.to_csv(tmp_path / "p.csv")
    back = PropensityTable.from_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(back.values, t.values)
    it = news_propensity(_counts_set([3, 1, 2]))
    it.to_csv(tmp_path / "q.csv")
    assert (tmp_path / "q.csv").read_text().splitlines()[0] == "item_id,theta"
    np.testing.assert_array_equal(PropensityTable.from_csv(tmp_path / "q.csv").values, it.values)
