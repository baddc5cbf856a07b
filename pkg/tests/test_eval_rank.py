import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sharecause.dissemination import FactorModel
from sharecause.errors import ValidationError
from sharecause.eval_rank import (NoRelevantItems, RankedList, evaluate, evaluate_scores,
                                  ndcg_at_k, recall_at_k)
from sharecause.interactions import InteractionSet


def _lit_recall(rel, k):
    return sum(rel[:k]) / sum(rel)


def _lit_ndcg(rel, k):
    dcg = sum((2 ** rel[i] - 1) / math.log2(i + 2) for i in range(min(k, len(rel))))
    ideal = sorted(rel, reverse=True)
    idcg = sum((2 ** ideal[i] - 1) / math.log2(i + 2) for i in range(min(k, len(ideal))))
    return dcg / idcg


def _ranked(rel):
    return RankedList(list(range(len(rel))), list(rel))


def test_recall_examples():
    assert recall_at_k(_ranked([1, 0, 1]), 2) == 0.5
    assert recall_at_k(_ranked([1, 1, 0]), 2) == 1.0
    assert recall_at_k(_ranked([0, 1, 1]), 10) == 1.0


def test_ndcg_examples():
    assert ndcg_at_k(_ranked([1, 0, 1]), 3) == pytest.approx(0.919721, abs=1e-6)
    assert ndcg_at_k(_ranked([1, 1, 0, 0]), 4) == 1.0
    assert ndcg_at_k(_ranked([0, 0, 1]), 2) == 0.0


def test_no_relevant_signaled():
    with pytest.raises(NoRelevantItems):
        recall_at_k(_ranked([0, 0]), 1)
    with pytest.raises(ValidationError):
        ndcg_at_k(_ranked([1, 0]), 0)


def test_brute_force_all_small_lists():
    for n in range(1, 7):
        for rel in itertools.product((0, 1), repeat=n):
            if not any(rel):
                continue
            for k in range(1, n + 2):
                assert recall_at_k(_ranked(rel), k) == _lit_recall(list(rel), k)
                assert ndcg_at_k(_ranked(rel), k) == pytest.approx(_lit_ndcg(list(rel), k), abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=2, max_size=8).filter(any), st.integers(1, 8))
def test_bounds_monotone_and_swap(rel, k):
    r = _ranked(rel)
    assert 0 <= recall_at_k(r, k) <= 1 and 0 <= ndcg_at_k(r, k) <= 1
    assert recall_at_k(r, k) <= recall_at_k(r, k + 1)
    # moving a relevant item one slot up never lowers NDCG
    for p in range(1, len(rel)):
        if rel[p] == 1 and rel[p - 1] == 0:
            up = list(rel)
            up[p - 1], up[p] = 1, 0
            assert ndcg_at_k(_ranked(up), k) >= ndcg_at_k(r, k) - 1e-15


def test_from_scores_ties_by_item_id():
    r = RankedList.from_scores(np.array([1.0, 2.0, 1.0, 2.0]), [0, 0, 1, 0])
    assert list(r.items) == [1, 3, 0, 2]


def test_evaluate_oracle_scores():
    y = np.array([[1, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 0]], bool)
    test = InteractionSet.from_dense(y)
    rep = evaluate_scores(y.astype(float), test, [2, 3])
    assert rep.recall == [1.0, 1.0] and rep.ndcg == [1.0, 1.0]
    assert rep.n_users == 2
    d = json.loads(rep.to_json())
    assert set(d) == {"k", "recall", "ndcg", "n_users"}


def test_evaluate_masks_training():
    test = InteractionSet.from_pairs([0], [2], 1, 3)
    train = InteractionSet.from_pairs([0], [0], 1, 3)
    scores = np.array([[9.0, 1.0, 2.0]])
    assert evaluate_scores(scores, test, [1], train).recall == [1.0]
    assert evaluate_scores(scores, test, [1], train, "all").recall == [0.0]


def test_evaluate_shape_mismatch():
    m = FactorModel("mf", np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(ValidationError):
        evaluate(m, InteractionSet.from_pairs([0], [0], 3, 3), [1])


def test_random_scores_recall_expectation():
    rng = np.random.default_rng(0)
    n_u, n_i, k = 2000, 50, 10
    y = rng.random((n_u, n_i)) < 0.1
    y[np.arange(n_u), rng.integers(n_i, size=n_u)] = True
    rep = evaluate_scores(rng.random((n_u, n_i)), InteractionSet.from_dense(y), [k])
    assert rep.recall[0] == pytest.approx(k / n_i, abs=0.01)
