"""Recall@K and NDCG@K with binary relevance, plus per-model evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dissemination import FactorModel, score_matrix
from .errors import ValidationError
from .interactions import InteractionSet


class NoRelevantItems(ValueError):
    """The ranked list has no relevant item, so the metric is undefined."""


@dataclass
class RankedList:
    """Items in descending score order (ties broken by ascending item id)."""

    items: np.ndarray
    relevance: np.ndarray
    user: object = None

    def __post_init__(self):
        self.items = np.asarray(self.items)
        self.relevance = np.asarray(self.relevance, dtype=np.int64)
        if self.items.shape != self.relevance.shape:
            raise ValidationError("items and relevance must align")
        if np.unique(self.items).size != self.items.size:
            raise ValidationError("ranked items must be distinct")

    @classmethod
    def from_scores(cls, scores, relevant, user=None, items=None):
        scores = np.asarray(scores, dtype=np.float64)
        items = np.arange(scores.size) if items is None else np.asarray(items)
        order = np.lexsort((items, -scores))
        rel = np.isin(items[order], np.asarray(list(relevant)))
        return cls(items[order], rel.astype(np.int64), user)

    @property
    def n_relevant(self) -> int:
        return int(self.relevance.sum())


def _check(ranked, k):
    if k < 1:
        raise ValidationError("k must be >= 1")
    if ranked.n_relevant == 0:
        raise NoRelevantItems(f"user {ranked.user!r} has no relevant items")


def recall_at_k(ranked: RankedList, k: int) -> float:
    _check(ranked, k)
    return float(ranked.relevance[:k].sum()) / ranked.n_relevant


def _discounts(k):
    return 1.0 / np.log2(np.arange(2, k + 2))


def ndcg_at_k(ranked: RankedList, k: int) -> float:
    _check(ranked, k)
    top = ranked.relevance[:k]
    dcg = float(((2.0 ** top - 1.0) * _discounts(top.size)).sum())
    ideal = min(k, ranked.n_relevant)
    idcg = float(_discounts(ideal).sum())
    return dcg / idcg


@dataclass
class MetricsReport:
    k: list
    recall: list
    ndcg: list
    n_users: int

    def as_dict(self):
        return {"k": list(self.k), "recall": list(self.recall), "ndcg": list(self.ndcg),
                "n_users": self.n_users}

    def to_json(self, path=None):
        text = json.dumps(self.as_dict(), indent=2) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def at(self, k):
        idx = self.k.index(k)
        return self.recall[idx], self.ndcg[idx]


def evaluate_scores(scores, test: InteractionSet, ks, train: InteractionSet | None = None,
                    candidate_policy="all_minus_train") -> MetricsReport:
    """Evaluate a dense ``(n_users, n_items)`` score matrix against ``test``."""
    ks = sorted(int(k) for k in ks)
    if not ks or ks[0] < 1:
        raise ValidationError("ks must be a nonempty list of positive integers")
    scores = np.array(scores, dtype=np.float64)
    if scores.shape != test.shape:
        raise ValidationError(f"score matrix {scores.shape} does not match test set {test.shape}")
    if candidate_policy not in ("all_minus_train", "all"):
        raise ValidationError(f"unknown candidate policy {candidate_policy!r}")
    if candidate_policy == "all_minus_train" and train is not None:
        if train.shape != test.shape:
            raise ValidationError("train and test index spaces differ")
        scores[train.users, train.items] = -np.inf
    rel = test.to_dense(dtype=bool)
    counts = rel.sum(axis=1)
    users = np.nonzero(counts > 0)[0]
    kmax = ks[-1]
    disc = _discounts(kmax)
    idcg_cum = np.cumsum(disc)
    recall_sum = {k: [] for k in ks}
    ndcg_sum = {k: [] for k in ks}
    items = np.arange(test.n_items)
    for u in users:
        order = np.lexsort((items, -scores[u]))[:kmax]
        hits = rel[u, order]
        if candidate_policy == "all_minus_train" and train is not None:
            hits = hits & np.isfinite(scores[u, order])
        gains = hits * disc[:hits.size]
        cum_hits = np.cumsum(hits)
        cum_dcg = np.cumsum(gains)
        n_rel = counts[u]
        for k in ks:
            kk = min(k, hits.size) - 1
            recall_sum[k].append(cum_hits[kk] / n_rel)
            ndcg_sum[k].append(cum_dcg[kk] / idcg_cum[min(k, n_rel) - 1])
    n = users.size
    recall = [math.fsum(recall_sum[k]) / n if n else float("nan") for k in ks]
    ndcg = [math.fsum(ndcg_sum[k]) / n if n else float("nan") for k in ks]
    return MetricsReport(ks, recall, ndcg, int(n))


def evaluate(model: FactorModel, test: InteractionSet, ks=(20, 40, 60, 80),
             train: InteractionSet | None = None,
             candidate_policy="all_minus_train") -> MetricsReport:
    """Mean Recall@K / NDCG@K over test users with at least one relevant item.

    Candidates are all items minus the user's training positives.
    """
    if (model.n_users, model.n_items) != test.shape:
        raise ValidationError(
            f"model covers {(model.n_users, model.n_items)} but test set is {test.shape}")
    return evaluate_scores(score_matrix(model), test, ks, train, candidate_policy)
