"""Exposure propensity estimators and positivity diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .interactions import InteractionSet

DEFAULT_ETA = 0.5
DEFAULT_FLOOR = 1e-3


def _check_eta_floor(eta, floor):
    if not 0.0 < eta <= 1.0:
        raise ValidationError(f"eta must lie in (0, 1], got {eta}")
    if not 0.0 < floor <= 1.0:
        raise ValidationError(f"floor must lie in (0, 1], got {floor}")


@dataclass(frozen=True)
class PropensityTable:
    """Estimated exposure probabilities, clamped to ``[floor, 1]``.

    ``values`` has shape ``(n_items,)`` for ``kind="per_item"`` and
    ``(n_users, n_items)`` for ``kind="per_pair"``.
    """

    kind: str
    values: np.ndarray
    eta: float = DEFAULT_ETA
    floor: float = DEFAULT_FLOOR
    item_ids: tuple | None = None
    user_ids: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("per_item", "per_pair"):
            raise ValidationError(f"unknown propensity kind {self.kind!r}")
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != (1 if self.kind == "per_item" else 2):
            raise ValidationError(f"{self.kind} table has wrong dimensionality")
        if not 0.0 < self.floor <= 1.0:
            raise ValidationError("floor must lie in (0, 1]")
        if vals.size == 0:
            raise ValidationError("empty propensity table")
        vals = np.clip(vals, self.floor, 1.0)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_matrix(cls, theta, floor=DEFAULT_FLOOR, **kw):
        """Per-pair table from a full ``(n_users, n_items)`` exposure matrix."""
        return cls("per_pair", np.asarray(theta, dtype=np.float64), eta=1.0, floor=floor, **kw)

    @classmethod
    def constant(cls, n_items, value=1.0, floor=DEFAULT_FLOOR):
        return cls("per_item", np.full(n_items, float(value)), eta=1.0, floor=floor)

    @property
    def n_items(self) -> int:
        return self.values.shape[-1]

    def lookup(self, users, items) -> np.ndarray:
        items = np.asarray(items, dtype=np.int64)
        if self.kind == "per_item":
            return self.values[items]
        return self.values[np.asarray(users, dtype=np.int64), items]

    def to_csv(self, path):
        items = self.item_ids or tuple(str(i) for i in range(self.n_items))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if self.kind == "per_item":
                w.writerow(["item_id", "theta"])
                for iid, v in zip(items, self.values):
                    w.writerow([iid, repr(float(v))])
            else:
                users = self.user_ids or tuple(str(u) for u in range(self.values.shape[0]))
                w.writerow(["user_id", "item_id", "theta"])
                for u, uid in enumerate(users):
                    for i, iid in enumerate(items):
                        w.writerow([uid, iid, repr(float(self.values[u, i]))])

    @classmethod
    def from_csv(cls, path, item_ids=None, user_ids=None, floor=DEFAULT_FLOOR, eta=DEFAULT_ETA):
        """Read a table; ``item_ids``/``user_ids`` fix the index order when given."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValidationError(f"{path}: empty file")
        header = [h.strip() for h in rows[0]]
        body = rows[1:]
        try:
            if header == ["item_id", "theta"]:
                ids = tuple(r[0] for r in body) if item_ids is None else tuple(item_ids)
                index = {x: k for k, x in enumerate(ids)}
                vals = np.full(len(ids), np.nan)
                for r in body:
                    vals[index[r[0]]] = float(r[1])
                kind, uids = "per_item", None
            elif header == ["user_id", "item_id", "theta"]:
                uids = tuple(dict.fromkeys(r[0] for r in body)) if user_ids is None else tuple(user_ids)
                ids = tuple(dict.fromkeys(r[1] for r in body)) if item_ids is None else tuple(item_ids)
                uindex = {x: k for k, x in enumerate(uids)}
                index = {x: k for k, x in enumerate(ids)}
                vals = np.full((len(uids), len(ids)), np.nan)
                for r in body:
                    vals[uindex[r[0]], index[r[1]]] = float(r[2])
                kind = "per_pair"
            else:
                raise ValidationError(f"{path}: unrecognized header {header}")
        except (KeyError, IndexError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"{path}: malformed propensity row ({exc})") from exc
        if np.isnan(vals).any():
            raise ValidationError(f"{path}: table does not cover every item")
        return cls(kind, vals, eta=eta, floor=floor, item_ids=ids, user_ids=uids)


def _relative_power(weighted_counts, eta, floor):
    top = weighted_counts.max()
    if top <= 0:
        raise ValidationError("no item has positive (weighted) share count")
    ratio = weighted_counts / top
    return np.maximum(ratio ** eta, floor)


def news_propensity(interactions: InteractionSet, eta=DEFAULT_ETA, floor=DEFAULT_FLOOR):
    """Relative item popularity raised to ``eta``; the top item gets exactly 1."""
    _check_eta_floor(eta, floor)
    if interactions.n_positives == 0:
        raise ValidationError("news_propensity needs at least one positive interaction")
    counts = interactions.item_counts().astype(np.float64)
    return PropensityTable("per_item", _relative_power(counts, eta, floor), eta=eta,
                           floor=floor, item_ids=interactions.item_ids)


def user_news_propensity(interactions: InteractionSet, followers, eta=DEFAULT_ETA,
                         floor=DEFAULT_FLOOR):
    """Follower-weighted item popularity raised to ``eta``.

    ``followers`` is either an array aligned with the user index or a mapping
    from user id to follower count. The result is per item; see
    ``PropensityTable.lookup``.
    """
    _check_eta_floor(eta, floor)
    if interactions.n_positives == 0:
        raise ValidationError("user_news_propensity needs at least one positive interaction")
    sharing = np.unique(interactions.users)
    if isinstance(followers, dict):
        f = np.zeros(interactions.n_users)
        for u in sharing:
            uid = interactions.user_ids[u]
            if uid not in followers:
                raise ValidationError(f"missing follower count for user {uid!r}")
            f[u] = float(followers[uid])
    else:
        f = np.asarray(followers, dtype=np.float64)
        if f.shape != (interactions.n_users,):
            raise ValidationError("follower array must align with the user index")
        bad = sharing[~np.isfinite(f[sharing])]
        if bad.size:
            raise ValidationError(f"missing follower count for user {interactions.user_ids[bad[0]]!r}")
    if np.any(f[sharing] < 0):
        raise ValidationError("follower counts must be nonnegative")
    weighted = np.bincount(interactions.items, weights=f[interactions.users],
                           minlength=interactions.n_items)
    return PropensityTable("per_item", _relative_power(weighted, eta, floor), eta=eta,
                           floor=floor, item_ids=interactions.item_ids)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class NeuralPropensityModel:
    """Logistic map from item content features to exposure probability.

    In ``joint`` mode the dissemination trainer updates ``weight`` and
    ``bias`` in place alongside the embeddings.
    """

    weight: np.ndarray
    bias: float = 0.0
    training_mode: str = "pretrain_to_popularity"
    floor: float = DEFAULT_FLOOR

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    def logits(self, features):
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != self.dim:
            raise ValidationError(f"feature dimension {features.shape[-1]} != model dimension {self.dim}")
        return features @ self.weight + self.bias

    def raw(self, features):
        """Unclamped sigmoid output."""
        return _sigmoid(self.logits(features))

    def predict(self, features):
        return np.clip(self.raw(features), self.floor, 1.0)

    def table(self, features, item_ids=None) -> PropensityTable:
        return PropensityTable("per_item", self.predict(features), eta=1.0,
                               floor=self.floor, item_ids=item_ids)


def fit_neural_propensity(content_features, interactions: InteractionSet,
                          mode="pretrain_to_popularity", learning_rate=0.5,
                          n_iter=5000, eta=DEFAULT_ETA, floor=DEFAULT_FLOOR,
                          targets=None, tol=1e-12):
    """Fit the logistic propensity model.

    ``pretrain_to_popularity`` runs full-batch gradient descent on the squared
    error against ``news_propensity`` targets (or explicit ``targets``).
    ``joint`` returns a zero-initialized model flagged for joint updates.
    """
    if mode not in ("pretrain_to_popularity", "joint"):
        raise ValidationError(f"unknown neural propensity mode {mode!r}")
    X = np.asarray(content_features, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("content features must be a 2-d array with one row per item")
    if X.shape[0] != interactions.n_items:
        raise ValidationError("need one feature vector per item")
    model = NeuralPropensityModel(np.zeros(X.shape[1]), 0.0, mode, floor)
    if mode == "joint":
        return model
    if targets is None:
        targets = news_propensity(interactions, eta=eta, floor=floor).values
    t = np.asarray(targets, dtype=np.float64)
    n = X.shape[0]
    prev = np.inf
    for _ in range(n_iter):
        p = _sigmoid(X @ model.weight + model.bias)
        r = p - t
        loss = float(r @ r) / n
        dz = 2.0 * r * p * (1.0 - p) / n
        model.weight -= learning_rate * (X.T @ dz)
        model.bias -= learning_rate * float(dz.sum())
        if abs(prev - loss) < tol:
            break
        prev = loss
    return model


def score_propensity(table_or_model, user, item, content_feature=None) -> float:
    """Single ``theta_hat`` lookup in ``[floor, 1]``."""
    if isinstance(table_or_model, NeuralPropensityModel):
        if content_feature is None:
            raise ValidationError(f"item {item!r} has no feature vector for the neural propensity model")
        return float(table_or_model.predict(np.asarray(content_feature)[None, :])[0])
    table = table_or_model
    if not isinstance(item, (int, np.integer)):
        ids = table.item_ids or ()
        if item not in ids:
            raise ValidationError(f"unknown item {item!r}")
        item = ids.index(item)
    if not 0 <= item < table.n_items:
        raise ValidationError(f"unknown item {item!r}")
    if table.kind == "per_pair" and not isinstance(user, (int, np.integer)):
        user = (table.user_ids or ()).index(user)
    return float(table.lookup(user, item))


@dataclass(frozen=True)
class PositivityReport:
    min: float
    max: float
    fraction_at_floor: float
    threshold: float
    warning: bool

    def as_dict(self):
        return {"min": self.min, "max": self.max, "fraction_at_floor": self.fraction_at_floor,
                "threshold": self.threshold, "warning": self.warning}


def positivity_report(table: PropensityTable, threshold=0.25) -> PositivityReport:
    vals = table.values.ravel()
    at_floor = float(np.mean(vals <= table.floor))
    return PositivityReport(float(vals.min()), float(vals.max()), at_floor, threshold,
                            at_floor > threshold)
