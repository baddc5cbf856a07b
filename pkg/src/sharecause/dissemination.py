"""Pairwise ranking models trained under ideal, IPS and non-negative losses.

Two backbones share one triplet objective:

* ``mf``: ``score(u, i) = U[u] . V[i]``
* ``neural``: one ReLU hidden layer over ``[U[u]; V[i]]`` and a linear readout

The per-triplet term is ``(Y_ui/theta_ui) * (1 - Y_uj/theta_uj) * l(s_uij)``
with ``l(s) = -ln sigmoid(s)``; the non-negative variant clamps it at zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ._backend import kernels
from .errors import NumericalError, ValidationError
from .interactions import InteractionSet
from .propensity import NeuralPropensityModel, PropensityTable

log = logging.getLogger(__name__)

BACKBONES = ("mf", "neural")


@dataclass
class FactorModel:
    backbone: str
    U: np.ndarray
    V: np.ndarray
    W1: np.ndarray | None = None
    b1: np.ndarray | None = None
    w2: np.ndarray | None = None
    b2: float = 0.0
    user_ids: tuple | None = None
    item_ids: tuple | None = None

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValidationError(f"unknown backbone {self.backbone!r}")
        if self.U.shape[1] != self.V.shape[1]:
            raise ValidationError("user and item embeddings must share a dimension")
        if self.backbone == "neural" and self.W1 is None:
            raise ValidationError("neural backbone needs hidden-layer weights")

    @property
    def n_users(self) -> int:
        return self.U.shape[0]

    @property
    def n_items(self) -> int:
        return self.V.shape[0]

    @property
    def dim(self) -> int:
        return self.U.shape[1]

    @property
    def hidden_dim(self) -> int:
        return 0 if self.W1 is None else self.W1.shape[0]

    def param_names(self):
        if self.backbone == "mf":
            return ("U", "V")
        return ("U", "V", "W1", "b1", "w2")

    def params(self) -> dict:
        return {name: getattr(self, name) for name in self.param_names()}

    def copy(self) -> "FactorModel":
        arrays = {k: v.copy() for k, v in self.params().items()}
        return replace(self, **arrays)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params().values())


def init_model(backbone, n_users, n_items, dim, hidden_dim=None, seed=0, std=0.01,
               user_ids=None, item_ids=None) -> FactorModel:
    """Zero-mean Gaussian initialization with standard deviation ``std``."""
    rng = np.random.default_rng(seed)
    U = rng.normal(0.0, std, (n_users, dim))
    V = rng.normal(0.0, std, (n_items, dim))
    if backbone == "mf":
        return FactorModel("mf", U, V, user_ids=user_ids, item_ids=item_ids)
    h = dim if hidden_dim is None else hidden_dim
    W1 = rng.normal(0.0, std, (h, 2 * dim))
    w2 = rng.normal(0.0, std, h)
    return FactorModel("neural", U, V, W1, np.zeros(h), w2, 0.0, user_ids, item_ids)


def _check_indices(model, users, items):
    if users.size and (users.min() < 0 or users.max() >= model.n_users):
        raise ValidationError("user index out of range")
    if items.size and (items.min() < 0 or items.max() >= model.n_items):
        raise ValidationError("item index out of range")


def score(model: FactorModel, users, items):
    """Predicted preference for each ``(user, item)`` pair (broadcasting)."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    _check_indices(model, users, items)
    if model.backbone == "mf":
        return np.einsum("...d,...d->...", model.U[users], model.V[items])
    d = model.dim
    pre = model.U[users] @ model.W1[:, :d].T + model.V[items] @ model.W1[:, d:].T + model.b1
    return np.maximum(pre, 0.0) @ model.w2 + model.b2


def score_matrix(model: FactorModel, users=None, chunk=512) -> np.ndarray:
    """Dense ``(n_users, n_items)`` score matrix, deterministic (no dropout)."""
    users = np.arange(model.n_users) if users is None else np.asarray(users, dtype=np.int64)
    if model.backbone == "mf":
        return model.U[users] @ model.V.T
    d = model.dim
    A = model.U[users] @ model.W1[:, :d].T + model.b1
    B = model.V @ model.W1[:, d:].T
    out = np.empty((users.size, model.n_items))
    for start in range(0, users.size, chunk):
        pre = A[start:start + chunk, None, :] + B[None, :, :]
        out[start:start + chunk] = np.maximum(pre, 0.0) @ model.w2 + model.b2
    return out


def local_loss(s):
    """``-ln(sigmoid(s))``, stable for large ``|s|``."""
    out = np.logaddexp(0.0, -np.asarray(s, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def weighted_triplet_term(y_ui, theta_ui, y_uj, theta_uj, s_uij, clamp=False):
    theta_ui = np.asarray(theta_ui, dtype=np.float64)
    theta_uj = np.asarray(theta_uj, dtype=np.float64)
    if np.any(theta_ui <= 0) or np.any(theta_uj <= 0):
        raise ValidationError("propensities must be strictly positive")
    term = (y_ui / theta_ui) * (1.0 - y_uj / theta_uj) * local_loss(s_uij)
    if clamp:
        term = np.maximum(term, 0.0)
    return float(term) if np.ndim(term) == 0 else term


@dataclass
class TripletBatch:
    """Sampled ``(u, i, j)`` triplets with the observations and propensities
    needed for inverse-propensity weighting."""

    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    y_pos: np.ndarray = None
    y_neg: np.ndarray = None
    theta_pos: np.ndarray = None
    theta_neg: np.ndarray = None

    def __post_init__(self):
        self.users = np.ascontiguousarray(self.users, dtype=np.int64)
        self.pos = np.ascontiguousarray(self.pos, dtype=np.int64)
        self.neg = np.ascontiguousarray(self.neg, dtype=np.int64)
        n = self.users.size
        if not (self.pos.size == self.neg.size == n):
            raise ValidationError("triplet arrays must have equal length")
        if np.any(self.pos == self.neg):
            raise ValidationError("triplet with i == j")
        self.y_pos = np.ones(n) if self.y_pos is None else np.asarray(self.y_pos, dtype=np.float64)
        self.y_neg = np.zeros(n) if self.y_neg is None else np.asarray(self.y_neg, dtype=np.float64)
        self.theta_pos = np.ones(n) if self.theta_pos is None else np.asarray(self.theta_pos, dtype=np.float64)
        self.theta_neg = np.ones(n) if self.theta_neg is None else np.asarray(self.theta_neg, dtype=np.float64)
        if np.any(self.theta_pos <= 0) or np.any(self.theta_neg <= 0):
            raise ValidationError("propensities must be strictly positive")

    def __len__(self):
        return self.users.size

    @property
    def triplets(self) -> np.ndarray:
        return np.stack([self.users, self.pos, self.neg], axis=1)

    @property
    def weights(self) -> np.ndarray:
        """Unclamped IPS coefficient of each triplet."""
        return (self.y_pos / self.theta_pos) * (1.0 - self.y_neg / self.theta_neg)

    def coefficients(self, clamp) -> np.ndarray:
        w = self.weights
        # l(s) > 0, so clamping the term is clamping its coefficient
        return np.maximum(w, 0.0) if clamp else w

    def take(self, idx) -> "TripletBatch":
        return TripletBatch(self.users[idx], self.pos[idx], self.neg[idx], self.y_pos[idx],
                            self.y_neg[idx], self.theta_pos[idx], self.theta_neg[idx])

    @classmethod
    def from_triplets(cls, triplets, interactions=None, propensity=None, item_features=None):
        """Build a batch, reading ``Y`` from ``interactions`` and theta from ``propensity``."""
        t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
        u, i, j = t[:, 0], t[:, 1], t[:, 2]
        y_i = y_j = None
        if interactions is not None:
            y_i = interactions.contains(u, i).astype(np.float64)
            y_j = interactions.contains(u, j).astype(np.float64)
        th_i = th_j = None
        if propensity is not None:
            th_i, th_j = _lookup_pair(propensity, u, i, j, item_features)
        return cls(u, i, j, y_i, y_j, th_i, th_j)


def _lookup_pair(propensity, users, pos, neg, item_features=None):
    if isinstance(propensity, NeuralPropensityModel):
        if item_features is None:
            raise ValidationError("neural propensity needs item content features")
        theta = propensity.predict(item_features)
        return theta[pos], theta[neg]
    return propensity.lookup(users, pos), propensity.lookup(users, neg)


def _l2(model):
    return float(np.sum(model.U * model.U) + np.sum(model.V * model.V))


def _forward_backward(model, batch, lam, clamp, masks=None, want_grad=True):
    """Objective, per-triplet scores and (optionally) parameter gradients.

    ``masks`` is a pair of inverted-dropout masks ``(m_pos, m_neg)`` of shape
    ``(n, hidden)`` for the neural backbone.
    """
    n = len(batch)
    if n == 0:
        raise ValidationError("empty triplet batch")
    _check_indices(model, batch.users, np.concatenate([batch.pos, batch.neg]))
    coef = np.ascontiguousarray(batch.coefficients(clamp))
    scale = 1.0 / n
    reg = lam * _l2(model)
    if model.backbone == "mf":
        if not want_grad:
            s = np.einsum("td,td->t", model.U[batch.users], model.V[batch.pos] - model.V[batch.neg])
            return float(coef @ local_loss(s)) * scale + reg, s, None
        gU = 2.0 * lam * model.U
        gV = 2.0 * lam * model.V
        total = kernels.mf_triplet_grad(model.U, model.V, batch.users, batch.pos, batch.neg,
                                        coef, scale, gU, gV)
        return total * scale + reg, None, {"U": gU, "V": gV}

    d = model.dim
    W1u, W1v = model.W1[:, :d], model.W1[:, d:]
    Uu = model.U[batch.users]
    Vi, Vj = model.V[batch.pos], model.V[batch.neg]
    pre_i = Uu @ W1u.T + Vi @ W1v.T + model.b1
    pre_j = Uu @ W1u.T + Vj @ W1v.T + model.b1
    h_i = np.maximum(pre_i, 0.0)
    h_j = np.maximum(pre_j, 0.0)
    if masks is not None:
        h_i = h_i * masks[0]
        h_j = h_j * masks[1]
    s = (h_i - h_j) @ model.w2
    obj = float(coef @ local_loss(s)) * scale + reg
    if not want_grad:
        return obj, s, None
    g = -scale * coef * _sigmoid(-s)
    gw2 = g @ (h_i - h_j)
    delta_i = g[:, None] * model.w2 * (pre_i > 0)
    delta_j = -g[:, None] * model.w2 * (pre_j > 0)
    if masks is not None:
        delta_i = delta_i * masks[0]
        delta_j = delta_j * masks[1]
    dsum = delta_i + delta_j
    gW1 = np.empty_like(model.W1)
    gW1[:, :d] = dsum.T @ Uu
    gW1[:, d:] = delta_i.T @ Vi + delta_j.T @ Vj
    gb1 = dsum.sum(axis=0)
    gU = 2.0 * lam * model.U
    gV = 2.0 * lam * model.V
    np.add.at(gU, batch.users, dsum @ W1u)
    np.add.at(gV, batch.pos, delta_i @ W1v)
    np.add.at(gV, batch.neg, delta_j @ W1v)
    return obj, s, {"U": gU, "V": gV, "W1": gW1, "b1": gb1, "w2": gw2}


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def batch_objective(model, batch: TripletBatch, lam=0.0, clamp=False, masks=None) -> float:
    """Mean weighted triplet term plus ``lam * (|U|^2 + |V|^2)``."""
    return _forward_backward(model, batch, lam, clamp, masks, want_grad=False)[0]


def objective_and_gradients(model, batch, lam=0.0, clamp=False, masks=None):
    obj, _, grads = _forward_backward(model, batch, lam, clamp, masks)
    return obj, grads


def gradients(model, batch, lam=0.0, clamp=False, masks=None) -> dict:
    """Exact gradients of ``batch_objective`` keyed by parameter name."""
    return objective_and_gradients(model, batch, lam, clamp, masks)[1]


def _sample_negatives(interactions: InteractionSet, users, rng):
    """Uniform negatives ``j`` with ``Y_uj = 0`` for each user in ``users``."""
    n_items = interactions.n_items
    neg = rng.integers(0, n_items, size=users.size)
    bad = np.nonzero(interactions.contains(users, neg))[0]
    while bad.size:
        neg[bad] = rng.integers(0, n_items, size=bad.size)
        bad = bad[interactions.contains(users[bad], neg[bad])]
    return neg


def _unsaturated_positives(interactions):
    counts = interactions.user_counts()
    ok = counts[interactions.users] < interactions.n_items
    if not ok.any():
        raise ValidationError("every user is positive on all items; no negatives to sample")
    return np.nonzero(ok)[0]


def sample_triplets(interactions: InteractionSet, n: int, seed=0) -> TripletBatch:
    """Draw ``n`` triplets: ``(u, i)`` uniform over positives, ``j`` uniform over
    that user's unobserved items. Users positive on every item are skipped."""
    if interactions.n_positives == 0:
        raise ValidationError("cannot sample triplets without positive interactions")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    candidates = _unsaturated_positives(interactions)
    pick = candidates[rng.integers(0, candidates.size, size=n)]
    users = interactions.users[pick]
    pos = interactions.items[pick]
    neg = _sample_negatives(interactions, users, rng)
    return TripletBatch(users, pos, neg)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    l2_lambda: float = 1e-2
    epochs: int = 500
    batch_size: int = 1024
    embedding_dim: int = 64
    hidden_dim: int | None = None
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    dropout_keep: float = 0.9
    clamp: bool = True
    init_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.l2_lambda < 0:
            raise ValidationError("learning_rate and l2_lambda must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1 or self.embedding_dim < 1:
            raise ValidationError("epochs, batch_size and embedding_dim must be positive")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValidationError("dropout_keep must lie in (0, 1]")
        if not 0.0 < self.rmsprop_decay < 1.0 or self.rmsprop_epsilon <= 0:
            raise ValidationError("invalid RMSProp constants")

    @classmethod
    def for_backbone(cls, backbone, **overrides):
        """Defaults for each backbone (MF: lr 1e-3, lambda 1e-2; neural: lr 1e-2, lambda 1e-3)."""
        base = {"mf": dict(learning_rate=1e-3, l2_lambda=1e-2),
                "neural": dict(learning_rate=1e-2, l2_lambda=1e-3)}[backbone]
        base.update(overrides)
        return cls(**base)


@dataclass
class TrainResult:
    model: FactorModel
    loss_trace: list = field(default_factory=list)
    propensity: NeuralPropensityModel | None = None


class _RMSProp:
    def __init__(self, params, decay, eps):
        self.decay, self.eps = decay, eps
        self.acc = {k: np.zeros(np.size(v)) for k, v in params.items()}

    def step(self, params, grads, lr):
        for k, p in params.items():
            flat = p.reshape(-1)
            kernels.rmsprop_update(flat, np.ascontiguousarray(grads[k]).reshape(-1),
                                   self.acc[k], lr, self.decay, self.eps)


def train(backbone, interactions: InteractionSet, propensity=None,
          config: TrainConfig | None = None, item_features=None, init: FactorModel | None = None,
          callback=None) -> TrainResult:
    """Fit a ranking model with RMSProp over sampled triplet batches.

    Each epoch pairs every positive with one fresh uniform negative, shuffles,
    and takes ``ceil(n_positives / batch_size)`` steps. ``propensity=None``
    trains the unweighted baseline. A ``NeuralPropensityModel`` in ``joint``
    mode has its parameters updated by the same optimizer.
    """
    config = config or TrainConfig.for_backbone(backbone)
    if interactions.n_positives == 0:
        raise ValidationError("cannot train without positive interactions")
    if isinstance(propensity, PropensityTable) and propensity.n_items != interactions.n_items:
        raise ValidationError("propensity table does not match the item index")
    rng = np.random.default_rng(config.seed)
    model = init.copy() if init is not None else init_model(
        backbone, interactions.n_users, interactions.n_items, config.embedding_dim,
        config.hidden_dim, seed=rng, std=config.init_std,
        user_ids=interactions.user_ids, item_ids=interactions.item_ids)
    params = model.params()
    opt = _RMSProp(params, config.rmsprop_decay, config.rmsprop_epsilon)

    joint = isinstance(propensity, NeuralPropensityModel) and propensity.training_mode == "joint"
    prop_model = None
    if joint:
        if item_features is None:
            raise ValidationError("joint propensity training needs item content features")
        prop_model = NeuralPropensityModel(propensity.weight.copy(), propensity.bias,
                                           "joint", propensity.floor)
        X = np.asarray(item_features, dtype=np.float64)
        prop_params = {"weight": prop_model.weight, "bias": np.array([prop_model.bias])}
        prop_opt = _RMSProp(prop_params, config.rmsprop_decay, config.rmsprop_epsilon)

    pool = _unsaturated_positives(interactions)
    n_pos = pool.size
    trace = []
    for epoch in range(config.epochs):
        order = pool[rng.permutation(n_pos)]
        users = interactions.users[order]
        pos = interactions.items[order]
        neg = _sample_negatives(interactions, users, rng)
        losses = []
        for start in range(0, n_pos, config.batch_size):
            sl = slice(start, start + config.batch_size)
            bu, bi, bj = users[sl], pos[sl], neg[sl]
            th_i = th_j = None
            if joint:
                prop_model.bias = float(prop_params["bias"][0])
                raw = prop_model.raw(X)
                theta = np.clip(raw, prop_model.floor, 1.0)
                th_i, th_j = theta[bi], theta[bj]
            elif propensity is not None:
                th_i, th_j = _lookup_pair(propensity, bu, bi, bj, item_features)
            batch = TripletBatch(bu, bi, bj, None, None, th_i, th_j)
            masks = None
            if model.backbone == "neural" and config.dropout_keep < 1.0:
                shape = (len(batch), model.hidden_dim)
                keep = config.dropout_keep
                masks = ((rng.random(shape) < keep) / keep, (rng.random(shape) < keep) / keep)
            obj, s, grads = _forward_backward(model, batch, config.l2_lambda, config.clamp, masks)
            if not np.isfinite(obj):
                raise NumericalError(f"non-finite training loss at epoch {epoch}", epoch=epoch)
            losses.append(obj)
            if joint:
                _joint_propensity_step(prop_model, prop_params, prop_opt, X, raw, batch,
                                       model, masks, config)
            opt.step(params, grads, config.learning_rate)
        mean_loss = float(np.mean(losses))
        trace.append(mean_loss)
        if not model.is_finite():
            raise NumericalError(f"non-finite parameters at epoch {epoch}", epoch=epoch)
        if callback is not None:
            callback(epoch, mean_loss)
    if joint:
        prop_model.bias = float(prop_params["bias"][0])
    return TrainResult(model, trace, prop_model)


def _joint_propensity_step(prop_model, prop_params, prop_opt, X, raw, batch, model, masks, config):
    # d term / d theta through the 1/theta factors; clamped thetas pass no gradient
    n = len(batch)
    if model.backbone == "mf":
        s = np.einsum("td,td->t", model.U[batch.users], model.V[batch.pos] - model.V[batch.neg])
    else:
        s = _forward_backward(model, batch, 0.0, False, masks, want_grad=False)[1]
    ell = local_loss(s)
    w = batch.weights
    live = w > 0 if config.clamp else np.ones(n, dtype=bool)
    ti, tj = batch.theta_pos, batch.theta_neg
    d_ti = np.where(live, -ell * batch.y_pos / ti ** 2 * (1.0 - batch.y_neg / tj), 0.0) / n
    d_tj = np.where(live, ell * batch.y_pos / ti * batch.y_neg / tj ** 2, 0.0) / n
    d_theta = np.bincount(batch.pos, d_ti, minlength=X.shape[0])
    d_theta += np.bincount(batch.neg, d_tj, minlength=X.shape[0])
    free = (raw > prop_model.floor) & (raw < 1.0)
    dz = d_theta * raw * (1.0 - raw) * free
    grads = {"weight": X.T @ dz, "bias": np.array([dz.sum()])}
    prop_opt.step(prop_params, grads, config.learning_rate)
