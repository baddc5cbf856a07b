"""Synthetic MNAR dissemination worlds with known exposure and interest.

A world fixes, for every user-item cell, an exposure probability ``theta``
and an interest probability ``gamma``. Shares are drawn as
``Y = Bernoulli(theta) * Bernoulli(gamma)``. Because both matrices are
known, the ideal ranking loss and the exact expectation of the IPS
estimator can be computed directly, which is what the oracles here do.

Construction:

* ``gamma = sigmoid(scale * <z_u, w_i> / sqrt(rank) + offset + tilt_u * fake_i)``
  from planted rank-``rank`` factors. ``tilt_u`` is the user's planted
  susceptibility logit, built from attributes (``true_beta``) and the first
  user factor (the confounder).
* ``theta = max_exposure * rank_i ** -popularity_exponent * activity_u`` where
  ``activity_u = (F_u / max F) ** user_activity_exponent``.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .dissemination import FactorModel, local_loss, score
from .errors import ValidationError
from .interactions import InteractionSet
from .propensity import PropensityTable

ATTRIBUTE_NAMES = ("verified", "org", "status_count", "friends_count", "followers_count",
                   "favorites_count", "gender", "age", "register_time")
BINARY_ATTRIBUTES = ("verified", "org", "gender")
ENUMERATION_CAP = 12


@dataclass
class WorldConfig:
    n_users: int = 200
    n_items: int = 50
    rank: int = 4
    popularity_exponent: float = 1.0
    user_activity_exponent: float = 0.0
    max_exposure: float = 1.0
    interest_scale: float = 3.0
    interest_offset: float = -2.0
    item_appeal_sd: float = 0.0
    fake_fraction: float = 0.5
    confounder_strength: float = 1.0
    follower_scale: float = 1.5
    true_beta: tuple = (-0.6, -0.4, -0.8, -0.3, 0.0, 0.1, 0.0, 0.05, 0.0)

    def validate(self):
        if self.n_users < 2 or self.n_items < 2:
            raise ValidationError("a world needs at least 2 users and 2 items")
        if self.rank < 1:
            raise ValidationError("rank must be positive")
        if not self.popularity_exponent > 0:
            raise ValidationError("popularity_exponent must be > 0")
        if self.user_activity_exponent < 0:
            raise ValidationError("user_activity_exponent must be >= 0")
        if not 0 < self.max_exposure <= 1:
            raise ValidationError("max_exposure must lie in (0, 1]")
        if not 0 <= self.fake_fraction <= 1:
            raise ValidationError("fake_fraction must lie in [0, 1]")
        if len(self.true_beta) != len(ATTRIBUTE_NAMES):
            raise ValidationError(f"true_beta needs {len(ATTRIBUTE_NAMES)} entries")


@dataclass
class SyntheticWorld:
    config: WorldConfig
    gamma: np.ndarray
    theta: np.ndarray
    follower_counts: np.ndarray
    attributes: np.ndarray
    true_beta: np.ndarray
    item_is_fake: np.ndarray
    user_factors: np.ndarray = field(repr=False, default=None)
    item_factors: np.ndarray = field(repr=False, default=None)
    popularity_rank: np.ndarray = field(repr=False, default=None)

    @property
    def n_users(self) -> int:
        return self.gamma.shape[0]

    @property
    def n_items(self) -> int:
        return self.gamma.shape[1]

    @property
    def popularity_exponent(self) -> float:
        return self.config.popularity_exponent

    @property
    def user_ids(self):
        return tuple(f"u{u}" for u in range(self.n_users))

    @property
    def item_ids(self):
        return tuple(f"n{i}" for i in range(self.n_items))

    @property
    def attribute_names(self):
        return ATTRIBUTE_NAMES

    def validate(self):
        if self.theta.shape != self.gamma.shape:
            raise ValidationError("theta and gamma shapes differ")
        if not np.all(self.theta > 0) or not np.all(self.theta <= 1):
            raise ValidationError("theta must lie in (0, 1]")
        if not np.all((self.gamma >= 0) & (self.gamma <= 1)):
            raise ValidationError("gamma must lie in [0, 1]")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def generate_world(config: WorldConfig | None = None, seed=0, **overrides) -> SyntheticWorld:
    config = config or WorldConfig()
    if overrides:
        config = WorldConfig(**{**asdict(config), **overrides})
    config.validate()
    n_u, n_i, r = config.n_users, config.n_items, config.rank
    rng = np.random.default_rng(seed)

    Z = rng.normal(size=(n_u, r))
    W = rng.normal(size=(n_i, r))
    n_fake = int(round(config.fake_fraction * n_i))
    is_fake = np.zeros(n_i, dtype=bool)
    is_fake[rng.permutation(n_i)[:n_fake]] = True
    ranks = rng.permutation(n_i) + 1

    # attributes share the first latent factor so that it confounds them
    conf = Z[:, 0]
    latent = 0.6 * conf[:, None] * rng.choice([-1.0, 1.0], size=len(ATTRIBUTE_NAMES)) \
        + rng.normal(size=(n_u, len(ATTRIBUTE_NAMES)))
    followers = np.floor(np.exp(config.follower_scale * latent[:, 4] + 4.0)).astype(np.int64)
    attrs = np.empty((n_u, len(ATTRIBUTE_NAMES)))
    for k, name in enumerate(ATTRIBUTE_NAMES):
        col = latent[:, k]
        if name in ("verified", "org"):
            attrs[:, k] = (col > 1.2).astype(float)
        elif name == "gender":
            attrs[:, k] = (col > 0.0).astype(float)
        elif name == "followers_count":
            attrs[:, k] = followers
        elif name.endswith("_count"):
            attrs[:, k] = np.floor(np.exp(config.follower_scale * col + 5.0))
        elif name == "age":
            attrs[:, k] = np.round(35.0 + 10.0 * col)
        else:
            attrs[:, k] = np.round(3000.0 + 900.0 * col)

    beta = np.asarray(config.true_beta, dtype=np.float64)
    std = (attrs - attrs.mean(0)) / np.where(attrs.std(0) > 0, attrs.std(0), 1.0)
    tilt = std @ beta + config.confounder_strength * conf

    appeal = config.item_appeal_sd * rng.normal(size=n_i)
    logits = config.interest_scale * (Z @ W.T) / math.sqrt(r) + config.interest_offset + appeal
    gamma = _sigmoid(logits + np.outer(tilt, is_fake.astype(float)))

    pop = ranks.astype(np.float64) ** (-config.popularity_exponent)
    if config.user_activity_exponent > 0:
        activity = (np.maximum(followers, 1) / max(followers.max(), 1)) ** config.user_activity_exponent
    else:
        activity = np.ones(n_u)
    theta = config.max_exposure * np.outer(activity, pop)
    theta = np.clip(theta, np.finfo(float).tiny, 1.0)

    world = SyntheticWorld(config, gamma, theta, followers, attrs, beta, is_fake, Z, W, ranks)
    world.validate()
    return world


def standard_world_config(**overrides) -> WorldConfig:
    """The 2000 x 300 all-fake world with power-law exposure used for the
    baseline-vs-IPS comparison."""
    base = dict(n_users=2000, n_items=300, fake_fraction=1.0, popularity_exponent=0.5,
                interest_offset=-1.0, item_appeal_sd=1.0)
    base.update(overrides)
    return WorldConfig(**base)


def sample_interactions(world: SyntheticWorld, seed=0) -> InteractionSet:
    """Independent ``Bernoulli(theta) * Bernoulli(gamma)`` draw per cell."""
    world.validate()
    rng = np.random.default_rng(seed)
    exposed = rng.random(world.theta.shape) < world.theta
    interested = rng.random(world.gamma.shape) < world.gamma
    return InteractionSet.from_dense(exposed & interested, user_ids=world.user_ids,
                                     item_ids=world.item_ids, item_is_fake=world.item_is_fake)


def _as_pairs(pairs):
    if isinstance(pairs, InteractionSet):
        return pairs.users, pairs.items
    if isinstance(pairs, tuple) and len(pairs) == 2:
        return np.asarray(pairs[0], dtype=np.int64), np.asarray(pairs[1], dtype=np.int64)
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def make_uniform_test(world: SyntheticWorld, holdout, seed=0, exposure=0.5, train=None,
                      return_exposure=False):
    """Redraw held-out cells under one constant exposure probability.

    Interest is still ``Bernoulli(gamma_ui)``; a cell is a test positive when
    both draws succeed. ``holdout`` may be an ``(users, items)`` tuple, an
    ``(n, 2)`` array or an ``InteractionSet``.
    """
    if not 0 < exposure <= 1:
        raise ValidationError("exposure must lie in (0, 1]")
    users, items = _as_pairs(holdout)
    if users.size and (users.max() >= world.n_users or items.max() >= world.n_items
                       or users.min() < 0 or items.min() < 0):
        raise ValidationError("holdout pair out of range")
    if train is not None and users.size and np.any(train.contains(users, items)):
        raise ValidationError("holdout pairs overlap training positives")
    rng = np.random.default_rng(seed)
    exposed = rng.random(users.size) < exposure
    interested = rng.random(users.size) < world.gamma[users, items]
    hit = exposed & interested
    test = InteractionSet.from_pairs(users[hit], items[hit], user_ids=world.user_ids,
                                     item_ids=world.item_ids, item_is_fake=world.item_is_fake,
                                     dedupe=True)
    if return_exposure:
        return test, exposed
    return test


def uniform_holdout_split(world: SyntheticWorld, train: InteractionSet, seed=0, exposure=0.5,
                          validation_fraction=0.0):
    """Uniform-exposure test (and optional validation) sets over all
    non-training cells.

    With ``validation_fraction > 0`` the held-out cells are partitioned at
    random and each part gets its own uniform redraw, so validation and test
    never share a cell. Returns ``(validation_or_None, test)``.
    """
    if not 0.0 <= validation_fraction < 1.0:
        raise ValidationError("validation_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    hu, hi = np.nonzero(~train.to_dense(dtype=bool))
    s_val, s_test = (int(x) for x in rng.integers(2**31, size=2))
    if validation_fraction == 0.0:
        return None, make_uniform_test(world, (hu, hi), s_test, exposure, train)
    in_val = rng.random(hu.size) < validation_fraction
    val = make_uniform_test(world, (hu[in_val], hi[in_val]), s_val, exposure, train)
    test = make_uniform_test(world, (hu[~in_val], hi[~in_val]), s_test, exposure, train)
    return val, test


def synthetic_content_features(world: SyntheticWorld, dims=16, seed=0, noise=0.5):
    """Stand-in news content vectors carrying a noisy exposure signal.

    Column 0 is standardized log-popularity plus noise, the next ``rank``
    columns copy the planted item factors (when known), the rest is noise.
    """
    if dims < 1:
        raise ValidationError("dims must be positive")
    rng = np.random.default_rng(seed)
    out = noise * rng.normal(size=(world.n_items, dims))
    logpop = np.log(world.theta.max(axis=0))
    sd = logpop.std()
    out[:, 0] += (logpop - logpop.mean()) / (sd if sd > 0 else 1.0)
    if world.item_factors is not None and dims > 1:
        r = min(dims - 1, world.item_factors.shape[1])
        out[:, 1:1 + r] += world.item_factors[:, :r]
    return out


def _triplet_array(triplets, world):
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    if t.size == 0:
        raise ValidationError("no triplets")
    if (t[:, 0].min() < 0 or t[:, 0].max() >= world.n_users
            or t[:, 1:].min() < 0 or t[:, 1:].max() >= world.n_items):
        raise ValidationError("triplet index out of range")
    if np.any(t[:, 1] == t[:, 2]):
        raise ValidationError("triplet with i == j")
    return t


def _triplet_losses(model, t):
    s = score(model, t[:, 0], t[:, 1]) - score(model, t[:, 0], t[:, 2])
    return np.atleast_1d(local_loss(s))


def ideal_loss_oracle(world: SyntheticWorld, model: FactorModel, triplets) -> float:
    """Mean of ``gamma_ui (1 - gamma_uj) l(s_uij)`` using the true interest."""
    t = _triplet_array(triplets, world)
    ell = _triplet_losses(model, t)
    g = world.gamma
    terms = g[t[:, 0], t[:, 1]] * (1.0 - g[t[:, 0], t[:, 2]]) * ell
    return math.fsum(terms) / len(t)


def _propensity_for(theta_hat, t):
    if isinstance(theta_hat, PropensityTable):
        return theta_hat.lookup(t[:, 0], t[:, 1]), theta_hat.lookup(t[:, 0], t[:, 2])
    th = np.asarray(theta_hat, dtype=np.float64)
    if th.ndim == 1:
        return th[t[:, 1]], th[t[:, 2]]
    return th[t[:, 0], t[:, 1]], th[t[:, 0], t[:, 2]]


def expected_unbiased_loss(world: SyntheticWorld, model: FactorModel, theta_hat, triplets,
                           mode="enumerate", n=None, seed=0) -> float:
    """Expectation of the IPS estimator over the interaction distribution.

    ``mode="enumerate"`` sums over all ``2**cells`` outcome matrices weighted
    by their probability (worlds of at most 12 cells). ``mode="monte_carlo"``
    averages the estimator over ``n`` sampled interaction matrices.
    ``theta_hat`` is a ``PropensityTable`` or a raw array (per item or per pair).
    """
    t = _triplet_array(triplets, world)
    ell = _triplet_losses(model, t)
    th_i, th_j = _propensity_for(theta_hat, t)
    if np.any(th_i <= 0) or np.any(th_j <= 0):
        raise ValidationError("propensities must be strictly positive")
    p = (world.theta * world.gamma).ravel()
    cell_i = t[:, 0] * world.n_items + t[:, 1]
    cell_j = t[:, 0] * world.n_items + t[:, 2]

    if mode == "enumerate":
        cells = p.size
        if cells > ENUMERATION_CAP:
            raise ValidationError(f"enumeration limited to {ENUMERATION_CAP} cells, world has {cells}")
        outcomes = np.array(list(itertools.product((0.0, 1.0), repeat=cells)))
        prob = np.prod(np.where(outcomes == 1.0, p, 1.0 - p), axis=1)
        yi, yj = outcomes[:, cell_i], outcomes[:, cell_j]
        per_outcome = ((yi / th_i) * (1.0 - yj / th_j) * ell).sum(axis=1) / len(t)
        return math.fsum(prob * per_outcome)

    if mode == "monte_carlo":
        if n is None or n < 1:
            raise ValidationError("monte_carlo mode needs n >= 1")
        rng = np.random.default_rng(seed)
        used = np.unique(np.concatenate([cell_i, cell_j]))
        where = {c: k for k, c in enumerate(used)}
        ci = np.array([where[c] for c in cell_i])
        cj = np.array([where[c] for c in cell_j])
        theta, gamma = world.theta.ravel()[used], world.gamma.ravel()[used]
        total = []
        for start in range(0, n, 4096):
            m = min(4096, n - start)
            y = (rng.random((m, used.size)) < theta) & (rng.random((m, used.size)) < gamma)
            y = y.astype(np.float64)
            vals = ((y[:, ci] / th_i) * (1.0 - y[:, cj] / th_j) * ell).sum(axis=1) / len(t)
            total.extend(vals.tolist())
        return math.fsum(total) / n

    raise ValidationError(f"unknown mode {mode!r}")


def all_triplets(n_users, n_items):
    """Every ``(u, i, j)`` with ``i != j``."""
    return np.array([(u, i, j) for u in range(n_users) for i in range(n_items)
                     for j in range(n_items) if i != j], dtype=np.int64)


def unbiasedness_suite(n_configs=50, seed=0, mc_sizes=(1000, 4000, 16000), mc_reps=30,
                       tol=1e-10):
    """Check the IPS estimator against the ideal loss on small random worlds.

    Every configuration is enumerated exactly with ``theta_hat = theta``.
    On the first world the Monte-Carlo root-mean-square error is measured at
    each size in ``mc_sizes``; ``mc_slope`` is its log-log slope against n,
    which should sit near -1/2. Returns a plain dict.
    """
    from .dissemination import init_model

    rng = np.random.default_rng(seed)
    shapes = [(u, i) for u in range(2, 7) for i in range(2, 13) if u * i <= ENUMERATION_CAP]
    rows = []
    for c in range(n_configs):
        n_u, n_i = shapes[rng.integers(len(shapes))]
        world = generate_world(WorldConfig(
            n_users=n_u, n_items=n_i, rank=2,
            popularity_exponent=float(rng.uniform(0.2, 2.0)),
            interest_offset=float(rng.normal(-1.0, 1.0)),
            item_appeal_sd=float(rng.uniform(0.0, 1.0)),
            fake_fraction=float(rng.uniform(0.0, 1.0))), seed=int(rng.integers(2**31)))
        backbone = "mf" if c % 2 == 0 else "neural"
        model = init_model(backbone, n_u, n_i, 3, seed=int(rng.integers(2**31)), std=1.0)
        t = all_triplets(n_u, n_i)
        ideal = ideal_loss_oracle(world, model, t)
        ips = expected_unbiased_loss(world, model, world.theta, t, mode="enumerate")
        rows.append({"config": c, "n_users": n_u, "n_items": n_i, "backbone": backbone,
                     "ideal": ideal, "ips": ips, "abs_error": abs(ips - ideal)})

    world = generate_world(WorldConfig(n_users=3, n_items=4, rank=2, popularity_exponent=0.7,
                                       interest_offset=0.0), seed=seed)
    model = init_model("mf", 3, 4, 3, seed=seed, std=1.0)
    t = all_triplets(3, 4)
    ideal = ideal_loss_oracle(world, model, t)
    rmse = []
    for n in mc_sizes:
        errs = [expected_unbiased_loss(world, model, world.theta, t, mode="monte_carlo", n=n,
                                       seed=int(rng.integers(2**31))) - ideal
                for _ in range(mc_reps)]
        rmse.append(math.sqrt(math.fsum(e * e for e in errs) / mc_reps))
    slope = float(np.polyfit(np.log(mc_sizes), np.log(rmse), 1)[0])
    max_err = max(r["abs_error"] for r in rows)
    return {"configs": rows, "max_abs_error": max_err, "enumeration_ok": bool(max_err < tol),
            "mc_sizes": list(mc_sizes), "mc_rmse": rmse, "mc_slope": slope,
            "mc_ok": bool(-0.75 < slope < -0.25)}


def confounded_regression_data(n_users=1000, rank=4, seed=0, effect=0.5,
                               confounder_effect=-2.0, attribute_noise=0.5,
                               surrogate_noise=0.05, outcome_noise=0.5, n_extra=3):
    """Outcome data where one attribute's marginal association flips sign.

    The first attribute loads on the planted confounder ``z[:, 0]``, which
    also drives the outcome with the opposite sign. The returned surrogate is
    an arbitrary invertible linear map of all planted factors plus noise, as a
    learned embedding would be. Returns ``(attributes, surrogate, outcome,
    true_beta)``.
    """
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(n_users, rank))
    a0 = Z[:, 0] + attribute_noise * rng.normal(size=n_users)
    extra = rng.normal(size=(n_users, n_extra)) + 0.3 * Z[:, 1:2]
    A = np.column_stack([a0, extra])
    beta = np.concatenate([[effect], rng.normal(scale=0.3, size=n_extra)])
    y = A @ beta + confounder_effect * Z[:, 0] + 0.5 * Z[:, 1] \
        + outcome_noise * rng.normal(size=n_users)
    mix = rng.normal(size=(rank, rank)) + 2.0 * np.eye(rank)
    surrogate = Z @ mix + surrogate_noise * rng.normal(size=(n_users, rank))
    return A, surrogate, y, beta


def _write_matrix(path, row_ids, col_ids, mat, first="user_id"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([first, *col_ids])
        for rid, row in zip(row_ids, mat):
            w.writerow([rid, *(repr(float(x)) for x in row)])


def _read_matrix(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return header[1:], [r[0] for r in body], np.array([[float(x) for x in r[1:]] for r in body])


def export_world(world: SyntheticWorld, directory):
    """Write ``theta.csv``, ``gamma.csv``, ``attributes.csv``, ``followers.csv``,
    ``items.csv`` and ``world.json`` into ``directory``.

    Matrix files have a ``user_id`` column followed by one column per item id
    in index order.
    """
    os.makedirs(directory, exist_ok=True)
    uids, iids = world.user_ids, world.item_ids
    _write_matrix(os.path.join(directory, "theta.csv"), uids, iids, world.theta)
    _write_matrix(os.path.join(directory, "gamma.csv"), uids, iids, world.gamma)
    _write_matrix(os.path.join(directory, "attributes.csv"), uids, ATTRIBUTE_NAMES, world.attributes)
    with open(os.path.join(directory, "followers.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "followers"])
        for uid, f in zip(uids, world.follower_counts):
            w.writerow([uid, int(f)])
    with open(os.path.join(directory, "items.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["news_id", "label", "popularity_rank"])
        for iid, fake, rank in zip(iids, world.item_is_fake, world.popularity_rank):
            w.writerow([iid, "fake" if fake else "true", int(rank)])
    meta = asdict(world.config)
    meta["true_beta"] = list(meta["true_beta"])
    with open(os.path.join(directory, "world.json"), "w") as fh:
        json.dump({"config": meta}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def import_world(directory) -> SyntheticWorld:
    with open(os.path.join(directory, "world.json")) as fh:
        meta = json.load(fh)["config"]
    meta["true_beta"] = tuple(meta["true_beta"])
    config = WorldConfig(**meta)
    _, _, theta = _read_matrix(os.path.join(directory, "theta.csv"))
    _, _, gamma = _read_matrix(os.path.join(directory, "gamma.csv"))
    _, _, attrs = _read_matrix(os.path.join(directory, "attributes.csv"))
    with open(os.path.join(directory, "followers.csv"), newline="") as fh:
        followers = np.array([int(r["followers"]) for r in csv.DictReader(fh)], dtype=np.int64)
    with open(os.path.join(directory, "items.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    is_fake = np.array([r["label"] == "fake" for r in rows])
    ranks = np.array([int(r["popularity_rank"]) for r in rows])
    world = SyntheticWorld(config, gamma, theta, followers, attrs,
                           np.asarray(config.true_beta, dtype=np.float64), is_fake,
                           popularity_rank=ranks)
    world.validate()
    return world
