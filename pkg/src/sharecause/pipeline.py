"""Experiment configuration and the repetition harness.

A run goes generate/ingest -> propensity -> train -> evaluate -> causal ->
behavior for each repetition, then aggregates. Every artifact lands under the
output directory, and ``manifest.json`` records the config, the derived
seeds and sha256 hashes of inputs and outputs, so a report can be rebuilt
exactly from it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import behavior as bh
from . import causal as cz
from . import io as sio
from . import synthgen as sg
from .dissemination import TrainConfig, train
from .errors import NumericalError, ValidationError
from .eval_rank import evaluate
from .interactions import InteractionSet
from .propensity import (PropensityTable, fit_neural_propensity, news_propensity,
                         positivity_report, user_news_propensity)

log = logging.getLogger(__name__)

STAGES = ("generate", "propensity", "train", "evaluate", "causal", "behavior")
VARIANTS = ("none", "news", "user_news", "neural", "true")
# outcome-model name for each embedding source
CAUSAL_NAMES = {"none": "LR-Basic", "news": "LR-N", "user_news": "LR-U",
                "neural": "LR-Neu", "true": "LR-True"}
_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(master: int, *path: int) -> int:
    """Mix a master seed with a path of integers into a 63-bit seed."""
    state = splitmix64(int(master) & _MASK64)
    for p in path:
        state = splitmix64(state ^ (int(p) & _MASK64))
    return state >> 1


# --- configuration ----------------------------------------------------------

def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _opt_path(text):
    t = text.strip()
    return None if t.lower() in ("", "none") else t


def _list(cast):
    def parse(text):
        return tuple(cast(x.strip()) for x in text.split(",") if x.strip())
    return parse


_PARSERS = {
    "source": str, "interactions": _opt_path, "news": _opt_path, "news_features": _opt_path,
    "attributes": _opt_path,
    "n_users": int, "n_items": int, "rank": int, "popularity_exponent": float,
    "user_activity_exponent": float, "max_exposure": float, "interest_scale": float,
    "interest_offset": float, "item_appeal_sd": float, "fake_fraction": float,
    "confounder_strength": float, "follower_scale": float, "content_dims": int,
    "backbone": str, "variants": _list(str), "cohorts": _list(str),
    "learning_rate": _opt_float, "l2_lambda": _opt_float, "epochs": int, "batch_size": int,
    "embedding_dim": int, "hidden_dim": _opt_int, "rmsprop_decay": float,
    "rmsprop_epsilon": float, "dropout_keep": float, "clamp": _bool, "init_std": float,
    "lambda_grid": _list(float), "validation_fraction": float,
    "eta": float, "floor": float, "neural_iters": int,
    "ks": _list(int), "split_ratio": float, "test_exposure": float,
    "repetitions": int, "seed": int, "stages": _list(str),
    "causal_level": float, "causal_train_ratio": float,
    "behavior_variant": str, "behavior_eps": _opt_float, "behavior_min_pts": _opt_int,
    "save_models": _bool,
}


@dataclass
class ExperimentConfig:
    source: str = "synthetic"
    interactions: str | None = None
    news: str | None = None
    news_features: str | None = None
    attributes: str | None = None
    # synthetic world; defaults follow standard_world_config with true news mixed in
    n_users: int = 2000
    n_items: int = 300
    rank: int = 4
    popularity_exponent: float = 0.5
    user_activity_exponent: float = 0.0
    max_exposure: float = 1.0
    interest_scale: float = 3.0
    interest_offset: float = -1.0
    item_appeal_sd: float = 1.0
    fake_fraction: float = 0.5
    confounder_strength: float = 1.0
    follower_scale: float = 1.5
    content_dims: int = 16
    backbone: str = "mf"
    variants: tuple = ("none", "news", "user_news")
    cohorts: tuple = ("fake", "true")
    # None means the backbone default
    learning_rate: float | None = None
    l2_lambda: float | None = None
    epochs: int = 500
    batch_size: int = 1024
    embedding_dim: int = 64
    hidden_dim: int | None = None
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    dropout_keep: float = 0.9
    clamp: bool = True
    init_std: float = 0.01
    lambda_grid: tuple = ()
    validation_fraction: float = 0.0
    eta: float = 0.5
    floor: float = 1e-3
    neural_iters: int = 5000
    ks: tuple = (20, 40, 60, 80)
    split_ratio: float = 0.8
    test_exposure: float = 0.5
    repetitions: int = 5
    seed: int = 0
    stages: tuple = STAGES
    causal_level: float = 0.95
    causal_train_ratio: float = 0.8
    behavior_variant: str = "auto"
    behavior_eps: float | None = None
    behavior_min_pts: int | None = None
    save_models: bool = True

    @classmethod
    def parse(cls, text, origin="<config>") -> "ExperimentConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        values, seen = {}, {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{origin}:{lineno}: expected key = value")
            key, val = (x.strip() for x in line.split("=", 1))
            if key not in _PARSERS:
                raise ValidationError(f"{origin}:{lineno}: unknown key {key!r}")
            if key in seen:
                raise ValidationError(f"{origin}:{lineno}: {key!r} already set on line {seen[key]}")
            try:
                values[key] = _PARSERS[key](val)
            except ValueError as exc:
                raise ValidationError(f"{origin}:{lineno}: bad value for {key!r}: {exc}") from None
            seen[key] = lineno
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        cfg = cls.parse(text, origin=str(path))
        # relative data paths resolve against the config file
        base = os.path.dirname(os.path.abspath(path))
        for key in ("interactions", "news", "news_features", "attributes"):
            p = getattr(cfg, key)
            if p is not None and not os.path.isabs(p):
                setattr(cfg, key, os.path.join(base, p))
        return cfg

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return ExperimentConfig(**{**asdict(self), **kw})

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = "none"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def as_dict(self):
        return {f.name: (list(getattr(self, f.name)) if isinstance(getattr(self, f.name), tuple)
                         else getattr(self, f.name)) for f in fields(self)}

    def world_config(self) -> sg.WorldConfig:
        return sg.WorldConfig(n_users=self.n_users, n_items=self.n_items, rank=self.rank,
                              popularity_exponent=self.popularity_exponent,
                              user_activity_exponent=self.user_activity_exponent,
                              max_exposure=self.max_exposure, interest_scale=self.interest_scale,
                              interest_offset=self.interest_offset,
                              item_appeal_sd=self.item_appeal_sd,
                              fake_fraction=self.fake_fraction,
                              confounder_strength=self.confounder_strength,
                              follower_scale=self.follower_scale)

    def train_config(self, seed, l2_lambda=None) -> TrainConfig:
        kw = dict(epochs=self.epochs, batch_size=self.batch_size,
                  embedding_dim=self.embedding_dim, hidden_dim=self.hidden_dim,
                  rmsprop_decay=self.rmsprop_decay, rmsprop_epsilon=self.rmsprop_epsilon,
                  dropout_keep=self.dropout_keep, clamp=self.clamp, init_std=self.init_std,
                  seed=seed)
        if self.learning_rate is not None:
            kw["learning_rate"] = self.learning_rate
        lam = l2_lambda if l2_lambda is not None else self.l2_lambda
        if lam is not None:
            kw["l2_lambda"] = lam
        return TrainConfig.for_backbone(self.backbone, **kw)

    def validate(self):
        """Check everything that can be checked before any heavy work."""
        if self.source not in ("synthetic", "files"):
            raise ValidationError("source must be 'synthetic' or 'files'")
        if self.backbone not in ("mf", "neural"):
            raise ValidationError("backbone must be 'mf' or 'neural'")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad or not self.variants:
            raise ValidationError(f"unknown propensity variant {bad[0] if bad else '(none given)'!r}")
        if len(set(self.variants)) != len(self.variants):
            raise ValidationError("variants must be distinct")
        if not self.cohorts or any(c not in ("fake", "true") for c in self.cohorts):
            raise ValidationError("cohorts must be a nonempty subset of fake,true")
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ValidationError(f"unknown stage {bad[0]!r}")
        if self.repetitions < 1:
            raise ValidationError("repetitions must be >= 1")
        if not 0 < self.split_ratio < 1 or not 0 < self.causal_train_ratio < 1:
            raise ValidationError("split ratios must lie strictly between 0 and 1")
        if not 0 <= self.validation_fraction < 1:
            raise ValidationError("validation_fraction must lie in [0, 1)")
        if self.lambda_grid and self.validation_fraction == 0:
            raise ValidationError("lambda_grid needs validation_fraction > 0")
        if any(lam < 0 for lam in self.lambda_grid):
            raise ValidationError("lambda_grid values must be nonnegative")
        if not self.ks or min(self.ks) < 1:
            raise ValidationError("ks must be positive integers")
        if self.behavior_variant != "auto" and self.behavior_variant not in self.variants:
            raise ValidationError("behavior_variant must be one of the trained variants")
        if "true" in self.variants and self.source != "synthetic":
            raise ValidationError("the 'true' propensity variant exists only for synthetic worlds")
        if "behavior" in self.stages and set(self.cohorts) != {"fake", "true"}:
            raise ValidationError("the behavior stage needs both fake and true cohorts")
        self.train_config(0)
        if self.source == "synthetic":
            self.world_config().validate()
            if "true" in self.cohorts and self.fake_fraction >= 1.0:
                raise ValidationError("cohort 'true' needs fake_fraction < 1")
            if "fake" in self.cohorts and self.fake_fraction <= 0.0:
                raise ValidationError("cohort 'fake' needs fake_fraction > 0")
            if "causal" in self.stages and not 0 < self.fake_fraction < 1:
                raise ValidationError("the causal stage needs both fake and true news")
        else:
            for key in ("interactions", "news"):
                if getattr(self, key) is None:
                    raise ValidationError(f"source=files requires {key!r}")
            needs_attrs = "causal" in self.stages or "user_news" in self.variants
            if needs_attrs and self.attributes is None:
                raise ValidationError("user attributes are required for causal/user_news")
            for key in ("interactions", "news", "news_features", "attributes"):
                p = getattr(self, key)
                if p is not None and not os.path.isfile(p):
                    raise ValidationError(f"{key} file not found: {p}")
        return self


# --- run state --------------------------------------------------------------

class PipelineError(RuntimeError):
    """A stage failed; ``manifest`` holds what was written before the failure."""

    def __init__(self, stage, message, manifest=None, cause=None):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage
        self.manifest = manifest
        self.cause = cause


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class _Data:
    interactions: InteractionSet  # all observed positives
    train: InteractionSet
    test: InteractionSet
    validation: InteractionSet | None
    followers: np.ndarray | None
    attributes: cz.AttributeTable | None
    features: np.ndarray | None
    world: sg.SyntheticWorld | None


def _cohort_mask(data: _Data, cohort):
    fake = data.interactions.item_is_fake
    return fake if cohort == "fake" else ~fake


def _restrict(s: InteractionSet | None, keep):
    return None if s is None else s.restrict_items(keep)


def _ingest(cfg: ExperimentConfig, seed) -> _Data:
    if cfg.source == "synthetic":
        world = sg.generate_world(cfg.world_config(), seed=derive_seed(seed, 1))
        Y = sg.sample_interactions(world, seed=derive_seed(seed, 2))
        train_set, _ = sio.split_train_test(Y, cfg.split_ratio, "random", derive_seed(seed, 3))
        val, test = sg.uniform_holdout_split(world, train_set, derive_seed(seed, 4),
                                             cfg.test_exposure, cfg.validation_fraction)
        attrs = cz.AttributeTable(world.user_ids, sg.ATTRIBUTE_NAMES, world.attributes)
        feats = sg.synthetic_content_features(world, cfg.content_dims, derive_seed(seed, 5))
        return _Data(Y, train_set, test, val, world.follower_counts.astype(np.float64),
                     attrs, feats, world)
    news = sio.load_news(cfg.news, cfg.news_features)
    probe = sio.load_interactions(cfg.interactions)
    news = news.align(probe.item_ids)
    Y = sio.load_interactions(cfg.interactions, probe.user_ids, probe.item_ids, news.is_fake)
    attrs = followers = None
    if cfg.attributes is not None:
        attrs = sio.load_user_attributes(cfg.attributes).align(Y.user_ids)
        followers = attrs.column("followers_count")
    feats = news.features
    if feats is None and news.texts is not None:
        feats = sio.featurize_content(news.texts, max(cfg.content_dims, 2))
    train_set, test = sio.split_train_test(Y, cfg.split_ratio, "random", derive_seed(seed, 3))
    val = None
    if cfg.validation_fraction > 0:
        train_set, val = sio.split_train_test(train_set, 1.0 - cfg.validation_fraction,
                                              "random", derive_seed(seed, 4))
    return _Data(Y, train_set, test, val, followers, attrs, feats, None)


def _propensity(cfg, variant, train_set: InteractionSet, data: _Data, keep):
    if variant == "none":
        return None
    if variant == "news":
        return news_propensity(train_set, cfg.eta, cfg.floor)
    if variant == "user_news":
        return user_news_propensity(train_set, data.followers, cfg.eta, cfg.floor)
    if variant == "true":
        theta = data.world.theta[:, keep]
        return PropensityTable.from_matrix(theta, floor=cfg.floor, item_ids=train_set.item_ids,
                                           user_ids=train_set.user_ids)
    if data.features is None:
        raise ValidationError("the neural propensity variant needs news content features")
    model = fit_neural_propensity(data.features[keep], train_set, n_iter=cfg.neural_iters,
                                  eta=cfg.eta, floor=cfg.floor)
    return model.table(data.features[keep], train_set.item_ids)


def _summary(values):
    a = np.asarray(values, dtype=np.float64)
    sd = float(a.std(ddof=1)) if a.size > 1 else 0.0
    return {"mean": float(a.mean()), "sd": sd, "n": int(a.size)}


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])


class _Run:
    def __init__(self, cfg: ExperimentConfig, out_dir, config_path=None):
        self.cfg = cfg
        self.out = out_dir
        self.inputs = {}
        if config_path is not None:
            self.inputs["config"] = sha256_file(config_path)
        for key in ("interactions", "news", "news_features", "attributes"):
            p = getattr(cfg, key) if cfg.source == "files" else None
            if p is not None:
                self.inputs[key] = sha256_file(p)
        self.seeds = [derive_seed(cfg.seed, r) for r in range(cfg.repetitions)]
        self.completed = []
        self.outputs = []

    def path(self, *parts):
        p = os.path.join(self.out, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        self.outputs.append(os.path.relpath(p, self.out))
        return p

    def manifest(self, status, stage=None, error=None):
        outs = {}
        for rel in sorted(set(self.outputs)):
            full = os.path.join(self.out, rel)
            if os.path.exists(full):
                outs[rel] = sha256_file(full)
        m = {"config": self.cfg.as_dict(), "master_seed": self.cfg.seed,
             "repetition_seeds": self.seeds, "inputs": self.inputs,
             "stages_completed": self.completed, "status": status, "outputs": outs}
        if stage is not None:
            m["failed_stage"] = stage
            m["error"] = error
        _dump_json(m, os.path.join(self.out, "manifest.json"))
        return m


def run_pipeline(cfg: ExperimentConfig, out_dir, config_path=None, progress=None) -> dict:
    """Run every enabled stage for every repetition and aggregate.

    Returns the report dict also written to ``report.json``. Any stage
    failure raises ``PipelineError`` after writing a partial manifest.
    """
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    run = _Run(cfg, out_dir, config_path)
    say = progress or (lambda msg: None)
    rows, causal_rows, behavior_rows = [], [], []
    for rep, seed in enumerate(run.seeds):
        rep_dir = f"rep{rep}"
        stage = "generate"
        try:
            say(f"rep {rep}: {stage}")
            data = _ingest(cfg, seed)
            sio.write_interactions(data.train, run.path(rep_dir, "train.csv"))
            sio.write_interactions(data.test, run.path(rep_dir, "test.csv"))
            if data.validation is not None:
                sio.write_interactions(data.validation, run.path(rep_dir, "validation.csv"))
            _mark(run, stage, rep)
            if "propensity" not in cfg.stages:
                continue

            models, tables = {}, {}
            for cohort in cfg.cohorts:
                keep = _cohort_mask(data, cohort)
                if not keep.any():
                    raise ValidationError(f"no {cohort} news items")
                tr = data.train.restrict_items(keep)
                stage = "propensity"
                for v in cfg.variants:
                    say(f"rep {rep}: {stage} {cohort}/{v}")
                    table = _propensity(cfg, v, tr, data, keep)
                    tables[cohort, v] = table
                    if table is not None:
                        table.to_csv(run.path(rep_dir, f"propensity_{cohort}_{v}.csv"))
                        rep_pos = positivity_report(table)
                        _dump_json(rep_pos.as_dict(),
                                   run.path(rep_dir, f"positivity_{cohort}_{v}.json"))
                _mark(run, stage, rep)
                if "train" not in cfg.stages:
                    continue
                stage = "train"
                for vi, v in enumerate(cfg.variants):
                    say(f"rep {rep}: {stage} {cohort}/{v}")
                    tseed = derive_seed(seed, 10, vi, cohort == "true")
                    result, lam, val_score = _fit(cfg, tr, tables[cohort, v], tseed,
                                                  _restrict(data.validation, keep))
                    models[cohort, v] = result.model
                    sio.write_loss_trace(result.loss_trace,
                                         run.path(rep_dir, f"loss_{cohort}_{v}.csv"))
                    if cfg.save_models:
                        sio.save_model(result.model, run.path(rep_dir, f"model_{cohort}_{v}.txt"))
                    if "evaluate" not in cfg.stages:
                        continue
                    stage = "evaluate"
                    te = data.test.restrict_items(keep)
                    rep_m = evaluate(result.model, te, cfg.ks, tr)
                    rep_m.to_json(run.path(rep_dir, f"metrics_{cohort}_{v}.json"))
                    rows.append({"rep": rep, "seed": seed, "cohort": cohort, "variant": v,
                                 "l2_lambda": lam, "validation_recall": val_score,
                                 "n_users": rep_m.n_users, "recall": rep_m.recall,
                                 "ndcg": rep_m.ndcg})
                    stage = "train"
                _mark(run, "train", rep)
                if "evaluate" in cfg.stages:
                    _mark(run, "evaluate", rep)

            if "causal" in cfg.stages and models:
                stage = "causal"
                say(f"rep {rep}: {stage}")
                causal_rows.extend(_causal(cfg, run, rep_dir, data, models, seed, rep))
                _mark(run, stage, rep)
            if "behavior" in cfg.stages and models:
                stage = "behavior"
                say(f"rep {rep}: {stage}")
                behavior_rows.append(_behavior(cfg, run, rep_dir, data, models, seed, rep))
                _mark(run, stage, rep)
        except (ValidationError, NumericalError, ValueError, FloatingPointError,
                np.linalg.LinAlgError) as exc:
            m = run.manifest("failed", stage, str(exc))
            raise PipelineError(stage, str(exc), m, exc) from exc

    report = _aggregate(cfg, run, rows, causal_rows, behavior_rows)
    run.manifest("ok")
    return report


def _mark(run, stage, rep):
    tag = f"rep{rep}:{stage}"
    if tag not in run.completed:
        run.completed.append(tag)


def _fit(cfg, tr, table, seed, validation):
    """Train once, or once per grid value keeping the best validation Recall@K."""
    if not cfg.lambda_grid:
        return train(cfg.backbone, tr, table, cfg.train_config(seed)), \
            cfg.train_config(seed).l2_lambda, None
    k = min(cfg.ks)
    best = None
    for lam in cfg.lambda_grid:
        res = train(cfg.backbone, tr, table, cfg.train_config(seed, lam))
        score = evaluate(res.model, validation, [k], tr).recall[0]
        if best is None or score > best[2]:
            best = (res, lam, score)
    return best


def _causal(cfg, run, rep_dir, data: _Data, models, seed, rep):
    if data.attributes is None:
        raise ValidationError("causal stage needs user attributes")
    sus = cz.susceptibility_vector(data.interactions)
    users = np.nonzero(sus.defined)[0]
    if users.size <= len(data.attributes.names) + 2:
        raise ValidationError("too few users with shares for the outcome model")
    A = data.attributes.standardized().rows(users)
    y = sus.values[users]
    tr_idx, te_idx = cz.split_users(users.size, cfg.causal_train_ratio, derive_seed(seed, 20))
    blocks = {"LR": None}
    for v in cfg.variants:
        if ("fake", v) in models:
            blocks[CAUSAL_NAMES[v]] = models["fake", v].U[users]
    fits, out = {}, []
    for name, U in blocks.items():
        fit_tr = cz.fit_outcome_model(A.rows(tr_idx), None if U is None else U[tr_idx],
                                      y[tr_idx], level=cfg.causal_level)
        pred = cz.predict_susceptibility(fit_tr, A.values[te_idx],
                                         None if U is None else U[te_idx])
        mse, mae = cz.regression_metrics(pred, y[te_idx])
        fits[name] = cz.fit_outcome_model(A, U, y, level=cfg.causal_level)
        fits[name].to_json(run.path(rep_dir, f"causal_{name}.json"))
        out.append({"rep": rep, "model": name, "mse": mse, "mae": mae,
                    "n_users": int(users.size), "n_zero_fake": int(sus.zero_fake[users].sum())})
    cz.compare_effect_estimates(fits).to_csv(run.path(rep_dir, "effects.csv"))
    return out


def _behavior(cfg, run, rep_dir, data: _Data, models, seed, rep):
    v = cfg.behavior_variant
    if v == "auto":
        v = next((x for x in ("user_news", "news", "neural", "true") if x in cfg.variants),
                 cfg.variants[0])
    sus = cz.susceptibility_vector(data.train)
    fake_u = np.nonzero(sus.n_fake > 0)[0]
    true_u = np.nonzero((sus.n_true > 0) & (sus.n_fake == 0))[0]
    if fake_u.size < 2 or true_u.size < 2:
        raise ValidationError("behavior stage needs at least 2 users in each cohort")
    ids = data.train.user_ids
    fake = bh.EmbeddingSample([ids[u] for u in fake_u], models["fake", v].U[fake_u], "fake")
    true_ = bh.EmbeddingSample([ids[u] for u in true_u], models["true", v].U[true_u], "true")
    fake, true_ = bh.balance_cohorts(fake, true_, derive_seed(seed, 30))
    rpt = bh.compare_behaviors(fake, true_, cfg.behavior_eps, cfg.behavior_min_pts)
    rpt.to_json(run.path(rep_dir, "behavior.json"))
    rpt.projections_to_csv(run.path(rep_dir, "projections.csv"))
    return {"rep": rep, "variant": v, **{f"{c}_{k}": val for c, s in
                                         (("fake", rpt.fake), ("true", rpt.true))
                                         for k, val in (("n_clusters", s.n_clusters),
                                                        ("silhouette", s.silhouette))}}


def _aggregate(cfg, run, rows, causal_rows, behavior_rows):
    report = {"repetitions": cfg.repetitions, "ks": list(cfg.ks), "per_repetition": rows}
    if rows:
        agg = []
        for cohort in cfg.cohorts:
            for v in cfg.variants:
                sel = [r for r in rows if r["cohort"] == cohort and r["variant"] == v]
                if not sel:
                    continue
                entry = {"cohort": cohort, "variant": v}
                for j, k in enumerate(cfg.ks):
                    entry[f"recall@{k}"] = _summary([r["recall"][j] for r in sel])
                    entry[f"ndcg@{k}"] = _summary([r["ndcg"][j] for r in sel])
                base = [r for r in rows if r["cohort"] == cohort and r["variant"] == "none"]
                if base and v != "none":
                    k0 = cfg.ks.index(min(cfg.ks))
                    for metric in ("recall", "ndcg"):
                        rel = [s[metric][k0] / b[metric][k0] - 1.0 if b[metric][k0] > 0 else math.nan
                               for s, b in zip(sel, base)]
                        wins = sum(s[metric][k0] > b[metric][k0] for s, b in zip(sel, base))
                        entry[f"{metric}@{min(cfg.ks)}_vs_baseline"] = {
                            "mean_relative_improvement": float(np.mean(rel)),
                            "wins": int(wins), "n": len(rel)}
                agg.append(entry)
        report["aggregate"] = agg
        header = ["rep", "seed", "cohort", "variant", "l2_lambda"] + \
            [f"recall@{k}" for k in cfg.ks] + [f"ndcg@{k}" for k in cfg.ks]
        _write_rows(run.path("metrics.csv"), header,
                    [[r["rep"], r["seed"], r["cohort"], r["variant"], float(r["l2_lambda"]),
                      *map(float, r["recall"]), *map(float, r["ndcg"])] for r in rows])
    if causal_rows:
        names = list(dict.fromkeys(r["model"] for r in causal_rows))
        report["causal"] = {"per_repetition": causal_rows, "aggregate": [
            {"model": n, "mse": _summary([r["mse"] for r in causal_rows if r["model"] == n]),
             "mae": _summary([r["mae"] for r in causal_rows if r["model"] == n])} for n in names]}
    if behavior_rows:
        report["behavior"] = behavior_rows
    _dump_json(report, run.path("report.json"))
    return report
