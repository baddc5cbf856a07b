"""Command-line entry point: ``sharecause <command> [options]``.

Exit status is 0 on success, 1 on invalid input and 2 on runtime or
numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import behavior as bh
from . import causal as cz
from . import io as sio
from . import synthgen as sg
from .dissemination import train
from .errors import NumericalError, ValidationError
from .eval_rank import evaluate
from .pipeline import (CAUSAL_NAMES, ExperimentConfig, PipelineError, derive_seed,
                       run_pipeline)
from .propensity import (PropensityTable, fit_neural_propensity, news_propensity,
                         positivity_report, user_news_propensity)

log = logging.getLogger("sharecause")


def _dump(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _train_overrides(cfg, args):
    kw = {}
    for flag, key in (("backbone", "backbone"), ("epochs", "epochs"),
                      ("learning_rate", "learning_rate"), ("l2_lambda", "l2_lambda"),
                      ("embedding_dim", "embedding_dim")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[key] = v
    return cfg.with_overrides(**kw) if kw else cfg


def _catalogs(args):
    """Item labels and features from ``--news`` when given."""
    if getattr(args, "news", None) is None:
        return None
    return sio.load_news(args.news, getattr(args, "news_features", None))


def _load_pairs(path, news=None, users=None):
    user_ids = None if users is None else sio.read_id_list(users, "user_id")
    if news is None:
        return sio.load_interactions(path, user_ids)
    return sio.load_interactions(path, user_ids, news.news_ids, news.is_fake)


def _reindex(pairs, user_ids, item_ids, what):
    """Map ``pairs`` onto a model's index, dropping ids the model never saw."""
    uidx = {u: k for k, u in enumerate(user_ids)}
    iidx = {i: k for k, i in enumerate(item_ids)}
    u = [uidx.get(pairs.user_ids[x], -1) for x in pairs.users]
    i = [iidx.get(pairs.item_ids[x], -1) for x in pairs.items]
    u, i = np.array(u, dtype=np.int64), np.array(i, dtype=np.int64)
    ok = (u >= 0) & (i >= 0)
    if not ok.all():
        log.warning("%s: dropped %d pairs with users or items unknown to the model",
                    what, int((~ok).sum()))
    return sio.InteractionSet.from_pairs(u[ok], i[ok], len(user_ids), len(item_ids),
                                         user_ids=user_ids, item_ids=item_ids)


# --- commands ---------------------------------------------------------------

def cmd_generate(args, cfg):
    world = sg.generate_world(cfg.world_config(), seed=derive_seed(cfg.seed, 1))
    Y = sg.sample_interactions(world, seed=derive_seed(cfg.seed, 2))
    train_set, _ = sio.split_train_test(Y, cfg.split_ratio, "random", derive_seed(cfg.seed, 3))
    val, test = sg.uniform_holdout_split(world, train_set, derive_seed(cfg.seed, 4),
                                         cfg.test_exposure, cfg.validation_fraction)
    sg.export_world(world, _out(args, "world"))
    sio.write_id_list(world.user_ids, _out(args, "users.csv"), "user_id")
    sio.write_interactions(Y, _out(args, "interactions.csv"))
    sio.write_interactions(train_set, _out(args, "train.csv"))
    sio.write_interactions(test, _out(args, "test.csv"))
    if val is not None:
        sio.write_interactions(val, _out(args, "validation.csv"))
    sio.write_user_attributes(cz.AttributeTable(world.user_ids, sg.ATTRIBUTE_NAMES,
                                                world.attributes), _out(args, "attributes.csv"))
    feats = sg.synthetic_content_features(world, cfg.content_dims, derive_seed(cfg.seed, 5))
    sio.write_news(sio.NewsTable(world.item_ids, world.item_is_fake), _out(args, "news.csv"))
    sio.write_features(world.item_ids, feats, _out(args, "news_features.csv"))
    return {"n_users": world.n_users, "n_items": world.n_items,
            "n_positives": Y.n_positives, "n_train": train_set.n_positives,
            "n_test": test.n_positives}


def cmd_propensity(args, cfg):
    news = _catalogs(args)
    Y = _load_pairs(args.interactions, news)
    if args.kind == "news":
        table = news_propensity(Y, cfg.eta, cfg.floor)
    elif args.kind == "user_news":
        if args.attributes is None:
            raise ValidationError("--attributes is required for user_news propensity")
        attrs = sio.load_user_attributes(args.attributes)
        followers = dict(zip(attrs.user_ids, attrs.column("followers_count")))
        table = user_news_propensity(Y, followers, cfg.eta, cfg.floor)
    else:
        if news is None or news.features is None:
            raise ValidationError("neural propensity needs --news and --news-features")
        feats = news.align(Y.item_ids).features
        model = fit_neural_propensity(feats, Y, n_iter=cfg.neural_iters, eta=cfg.eta,
                                      floor=cfg.floor)
        table = model.table(feats, Y.item_ids)
    table.to_csv(_out(args, "propensity.csv"))
    rep = positivity_report(table)
    _dump(rep.as_dict(), _out(args, "positivity.json"))
    return rep.as_dict()


def cmd_train(args, cfg):
    cfg = _train_overrides(cfg, args)
    news = _catalogs(args)
    Y = _load_pairs(args.interactions, news, args.users)
    table = None
    if args.propensity is not None:
        table = PropensityTable.from_csv(args.propensity, item_ids=Y.item_ids,
                                         user_ids=Y.user_ids, floor=cfg.floor, eta=cfg.eta)
    result = train(cfg.backbone, Y, table, cfg.train_config(derive_seed(cfg.seed, 10)))
    sio.save_model(result.model, _out(args, "model.txt"))
    sio.write_loss_trace(result.loss_trace, _out(args, "loss.csv"))
    _write_embeddings(result.model, _out(args, "embeddings.csv"))
    return {"final_loss": result.loss_trace[-1], "epochs": len(result.loss_trace)}


def _write_embeddings(model, path):
    fh, w = sio._open_writer(path)
    with fh:
        w.writerow(["user_id", *(f"e{k}" for k in range(model.dim))])
        for uid, row in zip(model.user_ids, model.U):
            w.writerow([uid, *(repr(float(x)) for x in row)])


def cmd_evaluate(args, cfg):
    model = sio.load_model(args.model)
    test = _reindex(sio.load_interactions(args.test), model.user_ids, model.item_ids, args.test)
    tr = None
    if args.train is not None:
        tr = _reindex(sio.load_interactions(args.train), model.user_ids, model.item_ids,
                      args.train)
    ks = args.ks or cfg.ks
    rep = evaluate(model, test, ks, tr)
    rep.to_json(_out(args, "metrics.json"))
    return rep.as_dict()


def cmd_causal(args, cfg):
    news = sio.load_news(args.news)
    Y = _load_pairs(args.interactions, news)
    attrs = sio.load_user_attributes(args.attributes).align(Y.user_ids)
    sus = cz.susceptibility_vector(Y)
    users = np.nonzero(sus.defined)[0]
    A = attrs.standardized().rows(users)
    y = sus.values[users]
    fits = {"LR": cz.fit_outcome_model(A, None, y, level=cfg.causal_level)}
    for spec in args.embeddings or ():
        name, _, path = spec.partition("=")
        if not path:
            raise ValidationError(f"--embeddings expects NAME=PATH, got {spec!r}")
        ids, E = sio.load_embeddings_csv(path)
        index = {u: k for k, u in enumerate(ids)}
        missing = [Y.user_ids[u] for u in users if Y.user_ids[u] not in index]
        if missing:
            raise ValidationError(f"{path}: no embedding for user {missing[0]!r}")
        U = E[[index[Y.user_ids[u]] for u in users]]
        fits[CAUSAL_NAMES.get(name, name)] = cz.fit_outcome_model(A, U, y, level=cfg.causal_level)
    for name, fit in fits.items():
        fit.to_json(_out(args, f"causal_{name}.json"))
    cz.compare_effect_estimates(fits).to_csv(_out(args, "effects.csv"))
    return {"n_users": int(users.size), "n_zero_fake": int(sus.zero_fake.sum()),
            "n_no_shares": int((~sus.defined).sum()), "models": list(fits)}


def cmd_behavior(args, cfg):
    fids, F = sio.load_embeddings_csv(args.fake)
    tids, T = sio.load_embeddings_csv(args.true)
    fake, true_ = bh.balance_cohorts(bh.EmbeddingSample(fids, F, "fake"),
                                     bh.EmbeddingSample(tids, T, "true"),
                                     derive_seed(cfg.seed, 30))
    eps = args.eps if args.eps is not None else cfg.behavior_eps
    min_pts = args.min_pts if args.min_pts is not None else cfg.behavior_min_pts
    rep = bh.compare_behaviors(fake, true_, eps, min_pts)
    rep.to_json(_out(args, "behavior.json"))
    rep.projections_to_csv(_out(args, "projections.csv"))
    return rep.as_dict()


def cmd_verify(args, cfg):
    res = sg.unbiasedness_suite(args.n_configs, cfg.seed)
    _dump(res, _out(args, "unbiasedness.json"))
    summary = {k: res[k] for k in ("max_abs_error", "enumeration_ok", "mc_rmse", "mc_slope",
                                   "mc_ok")}
    if not (res["enumeration_ok"] and res["mc_ok"]):
        raise NumericalError(f"unbiasedness check failed: {summary}")
    return summary


def cmd_pipeline(args, cfg):
    say = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    report = run_pipeline(cfg, args.out, args.config, progress=say)
    return {"aggregate": report.get("aggregate", [])}


# --- parser -----------------------------------------------------------------

def build_parser():
    def globals_(suppress):
        g = argparse.ArgumentParser(add_help=False)
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g.add_argument("--config", metavar="PATH", default=d(None),
                       help="flat key=value experiment config")
        g.add_argument("--seed", type=int, metavar="N", default=d(None),
                       help="master seed (overrides config)")
        g.add_argument("--out", metavar="DIR", default=d("out"), help="output directory")
        g.add_argument("--quiet", action="store_true", default=d(False),
                       help="suppress progress and summaries")
        return g

    p = argparse.ArgumentParser(prog="sharecause", parents=[globals_(False)],
                                description="Debiased news-dissemination modeling toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[globals_(True)], help=help_)
        sp.set_defaults(func=fn)
        return sp

    add("generate", cmd_generate, "synthetic world, interactions and splits")

    sp = add("propensity", cmd_propensity, "propensity table from interactions")
    sp.add_argument("--interactions", required=True)
    sp.add_argument("--kind", choices=("news", "user_news", "neural"), default="news")
    sp.add_argument("--attributes", default=None)
    sp.add_argument("--news", default=None)
    sp.add_argument("--news-features", dest="news_features", default=None)

    sp = add("train", cmd_train, "fit a dissemination model")
    sp.add_argument("--interactions", required=True)
    sp.add_argument("--propensity", default=None, help="propensity CSV; omit for the baseline")
    sp.add_argument("--users", default=None, help="user_id catalog fixing the user index")
    sp.add_argument("--news", default=None)
    sp.add_argument("--backbone", choices=("mf", "neural"), default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    sp.add_argument("--l2-lambda", dest="l2_lambda", type=float, default=None)
    sp.add_argument("--embedding-dim", dest="embedding_dim", type=int, default=None)

    sp = add("evaluate", cmd_evaluate, "Recall@K and NDCG@K on a test set")
    sp.add_argument("--model", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--train", default=None, help="training positives to mask")
    sp.add_argument("--ks", type=lambda s: tuple(int(x) for x in s.split(",")), default=None)

    sp = add("causal", cmd_causal, "susceptibility outcome models")
    sp.add_argument("--interactions", required=True)
    sp.add_argument("--news", required=True)
    sp.add_argument("--attributes", required=True)
    sp.add_argument("--embeddings", action="append", metavar="NAME=PATH",
                    help="user embeddings CSV; NAME is a variant (none, news, ...) or label")

    sp = add("behavior", cmd_behavior, "compare cohort embedding structure")
    sp.add_argument("--fake", required=True, help="embeddings CSV of fake-news spreaders")
    sp.add_argument("--true", required=True, help="embeddings CSV of true-news spreaders")
    sp.add_argument("--eps", type=float, default=None)
    sp.add_argument("--min-pts", dest="min_pts", type=int, default=None)

    sp = add("verify-unbiasedness", cmd_verify, "enumeration and Monte-Carlo checks")
    sp.add_argument("--n-configs", dest="n_configs", type=int, default=50)

    add("pipeline", cmd_pipeline, "run the full experiment from --config")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.quiet:
        warnings.simplefilter("ignore")
    try:
        cfg = _config(args)
        result = args.func(args, cfg)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1 if isinstance(exc.cause, ValidationError) else 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        print(json.dumps(result, indent=2, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
