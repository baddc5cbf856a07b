"""CSV loaders and writers, content featurization and train/test splitting.

All CSV files use a comma delimiter, ``\\n`` line endings, UTF-8 and one
header row.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import re
import warnings
from dataclasses import dataclass

import numpy as np

from .causal import ATTRIBUTE_COLUMNS, BINARY_COLUMNS, AttributeTable
from .dissemination import FactorModel
from .errors import ValidationError
from .interactions import InteractionSet

log = logging.getLogger(__name__)

_TOKEN = re.compile(r"[a-z0-9]+")


def _read_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.reader(fh))
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc


def _open_writer(path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def _fmt(x):
    return repr(float(x))


def load_interactions(path, user_ids=None, item_ids=None, item_is_fake=None) -> InteractionSet:
    """Read ``user_id,news_id`` pairs.

    Index maps follow first appearance unless ``user_ids`` / ``item_ids``
    catalogs are given, in which case unknown ids are rejected. Duplicate
    pairs are kept once, with a warning.
    """
    rows = _read_rows(path)
    if not rows or [h.strip() for h in rows[0]] != ["user_id", "news_id"]:
        raise ValidationError(f"{path}: header must be 'user_id,news_id'")
    if len(rows) == 1:
        raise ValidationError(f"{path}: no interactions")
    uindex = None if user_ids is None else {u: k for k, u in enumerate(user_ids)}
    iindex = None if item_ids is None else {i: k for k, i in enumerate(item_ids)}
    uorder, iorder = {}, {}
    users, items, seen = [], [], set()
    dupes = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2 or not row[0].strip() or not row[1].strip():
            raise ValidationError(f"{path}:{lineno}: expected 'user_id,news_id', got {row!r}")
        uid, iid = row[0].strip(), row[1].strip()
        if uindex is not None:
            if uid not in uindex:
                raise ValidationError(f"{path}:{lineno}: unknown user {uid!r}")
            u = uindex[uid]
        else:
            u = uorder.setdefault(uid, len(uorder))
        if iindex is not None:
            if iid not in iindex:
                raise ValidationError(f"{path}:{lineno}: unknown news item {iid!r}")
            i = iindex[iid]
        else:
            i = iorder.setdefault(iid, len(iorder))
        if (u, i) in seen:
            dupes += 1
            continue
        seen.add((u, i))
        users.append(u)
        items.append(i)
    if dupes:
        warnings.warn(f"{path}: {dupes} duplicate pair(s) kept once", stacklevel=2)
    uids = tuple(user_ids) if user_ids is not None else tuple(uorder)
    iids = tuple(item_ids) if item_ids is not None else tuple(iorder)
    return InteractionSet.from_pairs(users, items, user_ids=uids, item_ids=iids,
                                     item_is_fake=item_is_fake)


def write_interactions(interactions: InteractionSet, path):
    fh, w = _open_writer(path)
    with fh:
        w.writerow(["user_id", "news_id"])
        for u, i in zip(interactions.users, interactions.items):
            w.writerow([interactions.user_ids[u], interactions.item_ids[i]])


def write_id_list(ids, path, header):
    fh, w = _open_writer(path)
    with fh:
        w.writerow([header])
        for x in ids:
            w.writerow([x])


def read_id_list(path, header):
    rows = _read_rows(path)
    if not rows or rows[0] != [header]:
        raise ValidationError(f"{path}: header must be '{header}'")
    return tuple(r[0] for r in rows[1:])


def load_user_attributes(path) -> AttributeTable:
    """Read the user attribute table; columns may appear in any order."""
    rows = _read_rows(path)
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    for col in ("user_id", *ATTRIBUTE_COLUMNS):
        if col not in header:
            raise ValidationError(f"{path}: missing column {col!r}")
    pos = {c: header.index(c) for c in ("user_id", *ATTRIBUTE_COLUMNS)}
    ids, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        vals = []
        for col in ATTRIBUTE_COLUMNS:
            cell = row[pos[col]].strip()
            try:
                v = float(cell)
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: column {col!r} is not numeric: {cell!r}") from None
            if not math.isfinite(v):
                raise ValidationError(f"{path}:{lineno}: column {col!r} is not finite")
            if col in BINARY_COLUMNS and v not in (0.0, 1.0):
                raise ValidationError(f"{path}:{lineno}: column {col!r} must be 0 or 1, got {cell!r}")
            vals.append(v)
        ids.append(row[pos["user_id"]].strip())
        values.append(vals)
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate user ids")
    if not ids:
        raise ValidationError(f"{path}: no users")
    return AttributeTable(tuple(ids), ATTRIBUTE_COLUMNS, np.array(values))


def write_user_attributes(table: AttributeTable, path):
    fh, w = _open_writer(path)
    with fh:
        w.writerow(["user_id", *table.names])
        for uid, row in zip(table.user_ids, table.values):
            w.writerow([uid, *(_fmt(v) for v in row)])


@dataclass
class NewsTable:
    news_ids: tuple
    is_fake: np.ndarray
    features: np.ndarray | None = None
    texts: tuple | None = None

    def __post_init__(self):
        if len(set(self.news_ids)) != len(self.news_ids):
            raise ValidationError("news ids must be unique")
        self.is_fake = np.asarray(self.is_fake, dtype=bool)

    def align(self, item_ids) -> "NewsTable":
        index = {n: k for k, n in enumerate(self.news_ids)}
        missing = [i for i in item_ids if i not in index]
        if missing:
            raise ValidationError(f"no news record for item {missing[0]!r}")
        idx = np.array([index[i] for i in item_ids], dtype=np.int64)
        feats = None if self.features is None else self.features[idx]
        texts = None if self.texts is None else tuple(self.texts[k] for k in idx)
        return NewsTable(tuple(item_ids), self.is_fake[idx], feats, texts)


def load_news(path, features_path=None) -> NewsTable:
    """Read ``news_id,label[,text]`` with labels ``fake``/``true``.

    ``features_path`` optionally supplies precomputed vectors as
    ``news_id,f0,f1,...``.
    """
    rows = _read_rows(path)
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["news_id", "label"]:
        raise ValidationError(f"{path}: header must start with 'news_id,label'")
    has_text = "text" in header
    ids, fake, texts = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) < 2:
            raise ValidationError(f"{path}:{lineno}: malformed row")
        label = row[1].strip().lower()
        if label not in ("fake", "true"):
            raise ValidationError(f"{path}:{lineno}: label must be 'fake' or 'true', got {row[1]!r}")
        ids.append(row[0].strip())
        fake.append(label == "fake")
        if has_text:
            texts.append(row[header.index("text")] if len(row) > header.index("text") else "")
    table = NewsTable(tuple(ids), np.array(fake), None, tuple(texts) if has_text else None)
    if features_path is not None:
        frows = _read_rows(features_path)
        if not frows or frows[0][0].strip() != "news_id":
            raise ValidationError(f"{features_path}: header must start with 'news_id'")
        dim = len(frows[0]) - 1
        feats = {}
        for lineno, row in enumerate(frows[1:], start=2):
            if len(row) != dim + 1:
                raise ValidationError(f"{features_path}:{lineno}: expected {dim} feature values")
            try:
                feats[row[0].strip()] = [float(x) for x in row[1:]]
            except ValueError:
                raise ValidationError(f"{features_path}:{lineno}: non-numeric feature") from None
        missing = [i for i in ids if i not in feats]
        if missing:
            raise ValidationError(f"{features_path}: no features for news item {missing[0]!r}")
        table.features = np.array([feats[i] for i in ids])
    return table


def write_news(table: NewsTable, path):
    fh, w = _open_writer(path)
    with fh:
        w.writerow(["news_id", "label"] + (["text"] if table.texts is not None else []))
        for k, nid in enumerate(table.news_ids):
            row = [nid, "fake" if table.is_fake[k] else "true"]
            if table.texts is not None:
                row.append(table.texts[k])
            w.writerow(row)


def write_features(ids, features, path):
    fh, w = _open_writer(path)
    with fh:
        w.writerow(["news_id", *(f"f{k}" for k in range(features.shape[1]))])
        for nid, row in zip(ids, features):
            w.writerow([nid, *(_fmt(v) for v in row)])


def _bucket(token, dims):
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dims


def featurize_content(texts, dims=256) -> np.ndarray:
    """L2-normalized hashed term-frequency vectors, one row per text.

    Tokens are lowercase alphanumeric runs hashed with BLAKE2b, so output is
    identical across runs and platforms. Empty texts give zero rows.
    """
    if dims < 2:
        raise ValidationError("dims must be >= 2")
    out = np.zeros((len(texts), dims))
    for row, text in enumerate(texts):
        tokens = _TOKEN.findall((text or "").lower())
        if not tokens:
            warnings.warn(f"text {row} is empty; using a zero feature vector", stacklevel=2)
            continue
        for tok in tokens:
            out[row, _bucket(tok, dims)] += 1.0
        out[row] /= np.linalg.norm(out[row])
    return out


def split_train_test(interactions: InteractionSet, ratio=0.8, mode="random", seed=0,
                     world=None, exposure=0.5):
    """Split positives into train and test.

    ``random`` partitions the observed pairs. ``uniform_exposure_synthetic``
    keeps a random ``ratio`` of the observed pairs for training and redraws
    every other cell of ``world`` under a constant exposure probability.
    """
    if not 0.0 < ratio < 1.0:
        raise ValidationError("ratio must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    n = interactions.n_positives
    perm = rng.permutation(n)
    cut = int(math.floor(ratio * n + 0.5))
    train_mask = np.zeros(n, dtype=bool)
    train_mask[perm[:cut]] = True
    train = interactions.subset(train_mask)
    if mode == "random":
        return train, interactions.subset(~train_mask)
    if mode == "uniform_exposure_synthetic":
        if world is None:
            raise ValidationError("uniform_exposure_synthetic split needs a synthetic world")
        from .synthgen import make_uniform_test

        hold_u, hold_i = np.nonzero(~train.to_dense(dtype=bool))
        test = make_uniform_test(world, (hold_u, hold_i), seed=int(rng.integers(2**31)),
                                 exposure=exposure, train=train)
        return train, test
    raise ValidationError(f"unknown split mode {mode!r}")


# model files: "# sharecause-model" header line, key=value meta line, then
# named CSV blocks ("[U]", "[V]", ...) whose rows start with the row id


def save_model(model: FactorModel, path):
    users = model.user_ids or tuple(str(u) for u in range(model.n_users))
    items = model.item_ids or tuple(str(i) for i in range(model.n_items))
    fh, w = _open_writer(path)
    with fh:
        fh.write("# sharecause-model\n")
        fh.write(f"backbone={model.backbone},n_users={model.n_users},n_items={model.n_items},"
                 f"dim={model.dim},hidden={model.hidden_dim}\n")
        blocks = [("U", users, model.U), ("V", items, model.V)]
        if model.backbone == "neural":
            blocks += [("W1", range(model.hidden_dim), model.W1),
                       ("b1", ["b1"], model.b1[None, :]),
                       ("w2", ["w2"], model.w2[None, :]),
                       ("b2", ["b2"], np.array([[model.b2]]))]
        for name, ids, mat in blocks:
            fh.write(f"[{name}]\n")
            for rid, row in zip(ids, mat):
                w.writerow([rid, *(_fmt(v) for v in row)])


def load_model(path) -> FactorModel:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0] != "# sharecause-model":
        raise ValidationError(f"{path}: not a model file")
    try:
        meta = dict(kv.split("=") for kv in lines[1].split(","))
        blocks, current = {}, None
        for line in lines[2:]:
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                blocks[current] = ([], [])
                continue
            row = next(csv.reader([line]))
            blocks[current][0].append(row[0])
            blocks[current][1].append([float(x) for x in row[1:]])
        U = np.array(blocks["U"][1])
        V = np.array(blocks["V"][1])
    except (KeyError, ValueError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed model file ({exc})") from exc
    if U.shape != (int(meta["n_users"]), int(meta["dim"])) or V.shape[0] != int(meta["n_items"]):
        raise ValidationError(f"{path}: block shapes disagree with the header")
    kw = dict(user_ids=tuple(blocks["U"][0]), item_ids=tuple(blocks["V"][0]))
    if meta["backbone"] == "neural":
        return FactorModel("neural", U, V, np.array(blocks["W1"][1]), np.array(blocks["b1"][1][0]),
                           np.array(blocks["w2"][1][0]), float(blocks["b2"][1][0][0]), **kw)
    return FactorModel(meta["backbone"], U, V, **kw)


def write_loss_trace(trace, path):
    fh, w = _open_writer(path)
    with fh:
        w.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(trace):
            w.writerow([epoch, _fmt(loss)])


def load_embeddings_csv(path):
    rows = _read_rows(path)
    if not rows or rows[0][0] != "user_id":
        raise ValidationError(f"{path}: header must start with 'user_id'")
    return tuple(r[0] for r in rows[1:]), np.array([[float(x) for x in r[1:]] for r in rows[1:]])
