"""Compare sharing-behavior embeddings of fake-news and true-news cohorts.

Density clustering (DBSCAN) and the silhouette coefficient summarize how
diverse each cohort's behavior is; a PCA projection gives 2-D coordinates
for plotting.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ._backend import kernels
from .errors import ValidationError


@dataclass
class EmbeddingSample:
    user_ids: tuple
    embeddings: np.ndarray
    cohort: str

    def __post_init__(self):
        self.user_ids = tuple(self.user_ids)
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
        if self.embeddings.shape[0] != len(self.user_ids):
            raise ValidationError("one embedding row per user id is required")

    def __len__(self):
        return len(self.user_ids)

    def take(self, idx) -> "EmbeddingSample":
        idx = np.asarray(idx, dtype=np.int64)
        return EmbeddingSample(tuple(self.user_ids[k] for k in idx), self.embeddings[idx], self.cohort)


def balance_cohorts(fake_users: EmbeddingSample, true_users: EmbeddingSample, seed=0):
    """Downsample the larger cohort, without replacement, to the smaller size."""
    if len(fake_users) == 0 or len(true_users) == 0:
        raise ValidationError("both cohorts must be nonempty")
    if set(fake_users.user_ids) & set(true_users.user_ids):
        raise ValidationError("cohorts overlap")
    n = min(len(fake_users), len(true_users))
    rng = np.random.default_rng(seed)

    def down(sample):
        if len(sample) == n:
            return sample
        return sample.take(np.sort(rng.choice(len(sample), size=n, replace=False)))

    return down(fake_users), down(true_users)


def dbscan(points, eps, min_pts):
    """Density clustering; ``-1`` marks noise.

    A point is core when its closed eps-ball holds at least ``min_pts`` points
    (itself included). Clusters are numbered in order of their first core
    point, and border points join the first cluster that reaches them.
    """
    if eps <= 0:
        raise ValidationError("eps must be > 0")
    if min_pts < 1:
        raise ValidationError("min_pts must be >= 1")
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = X.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    neighbors = cKDTree(X).query_ball_point(X, r=eps, return_sorted=True)
    core = np.array([len(nb) >= min_pts for nb in neighbors])
    cluster = 0
    for p in range(n):
        if labels[p] != -1 or not core[p]:
            continue
        labels[p] = cluster
        queue = deque([p])
        while queue:
            q = queue.popleft()
            if not core[q]:
                continue
            for r in neighbors[q]:
                if labels[r] == -1:
                    labels[r] = cluster
                    if core[r]:
                        queue.append(r)
        cluster += 1
    return labels


def silhouette(points, labels) -> float:
    """Mean silhouette over non-noise points.

    ``a`` is the mean distance to the other members of the point's cluster,
    ``b`` the smallest mean distance to another cluster.
    """
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    keep = labels >= 0
    X, labels = X[keep], labels[keep]
    uniq, labels = np.unique(labels, return_inverse=True)
    if uniq.size < 2:
        raise ValidationError("silhouette needs at least 2 non-noise clusters")
    sizes = np.bincount(labels)
    if np.any(sizes < 2):
        raise ValidationError("every cluster needs at least 2 points")
    sums = kernels.cluster_distance_sums(np.ascontiguousarray(X), labels, uniq.size)
    own = sums[np.arange(labels.size), labels]
    a = own / (sizes[labels] - 1)
    means = sums / sizes[None, :]
    means[np.arange(labels.size), labels] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(np.mean(s))


@dataclass
class Projection:
    coords: np.ndarray
    explained_variance: tuple
    components: np.ndarray
    mean: np.ndarray


def project_2d(points) -> Projection:
    """Top-2 principal components of the centered points.

    Component signs are fixed so the largest-magnitude loading is positive.
    """
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if X.shape[0] < 2 or X.shape[1] < 2:
        raise ValidationError("projection needs at least 2 points in at least 2 dimensions")
    mean = X.mean(axis=0)
    C = X - mean
    _, s, vt = np.linalg.svd(C, full_matrices=False)
    if s[0] <= 1e-12 * max(1.0, np.abs(X).max()):
        raise ValidationError("all points are identical; nothing to project")
    comps = vt[:2].copy()
    for k in range(2):
        if comps[k, np.argmax(np.abs(comps[k]))] < 0:
            comps[k] *= -1.0
    var = s ** 2 / (X.shape[0] - 1)
    return Projection(C @ comps.T, (float(var[0]), float(var[1])), comps, mean)


def default_dbscan_params(points):
    """eps = median distance to the 4th nearest neighbor; min_pts = clamp(2d, 4, 20)."""
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    k = min(4, X.shape[0] - 1)
    if k < 1:
        raise ValidationError("need at least 2 points to choose eps")
    dist, _ = cKDTree(X).query(X, k=k + 1)
    eps = float(np.median(dist[:, k]))
    if eps <= 0:
        eps = float(np.finfo(float).eps)
    return eps, int(np.clip(2 * X.shape[1], 4, 20))


@dataclass
class CohortStats:
    cohort: str
    n: int
    n_clusters: int
    noise_fraction: float
    silhouette: float
    silhouette_defined: bool
    eps: float
    min_pts: int
    explained_variance: tuple

    def as_dict(self):
        return dict(self.__dict__, explained_variance=list(self.explained_variance))


@dataclass
class BehaviorReport:
    fake: CohortStats
    true: CohortStats
    projections: dict

    def as_dict(self):
        return {"fake": self.fake.as_dict(), "true": self.true.as_dict()}

    def to_json(self, path=None):
        text = json.dumps(self.as_dict(), indent=2) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def projections_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user_id", "x", "y", "cohort"])
            for cohort in ("fake", "true"):
                ids, coords = self.projections[cohort]
                for uid, (x, y) in zip(ids, coords):
                    w.writerow([uid, repr(float(x)), repr(float(y)), cohort])


def cohort_stats(sample: EmbeddingSample, eps=None, min_pts=None) -> tuple:
    X = sample.embeddings
    d_eps, d_min = default_dbscan_params(X)
    eps = d_eps if eps is None else eps
    min_pts = d_min if min_pts is None else min_pts
    labels = dbscan(X, eps, min_pts)
    n_clusters = int(labels.max() + 1)
    try:
        sil, defined = silhouette(X, labels), True
    except ValidationError:
        # fewer than two usable clusters: no separation to score
        sil, defined = 0.0, False
    proj = project_2d(X)
    stats = CohortStats(sample.cohort, len(sample), n_clusters, float(np.mean(labels < 0)),
                        sil, defined, float(eps), int(min_pts), proj.explained_variance)
    return stats, labels, proj


def compare_behaviors(fake: EmbeddingSample, true_: EmbeddingSample, eps=None, min_pts=None):
    """Cluster count, noise fraction, silhouette and PCA export per cohort.

    ``eps`` / ``min_pts`` may be scalars or ``(fake, true)`` pairs; ``None``
    selects the defaults per cohort.
    """
    if len(fake) != len(true_):
        raise ValidationError("cohorts must be balanced first")

    def pick(v, k):
        return v[k] if isinstance(v, (tuple, list)) else v

    fs, _, fp = cohort_stats(fake, pick(eps, 0), pick(min_pts, 0))
    ts, _, tp = cohort_stats(true_, pick(eps, 1), pick(min_pts, 1))
    return BehaviorReport(fs, ts, {"fake": (fake.user_ids, fp.coords),
                                   "true": (true_.user_ids, tp.coords)})
