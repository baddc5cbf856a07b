"""Susceptibility outcome and the attribute + surrogate-confounder regression.

The outcome model is ``B_u = beta . a_u + gamma_conf . U_u (+ intercept)``
fit by ordinary least squares, with classical standard errors and
t-distribution intervals.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ValidationError
from .interactions import InteractionSet

ATTRIBUTE_COLUMNS = ("verified", "org", "status_count", "friends_count", "followers_count",
                     "favorites_count", "gender", "age", "register_time")
BINARY_COLUMNS = ("verified", "org", "gender")


class UndefinedSusceptibility(ValueError):
    """The user shared no news at all."""


@dataclass
class AttributeTable:
    user_ids: tuple
    names: tuple
    values: np.ndarray
    mean: np.ndarray | None = None
    sd: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.user_ids), len(self.names)):
            raise ValidationError("attribute values do not match ids and names")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("attribute table has missing or non-finite values")
        for k, name in enumerate(self.names):
            if name in BINARY_COLUMNS and not np.all(np.isin(self.values[:, k], (0.0, 1.0))):
                raise ValidationError(f"binary column {name!r} has values outside {{0, 1}}")

    @property
    def standardized_flag(self) -> bool:
        return self.mean is not None

    def standardized(self) -> "AttributeTable":
        """Zero-mean, unit-variance copy; constant columns are only centered."""
        mean = self.values.mean(axis=0)
        sd = self.values.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        z = (self.values - mean) / sd
        out = AttributeTable.__new__(AttributeTable)
        out.user_ids, out.names, out.values, out.mean, out.sd = self.user_ids, self.names, z, mean, sd
        return out

    def column(self, name) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def rows(self, idx) -> "AttributeTable":
        idx = np.asarray(idx)
        out = AttributeTable.__new__(AttributeTable)
        out.user_ids = tuple(self.user_ids[k] for k in idx)
        out.names, out.values, out.mean, out.sd = self.names, self.values[idx], self.mean, self.sd
        return out

    def align(self, user_ids) -> "AttributeTable":
        """Reorder rows to ``user_ids``; every id must be present."""
        index = {u: k for k, u in enumerate(self.user_ids)}
        missing = [u for u in user_ids if u not in index]
        if missing:
            raise ValidationError(f"no attributes for user {missing[0]!r}")
        return self.rows([index[u] for u in user_ids])


def susceptibility(n_fake, n_true) -> float:
    """Fraction of a user's shares that are fake."""
    if n_fake < 0 or n_true < 0:
        raise ValidationError("share counts must be nonnegative")
    if n_fake + n_true == 0:
        raise UndefinedSusceptibility("user shared no news")
    return n_fake / (n_fake + n_true)


@dataclass
class SusceptibilityVector:
    values: np.ndarray
    defined: np.ndarray
    zero_fake: np.ndarray
    n_fake: np.ndarray
    n_true: np.ndarray


def susceptibility_vector(interactions: InteractionSet) -> SusceptibilityVector:
    """Per-user susceptibility from labeled interactions.

    Users with no shares get NaN and ``defined=False``. Users whose shares are
    all true get 0.0 and ``zero_fake=True``.
    """
    if interactions.item_is_fake is None:
        raise ValidationError("susceptibility needs fake/true item labels")
    fake = interactions.item_is_fake[interactions.items]
    n_fake = np.bincount(interactions.users[fake], minlength=interactions.n_users)
    n_true = np.bincount(interactions.users[~fake], minlength=interactions.n_users)
    total = n_fake + n_true
    defined = total > 0
    values = np.full(interactions.n_users, np.nan)
    values[defined] = n_fake[defined] / total[defined]
    return SusceptibilityVector(values, defined, defined & (n_fake == 0), n_fake, n_true)


@dataclass
class CausalFit:
    names: tuple
    coef: np.ndarray
    standard_errors: np.ndarray
    conf_intervals: np.ndarray
    p_values: np.ndarray
    n_obs: int
    r_squared: float
    df_resid: int
    rss: float
    attribute_names: tuple
    confounder_names: tuple = ()
    has_intercept: bool = True
    level: float = 0.95
    extra: dict = field(default_factory=dict)

    def _block(self, names):
        idx = [self.names.index(n) for n in names]
        return self.coef[idx]

    @property
    def beta(self) -> np.ndarray:
        return self._block(self.attribute_names)

    @property
    def gamma_conf(self) -> np.ndarray:
        return self._block(self.confounder_names)

    @property
    def intercept(self) -> float | None:
        return float(self.coef[0]) if self.has_intercept else None

    def row(self, name) -> dict:
        k = self.names.index(name)
        return {"name": name, "coef": float(self.coef[k]), "se": float(self.standard_errors[k]),
                "ci_low": float(self.conf_intervals[k, 0]), "ci_high": float(self.conf_intervals[k, 1]),
                "p": float(self.p_values[k])}

    def as_dict(self):
        return {"n_obs": self.n_obs, "r_squared": self.r_squared, "df_resid": self.df_resid,
                "level": self.level, "predictors": [self.row(n) for n in self.names]}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.as_dict(), indent=2) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _collinear_columns(X, names, tol):
    """Greedy scan: columns lying in the span of the columns before them."""
    bad, kept = [], []
    for k in range(X.shape[1]):
        trial = X[:, kept + [k]]
        if np.linalg.matrix_rank(trial, tol=tol * max(1.0, np.abs(trial).max())) < len(kept) + 1:
            bad.append(names[k])
        else:
            kept.append(k)
    return bad


def ols(X, y, names, level=0.95):
    """OLS via QR. Returns ``(coef, se, ci, p, rss, df)``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if n <= p:
        raise ValidationError(f"need more observations ({n}) than predictors ({p})")
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    tol = 1e-10 * max(diag.max(), 1.0) if diag.size else 0.0
    if np.any(diag <= tol):
        raise ValidationError(
            f"design matrix is rank deficient; collinear columns: {_collinear_columns(X, names, 1e-10)}")
    coef = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ coef
    rss = float(resid @ resid)
    df = n - p
    sigma2 = rss / df
    Rinv = np.linalg.solve(R, np.eye(p))
    cov_diag = np.sum(Rinv * Rinv, axis=1)
    se = np.sqrt(sigma2 * cov_diag)
    crit = stats.t.ppf(0.5 + level / 2.0, df)
    ci = np.column_stack([coef - crit * se, coef + crit * se])
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = np.where(se > 0, coef / se, np.where(coef == 0, 0.0, np.inf))
    p_values = np.clip(2.0 * stats.t.sf(np.abs(tstat), df), 0.0, 1.0)
    return coef, se, ci, p_values, rss, df


def fit_outcome_model(attributes, confounder=None, outcome=None, intercept=True,
                      level=0.95, attribute_names=None) -> CausalFit:
    """Regress susceptibility on attributes and (optionally) user embeddings.

    ``attributes`` is an ``AttributeTable`` or an ``(n, m)`` array. Pass the
    table's ``standardized()`` copy for comparable coefficients.
    """
    if isinstance(attributes, AttributeTable):
        A, anames = attributes.values, tuple(attributes.names)
    else:
        A = np.asarray(attributes, dtype=np.float64)
        A = A[:, None] if A.ndim == 1 else A
        anames = tuple(attribute_names) if attribute_names else tuple(f"a{k}" for k in range(A.shape[1]))
    if outcome is None:
        raise ValidationError("outcome vector is required")
    y = np.asarray(outcome, dtype=np.float64)
    blocks, names = [], []
    if intercept:
        blocks.append(np.ones((A.shape[0], 1)))
        names.append("intercept")
    blocks.append(A)
    names.extend(anames)
    cnames = ()
    if confounder is not None:
        Uc = np.asarray(confounder, dtype=np.float64)
        if Uc.shape[0] != A.shape[0]:
            raise ValidationError("confounder rows do not match attribute rows")
        cnames = tuple(f"U{k}" for k in range(Uc.shape[1]))
        blocks.append(Uc)
        names.extend(cnames)
    if y.shape != (A.shape[0],):
        raise ValidationError("outcome length does not match attribute rows")
    X = np.hstack(blocks)
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValidationError("non-finite values in regression inputs")
    coef, se, ci, p, rss, df = ols(X, y, names, level)
    tss = float(((y - y.mean()) ** 2).sum()) if intercept else float(y @ y)
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    return CausalFit(tuple(names), coef, se, ci, p, int(y.size), r2, df, rss, anames, cnames,
                     intercept, level)


def predict_susceptibility(fit: CausalFit, a_u, U_u=None):
    """``beta . a (+ gamma_conf . U) (+ intercept)`` for one row or a matrix."""
    a = np.asarray(a_u, dtype=np.float64)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[1] != len(fit.attribute_names):
        raise ValidationError(f"expected {len(fit.attribute_names)} attributes, got {a.shape[1]}")
    out = a @ fit.beta
    if fit.confounder_names:
        if U_u is None:
            raise ValidationError("fit has a confounder block; embeddings are required")
        Uc = np.atleast_2d(np.asarray(U_u, dtype=np.float64))
        if Uc.shape != (a.shape[0], len(fit.confounder_names)):
            raise ValidationError("embedding dimension does not match the fit")
        out = out + Uc @ fit.gamma_conf
    elif U_u is not None and np.size(U_u):
        raise ValidationError("fit has no confounder block")
    if fit.has_intercept:
        out = out + fit.intercept
    return float(out[0]) if single else out


def regression_metrics(predictions, truth):
    """``(MSE, MAE)``."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != t.shape or p.size == 0:
        raise ValidationError("predictions and truth must be nonempty and equally long")
    r = p - t
    return float(np.mean(r * r)), float(np.mean(np.abs(r)))


@dataclass
class EffectComparison:
    rows: list
    variants: tuple
    attributes: tuple

    def coefficient(self, attribute, variant) -> float:
        for r in self.rows:
            if r["attribute"] == attribute and r["variant"] == variant:
                return r["coef"]
        raise KeyError((attribute, variant))

    def differences(self, variant, reference) -> dict:
        return {a: self.coefficient(a, variant) - self.coefficient(a, reference)
                for a in self.attributes}

    def to_csv(self, path):
        cols = ["attribute", "variant", "coef", "se", "ci_low", "ci_high", "p", "sign", "significant"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([r[c] if not isinstance(r[c], float) else repr(r[c]) for c in cols])


def compare_effect_estimates(fits: dict, alpha=0.05) -> EffectComparison:
    """One row per (attribute, variant) with CI, sign and significance flags."""
    if not fits:
        raise ValidationError("no fits to compare")
    schemas = {tuple(f.attribute_names) for f in fits.values()}
    if len(schemas) != 1:
        raise ValidationError("fits use different attribute schemas")
    attrs = schemas.pop()
    rows = []
    for attr in attrs:
        for variant, fit in fits.items():
            r = fit.row(attr)
            rows.append({"attribute": attr, "variant": variant, "coef": r["coef"], "se": r["se"],
                         "ci_low": r["ci_low"], "ci_high": r["ci_high"], "p": r["p"],
                         "sign": int(np.sign(r["coef"])), "significant": bool(r["p"] < alpha)})
    return EffectComparison(rows, tuple(fits), attrs)


def split_users(n, ratio=0.8, seed=0):
    """Random train/test split of row indices (80% of users train by default)."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    cut = int(math.floor(ratio * n + 0.5))
    return np.sort(perm[:cut]), np.sort(perm[cut:])
