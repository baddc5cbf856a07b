"""Sparse binary user x news share matrix with stable id maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class InteractionSet:
    """Observed positive pairs ``Y_ui = 1``; absent pairs are zeros.

    ``users`` and ``items`` are parallel index arrays sorted by
    ``(user, item)`` with no duplicates. ``item_is_fake`` is optional and,
    when present, has one flag per item column.
    """

    user_ids: tuple
    item_ids: tuple
    users: np.ndarray
    items: np.ndarray
    item_is_fake: np.ndarray | None = None
    _codes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64)
        items = np.asarray(self.items, dtype=np.int64)
        if users.shape != items.shape or users.ndim != 1:
            raise ValidationError("users and items must be 1-d arrays of equal length")
        n_u, n_i = len(self.user_ids), len(self.item_ids)
        if users.size and (users.min() < 0 or users.max() >= n_u):
            raise ValidationError("user index out of range")
        if items.size and (items.min() < 0 or items.max() >= n_i):
            raise ValidationError("item index out of range")
        codes = users * n_i + items
        order = np.argsort(codes, kind="stable")
        codes = codes[order]
        if codes.size > 1 and np.any(codes[1:] == codes[:-1]):
            raise ValidationError("duplicate (user, item) pairs")
        object.__setattr__(self, "users", users[order])
        object.__setattr__(self, "items", items[order])
        object.__setattr__(self, "_codes", codes)
        if self.item_is_fake is not None:
            flags = np.asarray(self.item_is_fake, dtype=bool)
            if flags.shape != (n_i,):
                raise ValidationError("item_is_fake needs one flag per item")
            object.__setattr__(self, "item_is_fake", flags)

    @classmethod
    def from_pairs(cls, users, items, n_users=None, n_items=None, user_ids=None,
                   item_ids=None, item_is_fake=None, dedupe=False):
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        if user_ids is None:
            if n_users is None:
                n_users = int(users.max()) + 1 if users.size else 0
            user_ids = tuple(str(u) for u in range(n_users))
        if item_ids is None:
            if n_items is None:
                n_items = int(items.max()) + 1 if items.size else 0
            item_ids = tuple(str(i) for i in range(n_items))
        if dedupe and users.size:
            codes = np.unique(users * len(item_ids) + items)
            users, items = np.divmod(codes, len(item_ids))
        return cls(tuple(user_ids), tuple(item_ids), users, items, item_is_fake)

    @classmethod
    def from_dense(cls, y, **kwargs):
        y = np.asarray(y)
        u, i = np.nonzero(y)
        return cls.from_pairs(u, i, n_users=y.shape[0], n_items=y.shape[1], **kwargs)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def shape(self):
        return (self.n_users, self.n_items)

    @property
    def n_positives(self) -> int:
        return int(self.users.size)

    @property
    def codes(self) -> np.ndarray:
        """Sorted linear codes ``u * n_items + i`` of the positives."""
        return self._codes

    def to_dense(self, dtype=np.float64) -> np.ndarray:
        y = np.zeros(self.shape, dtype=dtype)
        y[self.users, self.items] = 1
        return y

    def contains(self, users, items) -> np.ndarray:
        """Vectorized ``Y_ui == 1`` lookup."""
        q = np.asarray(users, dtype=np.int64) * self.n_items + np.asarray(items, dtype=np.int64)
        if self._codes.size == 0:
            return np.zeros(q.shape, dtype=bool)
        pos = np.searchsorted(self._codes, q)
        pos = np.minimum(pos, self._codes.size - 1)
        return self._codes[pos] == q

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    def user_counts(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.n_users)

    def user_item_lists(self) -> list:
        """Per-user sorted arrays of positive item indices."""
        bounds = np.searchsorted(self.users, np.arange(self.n_users + 1))
        return [self.items[bounds[u]:bounds[u + 1]] for u in range(self.n_users)]

    def subset(self, mask) -> "InteractionSet":
        """Keep only the positives selected by a boolean mask over pairs."""
        mask = np.asarray(mask, dtype=bool)
        return InteractionSet(self.user_ids, self.item_ids, self.users[mask],
                              self.items[mask], self.item_is_fake)

    def restrict_items(self, keep) -> "InteractionSet":
        """Drop item columns not flagged in ``keep`` and re-index the rest."""
        keep = np.asarray(keep, dtype=bool)
        new_index = np.full(self.n_items, -1, dtype=np.int64)
        new_index[keep] = np.arange(int(keep.sum()))
        sel = keep[self.items]
        flags = None if self.item_is_fake is None else self.item_is_fake[keep]
        ids = tuple(x for x, k in zip(self.item_ids, keep) if k)
        return InteractionSet(self.user_ids, ids, self.users[sel],
                              new_index[self.items[sel]], flags)

    def pair_set(self) -> set:
        return {(self.user_ids[u], self.item_ids[i]) for u, i in zip(self.users, self.items)}
