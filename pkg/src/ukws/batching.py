"""Flat labelled batches and B x M episodes for prototypical training.

An episode holds ``B`` classes with ``M`` items each. Items ``0..M-2`` of a
class form its support set and item ``M-1`` is its query.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Episode:
    class_ids: tuple
    items: np.ndarray  # (B, M, ...)

    def __post_init__(self):
        items = np.asarray(self.items)
        if items.ndim < 2:
            raise ValueError("episode items must be shaped (B, M, ...)")
        b, m = items.shape[:2]
        if b < 2 or m < 2:
            raise ValueError(f"episodes need B >= 2 and M >= 2, got B={b}, M={m}")
        if len(self.class_ids) != b:
            raise ValueError("one class id per episode row is required")
        if len(set(self.class_ids)) != b:
            raise ValueError("episode class ids must be distinct")
        object.__setattr__(self, "items", items)

    @property
    def n_classes(self):
        return self.items.shape[0]

    @property
    def per_class(self):
        return self.items.shape[1]

    @property
    def queries(self):
        return self.items[:, -1]

    @property
    def supports(self):
        return self.items[:, :-1]

    def with_items(self, items):
        return Episode(self.class_ids, items)


@dataclass(frozen=True)
class FlatBatch:
    items: np.ndarray  # (N, ...)
    labels: np.ndarray  # (N,)
    n_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or len(labels) == 0 or len(labels) != len(self.items):
            raise ValueError("a flat batch needs one label per item and at least one item")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "labels", labels)


def sample_episode(inventory, n_classes, per_class, rng):
    """Draw ``n_classes`` distinct classes and ``per_class`` distinct items of each.

    ``inventory`` maps class id -> array of items; ``rng`` is a
    ``numpy.random.Generator`` owned by the caller.
    """
    if n_classes < 2 or per_class < 2:
        raise ValueError("episodes need at least 2 classes and 2 items per class")
    eligible = sorted(k for k, v in inventory.items() if len(v) >= per_class)
    if len(eligible) < n_classes:
        raise ValueError(
            f"need {n_classes} classes with >= {per_class} items, only {len(eligible)} qualify"
        )
    chosen = [eligible[i] for i in rng.choice(len(eligible), size=n_classes, replace=False)]
    rows = []
    for cid in chosen:
        pool = inventory[cid]
        idx = rng.choice(len(pool), size=per_class, replace=False)
        rows.append(np.stack([np.asarray(pool[i]) for i in idx]))
    return Episode(tuple(chosen), np.stack(rows))


def positive_pairs(ep):
    """(query class, prototype class) pairs sharing a keyword: one per class."""
    return [(c, c) for c in ep.class_ids]


def negative_pairs(ep):
    return [(cj, ck) for cj in ep.class_ids for ck in ep.class_ids if cj != ck]


def iter_flat_batches(items, labels, n_classes, batch_size, rng):
    """One shuffled pass over ``items`` in batches of at most ``batch_size``."""
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    order = rng.permutation(len(items))
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        yield FlatBatch(items[idx], labels[idx], n_classes)
