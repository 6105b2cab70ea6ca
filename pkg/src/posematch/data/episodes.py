"""Episodic sampling: K support instances plus one query of a category."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from posematch.data.annotations import DatasetSplit, InstanceAnnotation


class SamplingError(ValueError):
    """Raised when a category cannot supply K supports plus a query."""


@dataclass(frozen=True)
class Episode:
    category_id: int
    supports: tuple[InstanceAnnotation, ...]
    query: InstanceAnnotation

    def __post_init__(self) -> None:
        if len(self.supports) < 1:
            raise SamplingError("episode needs K >= 1 supports")
        members = (*self.supports, self.query)
        if any(m.category_id != self.category_id for m in members):
            raise SamplingError("episode members must share the category id")
        if any(s.id == self.query.id for s in self.supports):
            raise SamplingError("query must not appear among its supports")


def instances_by_category(pool) -> dict[int, list[InstanceAnnotation]]:
    grouped: dict[int, list[InstanceAnnotation]] = {}
    for inst in pool:
        grouped.setdefault(inst.category_id, []).append(inst)
    for members in grouped.values():
        members.sort(key=lambda m: m.id)
    return grouped


def sample_episode(split: DatasetSplit | None, pool, category: int,
                   k: int, rng_seed) -> Episode:
    """Draw K distinct supports and a distinct query, uniformly, seeded.

    ``pool`` may be a flat list of instances or a pre-grouped mapping from
    ``instances_by_category``. Draws are a pure function of ``rng_seed``.
    """
    if split is not None:
        known = split.train_categories | split.val_categories | split.test_categories
        if category not in known:
            raise SamplingError(f"category {category} not in the split")
    grouped = pool if isinstance(pool, dict) else instances_by_category(pool)
    members = grouped.get(category, [])
    if len(members) < k + 1:
        raise SamplingError(
            f"category {category} has {len(members)} instances; "
            f"need at least {k + 1} for K={k}")
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(members))
    chosen = [members[i] for i in order[:k + 1]]
    return Episode(category_id=category,
                   supports=tuple(chosen[:k]),
                   query=chosen[k])
