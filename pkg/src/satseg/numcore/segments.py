from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SegmentMap:
    """Grouping of rows into segments, with a stable contiguous layout.

    ``order`` is a stable argsort of ``ids``, so inside every segment the rows
    appear in ascending original index; all reductions run in that order.
    """

    ids: np.ndarray
    num_segments: int
    order: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)

    @classmethod
    def from_ids(cls, ids, num_segments: int | None = None) -> "SegmentMap":
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if num_segments is None:
            num_segments = int(ids.max()) + 1 if ids.size else 0
        if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
            raise IndexError(f"segment id out of range [0, {num_segments})")
        order = np.argsort(ids, kind="stable")
        counts = np.bincount(ids, minlength=num_segments)
        offsets = np.zeros(num_segments + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return cls(ids=ids, num_segments=int(num_segments), order=order, offsets=offsets)

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def empty(self) -> np.ndarray:
        """Boolean flag per segment; empty segments reduce to zeros."""
        return self.counts == 0

    def __len__(self) -> int:
        return int(self.ids.size)

    def members(self, s: int) -> np.ndarray:
        return self.order[self.offsets[s]:self.offsets[s + 1]]


@dataclass(frozen=True)
class PairList:
    """Sparse (query, key) attention pairs grouped by query.

    Pairs are sorted by query index; ``offsets[i]:offsets[i+1]`` are the pairs
    of query ``i``.  Every query owns at least one key.
    """

    q_idx: np.ndarray
    k_idx: np.ndarray
    offsets: np.ndarray
    num_keys: int

    @property
    def num_queries(self) -> int:
        return len(self.offsets) - 1

    def __len__(self) -> int:
        return int(self.q_idx.size)

    @classmethod
    def from_groups(cls, query_group: np.ndarray, key_group: np.ndarray, num_groups: int) -> "PairList":
        """All pairs (i, j) with ``query_group[i] == key_group[j]``.

        Keys inside a group keep ascending index order.
        """
        query_group = np.asarray(query_group, dtype=np.int64)
        key_group = np.asarray(key_group, dtype=np.int64)
        keys = SegmentMap.from_ids(key_group, num_groups)
        per_query = keys.counts[query_group]
        if per_query.size and per_query.min() < 1:
            raise ValueError("a query has no keys in its group")
        offsets = np.zeros(query_group.size + 1, dtype=np.int64)
        np.cumsum(per_query, out=offsets[1:])
        total = int(offsets[-1])
        q_idx = np.repeat(np.arange(query_group.size, dtype=np.int64), per_query)
        local = np.arange(total, dtype=np.int64) - offsets[:-1][q_idx]
        k_pos = keys.offsets[:-1][query_group][q_idx] + local
        return cls(q_idx=q_idx, k_idx=keys.order[k_pos], offsets=offsets, num_keys=int(key_group.size))
