"""Exact k-nearest-neighbor tables under axis projections, and the two splits.

Rows of a :class:`NeighborTable` are sorted by ascending projected distance,
ties by ascending point index, so the query point itself sits in column 0
whenever the query set is the indexed set.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .kernels import KDTree


class Projection(enum.Enum):
    FULL3D = "3d"
    XY = "xy"
    XZ = "xz"
    YZ = "yz"

    @classmethod
    def parse(cls, text: str) -> Projection:
        key = text.strip().lower()
        if key in ("3d", "xyz", "full3d"):
            return cls.FULL3D
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown projection {text!r}") from None

    @property
    def dropped_axis(self) -> int | None:
        return {Projection.XY: 2, Projection.XZ: 1, Projection.YZ: 0}.get(self)

    def apply(self, positions) -> np.ndarray:
        """Copy of ``positions`` with the dropped coordinate set to zero."""
        out = np.array(positions, dtype=np.float64)
        if out.ndim != 2 or out.shape[1] != 3:
            raise ValueError("positions must be (N, 3)")
        axis = self.dropped_axis
        if axis is not None:
            out[:, axis] = 0.0
        return out


class SpatialIndex:
    """Immutable k-d tree over projected positions; safe for concurrent queries."""

    def __init__(self, positions, projection: Projection = Projection.FULL3D):
        pts = projection.apply(positions)
        if pts.shape[0] < 1:
            raise ValueError("cannot build an index over zero points")
        if not np.isfinite(pts).all():
            raise ValueError("positions must be finite")
        self.projection = projection
        self._tree = KDTree(pts)
        self.size = pts.shape[0]

    def query(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self._tree.query(self.projection.apply(queries), k)


def build_index(positions, projection: Projection = Projection.FULL3D) -> SpatialIndex:
    return SpatialIndex(positions, projection)


@dataclass(frozen=True)
class NeighborTable:
    indices: np.ndarray
    projection: Projection = Projection.FULL3D

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def __len__(self):
        return self.indices.shape[0]


def knn(index: SpatialIndex, queries, k: int) -> NeighborTable:
    """Exact k-NN; when ``k`` exceeds the index size rows repeat their last neighbor."""
    if k < 1:
        raise ValueError("k must be >= 1")
    idx, _ = index.query(queries, k)
    if idx.shape[1] < k:
        pad = np.repeat(idx[:, -1:], k - idx.shape[1], axis=1)
        idx = np.concatenate([idx, pad], axis=1)
    return NeighborTable(idx, index.projection)


def knn_table(positions, k: int, projection: Projection = Projection.FULL3D) -> NeighborTable:
    """Self-query table: neighbors of every point among the same points."""
    return knn(build_index(positions, projection), positions, k)


@dataclass(frozen=True)
class SplitSpec:
    s1: int
    s2: int

    def check(self, k: int) -> None:
        if not 1 <= self.s1 <= k:
            raise ValueError(f"s1={self.s1} outside [1, {k}]")
        if not 1 <= self.s2 <= k:
            raise ValueError(f"s2={self.s2} outside [1, {k}]")

    def slots(self, k: int) -> tuple[int, int]:
        """Neighbor slots per point in the first and second round."""
        return self.s1, math.ceil(k / self.s2)


def default_split(k: int) -> SplitSpec:
    if k < 1:
        raise ValueError("k must be >= 1")
    return SplitSpec(max(1, k // 4), min(4, k))


def split_first(table: NeighborTable, s1: int) -> NeighborTable:
    if not 1 <= s1 <= table.k:
        raise ValueError(f"s1={s1} outside [1, {table.k}]")
    return NeighborTable(table.indices[:, :s1], table.projection)


def split_stride(table: NeighborTable, s2: int) -> NeighborTable:
    if not 1 <= s2 <= table.k:
        raise ValueError(f"s2={s2} outside [1, {table.k}]")
    return NeighborTable(table.indices[:, ::s2], table.projection)
