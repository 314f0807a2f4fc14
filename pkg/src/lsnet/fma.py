"""Decoder block: nearest upsampling, neighbor gather, max (or mean) pooling, skip fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, init_mlp
from .neighbors import NeighborTable, build_index, knn

POOL_MODES = ("max", "mean", "none")


@dataclass(frozen=True)
class LevelLink:
    up_map: np.ndarray
    high_table: NeighborTable
    n_low: int


def build_level_link(p_high, p_low, k: int, high_table: NeighborTable | None = None) -> LevelLink:
    """1-NN map from high- to low-resolution points, plus the high-resolution 3D table."""
    if len(p_high) < 1 or len(p_low) < 1:
        raise ValueError("both levels need at least one point")
    up_map = knn(build_index(p_low), p_high, 1).indices[:, 0]
    if high_table is None:
        high_table = knn(build_index(p_high), p_high, k)
    return LevelLink(up_map, high_table, len(p_low))


def upsample_nearest(f_low, up_map) -> Tensor:
    return ad.take_rows(f_low, up_map)


def init_fma_params(rng, d_low: int, d_skip: int, dtype=np.float32) -> dict:
    return {"fuse": init_mlp(rng, d_low + d_skip, d_skip, dtype=dtype, zero=True)}


def fma_forward(f_low, f_skip, link: LevelLink, params: dict, pool: str = "max") -> Tensor:
    if pool not in POOL_MODES:
        raise ValueError(f"unknown pool mode {pool!r}")
    f_low, f_skip = ad.as_tensor(f_low), ad.as_tensor(f_skip)
    if f_low.shape[0] != link.n_low or f_skip.shape[0] != link.up_map.shape[0]:
        raise ValueError("feature rows do not match the level link")
    up = upsample_nearest(f_low, link.up_map)
    if pool == "none":
        pooled = up
    else:
        gathered = ad.gather_rows(up, link.high_table)
        reduce = ad.reduce_max_neighbor if pool == "max" else ad.reduce_mean_neighbor
        pooled = reduce(gathered)
    fused = ad.linear_pointwise(ad.concat_channels(pooled, f_skip), params["fuse"])
    return ad.add(fused, f_skip)

