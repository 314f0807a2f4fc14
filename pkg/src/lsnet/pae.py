"""Parallel aggregation encoder block: LSAP branches over 2D and 3D neighbor tables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, init_mlp
from .lsap import init_lsap_params, lsap_block
from .neighbors import NeighborTable, Projection, SplitSpec, build_index, default_split, knn

DEFAULT_BRANCHES = (Projection.XY, Projection.FULL3D)


@dataclass(frozen=True)
class PaeConfig:
    d_in: int
    d_out: int
    k: int = 16
    branches: tuple[Projection, ...] = DEFAULT_BRANCHES
    split: SplitSpec | None = field(default=None)

    def __post_init__(self):
        if not 1 <= len(self.branches) <= 4:
            raise ValueError("a PAE block needs 1 to 4 branches")
        if len(set(self.branches)) != len(self.branches):
            raise ValueError("branch projections must be distinct")
        if len(self.branches) == 2 and self.d_out % 2:
            raise ValueError("d_out must be even with two branches")
        if self.branch_width < 1:
            raise ValueError("d_out too small for the number of branches")
        if self.split is None:
            object.__setattr__(self, "split", default_split(self.k))
        self.split.check(self.k)

    @property
    def branch_width(self) -> int:
        return self.d_out // len(self.branches)


def build_branch_tables(positions, branches, k: int) -> dict[Projection, NeighborTable]:
    if len(positions) < 1:
        raise ValueError("cannot build neighbor tables over zero points")
    return {b: knn(build_index(positions, b), positions, k) for b in branches}


def init_pae_params(rng, cfg: PaeConfig, dtype=np.float32) -> dict:
    width = cfg.branch_width
    return {
        "expand": init_mlp(rng, cfg.d_in, cfg.d_out, dtype=dtype),
        "branches": {
            b.value: init_lsap_params(rng, cfg.d_out, width, dtype) for b in cfg.branches
        },
        "fuse": init_mlp(rng, width * len(cfg.branches), cfg.d_out, dtype=dtype, zero=True),
    }


def pae_forward(features, positions, tables: dict, cfg: PaeConfig, params: dict) -> Tensor:
    """Expand, run one LSAP per branch, concatenate, fuse, add the expanded input.

    Branch tables decide neighbor selection only; the position encoding always
    sees the full 3D coordinates.
    """
    expanded = ad.linear_pointwise(features, params["expand"])
    outs = []
    for b in cfg.branches:
        if b not in tables:
            raise KeyError(f"no neighbor table for branch {b.value}")
        outs.append(lsap_block(expanded, positions, tables[b], cfg.split, params["branches"][b.value]))
    merged = outs[0]
    for o in outs[1:]:
        merged = ad.concat_channels(merged, o)
    return ad.add(ad.linear_pointwise(merged, params["fuse"]), expanded)
