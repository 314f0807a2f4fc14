"""LSNet encoder/decoder assembly.

Encoder level ``l`` runs a PAE block on the level's points and then keeps a
random ``1/ratio`` subset. The decoder walks back up with FMA blocks, fusing
each upsampled map with the skip features stored by the matching encoder
level, and a two-layer head produces per-point class logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, init_mlp
from .cloud_io import PointBlock, PointCloud
from .fma import POOL_MODES, LevelLink, build_level_link, fma_forward, init_fma_params
from .neighbors import NeighborTable, Projection, SplitSpec, default_split
from .pae import DEFAULT_BRANCHES, PaeConfig, build_branch_tables, init_pae_params, pae_forward


@dataclass(frozen=True)
class LevelConfig:
    d_out: int
    k: int = 16
    downsample_ratio: int = 4
    split: SplitSpec | None = None

    def __post_init__(self):
        if self.d_out < 1 or self.k < 1:
            raise ValueError("level widths and k must be positive")
        if self.downsample_ratio < 1:
            raise ValueError("downsample_ratio must be >= 1")
        if self.split is None:
            object.__setattr__(self, "split", default_split(self.k))


DEFAULT_LEVELS = (
    LevelConfig(32),
    LevelConfig(64),
    LevelConfig(128),
    LevelConfig(256),
)


@dataclass(frozen=True)
class NetworkConfig:
    num_classes: int
    levels: tuple[LevelConfig, ...] = DEFAULT_LEVELS
    branches: tuple[Projection, ...] = DEFAULT_BRANCHES
    fma_pool: str = "max"
    embed_width: int = 16
    head_width: int = 64
    block_size: int = 4096
    num_colors: int = 0
    class_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if not self.levels:
            raise ValueError("at least one encoder level is required")
        if self.fma_pool not in POOL_MODES:
            raise ValueError(f"fma_pool must be one of {POOL_MODES}")
        if self.class_names and len(self.class_names) != self.num_classes:
            raise ValueError("class_names must list one name per class")
        for lvl in self.levels:
            self.pae_config(lvl, lvl.d_out)

    @property
    def in_features(self) -> int:
        return 3 + self.num_colors

    def pae_config(self, level: LevelConfig, d_in: int) -> PaeConfig:
        return PaeConfig(d_in, level.d_out, level.k, tuple(self.branches), level.split)

    def names(self) -> list[str]:
        return list(self.class_names) or [str(c) for c in range(self.num_classes)]


def init_params(cfg: NetworkConfig, seed: int = 0, dtype=np.float32) -> dict:
    rng = np.random.default_rng(seed)
    params = {"embed": init_mlp(rng, cfg.in_features, cfg.embed_width, dtype=dtype), "encoder": {}}
    d_prev = cfg.embed_width
    for i, lvl in enumerate(cfg.levels):
        params["encoder"][str(i)] = init_pae_params(rng, cfg.pae_config(lvl, d_prev), dtype)
        d_prev = lvl.d_out
    params["decoder"] = {}
    for i in reversed(range(len(cfg.levels))):
        d_skip = cfg.levels[i].d_out
        params["decoder"][str(i)] = init_fma_params(rng, d_prev, d_skip, dtype)
        d_prev = d_skip
    params["head"] = {
        "fc1": init_mlp(rng, d_prev, cfg.head_width, dtype=dtype),
        "fc2": init_mlp(rng, cfg.head_width, cfg.num_classes, activation="none", dtype=dtype),
    }
    return params


def random_downsample(positions, ratio: int, rng: np.random.Generator, features=None):
    """Keep ``floor(N / ratio)`` distinct points chosen by a seeded shuffle.

    Returns ``(positions, features, kept)``; ``kept`` is sorted ascending.
    """
    n = len(positions)
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    keep = n // ratio
    if keep < 1:
        raise ValueError(f"ratio {ratio} leaves no points out of {n}")
    if ratio == 1:
        kept = np.arange(n)
    else:
        kept = np.sort(rng.permutation(n)[:keep])
    feats = None if features is None else ad.take_rows(features, kept)
    return np.asarray(positions)[kept], feats, kept


@dataclass
class LevelGeometry:
    positions: np.ndarray
    tables: dict[Projection, NeighborTable]
    kept: np.ndarray
    link: LevelLink


def prepare_geometry(positions, cfg: NetworkConfig, rng: np.random.Generator) -> list[LevelGeometry]:
    """All parameter-free structure of a forward pass: tables, subsets, level links."""
    levels = []
    pos = np.asarray(positions, dtype=np.float64)
    for lvl in cfg.levels:
        branches = set(cfg.branches) | {Projection.FULL3D}
        tables = build_branch_tables(pos, sorted(branches, key=lambda b: b.value), lvl.k)
        low, _, kept = random_downsample(pos, lvl.downsample_ratio, rng)
        link = build_level_link(pos, low, lvl.k, high_table=tables[Projection.FULL3D])
        levels.append(LevelGeometry(pos, tables, kept, link))
        pos = low
    return levels


def center_block(positions) -> np.ndarray:
    """Metric coordinates relative to the block's xy mean and lowest z.

    Neighbor order is translation invariant, so the tables match those of the
    raw coordinates; only the magnitudes the position encoding sees change.
    """
    pos = np.asarray(positions, dtype=np.float64)
    origin = np.array([*pos[:, :2].mean(axis=0), pos[:, 2].min()])
    return pos - origin


def block_features(cloud: PointCloud, dtype=np.float32, positions=None) -> np.ndarray:
    """Input features: centered coordinates followed by any colors."""
    pos = center_block(cloud.positions) if positions is None else positions
    feats = pos if cloud.colors is None else np.concatenate([pos, cloud.colors], axis=1)
    return feats.astype(dtype)


def block_inputs(cloud: PointCloud, cfg: "NetworkConfig", rng: np.random.Generator, dtype=np.float32):
    """``(features, geometry)`` for one block."""
    pos = center_block(cloud.positions)
    return block_features(cloud, dtype, pos), prepare_geometry(pos, cfg, rng)


def forward_geometry(features, geometry: list[LevelGeometry], cfg: NetworkConfig, params: dict) -> Tensor:
    if len(geometry) != len(cfg.levels):
        raise ValueError("geometry depth does not match the config")
    x = ad.linear_pointwise(features, params["embed"])
    skips = []
    d_prev = cfg.embed_width
    for i, (lvl, geo) in enumerate(zip(cfg.levels, geometry)):
        if x.shape[0] != len(geo.positions):
            raise ValueError(f"level {i}: {x.shape[0]} features for {len(geo.positions)} points")
        x = pae_forward(x, geo.positions, geo.tables, cfg.pae_config(lvl, d_prev), params["encoder"][str(i)])
        skips.append(x)
        x = ad.take_rows(x, geo.kept)
        d_prev = lvl.d_out
    for i in reversed(range(len(cfg.levels))):
        x = fma_forward(x, skips[i], geometry[i].link, params["decoder"][str(i)], cfg.fma_pool)
    x = ad.linear_pointwise(x, params["head"]["fc1"])
    return ad.linear_pointwise(x, params["head"]["fc2"])


def forward(block: PointBlock, cfg: NetworkConfig, params: dict, rng: np.random.Generator | None = None,
            dtype=None) -> Tensor:
    """Per-point logits of shape ``(block_size, num_classes)``."""
    if block.block_size != cfg.block_size or len(block.cloud) != cfg.block_size:
        raise ValueError(f"block of {len(block.cloud)} points; config expects {cfg.block_size}")
    if block.cloud.num_colors != cfg.num_colors:
        raise ValueError(f"block has {block.cloud.num_colors} color channels; config expects {cfg.num_colors}")
    rng = rng if rng is not None else np.random.default_rng(0)
    dtype = dtype or ad._val(params["embed"].weight).dtype
    features, geometry = block_inputs(block.cloud, cfg, rng, dtype)
    return forward_geometry(features, geometry, cfg, params)
