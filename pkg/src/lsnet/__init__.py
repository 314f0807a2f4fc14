"""Point-cloud semantic segmentation with split attention pooling."""

from .cloud_io import PointBlock, PointCloud, grid_sample, load_cloud, sample_block, write_cloud
from .kernels import BACKEND
from .metrics import evaluate
from .neighbors import Projection, SplitSpec, default_split, knn_table
from .network import LevelConfig, NetworkConfig, init_params
from .synth import synth_scene
from .training import TrainConfig, predict, train

__all__ = [
    "BACKEND",
    "LevelConfig",
    "NetworkConfig",
    "PointBlock",
    "PointCloud",
    "Projection",
    "SplitSpec",
    "TrainConfig",
    "default_split",
    "evaluate",
    "grid_sample",
    "init_params",
    "knn_table",
    "load_cloud",
    "predict",
    "sample_block",
    "synth_scene",
    "train",
    "write_cloud",
]
