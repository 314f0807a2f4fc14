"""Weighted cross-entropy, Adam with per-epoch exponential decay, training and inference."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .cloud_io import PointBlock, PointCloud, sample_block
from .kernels import KDTree
from .metrics import ConfusionMatrix, evaluate
from .network import NetworkConfig, block_inputs, forward_geometry, init_params

log = logging.getLogger(__name__)

CLASS_WEIGHT_EPS = 0.02
MODEL_FILE = "model.lswt"
OPTIM_FILE = "optim.lswt"
METRICS_FILE = "metrics.csv"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    steps_per_epoch: int = 1
    lr0: float = 0.01
    lr_decay: float = 0.95
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    rotate: bool = True
    jitter: float = 0.0
    verification: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("epochs", "batch_size", "steps_per_epoch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not (self.lr0 > 0 and 0 < self.lr_decay <= 1):
            raise ValueError("lr0 must be positive and lr_decay in (0, 1]")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.adam_eps > 0):
            raise ValueError("invalid Adam hyperparameters")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")
        np.dtype(self.dtype)

    def lr(self, epoch: int) -> float:
        return self.lr0 * self.lr_decay**epoch


def class_weights(histogram) -> np.ndarray:
    """Inverse-frequency weights with an ``0.02`` floor, normalized to mean 1."""
    counts = np.asarray(histogram, dtype=np.float64)
    if counts.ndim != 1 or (counts < 0).any():
        raise ValueError("histogram must be a vector of non-negative counts")
    if counts.sum() <= 0:
        raise ValueError("histogram has no samples")
    w = 1.0 / (counts / counts.sum() + CLASS_WEIGHT_EPS)
    return w / w.mean()


def weighted_cross_entropy(logits, labels, weights) -> Tensor:
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"{labels.shape[0]} labels for {n} logit rows")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label outside [0, {c})")
    z = logits.value
    w = np.asarray(weights, dtype=z.dtype)[labels]
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    nll = lse - shifted[np.arange(n), labels]
    loss = np.asarray((w * nll).sum() / n, dtype=z.dtype)

    def backward(g):
        grad = np.exp(shifted - lse[:, None])
        grad[np.arange(n), labels] -= 1
        return (grad * (w * (g / n))[:, None],)

    return ad.record(loss, (logits,), backward)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays) -> AdamState:
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def adam_step(params: dict, grads, state: AdamState, lr: float, beta1=0.9, beta2=0.999,
              eps=1e-8) -> tuple[dict, AdamState]:
    arrays = [a for _, a in ad.flatten_params(params)]
    grads = list(grads)
    if len(grads) != len(arrays):
        raise ValueError(f"{len(grads)} gradients for {len(arrays)} parameters")
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        dt = p.dtype.type
        m = dt(beta1) * m + dt(1 - beta1) * g
        v = dt(beta2) * v + dt(1 - beta2) * (g * g)
        update = (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(eps))
        new_p.append(p - dt(lr) * update)
        new_m.append(m)
        new_v.append(v)
    return ad.load_flat(params, new_p), AdamState(new_m, new_v, t)


@dataclass
class TrainResult:
    params: dict
    state: AdamState
    history: list[dict] = field(default_factory=list)
    weights: np.ndarray | None = None


def _augment(block: PointBlock, cfg: TrainConfig, rng) -> PointBlock:
    pos = block.cloud.positions
    if cfg.rotate:
        theta = rng.uniform(0, 2 * math.pi)
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        pos = pos @ rot.T
    if cfg.jitter:
        pos = pos + rng.normal(0.0, cfg.jitter, size=pos.shape)
    cloud = PointCloud(pos, block.cloud.colors, block.cloud.labels)
    return PointBlock(cloud, block.origin_indices, block.block_size)


def _metrics_header(net_cfg: NetworkConfig) -> list[str]:
    return ["epoch", "lr", "loss", "oa", "miou"] + [f"iou_{n}" for n in net_cfg.names()]


def _fmt(x: float) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else f"{x:.8g}"


def _row_values(row: dict, net_cfg: NetworkConfig) -> list[str]:
    return [str(row["epoch"]), _fmt(row["lr"]), _fmt(row["loss"]), _fmt(row["oa"]), _fmt(row["miou"])] + [
        _fmt(float(x)) for x in row["iou"]
    ]


def save_training_state(out_dir, params: dict, state: AdamState, epoch: int) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ad.save_checkpoint(out_dir / MODEL_FILE, [a for _, a in ad.flatten_params(params)])
    extra = [np.array([state.step], dtype=np.float32), np.array([epoch], dtype=np.float32)]
    ad.save_checkpoint(out_dir / OPTIM_FILE, state.m + state.v + extra)


def load_training_state(out_dir, template: dict) -> tuple[dict, AdamState, int]:
    out_dir = Path(out_dir)
    params = ad.load_flat(template, ad.load_checkpoint(out_dir / MODEL_FILE))
    arrays = ad.load_checkpoint(out_dir / OPTIM_FILE)
    n = len(ad.flatten_params(template))
    if len(arrays) != 2 * n + 2:
        raise ValueError("optimizer checkpoint does not match the model")
    dtype = ad.flatten_params(params)[0][1].dtype
    m = [a.astype(dtype) for a in arrays[:n]]
    v = [a.astype(dtype) for a in arrays[n : 2 * n]]
    return params, AdamState(m, v, int(arrays[-2][0])), int(arrays[-1][0])


def train(clouds, net_cfg: NetworkConfig, train_cfg: TrainConfig, out_dir=None, resume: bool = False,
          params: dict | None = None) -> TrainResult:
    """Train on labeled clouds; writes checkpoints and a metrics CSV when ``out_dir`` is given.

    Epoch ``e`` (0-based) uses learning rate ``lr0 * lr_decay**e`` and draws its
    randomness from a generator seeded with ``(seed, e)``, so a resumed run
    replays exactly what an uninterrupted one would have done.
    """
    clouds = [clouds] if isinstance(clouds, PointCloud) else list(clouds)
    if not clouds:
        raise ValueError("training needs at least one cloud")
    for c in clouds:
        if c.labels is None:
            raise ValueError("training clouds must carry labels")
        c.check_labels(net_cfg.num_classes)
        if c.num_colors != net_cfg.num_colors:
            raise ValueError(f"cloud has {c.num_colors} color channels; config expects {net_cfg.num_colors}")
    dtype = np.dtype(train_cfg.dtype)
    hist = sum(np.bincount(c.labels, minlength=net_cfg.num_classes) for c in clouds)
    weights = class_weights(hist)
    template = params if params is not None else init_params(net_cfg, train_cfg.seed, dtype)
    template = ad.cast_params(template, dtype)
    start = 0
    if resume:
        if out_dir is None:
            raise ValueError("resume needs an output directory")
        params, state, last = load_training_state(out_dir, template)
        start = last + 1
    else:
        params = template
        state = AdamState.zeros_like([a for _, a in ad.flatten_params(params)])
    trees = [KDTree(c.positions) for c in clouds]
    history = []
    metrics_path = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        metrics_path = Path(out_dir) / METRICS_FILE
        if not resume or not metrics_path.exists():
            with open(metrics_path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(_metrics_header(net_cfg))

    limits = threadpool_limits(1) if train_cfg.verification else None
    try:
        for epoch in range(start, train_cfg.epochs):
            rng = np.random.default_rng([train_cfg.seed, epoch])
            lr = train_cfg.lr(epoch)
            losses = []
            cm = ConfusionMatrix(np.zeros((net_cfg.num_classes,) * 2, dtype=np.int64))
            for _ in range(train_cfg.steps_per_epoch):
                tape = Tape()
                watched = ad.watch_params(params, tape)
                total = None
                for _ in range(train_cfg.batch_size):
                    ci = int(rng.integers(len(clouds)))
                    cloud = clouds[ci]
                    center = int(rng.integers(len(cloud)))
                    block = sample_block(cloud, center, net_cfg.block_size, rng=rng, tree=trees[ci])
                    block = _augment(block, train_cfg, rng)
                    features, geometry = block_inputs(block.cloud, net_cfg, rng, dtype)
                    logits = forward_geometry(features, geometry, net_cfg, watched)
                    loss = weighted_cross_entropy(logits, block.cloud.labels, weights)
                    total = loss if total is None else ad.add(total, loss)
                    cm = cm + ConfusionMatrix.from_labels(
                        logits.value.argmax(axis=1), block.cloud.labels, net_cfg.num_classes
                    )
                total = ad.scale(total, 1.0 / train_cfg.batch_size)
                tape.backward(total)
                grads = [
                    getattr(owner, fld).grad
                    if getattr(owner, fld).grad is not None
                    else np.zeros_like(getattr(owner, fld).value)
                    for _, owner, fld in ad.iter_params(watched)
                ]
                tape.release()
                params, state = adam_step(params, grads, state, lr, train_cfg.beta1, train_cfg.beta2,
                                          train_cfg.adam_eps)
                losses.append(float(total.value))
            row = {
                "epoch": epoch,
                "lr": lr,
                "loss": float(np.mean(losses)),
                "oa": cm.overall_accuracy(),
                "miou": cm.mean_iou(),
                "iou": cm.iou(),
            }
            history.append(row)
            log.info("epoch %d lr %.5g loss %.4f oa %.4f miou %.4f", epoch, lr, row["loss"], row["oa"], row["miou"])
            if out_dir is not None:
                save_training_state(out_dir, params, state, epoch)
                with open(metrics_path, "a", newline="") as fh:
                    csv.writer(fh, lineterminator="\n").writerow(_row_values(row, net_cfg))
    finally:
        if limits is not None:
            limits.unregister()
    return TrainResult(params, state, history, weights)


def predict(cloud: PointCloud, net_cfg: NetworkConfig, params: dict, seed: int = 0) -> np.ndarray:
    """Class id per point, voting softmax scores over blocks until every point is covered."""
    rng = np.random.default_rng(seed)
    n = len(cloud)
    dtype = ad.flatten_params(params)[0][1].dtype
    scores = np.zeros((n, net_cfg.num_classes))
    visits = np.zeros(n, dtype=np.int64)
    tree = KDTree(cloud.positions)
    while (visits == 0).any():
        center = int(np.flatnonzero(visits == visits.min())[0])
        block = sample_block(cloud, center, net_cfg.block_size, rng=rng, tree=tree)
        features, geometry = block_inputs(block.cloud, net_cfg, rng, dtype)
        logits = forward_geometry(features, geometry, net_cfg, params).value
        z = logits - logits.max(axis=1, keepdims=True)
        prob = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        np.add.at(scores, block.origin_indices, prob)
        np.add.at(visits, block.origin_indices, 1)
    return scores.argmax(axis=1)


def evaluate_cloud(cloud: PointCloud, net_cfg: NetworkConfig, params: dict, seed: int = 0):
    return evaluate(predict(cloud, net_cfg, params, seed), cloud.labels, net_cfg.num_classes)
