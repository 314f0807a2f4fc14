"""Seeded synthetic urban scene: ground plane, box buildings, trees on stems, poles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud_io import PointCloud

CLASS_NAMES = ("ground", "building", "tree", "pole")
DEFAULT_PROPORTIONS = (0.4, 0.3, 0.2, 0.1)


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    x1: float
    y1: float
    height: float


@dataclass(frozen=True)
class SyntheticScene:
    cloud: PointCloud
    seed: int
    buildings: tuple[Box, ...]


def _allocate(total: int, proportions) -> np.ndarray:
    """Integer counts summing to ``total`` by largest remainder."""
    p = np.asarray(proportions, dtype=np.float64)
    raw = p / p.sum() * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _cylinder(rng, n, cx, cy, radius, z0, z1):
    theta = rng.uniform(0, 2 * np.pi, n)
    r = radius * np.sqrt(rng.uniform(0.8, 1.0, n))
    return np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta), rng.uniform(z0, z1, n)], axis=1)


def _sphere(rng, n, center, radius):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.uniform(0.85, 1.0, (n, 1))
    return np.asarray(center) + v * r


def _box_surface(rng, n, box: Box):
    w, d, h = box.x1 - box.x0, box.y1 - box.y0, box.height
    areas = np.array([w * h, w * h, d * h, d * h, w * d])
    face = rng.choice(5, size=n, p=areas / areas.sum())
    u, v = rng.uniform(size=n), rng.uniform(size=n)
    pts = np.empty((n, 3))
    for f in range(5):
        sel = face == f
        a, b = u[sel], v[sel]
        if f == 0:
            pts[sel] = np.stack([box.x0 + a * w, np.full(a.size, box.y0), b * h], axis=1)
        elif f == 1:
            pts[sel] = np.stack([box.x0 + a * w, np.full(a.size, box.y1), b * h], axis=1)
        elif f == 2:
            pts[sel] = np.stack([np.full(a.size, box.x0), box.y0 + a * d, b * h], axis=1)
        elif f == 3:
            pts[sel] = np.stack([np.full(a.size, box.x1), box.y0 + a * d, b * h], axis=1)
        else:
            pts[sel] = np.stack([box.x0 + a * w, box.y0 + b * d, np.full(a.size, h)], axis=1)
    return pts


def _split(rng, total, parts):
    if parts == 1:
        return np.array([total])
    return _allocate(total, rng.uniform(0.7, 1.3, parts))


def synth_scene(seed: int = 0, n_points: int = 4096, extent: float = 40.0,
                proportions=DEFAULT_PROPORTIONS) -> SyntheticScene:
    """Deterministic labeled scene; class counts follow ``proportions`` exactly (up to rounding)."""
    if n_points < 100:
        raise ValueError("n_points must be >= 100")
    if extent < 20:
        raise ValueError("extent must be at least 20 m")
    if len(proportions) != len(CLASS_NAMES) or min(proportions) < 0 or sum(proportions) <= 0:
        raise ValueError("proportions must be four non-negative weights")
    rng = np.random.default_rng(seed)
    counts = _allocate(n_points, proportions)

    # objects occupy distinct 10 m slots so they never overlap
    slots = int(extent // 10)
    cells = rng.permutation(slots * slots)
    n_build, n_tree, n_pole = 2, 3, 3
    if n_build + n_tree + n_pole > cells.size:
        raise ValueError("extent too small for the object layout")
    centers = [((c // slots) * 10 + 5.0, (c % slots) * 10 + 5.0) for c in cells]

    pieces, labels, boxes = [], [], []
    ground = np.column_stack([rng.uniform(0, extent, (counts[0], 2)), rng.normal(0, 0.02, counts[0])])
    pieces.append(ground)
    labels.append(np.zeros(counts[0], dtype=np.int64))

    for j, n in enumerate(_split(rng, counts[1], n_build)):
        cx, cy = centers[j]
        hw, hd = rng.uniform(2.5, 4.0, 2)
        box = Box(cx - hw, cy - hd, cx + hw, cy + hd, float(rng.uniform(6.0, 12.0)))
        boxes.append(box)
        pieces.append(_box_surface(rng, n, box))
        labels.append(np.full(n, 1, dtype=np.int64))

    for j, n in enumerate(_split(rng, counts[2], n_tree)):
        cx, cy = centers[n_build + j]
        stem_h = rng.uniform(1.5, 2.5)
        crown = rng.uniform(1.8, 2.6)
        n_stem = n // 6
        stem = _cylinder(rng, n_stem, cx, cy, 0.25, 0.0, stem_h)
        canopy = _sphere(rng, n - n_stem, (cx, cy, stem_h + crown), crown)
        pieces += [stem, canopy]
        labels.append(np.full(n, 2, dtype=np.int64))

    for j, n in enumerate(_split(rng, counts[3], n_pole)):
        cx, cy = centers[n_build + n_tree + j]
        pieces.append(_cylinder(rng, n, cx, cy, 0.1, 0.0, rng.uniform(6.0, 9.0)))
        labels.append(np.full(n, 3, dtype=np.int64))

    cloud = PointCloud(np.concatenate(pieces), labels=np.concatenate(labels))
    return SyntheticScene(cloud, seed, tuple(boxes))
