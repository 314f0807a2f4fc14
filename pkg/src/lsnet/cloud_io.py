"""Point cloud container, canonical file format, grid and block sampling.

File layout (``ascii``)::

    N C L
    x y z [c1 .. cC] [label]      # N rows

File layout (``binary``): magic ``LSPC``, three little-endian ``uint32``
(N, C, L), then N records of ``3 + C`` little-endian ``float32`` followed by a
little-endian ``uint32`` label when ``L == 1``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kernels import KDTree

MAGIC = b"LSPC"
DEFAULT_BLOCK_SIZE = 16384


class CloudFormatError(ValueError):
    """Raised when a point file does not follow the canonical layout."""


@dataclass(frozen=True, eq=False)
class PointCloud:
    positions: np.ndarray
    colors: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        if not np.isfinite(pos).all():
            raise ValueError("positions contain non-finite values")
        object.__setattr__(self, "positions", pos)
        n = pos.shape[0]
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=np.float64)
            if col.ndim != 2 or col.shape[0] != n:
                raise ValueError("colors must have one row per point")
            object.__setattr__(self, "colors", col if col.shape[1] else None)
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (n,):
                raise ValueError("labels must have one entry per point")
            if lab.size and lab.min() < 0:
                raise ValueError("labels must be non-negative")
            object.__setattr__(self, "labels", lab.astype(np.int64))

    def __len__(self):
        return self.positions.shape[0]

    @property
    def num_colors(self) -> int:
        return 0 if self.colors is None else self.colors.shape[1]

    def check_labels(self, num_classes: int) -> None:
        if self.labels is not None and self.labels.size and self.labels.max() >= num_classes:
            raise ValueError(f"label {self.labels.max()} out of range for {num_classes} classes")

    def subset(self, index) -> PointCloud:
        index = np.asarray(index)
        return PointCloud(
            self.positions[index],
            None if self.colors is None else self.colors[index],
            None if self.labels is None else self.labels[index],
        )

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and bool(np.array_equal(a, b))

        return (
            same(self.positions, other.positions)
            and same(self.colors, other.colors)
            and same(self.labels, other.labels)
        )


@dataclass(frozen=True)
class PointBlock:
    cloud: PointCloud
    origin_indices: np.ndarray
    block_size: int


def sniff_format(path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(4)
    return "binary" if head == MAGIC else "ascii"


def load_cloud(path, format: str | None = None, num_classes: int | None = None) -> PointCloud:
    """Read a canonical point file. ``format=None`` sniffs the magic bytes."""
    fmt = format or sniff_format(path)
    if fmt == "binary":
        cloud = _load_binary(Path(path).read_bytes())
    elif fmt == "ascii":
        cloud = _load_ascii(Path(path).read_text(encoding="ascii"))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if num_classes is not None:
        try:
            cloud.check_labels(num_classes)
        except ValueError as exc:
            raise CloudFormatError(str(exc)) from None
    return cloud


def _parse_header(tokens) -> tuple[int, int, int]:
    if len(tokens) != 3:
        raise CloudFormatError("malformed header: expected 'N C L'")
    try:
        n, c, lab = (int(t) for t in tokens)
    except ValueError:
        raise CloudFormatError("malformed header: non-integer field") from None
    if n < 0 or c < 0 or lab not in (0, 1):
        raise CloudFormatError("malformed header: invalid counts")
    return n, c, lab


def _load_ascii(text: str) -> PointCloud:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise CloudFormatError("malformed header: empty file")
    n, c, has_labels = _parse_header(lines[0].split())
    rows = lines[1:]
    if len(rows) != n:
        raise CloudFormatError(f"row count mismatch: header says {n}, found {len(rows)}")
    width = 3 + c + has_labels
    vals = np.empty((n, 3 + c), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64) if has_labels else None
    for i, row in enumerate(rows):
        fields = row.split()
        if len(fields) != width:
            raise CloudFormatError(f"row {i}: expected {width} fields, found {len(fields)}")
        try:
            # float() is locale-independent
            vals[i] = [float(f) for f in fields[: 3 + c]]
            if has_labels:
                labels[i] = int(fields[-1])
        except ValueError:
            raise CloudFormatError(f"row {i}: unparseable field") from None
    return _assemble(vals, c, labels)


def _load_binary(data: bytes) -> PointCloud:
    if len(data) < 16 or data[:4] != MAGIC:
        raise CloudFormatError("malformed header: missing LSPC magic")
    n, c, has_labels = _parse_header(struct.unpack("<3I", data[4:16]))
    rec = np.dtype([("v", "<f4", (3 + c,))] + ([("label", "<u4")] if has_labels else []))
    body = data[16:]
    if len(body) != n * rec.itemsize:
        raise CloudFormatError(
            f"row count mismatch: expected {n * rec.itemsize} body bytes, found {len(body)}"
        )
    arr = np.frombuffer(body, dtype=rec, count=n)
    labels = arr["label"].astype(np.int64) if has_labels else None
    return _assemble(arr["v"].astype(np.float64), c, labels)


def _assemble(vals, c, labels) -> PointCloud:
    pos = vals[:, :3]
    if not np.isfinite(pos).all():
        bad = int(np.flatnonzero(~np.isfinite(pos).all(axis=1))[0])
        raise CloudFormatError(f"row {bad}: non-finite coordinate")
    colors = vals[:, 3:].copy() if c else None
    return PointCloud(pos.copy(), colors, labels)


def write_cloud(cloud: PointCloud, path, format: str = "binary") -> None:
    n, c = len(cloud), cloud.num_colors
    has_labels = int(cloud.labels is not None)
    if format == "binary":
        rec = np.dtype([("v", "<f4", (3 + c,))] + ([("label", "<u4")] if has_labels else []))
        arr = np.empty(n, dtype=rec)
        arr["v"][:, :3] = cloud.positions
        if c:
            arr["v"][:, 3:] = cloud.colors
        if has_labels:
            arr["label"] = cloud.labels
        with open(path, "wb") as fh:
            fh.write(MAGIC + struct.pack("<3I", n, c, has_labels))
            fh.write(arr.tobytes())
    elif format == "ascii":
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(f"{n} {c} {has_labels}\n")
            for i in range(n):
                fields = [f"{v:.9g}" for v in cloud.positions[i]]
                if c:
                    fields += [f"{v:.9g}" for v in cloud.colors[i]]
                if has_labels:
                    fields.append(str(int(cloud.labels[i])))
                fh.write(" ".join(fields) + "\n")
    else:
        raise ValueError(f"unknown format {format!r}")


def grid_sample(cloud: PointCloud, cell: float) -> PointCloud:
    """Voxel-grid downsampling anchored at the cloud's minimum corner.

    One point per occupied cell: centroid position, mean color and majority
    label (ties go to the smallest class id). Output is ordered by cell key.
    """
    if not cell > 0:
        raise ValueError("cell size must be positive")
    if len(cloud) == 0:
        return cloud
    pos = cloud.positions
    keys = np.floor((pos - pos.min(axis=0)) / cell).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    g = counts.shape[0]
    centroid = np.stack([np.bincount(inverse, pos[:, d], g) for d in range(3)], axis=1)
    centroid /= counts[:, None]
    colors = None
    if cloud.colors is not None:
        colors = np.stack(
            [np.bincount(inverse, cloud.colors[:, d], g) for d in range(cloud.num_colors)], axis=1
        ).reshape(g, cloud.num_colors)
        colors /= counts[:, None]
    labels = None
    if cloud.labels is not None:
        nc = int(cloud.labels.max()) + 1
        votes = np.bincount(inverse * nc + cloud.labels, minlength=g * nc).reshape(g, nc)
        labels = votes.argmax(axis=1)
    return PointCloud(centroid, colors, labels)


def sample_block(cloud: PointCloud, center_index: int, n: int = DEFAULT_BLOCK_SIZE,
                 rng: np.random.Generator | None = None, tree=None) -> PointBlock:
    """The ``n`` points nearest the center point, padded by resampling if short."""
    total = len(cloud)
    if not 0 <= center_index < total:
        raise IndexError(f"center index {center_index} out of range for {total} points")
    if n < 1:
        raise ValueError("block size must be >= 1")
    tree = tree if tree is not None else KDTree(cloud.positions)
    idx, _ = tree.query(cloud.positions[center_index : center_index + 1], min(n, total))
    idx = idx[0]
    if total < n:
        rng = rng if rng is not None else np.random.default_rng(0)
        extra = rng.integers(0, total, size=n - total)
        idx = np.concatenate([idx, idx[extra]])
    return PointBlock(cloud.subset(idx), idx, n)
