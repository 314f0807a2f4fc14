"""Line-oriented ``key=value`` run configuration.

Example::

    num_classes=4
    class_names=ground,building,tree,pole
    branches=xy,3d
    fma_pool=max
    level.1.d_out=32
    level.1.k=16
    level.1.ratio=4
    train.epochs=60
    data=scene.lspc
    out=run

Encoder levels are numbered from 1. Relative ``data``/``out`` paths resolve
against the directory holding the config file.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass
from pathlib import Path

from .network import DEFAULT_LEVELS, LevelConfig, NetworkConfig
from .neighbors import Projection, SplitSpec, default_split
from .training import TrainConfig


class ConfigError(ValueError):
    pass


_NET_INT = ("num_classes", "embed_width", "head_width", "block_size", "num_colors")
_LEVEL_KEYS = {"d_out", "k", "ratio", "s1", "s2"}
_TRAIN_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_LEVEL_RE = re.compile(r"^level\.(\d+)\.(\w+)$")


@dataclass
class RunConfig:
    network: NetworkConfig
    train: TrainConfig
    data: list[Path]
    out: Path | None
    resume: bool = False


def parse_lines(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _int(key, v) -> int:
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"{key}: not an integer: {v!r}") from None


def _levels(items: dict[str, str]) -> tuple[LevelConfig, ...]:
    found: dict[int, dict[str, int]] = {}
    for key, value in items.items():
        m = _LEVEL_RE.match(key)
        if not m:
            continue
        idx, field = int(m.group(1)), m.group(2)
        if field not in _LEVEL_KEYS:
            raise ConfigError(f"unknown level field {key!r}")
        found.setdefault(idx, {})[field] = _int(key, value)
    if not found:
        return DEFAULT_LEVELS
    if sorted(found) != list(range(1, len(found) + 1)):
        raise ConfigError("levels must be numbered 1..L without gaps")
    levels = []
    for idx in sorted(found):
        spec = found[idx]
        base = DEFAULT_LEVELS[min(idx, len(DEFAULT_LEVELS)) - 1]
        k = spec.get("k", base.k)
        split = default_split(k)
        if "s1" in spec or "s2" in spec:
            split = SplitSpec(spec.get("s1", split.s1), spec.get("s2", split.s2))
        levels.append(LevelConfig(spec.get("d_out", base.d_out), k, spec.get("ratio", base.downsample_ratio), split))
    return tuple(levels)


def network_from_items(items: dict[str, str]) -> NetworkConfig:
    if "num_classes" not in items:
        raise ConfigError("num_classes is required")
    kwargs: dict = {key: _int(key, items[key]) for key in _NET_INT if key in items}
    if "branches" in items:
        kwargs["branches"] = tuple(Projection.parse(b) for b in items["branches"].split(",") if b.strip())
    if "fma_pool" in items:
        kwargs["fma_pool"] = items["fma_pool"]
    if "class_names" in items:
        kwargs["class_names"] = tuple(n.strip() for n in items["class_names"].split(","))
    kwargs["levels"] = _levels(items)
    return NetworkConfig(**kwargs)


def train_from_items(items: dict[str, str]) -> TrainConfig:
    kwargs = {}
    for key, value in items.items():
        if not key.startswith("train."):
            continue
        name = key[len("train."):]
        if name not in _TRAIN_FIELDS:
            raise ConfigError(f"unknown training key {key!r}")
        default = getattr(TrainConfig(), name)
        if isinstance(default, bool):
            kwargs[name] = _bool(value)
        elif isinstance(default, int):
            kwargs[name] = _int(key, value)
        elif isinstance(default, float):
            kwargs[name] = float(value)
        else:
            kwargs[name] = value
    return TrainConfig(**kwargs)


_TOP_KEYS = set(_NET_INT) | {"branches", "fma_pool", "class_names", "data", "out", "resume"}


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    items = parse_lines(text)
    for key in items:
        if key not in _TOP_KEYS and not key.startswith("train.") and not _LEVEL_RE.match(key):
            raise ConfigError(f"unknown key {key!r}")
    base = base_dir or Path(".")
    try:
        net = network_from_items(items)
        train = train_from_items(items)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    data = [base / p.strip() for p in items.get("data", "").split(",") if p.strip()]
    out = base / items["out"] if "out" in items else None
    return RunConfig(net, train, data, out, _bool(items.get("resume", "0")))


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), path.parent)


def format_config(run: RunConfig) -> str:
    """Render a config that parses back to the same network/training settings."""
    net = run.network
    lines = [
        f"num_classes={net.num_classes}",
        f"branches={','.join(b.value for b in net.branches)}",
        f"fma_pool={net.fma_pool}",
        f"embed_width={net.embed_width}",
        f"head_width={net.head_width}",
        f"block_size={net.block_size}",
        f"num_colors={net.num_colors}",
    ]
    if net.class_names:
        lines.append(f"class_names={','.join(net.class_names)}")
    for i, lvl in enumerate(net.levels, 1):
        lines += [
            f"level.{i}.d_out={lvl.d_out}",
            f"level.{i}.k={lvl.k}",
            f"level.{i}.ratio={lvl.downsample_ratio}",
            f"level.{i}.s1={lvl.split.s1}",
            f"level.{i}.s2={lvl.split.s2}",
        ]
    for f in dataclasses.fields(TrainConfig):
        v = getattr(run.train, f.name)
        lines.append(f"train.{f.name}={int(v) if isinstance(v, bool) else v}")
    if run.data:
        lines.append("data=" + ",".join(str(p) for p in run.data))
    if run.out is not None:
        lines.append(f"out={run.out}")
    return "\n".join(lines) + "\n"
