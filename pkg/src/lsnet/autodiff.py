"""Dense-tensor reverse-mode autodiff with the handful of primitives LSNet uses.

Every primitive records itself on the :class:`Tape` of its inputs; backward
replays the tape in exact reverse order and accumulates gradients additively
where a tensor fans out. Values must stay finite; a primitive producing NaN or
Inf raises :class:`NonFiniteError`. A tape never mixes float32 and float64.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernels import scatter_add_rows
from .work import active_counter

LEAKY_SLOPE = 0.2
CHECKPOINT_MAGIC = b"LSWT"


class NonFiniteError(ArithmeticError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "tape")

    def __init__(self, value, requires_grad: bool = False, tape: Tape | None = None):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Execution-ordered record of primitive applications."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.dtype = None

    def variable(self, value) -> Tensor:
        value = np.array(value)
        self._check_dtype(value.dtype)
        return Tensor(value, requires_grad=True, tape=self)

    def _check_dtype(self, dtype):
        if self.dtype is None:
            self.dtype = dtype
        elif dtype != self.dtype:
            raise TypeError(f"tape holds {self.dtype}; refusing to mix in {dtype}")

    def backward(self, loss: Tensor) -> None:
        if loss.value.size != 1:
            raise ValueError("backward needs a scalar loss")
        loss.grad = np.ones_like(loss.value)
        for out, inputs, fn in reversed(self.nodes):
            if out.grad is None:
                continue
            for inp, g in zip(inputs, fn(out.grad)):
                if g is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = np.array(g, dtype=inp.value.dtype)
                else:
                    inp.grad += g
            # every consumer of ``out`` was recorded later, so its gradient is complete and spent
            out.grad = None

    def release(self) -> None:
        """Drop recorded nodes (and the tensor/tape reference cycles they hold)."""
        self.nodes.clear()


def record(value: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    """Wrap ``value`` as the output of a primitive and put it on the inputs' tape."""
    if not np.isfinite(value).all():
        raise NonFiniteError("primitive produced a non-finite value")
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("inputs belong to different tapes")
            tape = t.tape
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs_grad, tape=tape if needs_grad else None)
    if needs_grad:
        tape._check_dtype(value.dtype)
        tape.nodes.append((out, inputs, backward))
    return out


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- MLP


@dataclass
class MlpParams:
    """Shared per-point affine map followed by an optional leaky rectifier.

    ``norm`` is reserved for a normalization layer and must stay ``None``.
    """

    weight: object
    bias: object
    activation: str = "leaky_relu"
    norm: None = None

    def __post_init__(self):
        if self.activation not in ("leaky_relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.norm is not None:
            raise NotImplementedError("normalization layers are not supported")

    @property
    def d_in(self) -> int:
        return _val(self.weight).shape[0]

    @property
    def d_out(self) -> int:
        return _val(self.weight).shape[1]


def _val(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x)


def init_mlp(rng: np.random.Generator, d_in: int, d_out: int, activation="leaky_relu",
             dtype=np.float32, zero: bool = False) -> MlpParams:
    """Glorot-uniform weights (all zero when ``zero``), zero bias."""
    limit = np.sqrt(6.0 / (d_in + d_out))
    w = rng.uniform(-limit, limit, size=(d_in, d_out)).astype(dtype)
    if zero:
        w[:] = 0
    return MlpParams(w, np.zeros(d_out, dtype=dtype), activation)


def linear_pointwise(x: Tensor, p: MlpParams) -> Tensor:
    x, w, b = as_tensor(x), as_tensor(p.weight), as_tensor(p.bias)
    d_in, d_out = w.shape
    if x.shape[-1] != d_in or b.shape != (d_out,):
        raise ValueError(f"linear: input width {x.shape[-1]} vs weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.value.reshape(-1, d_in)
    z = x2 @ w.value + b.value
    counter = active_counter()
    if counter is not None:
        counter.mlp_macs += x2.shape[0] * d_in * d_out
    leaky = p.activation == "leaky_relu"
    if leaky:
        slope = np.where(z > 0, 1.0, LEAKY_SLOPE).astype(z.dtype)
        y = z * slope
    else:
        y = z

    def backward(g):
        g2 = g.reshape(-1, d_out)
        if leaky:
            g2 = g2 * slope
        gx = (g2 @ w.value.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return record(y.reshape(lead + (d_out,)), (x, w, b), backward)


# ---------------------------------------------------------------- neighbor-axis ops


def softmax_neighbor_axis(x: Tensor) -> Tensor:
    """Softmax over axis -2 (the neighbor slots) of an ``(N, m, d)`` tensor."""
    x = as_tensor(x)
    if x.value.ndim != 3 or x.shape[1] < 1:
        raise ValueError("softmax expects (N, m, d) with m >= 1")
    e = np.exp(x.value - x.value.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return record(y, (x,), backward)


def take_rows(x: Tensor, index) -> Tensor:
    """``out[..., :] = x[index[...], :]``; backward scatter-adds into ``x``."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    n, d = x.shape
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"row index out of range for {n} rows")
    y = x.value[index]
    counter = active_counter()
    if counter is not None:
        counter.gathers += index.size

    def backward(g):
        gx = np.zeros_like(x.value)
        scatter_add_rows(gx, np.ascontiguousarray(index.reshape(-1)),
                         np.ascontiguousarray(g.reshape(-1, d)))
        return (gx,)

    return record(y, (x,), backward)


def gather_rows(features: Tensor, table) -> Tensor:
    """Neighbor gather: ``(N, d)`` features and an ``(N', k')`` table give ``(N', k', d)``."""
    return take_rows(features, table.indices)


def reduce_sum_neighbor(x: Tensor) -> Tensor:
    x = as_tensor(x)
    m = x.shape[1]

    def backward(g):
        return (np.repeat(g[:, None, :], m, axis=1),)

    return record(x.value.sum(axis=1), (x,), backward)


def reduce_mean_neighbor(x: Tensor) -> Tensor:
    x = as_tensor(x)
    m = x.shape[1]

    def backward(g):
        return (np.repeat(g[:, None, :] / m, m, axis=1),)

    return record(x.value.sum(axis=1) / m, (x,), backward)


def reduce_max_neighbor(x: Tensor) -> Tensor:
    """Max over neighbor slots; the first argmax slot receives the gradient."""
    x = as_tensor(x)
    arg = x.value.argmax(axis=1)[:, None, :]
    y = np.take_along_axis(x.value, arg, axis=1)[:, 0, :]

    def backward(g):
        gx = np.zeros_like(x.value)
        np.put_along_axis(gx, arg, g[:, None, :], axis=1)
        return (gx,)

    return record(y, (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise ValueError(f"concat: leading shapes differ {a.shape} vs {b.shape}")
    d1 = a.shape[-1]

    def backward(g):
        return g[..., :d1], g[..., d1:]

    return record(np.concatenate([a.value, b.value], axis=-1), (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return record(a.value + b.value, (a, b), lambda g: (g, g))


add_residual = add


def multiply(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "multiply")
    return record(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value))


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return record(np.asarray(x.value.sum()), (x,), lambda g: (np.full_like(x.value, g),))


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    c = x.value.dtype.type(c)
    return record(x.value * c, (x,), lambda g: (g * c,))


# ---------------------------------------------------------------- parameter trees


def iter_params(tree, prefix=""):
    """Yield ``(name, owner, field)`` for every array leaf in insertion order."""
    for key, node in tree.items():
        name = f"{prefix}{key}"
        if isinstance(node, MlpParams):
            yield f"{name}.weight", node, "weight"
            yield f"{name}.bias", node, "bias"
        elif isinstance(node, dict):
            yield from iter_params(node, name + ".")
        else:
            raise TypeError(f"unexpected parameter node at {name}: {type(node).__name__}")


def flatten_params(tree) -> list[tuple[str, np.ndarray]]:
    return [(name, _val(getattr(owner, field))) for name, owner, field in iter_params(tree)]


def map_params(tree, fn):
    """Copy of ``tree`` with ``fn(array)`` applied to every weight and bias."""
    out = {}
    for key, node in tree.items():
        if isinstance(node, MlpParams):
            out[key] = dataclasses.replace(node, weight=fn(node.weight), bias=fn(node.bias))
        else:
            out[key] = map_params(node, fn)
    return out


def watch_params(tree, tape: Tape):
    return map_params(tree, lambda a: tape.variable(_val(a)))


def cast_params(tree, dtype):
    return map_params(tree, lambda a: np.array(_val(a), dtype=dtype))


def load_flat(tree, arrays) -> dict:
    """Fill ``tree``'s leaves, in order, from ``arrays`` (shapes must match)."""
    arrays = list(arrays)
    names = [name for name, _ in flatten_params(tree)]
    if len(arrays) != len(names):
        raise ValueError(f"expected {len(names)} tensors, got {len(arrays)}")
    it = iter(zip(names, arrays))

    def fill(a):
        name, new = next(it)
        if _val(a).shape != new.shape:
            raise ValueError(f"{name}: shape {new.shape} does not match {_val(a).shape}")
        return np.array(new, dtype=_val(a).dtype)

    return map_params(tree, fill)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, arrays) -> None:
    """Write tensors as ``LSWT`` | u32 count | per tensor: u32 rank, u32 dims, f32 data."""
    arrays = [np.asarray(a) for a in arrays]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<I", len(arrays)))
        for a in arrays:
            fh.write(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not an LSWT checkpoint")
    try:
        return _parse_checkpoint(data)
    except struct.error:
        raise ValueError("truncated checkpoint") from None


def _parse_checkpoint(data: bytes) -> list[np.ndarray]:
    (count,) = struct.unpack_from("<I", data, 4)
    off = 8
    out = []
    for _ in range(count):
        (rank,) = struct.unpack_from("<I", data, off)
        dims = struct.unpack_from(f"<{rank}I", data, off + 4)
        off += 4 + 4 * rank
        size = int(np.prod(dims, dtype=np.int64))
        if off + 4 * size > len(data):
            raise ValueError("truncated checkpoint")
        out.append(np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(dims).astype(np.float32))
        off += 4 * size
    if off != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return out


# ---------------------------------------------------------------- verification


def grad_check(fn: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - central difference| / max(1, |analytic|)``."""
    x0 = np.array(_val(x), dtype=np.float64)
    tape = Tape()
    xv = tape.variable(x0)
    out = fn(xv)
    tape.backward(out)
    tape.release()
    analytic = xv.grad if xv.grad is not None else np.zeros_like(x0)
    numeric = np.empty_like(x0)
    flat, num = x0.reshape(-1), numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(fn(Tensor(x0)).value)
        flat[i] = orig - eps
        fm = float(fn(Tensor(x0)).value)
        flat[i] = orig
        num[i] = (fp - fm) / (2 * eps)
    if not (np.isfinite(analytic).all() and np.isfinite(numeric).all()):
        raise NonFiniteError("NaN encountered during gradient check")
    if x0.size == 0:
        return 0.0
    return float((np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))).max())
