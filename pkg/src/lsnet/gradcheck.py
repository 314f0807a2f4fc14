"""Finite-difference verification of every primitive and composed block (float64)."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import MlpParams, Tensor, grad_check, init_mlp
from .fma import build_level_link, fma_forward, init_fma_params
from .lsap import init_lsap_params, lsap_block
from .neighbors import NeighborTable, Projection, SplitSpec, knn_table
from .pae import PaeConfig, build_branch_tables, init_pae_params, pae_forward
from .training import weighted_cross_entropy

TOLERANCE = 1e-4
MODULES = ("primitives", "lsap", "pae", "fma", "loss")
MAX_REDRAWS = 20


@dataclass
class CheckResult:
    module: str
    name: str
    instances: int
    max_error: float
    seconds: float
    redrawn: int = 0

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def _leaf_count(tree) -> int:
    return sum(1 for _ in ad.iter_params(tree))


def _replace_leaf(tree, target: int, value):
    pos = iter(range(_leaf_count(tree)))
    return ad.map_params(tree, lambda a: value if next(pos) == target else a)


class KinkError(ArithmeticError):
    """The central difference straddled a point where the function is not smooth."""


def _checked(fn, x, eps: float) -> float:
    """``grad_check``, raising :class:`KinkError` when a failing coordinate sits on a kink.

    A coordinate whose one-sided slopes disagree (leaky ReLU crossing zero, max
    switching argument) cannot be judged by a central difference. A wrong
    analytic gradient on a smooth coordinate still reports its error.
    """
    err = grad_check(fn, x, eps)
    if err < TOLERANCE:
        return err
    x0 = np.array(ad._val(x), dtype=np.float64)
    flat = x0.reshape(-1)
    f0 = float(fn(Tensor(x0)).value)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = (float(fn(Tensor(x0)).value) - f0) / eps
        flat[i] = orig - eps
        down = (f0 - float(fn(Tensor(x0)).value)) / eps
        flat[i] = orig
        if abs(up - down) > TOLERANCE * max(1.0, abs(up), abs(down)):
            raise KinkError(f"coordinate {i} straddles a kink")
    return err


def check_all_leaves(loss_fn, params: dict, inputs: dict, eps: float = 1e-5) -> float:
    """Largest grad_check error over every input tensor and every parameter leaf.

    ``loss_fn(params, **inputs)`` must return a scalar tensor. Raises
    :class:`KinkError` if the instance is not smooth at the step size.
    """
    worst = 0.0
    for key in inputs:
        def fn(t, key=key):
            return loss_fn(params, **{**inputs, key: t})
        worst = max(worst, _checked(fn, inputs[key], eps))
    leaves = [ad._val(getattr(owner, fld)) for _, owner, fld in ad.iter_params(params)]
    for i, leaf in enumerate(leaves):
        def fn(t, i=i):
            return loss_fn(_replace_leaf(params, i, t), **inputs)
        worst = max(worst, _checked(fn, leaf, eps))
    return worst


def _probe(out: Tensor, weights: np.ndarray) -> Tensor:
    return ad.sum_all(ad.multiply(out, Tensor(weights)))


def _cloud(rng, n):
    return rng.uniform(-1.0, 1.0, size=(n, 3))


def _randomized(rng, params):
    """Every weight and bias drawn at random, so zero-initialized layers are exercised too."""
    return ad.map_params(params, lambda a: rng.uniform(-0.6, 0.6, size=np.shape(a)))


def _primitive_cases(rng):
    """Yield ``(name, fn, x)`` gradient cases for one random instance."""
    n, m, d = 5, 4, 3
    x3 = rng.normal(size=(n, m, d))
    x2 = rng.normal(size=(n, d))
    probe3 = rng.normal(size=(n, m, d))
    probe2 = rng.normal(size=(n, d))
    mlp = init_mlp(rng, d, 4, dtype=np.float64)
    mlp.bias = rng.normal(size=4)
    lin_probe = rng.normal(size=(n, m, 4))
    other = rng.normal(size=(n, m, d))
    idx = rng.integers(0, n, size=(n, 3))
    idx[:, 1] = idx[:, 0]  # repeated source rows
    table = NeighborTable(idx)
    gather_probe = rng.normal(size=(n, 3, d))
    yield "linear.x", lambda t: _probe(ad.linear_pointwise(t, mlp), lin_probe), x3
    yield "linear.weight", lambda t: _probe(ad.linear_pointwise(Tensor(x3), MlpParams(t, mlp.bias)), lin_probe), mlp.weight
    yield "linear.bias", lambda t: _probe(ad.linear_pointwise(Tensor(x3), MlpParams(mlp.weight, t)), lin_probe), mlp.bias
    yield "linear.none", lambda t: _probe(ad.linear_pointwise(t, MlpParams(mlp.weight, mlp.bias, "none")), lin_probe), x3
    yield "softmax", lambda t: _probe(ad.softmax_neighbor_axis(t), probe3), x3
    yield "gather", lambda t: _probe(ad.gather_rows(t, table), gather_probe), x2
    yield "reduce_sum", lambda t: _probe(ad.reduce_sum_neighbor(t), probe2), x3
    yield "reduce_max", lambda t: _probe(ad.reduce_max_neighbor(t), probe2), x3
    yield "reduce_mean", lambda t: _probe(ad.reduce_mean_neighbor(t), probe2), x3
    yield "concat", lambda t: _probe(ad.concat_channels(t, Tensor(other)), np.concatenate([probe3, probe3], -1)), x3
    yield "add", lambda t: _probe(ad.add(t, Tensor(other)), probe3), x3
    yield "multiply", lambda t: _probe(ad.multiply(t, Tensor(other)), probe3), x3


def check_primitives(instances: int = 20, seed: int = 0) -> list[CheckResult]:
    results: dict[str, CheckResult] = {}
    for i in range(instances):
        for name, draw in _primitive_draws(seed, i):
            res = results.setdefault(name, CheckResult("primitives", name, 0, 0.0, 0.0))
            _run_instance(res, draw)
    return list(results.values())


def _primitive_draws(seed: int, i: int):
    """``(name, draw)`` per primitive; ``draw(attempt)`` builds a fresh ``(fn, x)``."""
    names = [name for name, _, _ in _primitive_cases(np.random.default_rng([seed, i]))]
    for pos, name in enumerate(names):
        def draw(attempt, pos=pos):
            cases = list(_primitive_cases(np.random.default_rng([seed, i, attempt])))
            _, fn, x = cases[pos]
            return lambda: _checked(fn, x, 1e-5)
        yield name, draw


def _run_instance(res: CheckResult, draw) -> None:
    """Check one instance, redrawing it while the step lands on a kink."""
    t0 = time.perf_counter()
    for attempt in range(MAX_REDRAWS + 1):
        try:
            err = draw(attempt)()
            break
        except KinkError:
            res.redrawn += 1
    else:
        err = float("inf")
    res.instances += 1
    res.max_error = max(res.max_error, err)
    res.seconds += time.perf_counter() - t0


def _lsap_instance(rng):
    n, k, d_in, d_out = 10, 8, 3, 4
    pos = _cloud(rng, n)
    table = knn_table(pos, k)
    params = _randomized(rng, init_lsap_params(rng, d_in, d_out, np.float64))
    probe = rng.normal(size=(n, d_out))
    spec = SplitSpec(2, 4)

    def loss(params, features):
        return _probe(lsap_block(features, pos, table, spec, params), probe)

    return loss, params, {"features": rng.normal(size=(n, d_in))}


def _pae_instance(rng):
    n, k = 10, 8
    pos = _cloud(rng, n)
    cfg = PaeConfig(3, 4, k, (Projection.XY, Projection.FULL3D), SplitSpec(2, 4))
    tables = build_branch_tables(pos, cfg.branches, k)
    params = _randomized(rng, init_pae_params(rng, cfg, np.float64))
    probe = rng.normal(size=(n, cfg.d_out))

    def loss(params, features):
        return _probe(pae_forward(features, pos, tables, cfg, params), probe)

    return loss, params, {"features": rng.normal(size=(n, 3))}


def _fma_instance(rng, pool="max"):
    n_high, n_low, k, d1, d2 = 12, 4, 4, 3, 3
    p_high = _cloud(rng, n_high)
    p_low = p_high[rng.permutation(n_high)[:n_low]]
    link = build_level_link(p_high, p_low, k)
    params = _randomized(rng, init_fma_params(rng, d1, d2, np.float64))
    probe = rng.normal(size=(n_high, d2))

    def loss(params, f_low, f_skip):
        return _probe(fma_forward(f_low, f_skip, link, params, pool), probe)

    return loss, params, {"f_low": rng.normal(size=(n_low, d1)), "f_skip": rng.normal(size=(n_high, d2))}


def _loss_instance(rng):
    n, c = 8, 4
    labels = rng.integers(0, c, size=n)
    weights = rng.uniform(0.5, 2.0, size=c)

    def loss(params, logits):
        return weighted_cross_entropy(logits, labels, weights)

    return loss, {}, {"logits": rng.normal(size=(n, c)) * 2}


_BUILDERS = {
    "lsap": [("lsap_block", _lsap_instance)],
    "pae": [("pae_forward", _pae_instance)],
    "fma": [
        ("fma_forward.max", lambda r: _fma_instance(r, "max")),
        ("fma_forward.mean", lambda r: _fma_instance(r, "mean")),
        ("fma_forward.none", lambda r: _fma_instance(r, "none")),
    ],
    "loss": [("weighted_cross_entropy", _loss_instance)],
}


def check_module(module: str, instances: int = 20, seed: int = 0) -> list[CheckResult]:
    if module == "primitives":
        return check_primitives(instances, seed)
    if module not in _BUILDERS:
        raise ValueError(f"unknown module {module!r}; expected one of {MODULES + ('all',)}")
    out = []
    for name, build in _BUILDERS[module]:
        res = CheckResult(module, name, 0, 0.0, 0.0)
        for i in range(instances):
            def draw(attempt, i=i, build=build, name=name):
                loss, params, inputs = build(np.random.default_rng([seed, i, len(name), attempt]))
                return lambda: check_all_leaves(loss, params, inputs)
            _run_instance(res, draw)
        out.append(res)
    return out


def run(module: str = "all", instances: int = 20, seed: int = 0) -> list[CheckResult]:
    modules = MODULES if module == "all" else (module,)
    results = []
    for mod in modules:
        results.extend(check_module(mod, instances, seed))
    return results
