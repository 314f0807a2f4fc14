"""Acceptance criteria, one test per criterion.

Each test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line; the lines are
repeated in the pytest terminal summary. Run standalone with
``python3 tests/test_acceptance.py`` to get only those lines.
"""

import csv
import math
import statistics
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import reference  # noqa: E402
from conftest import brute_knn  # noqa: E402
from test_cloud_io import hash_grid_oracle  # noqa: E402
from test_metrics import set_iou_oracle  # noqa: E402

from lsnet import autodiff as ad  # noqa: E402
from lsnet import gradcheck  # noqa: E402
from lsnet.autodiff import Tensor  # noqa: E402
from lsnet.bench import bench, count_work, single_round_ratio, slots_per_point  # noqa: E402
from lsnet.cloud_io import PointCloud, grid_sample  # noqa: E402
from lsnet.fma import build_level_link, fma_forward, init_fma_params  # noqa: E402
from lsnet.lsap import attention_pool, init_lsap_params, lsap_block  # noqa: E402
from lsnet.metrics import evaluate  # noqa: E402
from lsnet.neighbors import NeighborTable, Projection, SplitSpec, default_split, knn_table, split_stride  # noqa: E402
from lsnet.network import NetworkConfig, init_params  # noqa: E402
from lsnet.pae import PaeConfig, build_branch_tables, init_pae_params, pae_forward  # noqa: E402
from lsnet.synth import CLASS_NAMES, synth_scene  # noqa: E402
from lsnet.training import METRICS_FILE, MODEL_FILE, OPTIM_FILE, TrainConfig, train  # noqa: E402
from lsnet.work import WorkCounter, counting  # noqa: E402

RESULTS: dict[int, str] = {}


def report(n: int, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {n} {'PASS' if passed else 'FAIL'}: {detail}"
    RESULTS[n] = line
    print(line)
    assert passed, line


# ---------------------------------------------------------------- 1


def test_1_gradcheck_all_modules():
    t0 = time.perf_counter()
    results = gradcheck.run("all", instances=20, seed=0)
    elapsed = time.perf_counter() - t0
    worst = max(r.max_error for r in results)
    ok = all(r.passed and r.instances >= 20 for r in results) and elapsed < 120
    failing = [f"{r.module}.{r.name}={r.max_error:.2e}" for r in results if not r.passed]
    redrawn = sum(r.redrawn for r in results)
    report(1, ok, f"{len(results)} checks x 20 instances, worst rel err {worst:.2e} (< 1e-4), "
                  f"{redrawn} redrawn off a kink, {elapsed:.1f}s (< 120s){'; failing ' + ', '.join(failing) if failing else ''}")


# ---------------------------------------------------------------- 2


def test_2_split_degeneracy():
    worst = 0.0
    runs = 0
    for k in (9, 16, 25):
        for c in range(10):
            rng = np.random.default_rng([2, k, c])
            pos = rng.uniform(-1, 1, size=(32, 3))
            table = knn_table(pos, k)
            params = reference.randomized(init_lsap_params(rng, 4, 6, np.float64), rng)
            feats = rng.normal(size=(32, 4))
            got = lsap_block(Tensor(feats), pos, table, SplitSpec(k, 1), params).value
            want = reference.double_attention(feats, pos, table.indices, params)
            worst = max(worst, float(np.max(np.abs(got - want))))
            runs += 1
    report(2, worst <= 1e-6 and runs == 30, f"{runs} clouds, k in {{9,16,25}}, max |lsap - double attention| = {worst:.2e} (<= 1e-6)")


# ---------------------------------------------------------------- 3


def test_3a_work_reduction_counts():
    k, n, d = 36, 64, 8
    lsap = slots_per_point("lsap", k)
    ratio = single_round_ratio(k)
    full_total = slots_per_point("full", k)
    rng = np.random.default_rng(3)
    pos = rng.uniform(size=(n, 3))
    table = knn_table(pos, k)
    params = init_lsap_params(rng, d, d, np.float64)
    agree = True
    for mode in ("lsap", "full"):
        spec = default_split(k) if mode == "lsap" else SplitSpec(k, 1)
        measured = WorkCounter()
        with counting(measured):
            lsap_block(Tensor(rng.normal(size=(n, d))), pos, table, spec, params)
        agree &= measured == count_work(mode, k, spec, n, d)
    ok = lsap == 18 and ratio == 0.5 and full_total == 72 and agree
    report("3a", ok, f"k=36: lsap {lsap} slots/point vs 36 per full round (ratio {ratio}), "
                     f"full two-round total {full_total}; instrumented == closed form: {agree}")


def test_3b_wall_clock_ratio():
    t0 = time.perf_counter()
    full = bench("full", 25, 16384, 64, reps=5, seed=0)
    lsap = bench("lsap", 25, 16384, 64, reps=5, seed=0)
    elapsed = time.perf_counter() - t0
    ratio = lsap.median_ms / full.median_ms
    report("3b", ratio <= 0.8 and elapsed < 300,
           f"k=25 N=16384 d=64: lsap {lsap.median_ms:.0f} ms / full {full.median_ms:.0f} ms = {ratio:.3f} "
           f"(<= 0.8), {elapsed:.0f}s (< 300s)")


# ---------------------------------------------------------------- 4


def test_4_oracle_agreement():
    knn_ok = 0
    for i in range(100):
        rng = np.random.default_rng([4, i])
        n = int(rng.integers(1, 501))
        k = int(rng.integers(1, min(n, 24) + 1))
        pos = np.round(rng.normal(size=(n, 3)), 2)
        proj = list(Projection)[i % 4]
        got = knn_table(pos, k, proj).indices
        q = proj.apply(pos)
        # brute force on the first rows keeps the pure-Python oracle quick
        rows = min(n, 40)
        knn_ok += np.array_equal(got[:rows], brute_knn(q, q[:rows], k))
    eval_ok = 0
    for i in range(100):
        rng = np.random.default_rng([44, i])
        c = int(rng.integers(2, 9))
        n = int(rng.integers(1, 400))
        labels = rng.integers(0, c, n)
        preds = np.where(rng.uniform(size=n) < 0.7, labels, rng.integers(0, c, n))
        ev = evaluate(preds, labels, c)
        ious, miou = set_iou_oracle(preds.tolist(), labels.tolist(), c)
        same = all((np.isnan(a) and b is None) or (b is not None and abs(a - b) <= 1e-12) for a, b in zip(ev.iou, ious))
        eval_ok += same and abs(ev.miou - miou) <= 1e-12
    grid_ok = 0
    for i in range(10):
        rng = np.random.default_rng([444, i])
        cloud = PointCloud(rng.uniform(0, 4, size=(1000, 3)), rng.uniform(size=(1000, 3)), rng.integers(0, 5, 1000))
        cell = float(rng.uniform(0.2, 1.0))
        out = grid_sample(cloud, cell)
        want = hash_grid_oracle(cloud, cell)
        grid_ok += len(out) == len(want) and all(
            np.allclose(out.positions[j], p, rtol=0, atol=1e-12) and out.labels[j] == lab
            for j, (p, _, lab) in enumerate(want)
        )
    ok = knn_ok == 100 and eval_ok == 100 and grid_ok == 10
    report(4, ok, f"knn {knn_ok}/100 (N<=500, 4 projections), evaluate {eval_ok}/100, grid_sample {grid_ok}/10 (1000-point clouds)")


# ---------------------------------------------------------------- 5


def test_5_invariants():
    rng = np.random.default_rng(5)
    checks = {}
    x = rng.normal(size=(200, 16, 8)) * 30
    sums = ad.softmax_neighbor_axis(Tensor(x)).value.sum(axis=1)
    checks["softmax rows"] = float(np.max(np.abs(sums - 1))) <= 1e-6

    params = reference.randomized(init_lsap_params(rng, 4, 6, np.float64), rng)["round1"]
    worst = 0.0
    for _ in range(20):
        con = rng.normal(size=(10, 9, 8))
        perm = rng.permutation(9)
        f = rng.normal(size=(10, 4))
        a = attention_pool(Tensor(f), Tensor(con), params).value
        b = attention_pool(Tensor(f), Tensor(con[:, perm]), params).value
        worst = max(worst, float(np.max(np.abs(a - b))))
    checks["neighbor permutation"] = worst <= 1e-6

    stride_ok = True
    for k in range(1, 65):
        ranks = NeighborTable(np.arange(k)[None, :])
        for s2 in range(1, k + 1):
            row = split_stride(ranks, s2).indices[0]
            stride_ok &= row[0] == 0 and row.max() >= k - s2
    checks["split_stride reach"] = bool(stride_ok)

    cfg = PaeConfig(5, 8, 6, split=SplitSpec(2, 3))
    pos = rng.normal(size=(40, 3))
    pp = reference.randomized(init_pae_params(rng, cfg, np.float64), rng)
    pp["fuse"].weight[:] = 0
    pp["fuse"].bias[:] = 0
    feats = rng.normal(size=(40, 5))
    out = pae_forward(Tensor(feats), pos, build_branch_tables(pos, cfg.branches, 6), cfg, pp).value
    pae_ok = np.array_equal(out, ad.linear_pointwise(Tensor(feats), pp["expand"]).value)
    link = build_level_link(pos, pos[:10], 6)
    fp = reference.randomized(init_fma_params(rng, 3, 5, np.float64), rng)
    fp["fuse"].weight[:] = 0
    fp["fuse"].bias[:] = 0
    skip = rng.normal(size=(40, 5))
    fma_ok = all(
        np.array_equal(fma_forward(Tensor(rng.normal(size=(10, 3))), Tensor(skip), link, fp, pool).value, skip)
        for pool in ("max", "mean", "none")
    )
    checks["zero-weight passthrough"] = bool(pae_ok and fma_ok)

    flat = rng.normal(size=(300, 3))
    flat[:, 2] = 2.5
    checks["constant-z tables"] = np.array_equal(
        knn_table(flat, 16, Projection.XY).indices, knn_table(flat, 16, Projection.FULL3D).indices
    )
    report(5, all(checks.values()), ", ".join(f"{k}: {'ok' if v else 'BROKEN'}" for k, v in checks.items()))


# ---------------------------------------------------------------- 6

DESK_POINTS = 4096
DESK_SEEDS = (0, 1, 2)
DESK_TRAIN = dict(epochs=60, batch_size=4, rotate=False)
ARMS = {
    "xy+3d/max": (("xy", "3d"), "max"),
    "3d/max": (("3d",), "max"),
    "xy/max": (("xy",), "max"),
    "xy+3d/mean": (("xy", "3d"), "mean"),
    "xy+3d/none": (("xy", "3d"), "none"),
}


def desk_run(branches, pool, seed):
    """Best logged training mIoU over the epochs of one run."""
    scene = synth_scene(seed, DESK_POINTS)
    cfg = NetworkConfig(num_classes=4, branches=tuple(Projection.parse(b) for b in branches), fma_pool=pool,
                        class_names=CLASS_NAMES)
    res = train(scene.cloud, cfg, TrainConfig(seed=seed, **DESK_TRAIN))
    return max(h["miou"] for h in res.history)


@pytest.mark.slow
def test_6_desk_scale_learning():
    t0 = time.perf_counter()
    scores = {arm: [desk_run(b, p, s) for s in DESK_SEEDS] for arm, (b, p) in ARMS.items()}
    elapsed = time.perf_counter() - t0
    med = {arm: statistics.median(v) for arm, v in scores.items()}
    default_best = scores["xy+3d/max"][0]
    margins = {
        "xy+3d>=3d": med["xy+3d/max"] - med["3d/max"],
        "3d>=xy": med["3d/max"] - med["xy/max"],
        "max>=mean": med["xy+3d/max"] - med["xy+3d/mean"],
        "mean>=none": med["xy+3d/mean"] - med["xy+3d/none"],
    }
    ok = default_best >= 0.95 and all(m >= -0.01 for m in margins.values()) and elapsed < 1800
    detail = (f"default seed 0 mIoU {default_best:.3f} (>= 0.95); medians "
              + ", ".join(f"{a}={m:.3f}" for a, m in med.items())
              + "; margins " + ", ".join(f"{k} {v:+.3f}" for k, v in margins.items())
              + f" (>= -0.01); {elapsed / 60:.1f} min (< 30)")
    report(6, ok, detail)


# ---------------------------------------------------------------- 7


def test_7_bitwise_determinism(tmp_path):
    scene = synth_scene(7, 4096)
    cfg = NetworkConfig(num_classes=4, class_names=CLASS_NAMES)
    for name in ("a", "b"):
        train(scene.cloud, cfg, TrainConfig(epochs=2, seed=7, verification=True), out_dir=tmp_path / name)
    same = {f: (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in (MODEL_FILE, OPTIM_FILE, METRICS_FILE)}
    report(7, all(same.values()), ", ".join(f"{f} {'identical' if v else 'DIFFERS'}" for f, v in same.items()))


# ---------------------------------------------------------------- 8


def _cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "lsnet.cli", *args], cwd=cwd, capture_output=True, text=True)


def test_8_cli_pipeline(tmp_path):
    steps = []
    steps.append(_cli("synth", "--seed", "8", "--points", "4096", "--out", "scene.lspc", cwd=tmp_path))
    steps.append(_cli("preprocess", "--grid", "0.06", "scene.lspc", "scene_grid.lspc", cwd=tmp_path))
    (tmp_path / "run.cfg").write_text(
        f"num_classes=4\nclass_names={','.join(CLASS_NAMES)}\ntrain.epochs=2\ndata=scene_grid.lspc\nout=run\n"
    )
    steps.append(_cli("train", "--config", "run.cfg", cwd=tmp_path))
    steps.append(_cli("eval", "--preds", "run/predictions.txt", "--labels", "run/labels.txt", "--classes", "4",
                      "--names", ",".join(CLASS_NAMES), "--out", "eval.csv", cwd=tmp_path))
    codes = [s.returncode for s in steps]
    schema_ok = False
    if all(c == 0 for c in codes):
        with open(tmp_path / "eval.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        header = ["oa", "miou"] + [f"iou_{n}" for n in CLASS_NAMES]
        values = [float(v) for v in rows[1]] if len(rows) == 2 else []
        schema_ok = rows[0] == header and len(values) == len(header) and all(
            math.isnan(v) or 0.0 <= v <= 1.0 for v in values
        )
        with open(tmp_path / "run" / METRICS_FILE, newline="") as fh:
            log = list(csv.reader(fh))
        schema_ok &= log[0] == ["epoch", "lr", "loss", "oa", "miou"] + [f"iou_{n}" for n in CLASS_NAMES] and len(log) == 3
    errors = "; ".join(s.stderr.strip().splitlines()[-1] for s in steps if s.returncode and s.stderr.strip())
    report(8, all(c == 0 for c in codes) and schema_ok,
           f"exit codes synth/preprocess/train/eval = {codes}, CSV schema valid: {schema_ok}{'; ' + errors if errors else ''}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
