"""Command-line entry point: ``lsnet <subcommand> ...``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import gradcheck
from .bench import MODES, REPORT_FIELDS, bench
from .cloud_io import MAGIC, load_cloud, write_cloud, grid_sample
from .config import load_config
from .metrics import evaluate
from .network import init_params
from .synth import CLASS_NAMES, synth_scene
from .training import MODEL_FILE, predict, train

log = logging.getLogger("lsnet")


def _out_format(path, explicit: str | None) -> str:
    if explicit:
        return explicit
    return "binary" if str(path).endswith((".lspc", ".bin")) else "ascii"


def _read_ids(path) -> np.ndarray:
    """Integer ids from a whitespace-separated text file or the labels of a point file."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        cloud = load_cloud(path, "binary")
        if cloud.labels is None:
            raise ValueError(f"{path} carries no labels")
        return cloud.labels
    text = Path(path).read_text().split()
    if len(text) >= 3:
        # an ascii point file starts with its "N C L" header
        try:
            n, _, has_labels = (int(t) for t in text[:3])
            if has_labels == 1 and len(text) > 3 and _looks_like_cloud(path, n):
                return load_cloud(path, "ascii").labels
        except ValueError:
            pass
    return np.array([int(t) for t in text], dtype=np.int64)


def _looks_like_cloud(path, n) -> bool:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    return len(lines) == n + 1 and len(lines[0].split()) == 3 and (n == 0 or len(lines[1].split()) >= 4)


def cmd_preprocess(args) -> int:
    cloud = load_cloud(args.input)
    sampled = grid_sample(cloud, args.grid)
    write_cloud(sampled, args.output, _out_format(args.output, args.format))
    log.info("grid %.3f m: %d -> %d points", args.grid, len(cloud), len(sampled))
    return 0


def cmd_synth(args) -> int:
    scene = synth_scene(args.seed, args.points, args.extent)
    write_cloud(scene.cloud, args.out, _out_format(args.out, args.format))
    return 0


def cmd_train(args) -> int:
    run = load_config(args.config)
    if not run.data:
        raise ValueError("config names no training data (data=...)")
    if run.out is None:
        raise ValueError("config names no output directory (out=...)")
    clouds = [load_cloud(p, num_classes=run.network.num_classes) for p in run.data]
    result = train(clouds, run.network, run.train, out_dir=run.out, resume=run.resume or args.resume)
    preds = predict(clouds[0], run.network, result.params, seed=run.train.seed)
    np.savetxt(run.out / "predictions.txt", preds, fmt="%d")
    np.savetxt(run.out / "labels.txt", clouds[0].labels, fmt="%d")
    return 0


def cmd_predict(args) -> int:
    run = load_config(args.config)
    template = init_params(run.network)
    ckpt = Path(args.checkpoint) if args.checkpoint else run.out / MODEL_FILE
    params = ad.load_flat(template, ad.load_checkpoint(ckpt))
    preds = predict(load_cloud(args.input), run.network, params, seed=run.train.seed)
    np.savetxt(args.output, preds, fmt="%d")
    return 0


def cmd_eval(args) -> int:
    preds = _read_ids(args.preds)
    labels = _read_ids(args.labels)
    names = args.names.split(",") if args.names else [str(c) for c in range(args.classes)]
    if len(names) != args.classes:
        raise ValueError("--names must list one name per class")
    ev = evaluate(preds, labels, args.classes)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["oa", "miou"] + [f"iou_{n}" for n in names])
        w.writerow([f"{ev.oa:.8g}", f"{ev.miou:.8g}"] + ["nan" if np.isnan(x) else f"{x:.8g}" for x in ev.iou])
    finally:
        if args.out:
            out.close()
    return 0


def cmd_bench(args) -> int:
    modes = MODES if args.mode == "both" else (args.mode,)
    reports = [bench(m, args.k, args.points, args.dim, args.reps, args.seed, threads=args.threads) for m in modes]
    if args.format == "csv":
        print(",".join(REPORT_FIELDS))
        for r in reports:
            print(r.as_csv_row())
    else:
        print("\n\n".join(r.as_text() for r in reports))
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run(args.module, args.instances, args.seed)
    ok = True
    print("module,check,instances,redrawn,max_rel_error,seconds,status")
    for r in results:
        ok &= r.passed
        print(f"{r.module},{r.name},{r.instances},{r.redrawn},{r.max_error:.3e},{r.seconds:.2f},{'pass' if r.passed else 'FAIL'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="grid-sample a point file")
    s.add_argument("--grid", type=float, required=True, help="cell size in meters")
    s.add_argument("--format", choices=("ascii", "binary"))
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("synth", help="write a seeded synthetic scene")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--points", type=int, default=4096)
    s.add_argument("--extent", type=float, default=40.0)
    s.add_argument("--format", choices=("ascii", "binary"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train from a key=value config file")
    s.add_argument("--config", required=True)
    s.add_argument("--resume", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="label a point file with a trained checkpoint")
    s.add_argument("--config", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="OA / IoU / mIoU of predictions against labels")
    s.add_argument("--preds", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--names", help=f"comma list of class names, e.g. {','.join(CLASS_NAMES)}")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="time LSAP against full attention pooling")
    s.add_argument("--mode", choices=MODES + ("both",), default="both")
    s.add_argument("--k", type=int, default=25)
    s.add_argument("--points", type=int, default=16384)
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--reps", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--format", choices=("text", "csv"), default="text")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    s.add_argument("--module", choices=gradcheck.MODULES + ("all",), default="all")
    s.add_argument("--instances", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "command", None) == "bench" and args.reps < 5:
        print("lsnet bench: --reps must be >= 5", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (OSError, ValueError, ArithmeticError, KeyError) as exc:
        print(f"lsnet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
