"""``lanecast`` command line: generate, prepare, train, evaluate, sweep, report.

Exit status is 0 on success, 1 on a runtime error and 2 on bad flags.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import CLASSES
from .errors import LanecastError
from .features import Normalizer, assemble_all, fit_normalizer, load_stack, save_stack, stack_arrays
from .highd_io import find_recordings, load_recordings
from .models import CONFIGS, build_model, load_model, save_model
from .report import write_report
from .segmentation import DatasetConfig, build_dataset, manifest_csv
from .synthetic import SyntheticSpec, generate_corpus
from .train_eval import (
    ConfusionMatrix,
    MetricsReport,
    TrainConfig,
    cell_name,
    evaluate,
    parse_grid,
    prediction_time_histogram,
    result_row,
    sweep,
    train,
    RESULT_COLUMNS,
)

log = logging.getLogger("lanecast")

SPLITS = ("train", "val", "test")


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _read_json(path):
    return json.loads(Path(path).read_text())


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _arch(text):
    if text not in CONFIGS:
        raise argparse.ArgumentTypeError(f"unknown architecture {text!r}; choose from {', '.join(CONFIGS)}")
    return text


def _arch_list(text):
    return [_arch(a.strip()) for a in text.split(",") if a.strip()]


def _grid(text):
    try:
        return parse_grid(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lanecast", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic highD-layout corpus")
    g.add_argument("--spec", type=Path, help="JSON file of SyntheticSpec fields")
    g.add_argument("--seed", type=int, help="overrides the spec's seed")
    g.add_argument("--out", type=Path, required=True)

    pr = sub.add_parser("prepare", help="segment, split and featurise one grid cell")
    pr.add_argument("--data", type=Path, required=True)
    pr.add_argument("--obs-window", type=_positive, required=True)
    pr.add_argument("--max-pred-time", type=_positive, required=True)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--out", type=Path, required=True)

    t = sub.add_parser("train", help="train one configuration on a prepared cell")
    t.add_argument("--arch", type=_arch, required=True)
    t.add_argument("--prepared", type=Path, required=True)
    t.add_argument("--train-config", type=Path)
    t.add_argument("--out", type=Path, required=True)

    e = sub.add_parser("evaluate", help="metrics of a checkpoint on a prepared cell")
    e.add_argument("--ckpt", type=Path, required=True)
    e.add_argument("--prepared", type=Path, required=True)
    e.add_argument("--bin-width", type=_positive, default=0.25)
    e.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("sweep", help="train and evaluate architectures over a grid")
    s.add_argument("--archs", type=_arch_list, required=True)
    s.add_argument("--grid", type=_grid, required=True)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-config", type=Path)
    s.add_argument("--bin-width", type=_positive, default=0.25)
    s.add_argument("--out", type=Path, required=True)

    r = sub.add_parser("report", help="render tables and charts from result JSON")
    r.add_argument("--results", type=Path, required=True)
    r.add_argument("--out", type=Path, required=True)
    return p


def _validate(args, parser):
    def need_dir(path, what):
        if not path.is_dir():
            parser.error(f"{what} {path} is not a directory")

    def need_file(path, what):
        if path is not None and not path.is_file():
            parser.error(f"{what} {path} does not exist")

    if args.command == "generate":
        need_file(args.spec, "--spec")
    elif args.command in ("prepare", "sweep"):
        need_dir(args.data, "--data")
        if not find_recordings(args.data):
            parser.error(f"--data {args.data} holds no *_recordingMeta.csv files")
        if args.command == "sweep":
            need_file(args.train_config, "--train-config")
            if not args.archs:
                parser.error("--archs is empty")
    elif args.command == "train":
        need_dir(args.prepared, "--prepared")
        need_file(args.train_config, "--train-config")
    elif args.command == "evaluate":
        need_dir(args.prepared, "--prepared")
        need_file(args.ckpt.with_suffix(args.ckpt.suffix + ".json"), "checkpoint manifest")
    elif args.command == "report":
        need_dir(args.results, "--results")


def _train_config(path) -> TrainConfig:
    return TrainConfig() if path is None else TrainConfig.from_dict(_read_json(path))


# -- commands ------------------------------------------------------------------

def cmd_generate(args):
    d = _read_json(args.spec) if args.spec else {}
    if args.seed is not None:
        d["seed"] = args.seed
    spec = SyntheticSpec.from_dict(d)
    paths = generate_corpus(spec, args.out)
    log.info("wrote %d files for %d tracks to %s", len(paths), spec.n_tracks, args.out)


def cmd_prepare(args):
    recs = load_recordings(args.data)
    cfg = DatasetConfig(args.obs_window, args.max_pred_time, args.seed)
    split = build_dataset(recs, cfg)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.csv").write_text(manifest_csv(split))
    mats = {name: assemble_all(segs, recs) for name, segs in split.items()}
    norm = fit_normalizer(mats["train"])
    (out / "normalizer.json").write_text(_dump(norm.to_dict()))
    counts = {}
    for name in SPLITS:
        save_stack(mats[name], out / f"{name}.f32")
        counts[name] = {c: sum(fm.label == c for fm in mats[name]) for c in CLASSES}
    meta = {
        "obs_window_s": args.obs_window,
        "max_pred_time_s": args.max_pred_time,
        "seed": args.seed,
        "n_frames": cfg.n_frames(recs[0].meta.frame_rate_hz),
        "counts": counts,
    }
    (out / "prepared.json").write_text(_dump(meta))
    log.info(
        "split sizes train/val/test = %s",
        "/".join(str(sum(counts[s].values())) for s in SPLITS),
    )


def _load_prepared(prepared: Path):
    meta = _read_json(prepared / "prepared.json")
    norm = Normalizer.from_dict(_read_json(prepared / "normalizer.json"))
    arrays = {name: stack_arrays(load_stack(prepared / f"{name}.f32"), norm) for name in SPLITS}
    return meta, arrays


def cmd_train(args):
    meta, arrays = _load_prepared(args.prepared)
    tc = _train_config(args.train_config)
    X, y, _ = arrays["train"]
    model = build_model(args.arch, X.shape[1], seed=meta["seed"], dtype=np.float32)
    hist = train(model, (X, y), arrays["val"][:2], tc)
    save_model(model, args.out, extra={"train_config": tc.to_dict(), "history": hist.to_dict(), "cell": meta})
    log.info(
        "trained %s for %d epochs, best epoch %d, checkpoint %s",
        args.arch, len(hist.train_loss), hist.best_epoch, args.out,
    )


def cmd_evaluate(args):
    meta, arrays = _load_prepared(args.prepared)
    model, ck = load_model(args.ckpt)
    Xt, yt, ptt = arrays["test"]
    if Xt.shape[1] != model.n_steps and model.arch == "cnn":
        raise LanecastError(f"checkpoint expects n={model.n_steps}, prepared data has n={Xt.shape[1]}")
    pred = model.predict(Xt.astype(np.float32))
    test_cm = ConfusionMatrix.from_predictions(yt, pred)
    train_cm = evaluate(model, *arrays["train"][:2])
    report = MetricsReport.build(test_cm, train_cm)
    hist = prediction_time_histogram(yt, pred, ptt, meta["max_pred_time_s"], args.bin_width)
    extra = ck.get("extra", {})
    result = {
        "arch": ck["config"],
        "obs_window_s": meta["obs_window_s"],
        "max_pred_time_s": meta["max_pred_time_s"],
        "seed": meta["seed"],
        "train_config": extra.get("train_config"),
        "counts": meta["counts"],
        "metrics": report.to_dict(),
        "histogram": hist.to_dict(),
        "history": extra.get("history"),
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(_dump(result))
    log.info("test accuracy %.2f%%, delta acc %.2f", report.acc, report.delta_acc)


def cmd_sweep(args):
    tc = _train_config(args.train_config)
    rows = sweep(args.archs, args.grid, args.data, args.seed, tc, args.bin_width)
    args.out.mkdir(parents=True, exist_ok=True)
    for r in rows:
        name = cell_name(r["arch"], r["obs_window_s"], r["max_pred_time_s"])
        (args.out / f"{name}.json").write_text(_dump(r))
    with open(args.out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow(result_row(r))
    log.info("wrote %d result rows to %s", len(rows), args.out)


def cmd_report(args):
    paths = write_report(args.results, args.out)
    log.info("wrote %d report files to %s", len(paths), args.out)


COMMANDS = {
    "generate": cmd_generate,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    _validate(args, parser)
    try:
        COMMANDS[args.command](args)
    except (LanecastError, ValueError, KeyError, OSError) as e:
        print(f"lanecast {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
