"""``mtmask`` command line.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure. Failures print
one JSON line ``{"error": kind, "exit": code, "message": ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .baselines import mndwi, otsu_threshold, select_threshold, water_mask
from .dataset import full_maskset, generate_dir, load_dir, load_mask_planes, scene_ids
from .metrics import confusion, dumps, mask_report, regression_metrics, report_csv
from .net import (
    CheckpointError,
    ModelSpec,
    MultiTaskModel,
    TrainConfig,
    TrainingDiverged,
    init_from_checkpoint,
    load_checkpoint,
    model_from_checkpoint,
    predict_masks,
    save_checkpoint,
    single_task_spec,
    train,
)
from .raster import MASKS, MtileError, load_tile, write_planes
from .ssc import (
    SscRecord,
    attach_features,
    cloud_cover_filter,
    fit_ensemble,
    fuse_good_water,
    load_ensemble,
    read_records_csv,
    save_ensemble,
    ssc_predict,
    write_records_csv,
)
from .synth import SceneConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_dataclass_flags(parser, cls, skip=()):
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        typ = type(f.default) if f.default is not dataclasses.MISSING else str
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", type=typ, default=None)


def _build_config(cls, args, skip=()):
    """Dataclass defaults <- optional JSON ``--config`` file <- explicit flags."""
    values = {}
    if getattr(args, "config", None):
        try:
            values.update(json.loads(Path(args.config).read_text()))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{args.config}: invalid JSON config: {exc}") from None
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    unknown = set(values) - names
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for n in names:
        v = getattr(args, f"cfg_{n}", None)
        if v is not None:
            values[n] = v
    return cls(**values)


def _jobs_map(fn, items, jobs):
    if jobs and jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- subcommands -----------------------------------------------------------


def cmd_gen(args):
    cfg = _build_config(SceneConfig, args)
    if args.show_config:
        print(json.dumps({"scene": dataclasses.asdict(cfg), "n": args.n}, indent=2, sort_keys=True))
        return EXIT_OK
    if args.out is None:
        raise UsageError("--out is required")
    ids = generate_dir(args.out, cfg, args.n)
    print(json.dumps({"scenes": len(ids), "out": str(args.out)}))
    return EXIT_OK


def _labelled(directory):
    scenes = load_dir(directory, with_dem=False)
    missing = [s.scene_id for s in scenes if s.masks is None]
    if missing:
        raise FileNotFoundError(f"{directory}: no label masks for {missing}")
    return [(s.tile, s.masks) for s in scenes]


def cmd_train(args):
    cfg = _build_config(TrainConfig, args)
    spec = ModelSpec(attention=args.attention)
    if args.single_task:
        spec = single_task_spec(spec, args.single_task)
    if args.show_config:
        print(json.dumps({"train": cfg.to_json(), "model": spec.to_json()}, indent=2, sort_keys=True))
        return EXIT_OK
    if args.data is None or args.out is None:
        raise UsageError("--data and --out are required")
    data = _labelled(args.data)
    model = MultiTaskModel(spec, seed=cfg.seed)
    if args.init:
        init_from_checkpoint(model, load_checkpoint(args.init), args.init_mode, seed=cfg.seed)
    model, curve = train(model, data, cfg)
    save_checkpoint(model, args.out, meta={"seed": cfg.seed, "epoch": cfg.epochs, "train": cfg.to_json()})
    _write_json(str(args.out) + ".curve.json", {"loss": curve})
    print(json.dumps({"checkpoint": str(args.out), "final_loss": curve[-1] if curve else None}))
    return EXIT_OK


def cmd_predict(args):
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def one(sid):
        tile = load_tile(Path(args.data) / f"{sid}.tile.mtile")
        masks = predict_masks(model, tile, args.threshold)
        write_planes(out / f"{sid}.masks.mtile", masks, tile.pixel_size)
        return sid

    # inference layers cache nothing when train=False, so threads share the model
    done = _jobs_map(one, scene_ids(args.data), args.jobs)
    print(json.dumps({"predicted": len(done), "out": str(out)}))
    return EXIT_OK


def cmd_baseline(args):
    scenes = load_dir(args.data, with_dem=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    thresholds = {}
    if args.method == "select":
        if args.val is None:
            raise UsageError("--method select needs --val")
        val = load_dir(args.val, with_dem=False)
        t = select_threshold([mndwi(s.tile) for s in val], [s.masks.water for s in val])
        thresholds = {s.scene_id: t for s in scenes}
    for s in scenes:
        score = mndwi(s.tile)
        if args.method == "otsu":
            thresholds[s.scene_id] = otsu_threshold(score, args.bins)
        write_planes(out / f"{s.scene_id}.masks.mtile", {"water": water_mask(score, thresholds[s.scene_id])}, s.tile.pixel_size)
    _write_json(out / "thresholds.json", {"method": args.method, "thresholds": thresholds})
    print(json.dumps({"scenes": len(scenes), "out": str(out)}))
    return EXIT_OK


def cmd_fuse(args):
    scenes = load_dir(args.data, with_dem=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in scenes:
        masks = _masks_for(s, args.masks)
        write_planes(out / f"{s.scene_id}.good.mtile", {"good_water": fuse_good_water(masks, s.tile.valid)}, s.tile.pixel_size)
    print(json.dumps({"scenes": len(scenes), "out": str(out)}))
    return EXIT_OK


def _masks_for(scene, masks_dir):
    if masks_dir:
        planes = load_mask_planes(Path(masks_dir) / f"{scene.scene_id}.masks.mtile")
        return full_maskset(planes, scene.tile.valid.shape)
    if scene.masks is None:
        raise FileNotFoundError(f"no masks for {scene.scene_id}")
    return scene.masks


def _records(directory, masks_dir, for_training=False):
    out, skipped_scenes = [], 0
    for s in load_dir(directory, with_dem=False):
        masks = _masks_for(s, masks_dir)
        if for_training and not cloud_cover_filter(masks, s.tile.valid):
            skipped_scenes += 1
            continue
        out += attach_features(s.records, s.tile, fuse_good_water(masks, s.tile.valid))
    return out, skipped_scenes


def cmd_ssc(args):
    if args.ssc_cmd == "fit":
        train_recs, skipped = _records(args.train, args.masks_train, for_training=True)
        val_recs, _ = _records(args.val, args.masks_val)
        ens = fit_ensemble(train_recs, val_recs)
        save_ensemble(ens, args.out, meta={"train_records": len(train_recs), "cloudy_scenes_skipped": skipped})
        print(json.dumps({"ensemble": str(args.out), "t1": str(ens.t1), "t2": str(ens.t2)}))
    elif args.ssc_cmd == "predict":
        ens = load_ensemble(args.model)
        recs, _ = _records(args.data, args.masks)
        preds = [SscRecord(r.row, r.col, ssc_predict(ens, r.features), r.scene_id) for r in recs]
        write_records_csv(args.out, preds)
        print(json.dumps({"predictions": len(preds), "out": str(args.out)}))
    else:
        truth = {(r.scene_id, r.row, r.col): r.ssc for r in read_records_csv(args.truth)}
        pairs = [(truth[(p.scene_id, p.row, p.col)], p.ssc) for p in read_records_csv(args.pred) if (p.scene_id, p.row, p.col) in truth]
        if not pairs:
            raise ValueError("no predictions match ground-truth records")
        y, yhat = zip(*pairs)
        rm = regression_metrics(y, yhat)
        _write_json(args.out, dataclasses.asdict(rm))
        print(json.dumps({"rmse": rm.rmse, "n": rm.n}))
    return EXIT_OK


def cmd_eval(args):
    ids = scene_ids(args.labels)
    labels = {s.scene_id: s for s in load_dir(args.labels, with_dem=False)}

    def one(sid):
        s = labels[sid]
        pred = load_mask_planes(Path(args.pred) / f"{sid}.masks.mtile")
        return sid, {m: confusion(pred[m], s.masks[m], s.tile.valid) for m in MASKS if m in pred}

    report = mask_report(dict(_jobs_map(one, ids, args.jobs)))
    out = Path(args.out)
    _write_json(out.with_suffix(".json"), report)
    out.with_suffix(".csv").write_text(report_csv(report))
    print(json.dumps({"pooled_mean_f1": report["pooled_mean_f1"], "out": str(out.with_suffix(".json"))}))
    return EXIT_OK


def cmd_bench(args):
    scenes = load_dir(args.scenes)
    bench_scenes = [
        bench_mod.BenchScene(s.scene_id, s.tile, s.dem, tuple((r.row, r.col) for r in s.records)) for s in scenes
    ]
    variants = bench_mod.VARIANTS if args.variant == "both" else (args.variant,)
    model = None
    notes = []
    if "multitask" in variants:
        if args.checkpoint:
            model = model_from_checkpoint(load_checkpoint(args.checkpoint))
        else:
            # runtime does not depend on weight values; an untrained reference net is timed
            model = MultiTaskModel(ModelSpec(), seed=0)
            notes.append("no --checkpoint: timed an untrained reference model")
    reports = [
        bench_mod.run_pipeline(v, bench_scenes, model, parallel=args.parallel, measure_memory=not args.no_memory)
        for v in variants
    ]
    doc = {"reports": [r.to_json() for r in reports], "notes": notes}
    if len(reports) == 2:
        doc["speedup"] = bench_mod.speedup(reports[0], reports[1])
    out = Path(args.out)
    _write_json(out, doc)
    out.with_suffix(".csv").write_text(bench_mod.reports_csv(reports))
    print(json.dumps({"out": str(out), **({"speedup": doc["speedup"]} if "speedup" in doc else {})}))
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser():
    p = _Parser(prog="mtmask", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate synthetic scenes")
    g.add_argument("--n", type=int, default=4)
    g.add_argument("--out")
    g.add_argument("--config")
    g.add_argument("--show-config", action="store_true")
    _add_dataclass_flags(g, SceneConfig)
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train the multi-task (or a single-task) model")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--single-task", choices=MASKS)
    t.add_argument("--attention", action="store_true")
    t.add_argument("--init", help="checkpoint to initialise from")
    t.add_argument("--init-mode", choices=("backbone_only", "full"), default="backbone_only")
    t.add_argument("--config")
    t.add_argument("--show-config", action="store_true")
    _add_dataclass_flags(t, TrainConfig)
    t.set_defaults(fn=cmd_train)

    pr = sub.add_parser("predict", help="predict masks from a checkpoint")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--threshold", type=float, default=0.5)
    pr.add_argument("--jobs", type=int, default=1)
    pr.set_defaults(fn=cmd_predict)

    b = sub.add_parser("baseline", help="MNDWI water masks with an Otsu or validation-selected threshold")
    b.add_argument("--data", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--method", choices=("otsu", "select"), default="otsu")
    b.add_argument("--val")
    b.add_argument("--bins", type=int, default=256)
    b.set_defaults(fn=cmd_baseline)

    f = sub.add_parser("fuse", help="good-quality water pixels")
    f.add_argument("--data", required=True)
    f.add_argument("--masks", help="directory of predicted masks (default: labels in --data)")
    f.add_argument("--out", required=True)
    f.set_defaults(fn=cmd_fuse)

    s = sub.add_parser("ssc", help="SSC ensemble")
    ssub = s.add_subparsers(dest="ssc_cmd", required=True, parser_class=_Parser)
    sf = ssub.add_parser("fit")
    sf.add_argument("--train", required=True)
    sf.add_argument("--val", required=True)
    sf.add_argument("--masks-train")
    sf.add_argument("--masks-val")
    sf.add_argument("--out", required=True)
    sp = ssub.add_parser("predict")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--masks")
    sp.add_argument("--out", required=True)
    se = ssub.add_parser("eval")
    se.add_argument("--pred", required=True)
    se.add_argument("--truth", required=True)
    se.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_ssc)

    e = sub.add_parser("eval", help="pixel metrics of predicted masks against labels")
    e.add_argument("--pred", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--out", required=True, help="report path prefix (.json and .csv are written)")
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(fn=cmd_eval)

    bn = sub.add_parser("bench", help="time the standard and multi-task pipelines")
    bn.add_argument("--variant", choices=("standard", "multitask", "both"), default="both")
    bn.add_argument("--scenes", required=True)
    bn.add_argument("--checkpoint")
    bn.add_argument("--out", default="bench.json")
    bn.add_argument("--parallel", type=int, default=1)
    bn.add_argument("--no-memory", action="store_true", help="skip the traced-allocation pass; report max RSS")
    bn.set_defaults(fn=cmd_bench)
    return p


def _fail(kind, code, message):
    print(json.dumps({"error": kind, "exit": code, "message": str(message)}), file=sys.stderr)
    return code


def dispatch(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, exc)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, exc)
    except (TrainingDiverged, FloatingPointError) as exc:
        return _fail("numeric", EXIT_NUMERIC, exc)
    except (FileNotFoundError, MtileError, CheckpointError, ValueError, KeyError, OSError) as exc:
        return _fail("data", EXIT_DATA, exc)


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
