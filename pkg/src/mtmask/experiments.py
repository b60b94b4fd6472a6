"""Reference experiments on synthetic scenes, with their shipped seeds.

Each ``run_*`` function returns a plain dict of results so that the scripts in
``scripts/`` and the acceptance tests share one code path.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import mndwi, select_threshold, water_mask
from .bench import BenchScene, run_pipeline, speedup
from .metrics import Confusion, confusion, pixel_metrics
from .net import ModelSpec, MultiTaskModel, TrainConfig, evaluate, init_from_checkpoint, mean_f1, single_task_variant, train
from .net.checkpoint import Checkpoint
from .raster import MASKS
from .ssc import SscRecord, attach_features, cloud_cover_filter, fit_ensemble, fuse_good_water, ssc_predict
from .synth import SceneConfig, generate_scene

REFERENCE_TRAIN = TrainConfig(epochs=150, batch_size=2, lr=1e-2, optimizer="momentum", seed=0)


def scenes(seeds, base=None, with_extras=False, **overrides):
    """[(tile, masks)] (or full generate_scene tuples) for ``seeds``."""
    base = (base or SceneConfig()).replace(**overrides)
    out = [generate_scene(base.replace(seed=int(s))) for s in seeds]
    return out if with_extras else [o[:2] for o in out]


# -- overfit -----------------------------------------------------------------


@dataclass(frozen=True)
class OverfitConfig:
    seeds: tuple = tuple(range(100, 108))
    model_seed: int = 0
    train: TrainConfig = TrainConfig(epochs=500, batch_size=1, lr=1e-2, optimizer="momentum", seed=0)
    target: float = 0.90
    eval_every: int = 10


def run_overfit(cfg=OverfitConfig()):
    data = scenes(cfg.seeds)
    model = MultiTaskModel(ModelSpec(), seed=cfg.model_seed)
    state = {"epoch": None, "f1": 0.0, "history": []}

    def check(epoch, m, loss):
        if (epoch + 1) % cfg.eval_every:
            return False
        f1 = mean_f1(evaluate(m, data))
        state["history"].append((epoch + 1, f1))
        state["f1"] = f1
        if f1 >= cfg.target:
            state["epoch"] = epoch + 1
            return True
        return False

    t0 = time.perf_counter()
    _, curve = train(model, data, cfg.train, check)
    per_mask = {m: pm.f1 for m, pm in evaluate(model, data).items()}
    return {
        "reached_epoch": state["epoch"],
        "mean_f1": state["f1"],
        "per_mask_f1": per_mask,
        "history": state["history"],
        "final_loss": curve[-1],
        "seconds": time.perf_counter() - t0,
        "model": model,
    }


# -- multi-task vs single-task, and the MNDWI baseline -----------------------


@dataclass(frozen=True)
class ParityConfig:
    train_seeds: tuple = tuple(range(1000, 1008))
    val_seeds: tuple = tuple(range(2000, 2008))
    test_seeds: tuple = tuple(range(3000, 3008))
    scarce_snow: float = 0.015  # snow/ice fraction for the scarce-positives case
    model_seed: int = 0
    # shared heads need longer than one head alone to converge on the shadow masks
    train: TrainConfig = TrainConfig(epochs=300, batch_size=2, lr=1e-2, optimizer="momentum", seed=0)


def _f1s(metrics):
    return {m: (pm.f1 if pm.f1 is not None else 0.0) for m, pm in metrics.items()}


def run_parity(cfg=ParityConfig(), scarce=False, masks=MASKS):
    """Per-mask validation F1 of one multi-task model and of matched single-task models."""
    overrides = {"snow_ice": cfg.scarce_snow} if scarce else {}
    tr = scenes(cfg.train_seeds, **overrides)
    va = scenes(cfg.val_seeds, **overrides)
    multi = train(MultiTaskModel(ModelSpec(), seed=cfg.model_seed), tr, cfg.train)[0]
    multi_f1 = _f1s(evaluate(multi, va))
    single_f1 = {}
    for m in masks:
        st = train(single_task_variant(ModelSpec(), m, seed=cfg.model_seed), tr, cfg.train)[0]
        single_f1[m] = _f1s(evaluate(st, va))[m]
    snow_frac = float(np.mean([ms.snow_ice[t.valid].mean() for t, ms in tr + va]))
    return {"multi": multi_f1, "single": single_f1, "snow_fraction": snow_frac, "model": multi}


def run_baseline_comparison(model, cfg=ParityConfig()):
    """Water F1 on the test split: trained model vs MNDWI with a validation-selected threshold."""
    va = scenes(cfg.val_seeds)
    te = scenes(cfg.test_seeds)
    t = select_threshold([mndwi(tile) for tile, _ in va], [ms.water for _, ms in va])
    pooled = Confusion()
    for tile, ms in te:
        pooled = pooled + confusion(water_mask(mndwi(tile), t), ms.water, tile.valid)
    return {
        "mndwi_threshold": t,
        "mndwi_f1": pixel_metrics(pooled).f1,
        "model_f1": evaluate(model, te)["water"].f1,
    }


# -- transfer learning -------------------------------------------------------


@dataclass(frozen=True)
class TransferConfig:
    # distribution A: hazier, finer-grained scenes; B is the default generator
    source: dict = field(default_factory=lambda: {"haze": 0.05, "feature_scale": 10.0})
    source_seeds: tuple = tuple(range(5000, 5008))
    target_seeds: tuple = tuple(range(1000, 1008))
    pretrain: TrainConfig = REFERENCE_TRAIN
    finetune: TrainConfig = TrainConfig(epochs=300, batch_size=2, lr=1e-2, optimizer="momentum", seed=1)
    model_seed: int = 1
    target_f1: float = 0.85


def epochs_to_target(model, data, config, target):
    """First epoch after which mean pooled F1 on ``data`` is >= ``target`` (None if never)."""
    hit = {"epoch": None, "history": []}

    def check(epoch, m, loss):
        f1 = mean_f1(evaluate(m, data))
        hit["history"].append(f1)
        if f1 >= target:
            hit["epoch"] = epoch + 1
            return True
        return False

    train(model, data, config, check)
    return hit["epoch"], hit["history"]


def run_transfer(cfg=TransferConfig()):
    src = scenes(cfg.source_seeds, **cfg.source)
    tgt = scenes(cfg.target_seeds)
    pre = train(MultiTaskModel(ModelSpec(), seed=0), src, cfg.pretrain)[0]
    ckpt = Checkpoint({"spec": pre.spec.to_json(), "meta": {"seed": 0}}, {n: v.copy() for n, v in pre.named_parameters()})

    scratch_epoch, scratch_hist = epochs_to_target(MultiTaskModel(ModelSpec(), seed=cfg.model_seed), tgt, cfg.finetune, cfg.target_f1)
    tuned = MultiTaskModel(ModelSpec(), seed=cfg.model_seed)
    init_from_checkpoint(tuned, ckpt, "backbone_only", seed=cfg.model_seed)
    tuned_epoch, tuned_hist = epochs_to_target(tuned, tgt, cfg.finetune, cfg.target_f1)
    return {
        "pretrained_f1_source": mean_f1(evaluate(pre, src)),
        "pretrained_f1_target": mean_f1(evaluate(pre, tgt)),
        "scratch_epochs": scratch_epoch,
        "finetune_epochs": tuned_epoch,
        "scratch_history": scratch_hist,
        "finetune_history": tuned_hist,
    }


# -- SSC ensemble ------------------------------------------------------------


@dataclass(frozen=True)
class SscExperimentConfig:
    train_seeds: tuple = tuple(range(6000, 6060))
    val_seeds: tuple = tuple(range(7000, 7030))
    test_seeds: tuple = tuple(range(8000, 8030))
    points_per_scene: int = 8


def ssc_records(seeds, points, training=False):
    out = []
    for s in seeds:
        tile, masks, _, truth = generate_scene(SceneConfig(seed=int(s), ssc_points=points))
        if training and not cloud_cover_filter(masks, tile.valid):
            continue
        recs = [SscRecord(p.row, p.col, p.ssc, f"s{s}") for p in truth.points]
        out += attach_features(recs, tile, fuse_good_water(masks, tile.valid))
    return out


def _rmse(pred, y):
    return math.sqrt(float(np.mean((np.asarray(pred) - np.asarray(y)) ** 2)))


def run_ssc(cfg=SscExperimentConfig()):
    tr = ssc_records(cfg.train_seeds, cfg.points_per_scene, training=True)
    va = ssc_records(cfg.val_seeds, cfg.points_per_scene)
    te = ssc_records(cfg.test_seeds, cfg.points_per_scene)
    t0 = time.perf_counter()
    ens = fit_ensemble(tr, va)
    fit_s = time.perf_counter() - t0

    def split(recs):
        x = np.stack([r.features.values for r in recs])
        y = np.array([r.ssc for r in recs])
        o1, o2 = ens.outputs(x)
        return {
            "ensemble": _rmse(ssc_predict(ens, x), y),
            "low_only": _rmse(np.maximum(o1, 0), y),
            "high_only": _rmse(np.maximum(o2, 0), y),
        }

    train_mean = float(np.mean([r.ssc for r in tr]))
    y_te = np.array([r.ssc for r in te])
    return {
        "n": {"train": len(tr), "val": len(va), "test": len(te)},
        "t1": ens.t1,
        "t2": ens.t2,
        "val": split(va),
        "test": {**split(te), "mean_predictor": _rmse(np.full_like(y_te, train_mean), y_te)},
        "fit_seconds": fit_s,
    }


# -- bench -------------------------------------------------------------------


@dataclass(frozen=True)
class BenchConfig:
    n_scenes: int = 20
    size: int = 512
    seed: int = 9000


def bench_scenes(cfg=BenchConfig()):
    out = []
    for i in range(cfg.n_scenes):
        tile, _, dem, truth = generate_scene(SceneConfig(seed=cfg.seed + i, width=cfg.size, height=cfg.size))
        out.append(BenchScene(f"bench_{i:02d}", tile, dem, tuple((p.row, p.col) for p in truth.points)))
    return out


def run_bench(model, cfg=BenchConfig(), measure_memory=True):
    sc = bench_scenes(cfg)
    std = run_pipeline("standard", sc, measure_memory=measure_memory)
    mt = run_pipeline("multitask", sc, model, measure_memory=measure_memory)
    return {"standard": std, "multitask": mt, "speedup": speedup(std, mt)}
