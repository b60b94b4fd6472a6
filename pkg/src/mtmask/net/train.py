"""First-order training of the masking network on (tile, masks) pairs."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..metrics import confusion, pixel_metrics
from ..raster import MASKS
from .model import binarize, multitask_forward, multitask_loss, normalize

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    lr: float = 1e-2
    optimizer: str = "momentum"  # "momentum" | "adam"
    momentum: float = 0.9
    seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ValueError("learning rate must be finite and >= 0")
        if self.optimizer not in ("momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_json(self):
        return asdict(self)


class Optimizer:
    """Gradient descent with heavy-ball momentum, or Adam."""

    def __init__(self, params, config):
        self.params = params  # list of (layer, key)
        self.cfg = config
        self.state = [np.zeros_like(layer.params[k]) for layer, k in params]
        self.state2 = [np.zeros_like(layer.params[k]) for layer, k in params] if config.optimizer == "adam" else None
        self.t = 0

    def step(self):
        cfg = self.cfg
        grads = [layer.grads[k] for layer, k in self.params]
        norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
        if not math.isfinite(norm):
            raise TrainingDiverged("non-finite gradient norm")
        scale = cfg.clip_norm / norm if cfg.clip_norm and norm > cfg.clip_norm else 1.0
        self.t += 1
        for i, ((layer, k), g) in enumerate(zip(self.params, grads)):
            g = g * np.asarray(scale, dtype=g.dtype)
            p = layer.params[k]
            if cfg.optimizer == "momentum":
                self.state[i] = cfg.momentum * self.state[i] + g
                layer.params[k] = p - np.asarray(cfg.lr, dtype=p.dtype) * self.state[i]
            else:
                b1, b2 = 0.9, 0.999
                self.state[i] = b1 * self.state[i] + (1 - b1) * g
                self.state2[i] = b2 * self.state2[i] + (1 - b2) * g * g
                mhat = self.state[i] / (1 - b1**self.t)
                vhat = self.state2[i] / (1 - b2**self.t)
                step = np.asarray(cfg.lr, dtype=p.dtype) * mhat / (np.sqrt(vhat) + 1e-8)
                layer.params[k] = (p - step).astype(p.dtype)
        return norm


def stack_dataset(dataset, heads=MASKS, dtype=np.float32):
    """Pack [(TileStack, MaskSet), ...] into (X, {mask: Y}, valid) arrays."""
    if not dataset:
        raise ValueError("empty dataset")
    x = np.stack([normalize(t.bands, t.valid) for t, _ in dataset]).astype(dtype)
    y = {m: np.stack([ms[m] for _, ms in dataset]).astype(dtype) for m in heads}
    valid = np.stack([t.valid for t, _ in dataset])
    return x, y, valid


def train(model, dataset, config, callback=None):
    """Train ``model`` in place on ``dataset``; returns ``(model, loss_curve)``.

    ``loss_curve[e]`` is the mean batch loss of epoch ``e``. ``callback(epoch,
    model, loss)`` runs after each epoch and may return True to stop early.
    """
    heads = model.spec.heads
    x, y, valid = stack_dataset(dataset, heads)
    opt = Optimizer(model.parameters(), config)
    rng = np.random.Generator(np.random.Philox(key=[int(config.seed), 0x5EED]))
    curve = []
    n = len(dataset)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            model.zero_grad()
            preds = model.forward(x[idx])
            try:
                loss, dlogits = multitask_loss(preds, {m: y[m][idx] for m in heads}, valid[idx], with_grad=True)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}") from None
            model.backward(dlogits)
            opt.step()
            losses.append(loss)
        model.release()
        curve.append(float(np.mean(losses)))
        log.debug("epoch %d loss %.5f", epoch, curve[-1])
        if not math.isfinite(curve[-1]):
            raise TrainingDiverged(f"epoch {epoch}: non-finite loss")
        if callback is not None and callback(epoch, model, curve[-1]):
            break
    return model, curve


def predict_masks(model, tile, threshold=0.5):
    """Binary {mask: (H, W) uint8} planes; pixels invalid in the tile are 0."""
    masks = binarize(multitask_forward(model, tile), threshold)
    model.release()
    return {m: v * tile.valid for m, v in masks.items()}


def evaluate(model, dataset, threshold=0.5):
    """Pooled per-mask PixelMetrics over ``dataset`` ([(tile, masks), ...])."""
    pooled = {}
    for tile, ms in dataset:
        pred = predict_masks(model, tile, threshold)
        for m in model.spec.heads:
            c = confusion(pred[m], ms[m], tile.valid)
            pooled[m] = pooled[m] + c if m in pooled else c
    return {m: pixel_metrics(c) for m, c in pooled.items()}


def mean_f1(metrics):
    """Mean F1 over masks, counting undefined F1 as 0."""
    return float(np.mean([pm.f1 or 0.0 for pm in metrics.values()]))
