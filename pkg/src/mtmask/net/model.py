"""Shared-backbone multi-task masking network and its loss.

Backbone: three [3x3 conv -> ReLU -> 2x2 max-pool] blocks, an optional
residual self-attention block on the coarsest map, bilinear upsampling back
to input resolution, and a skip connection concatenating the full-resolution
first-block activations. Every head is a 1x1 conv followed by a sigmoid and
reads the same feature map.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..raster import BANDS, MASKS
from .layers import BilinearUpsample, Conv2d, MaxPool2, ReLU, SpatialAttention, sigmoid

EPS = 1e-7


@dataclass(frozen=True)
class ModelSpec:
    in_channels: int = len(BANDS)
    widths: tuple[int, ...] = (16, 32, 32)
    attention: bool = False
    skip: bool = True
    heads: tuple[str, ...] = MASKS

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "heads", tuple(self.heads))
        unknown = [h for h in self.heads if h not in MASKS]
        if unknown or not self.heads or len(set(self.heads)) != len(self.heads):
            raise ValueError(f"heads must be distinct mask names from {MASKS}, got {self.heads}")

    @property
    def downsample(self):
        return 2 ** len(self.widths)

    @property
    def feature_channels(self):
        return self.widths[-1] + (self.widths[0] if self.skip else 0)

    def backbone_descriptor(self):
        d = asdict(self)
        d.pop("heads")
        d["widths"] = list(self.widths)
        return d

    def to_json(self):
        return {**self.backbone_descriptor(), "heads": list(self.heads)}

    @classmethod
    def from_json(cls, d):
        return cls(
            in_channels=int(d["in_channels"]),
            widths=tuple(d["widths"]),
            attention=bool(d["attention"]),
            skip=bool(d["skip"]),
            heads=tuple(d["heads"]),
        )


def single_task_spec(spec, mask_name):
    if mask_name not in MASKS:
        raise ValueError(f"unknown mask {mask_name!r}; expected one of {MASKS}")
    return ModelSpec(spec.in_channels, spec.widths, spec.attention, spec.skip, (mask_name,))


class MultiTaskModel:
    """``f_theta`` backbone plus one ``g_phi`` head per mask name."""

    def __init__(self, spec=None, seed=0):
        self.spec = spec or ModelSpec()
        self.forward_calls = 0
        rng = np.random.Generator(np.random.Philox(key=[int(seed), 0xBAC4B0]))
        self.backbone = []
        c = self.spec.in_channels
        for width in self.spec.widths:
            self.backbone += [Conv2d(c, width, 3, rng=rng), ReLU(), MaxPool2()]
            c = width
        self.attn = SpatialAttention(c, rng=rng) if self.spec.attention else None
        self.up = BilinearUpsample(self.spec.downsample)
        self.heads = {}
        self.init_heads(seed)

    def init_heads(self, seed, names=None):
        """(Re-)initialise head parameters with a seed-derived stream."""
        rng = np.random.Generator(np.random.Philox(key=[int(seed), 0x4EAD5]))
        for name in self.spec.heads:
            head = Conv2d(self.spec.feature_channels, 1, 1, rng=rng, gain=1.0)
            if names is None or name in names:
                self.heads[name] = head

    # -- parameters --------------------------------------------------------

    def _backbone_layers(self):
        layers = [l for l in self.backbone if l.params]
        if self.attn is not None:
            layers.append(self.attn)
        return layers

    def named_parameters(self, part="all"):
        """Ordered ``(name, array)`` pairs; ``part`` is ``all``, ``backbone`` or ``heads``."""
        out = []
        if part in ("all", "backbone"):
            for i, layer in enumerate(self._backbone_layers()):
                for k in sorted(layer.params):
                    out.append((f"backbone.{i}.{k}", layer.params[k]))
        if part in ("all", "heads"):
            for name in self.spec.heads:
                for k in sorted(self.heads[name].params):
                    out.append((f"head.{name}.{k}", self.heads[name].params[k]))
        return out

    def _owners(self):
        owners = []
        for i, layer in enumerate(self._backbone_layers()):
            for k in sorted(layer.params):
                owners.append((f"backbone.{i}.{k}", layer, k))
        for name in self.spec.heads:
            for k in sorted(self.heads[name].params):
                owners.append((f"head.{name}.{k}", self.heads[name], k))
        return owners

    def parameters(self):
        return [(layer, k) for _, layer, k in self._owners()]

    def get_params(self):
        return {n: layer.params[k] for n, layer, k in self._owners()}

    def set_params(self, values, strict=True):
        owners = {n: (layer, k) for n, layer, k in self._owners()}
        if strict and set(values) != set(owners):
            raise ValueError("parameter names do not match model")
        for n, v in values.items():
            layer, k = owners[n]
            if layer.params[k].shape != np.shape(v):
                raise ValueError(f"{n}: shape {np.shape(v)} != {layer.params[k].shape}")
            layer.params[k] = np.array(v, dtype=layer.params[k].dtype)

    def astype(self, dtype):
        for layer in self._backbone_layers():
            layer.astype(dtype)
        for head in self.heads.values():
            head.astype(dtype)
        return self

    def zero_grad(self):
        for layer, _ in self.parameters():
            layer.zero_grad()

    def grads(self):
        return {n: layer.grads[k] for n, layer, k in self._owners()}

    # -- forward / backward ------------------------------------------------

    def features(self, x, train=True):
        """``z = f_theta(x)`` for a normalised (N, H, W, C) batch."""
        n, h, w, c = x.shape
        ds = self.spec.downsample
        if c != self.spec.in_channels or h % ds or w % ds:
            raise ValueError(
                f"input {x.shape} incompatible with architecture: need {self.spec.in_channels} "
                f"channels and spatial dims divisible by {ds}"
            )
        skip = None
        out = x
        for i, layer in enumerate(self.backbone):
            out = layer.forward(out, train)
            if i == 1:
                skip = out
        if self.attn is not None:
            out = self.attn.forward(out, train)
        out = self.up.forward(out, train)
        if self.spec.skip:
            out = np.concatenate([skip, out], axis=-1)
        return out

    def head_logits(self, z, train=True):
        return {m: self.heads[m].forward(z, train)[..., 0] for m in self.spec.heads}

    def forward(self, x, train=True):
        """Probability planes {mask: (N, H, W)} for a normalised batch."""
        self.forward_calls += 1
        logits = self.head_logits(self.features(x, train), train)
        return {m: sigmoid(v) for m, v in logits.items()}

    def backward(self, dlogits):
        """Back-propagate {mask: dL/dlogit (N, H, W)}; accumulates parameter grads."""
        dz = None
        for m in self.spec.heads:
            g = self.heads[m].backward(dlogits[m][..., None])
            dz = g if dz is None else dz + g
        c_skip = self.spec.widths[0] if self.spec.skip else 0
        dskip, dup = dz[..., :c_skip], dz[..., c_skip:]
        d = self.up.backward(dup)
        if self.attn is not None:
            d = self.attn.backward(d)
        for i in range(len(self.backbone) - 1, -1, -1):
            if i == 1 and self.spec.skip:
                d = d + dskip
            d = self.backbone[i].backward(d)
        return d

    def release(self):
        """Drop cached activations."""
        for layer in [*self.backbone, self.up, *self.heads.values()]:
            layer._cache = None
        if self.attn is not None:
            self.attn.attn._cache = None


def normalize(tile_bands, valid):
    """(6, H, W) reflectance -> (H, W, 6) model input; invalid pixels zero-filled."""
    x = (np.moveaxis(np.asarray(tile_bands, dtype=np.float32), 0, -1) - 0.5) / 0.5
    x[~np.asarray(valid, dtype=bool)] = 0.0
    return x


def multitask_forward(model, tile):
    """Five (or ``len(heads)``) probability planes of shape (H, W) for one tile."""
    x = normalize(tile.bands, tile.valid)[None].astype(next(iter(model.get_params().values())).dtype)
    probs = model.forward(x, train=False)
    return {m: p[0] for m, p in probs.items()}


def binarize(probs, threshold=0.5):
    return {m: (p >= threshold).astype(np.uint8) for m, p in probs.items()}


def bce_plane(pred, label, valid):
    """Mean clamped binary cross-entropy over valid pixels of one plane."""
    p = np.clip(pred, EPS, 1.0 - EPS)
    y = np.asarray(label, dtype=p.dtype)
    v = np.asarray(valid, dtype=bool)
    n = np.count_nonzero(v)
    if n == 0:
        raise ValueError("no valid pixels")
    terms = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(np.sum(terms[v], dtype=np.float64) / n)


def multitask_loss(preds, labels, valid, with_grad=False):
    """Mean over the batch of the summed per-mask masked BCE.

    ``preds``: {mask: (N, H, W) probabilities}; ``labels``: {mask: (N, H, W)}
    or a list of MaskSets; ``valid``: (N, H, W) bool. With ``with_grad`` also
    returns {mask: dL/dlogit}, the exact derivative through the clamp: zero
    where the clamp is active, ``(p - y) / (N * n_valid)`` elsewhere.
    """
    names = list(preds)
    if not isinstance(labels, dict):
        labels = {m: np.stack([ms[m] for ms in labels]) for m in names}
    valid = np.asarray(valid, dtype=bool)
    if valid.ndim == 2:
        valid = valid[None]
    n_batch = valid.shape[0]
    counts = valid.reshape(n_batch, -1).sum(axis=1)
    if (counts == 0).any():
        raise ValueError("no valid pixels in at least one batch item")
    total = 0.0
    grads = {}
    for m in names:
        p = preds[m].reshape(valid.shape)
        y = np.asarray(labels[m]).reshape(valid.shape)
        if p.shape != y.shape:
            raise ValueError(f"{m}: prediction {p.shape} vs label {y.shape}")
        for i in range(n_batch):
            total += bce_plane(p[i], y[i], valid[i])
        if with_grad:
            inside = (p > EPS) & (p < 1.0 - EPS)
            scale = (1.0 / (n_batch * counts)).astype(p.dtype)[:, None, None]
            grads[m] = np.where(valid & inside, (p - y.astype(p.dtype)) * scale, 0).astype(p.dtype)
    loss = total / n_batch
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    return (loss, grads) if with_grad else loss
