"""Checkpoint envelope: one JSON descriptor line, ``\\n``, then the parameters
as little-endian float32 in descriptor order."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelSpec, MultiTaskModel

_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    descriptor: dict
    params: dict = field(default_factory=dict)  # name -> float32 array, descriptor order

    @property
    def spec(self):
        return ModelSpec.from_json(self.descriptor["spec"])

    @property
    def meta(self):
        return self.descriptor.get("meta", {})


def write_envelope(path, descriptor, arrays):
    descriptor = dict(descriptor)
    descriptor["params"] = [{"name": n, "shape": list(np.shape(a))} for n, a in arrays.items()]
    with open(path, "wb") as f:
        f.write(json.dumps(descriptor, sort_keys=True).encode("utf-8") + b"\n")
        for a in arrays.values():
            f.write(np.ascontiguousarray(a, dtype=_F32).tobytes())


def read_envelope(path):
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    try:
        descriptor = json.loads(raw[:nl].decode("utf-8")) if nl >= 0 else None
        entries = [(e["name"], tuple(int(s) for s in e["shape"])) for e in descriptor["params"]]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed descriptor: {exc!r}") from None
    payload = memoryview(raw)[nl + 1 :]
    sizes = [int(np.prod(s)) for _, s in entries]
    if len(payload) != sum(sizes) * _F32.itemsize:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, descriptor needs {sum(sizes) * 4}")
    flat = np.frombuffer(payload, dtype=_F32)
    arrays, off = {}, 0
    for (name, shape), size in zip(entries, sizes):
        arrays[name] = flat[off : off + size].reshape(shape).astype(np.float32)
        off += size
    return descriptor, arrays


def save_checkpoint(model, path, meta=None):
    descriptor = {"kind": "multitask", "spec": model.spec.to_json(), "meta": dict(meta or {})}
    write_envelope(path, descriptor, dict(model.named_parameters()))


def load_checkpoint(path):
    descriptor, arrays = read_envelope(path)
    if descriptor.get("kind") != "multitask" or "spec" not in descriptor:
        raise CheckpointError(f"{path}: not a multi-task model checkpoint")
    return Checkpoint(descriptor, arrays)


def model_from_checkpoint(ckpt, seed=0):
    model = MultiTaskModel(ckpt.spec, seed=seed)
    init_from_checkpoint(model, ckpt, "full")
    return model


def init_from_checkpoint(model, ckpt, mode="full", seed=None):
    """Load ``ckpt`` into ``model``.

    ``full`` restores every parameter and requires identical specs.
    ``backbone_only`` copies the backbone and re-initialises all heads from
    ``seed`` (default: the checkpoint's seed + 1), so the head set may differ.
    """
    theirs = ckpt.spec
    if mode == "full":
        if theirs != model.spec:
            raise CheckpointError(f"descriptor mismatch: checkpoint {theirs} vs model {model.spec}")
        model.set_params(ckpt.params)
    elif mode == "backbone_only":
        if theirs.backbone_descriptor() != model.spec.backbone_descriptor():
            raise CheckpointError("backbone descriptor mismatch")
        backbone = {n: v for n, v in ckpt.params.items() if n.startswith("backbone.")}
        model.set_params(backbone, strict=False)
        if len(backbone) != len(model.named_parameters("backbone")):
            raise CheckpointError("backbone parameter count mismatch")
        model.init_heads(seed if seed is not None else int(ckpt.meta.get("seed", 0)) + 1)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return model
