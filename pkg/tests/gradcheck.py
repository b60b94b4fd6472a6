"""Finite-difference checks of every parameterised layer, in float64.

Each ``check_*`` builds a random small instance from ``rng``, projects the
layer output onto a random tensor to get a scalar, and returns the max
relative error between analytic and central-difference gradients over the
input and all parameters. Inputs to kinked layers (ReLU, max-pool) are kept
well clear of their kinks so the differences never straddle one.
"""

import numpy as np

from mtmask.net.layers import Attention, BilinearUpsample, Conv2d, Dense, MaxPool2, ReLU, Sigmoid, SpatialAttention
from mtmask.net.model import ModelSpec, MultiTaskModel, multitask_loss

from .oracles import numeric_grad, rel_error

H = 1e-3


def _check_layer(layer, x, rng):
    layer.astype(np.float64)
    out = layer.forward(x)
    r = rng.standard_normal(out.shape)

    def f():
        return float(np.sum(layer.forward(x, train=False) * r))

    layer.zero_grad()
    layer.forward(x)
    dx = layer.backward(r)
    errs = [rel_error(dx, numeric_grad(f, x, H))]
    for k, p in layer.params.items():
        errs.append(rel_error(layer.grads[k], numeric_grad(f, p, H)))
    return max(errs)


def check_conv(rng):
    cin, cout = rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    layer = Conv2d(cin, cout, k, stride=stride, rng=rng)
    layer.params["b"] = rng.standard_normal(cout)
    x = rng.standard_normal((2, 5, 6, cin))
    return _check_layer(layer, x, rng)


def check_dense(rng):
    layer = Dense(int(rng.integers(2, 6)), int(rng.integers(1, 5)), rng=rng)
    layer.params["b"] = rng.standard_normal(layer.params["b"].shape)
    x = rng.standard_normal((3, layer.params["w"].shape[0]))
    return _check_layer(layer, x, rng)


def check_attention(rng):
    d = int(rng.integers(2, 5))
    layer = Attention(d, d_k=int(rng.integers(1, 4)), d_v=int(rng.integers(1, 4)), rng=rng)
    x = rng.standard_normal((2, int(rng.integers(2, 5)), d))
    return _check_layer(layer, x, rng)


def check_spatial_attention(rng):
    c = int(rng.integers(2, 4))
    layer = SpatialAttention(c, rng=rng)
    return _check_layer(layer, rng.standard_normal((1, 2, 3, c)), rng)


def check_pool(rng):
    n, h, w, c = 2, 4, 6, 2
    # distinct values 0.05 apart: a 1e-3 nudge never changes an argmax
    x = (rng.permutation(n * h * w * c) * 0.05).reshape(n, h, w, c).astype(np.float64)
    return _check_layer(MaxPool2(), x, rng)


def check_relu(rng):
    x = rng.standard_normal((2, 3, 3, 2))
    x = np.where(np.abs(x) < 0.05, 0.05 * np.sign(x) + 0.05 * (x == 0), x)
    return _check_layer(ReLU(), x, rng)


def check_upsample(rng):
    return _check_layer(BilinearUpsample(int(rng.choice([2, 4]))), rng.standard_normal((1, 3, 2, 2)), rng)


def check_sigmoid_head(rng):
    """1x1 conv followed by a sigmoid, checked as one unit."""
    c = int(rng.integers(1, 5))
    conv = Conv2d(c, 1, 1, rng=rng).astype(np.float64)
    conv.params["b"] = rng.standard_normal(1)
    sig = Sigmoid()
    x = rng.standard_normal((2, 3, 3, c))
    r = rng.standard_normal((2, 3, 3, 1))

    def f():
        return float(np.sum(sig.forward(conv.forward(x, False), False) * r))

    conv.zero_grad()
    sig.forward(conv.forward(x))
    dx = conv.backward(sig.backward(r))
    errs = [rel_error(dx, numeric_grad(f, x, H))]
    for k, p in conv.params.items():
        errs.append(rel_error(conv.grads[k], numeric_grad(f, p, H)))
    return max(errs)


def check_loss(rng):
    """Gradient of the summed five-mask masked BCE w.r.t. the head logits."""
    from mtmask.net.layers import sigmoid
    from mtmask.raster import MASKS

    n, h, w = 2, 3, 4
    logits = {m: rng.standard_normal((n, h, w)) * 2 for m in MASKS}
    labels = {m: (rng.random((n, h, w)) < 0.5).astype(np.float64) for m in MASKS}
    valid = rng.random((n, h, w)) < 0.8
    valid[:, 0, 0] = True

    def f():
        return multitask_loss({m: sigmoid(v) for m, v in logits.items()}, labels, valid)

    _, g = multitask_loss({m: sigmoid(v) for m, v in logits.items()}, labels, valid, with_grad=True)
    return max(rel_error(g[m], numeric_grad(f, logits[m], H)) for m in MASKS)


def check_model(rng, n_coords=12, h=1e-5):
    """Summed mask loss through the whole network at sampled parameter coordinates.

    A 16x16 input has enough ReLU and pooling kinks that a 1e-3 step
    straddles one now and then, so this end-to-end check uses a smaller step.
    """
    from mtmask.raster import MASKS

    model = MultiTaskModel(ModelSpec(widths=(3, 4, 4), attention=True), seed=int(rng.integers(1 << 30)))
    model.astype(np.float64)
    x = rng.standard_normal((1, 16, 16, 6))
    labels = {m: (rng.random((1, 16, 16)) < 0.4).astype(np.float64) for m in MASKS}
    valid = np.ones((1, 16, 16), dtype=bool)

    def f():
        out = multitask_loss(model.forward(x, train=False), labels, valid)
        model.release()
        return out

    model.zero_grad()
    loss, dl = multitask_loss(model.forward(x), labels, valid, with_grad=True)
    model.backward(dl)
    grads = model.grads()
    errs = []
    for name, p in model.named_parameters():
        flat = p.reshape(-1)
        for i in rng.choice(flat.size, size=min(n_coords, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            errs.append(rel_error(grads[name].reshape(-1)[i], (fp - fm) / (2 * h), floor=1e-6))
    return max(errs)


LAYER_CHECKS = {
    "conv": check_conv,
    "dense": check_dense,
    "attention": check_attention,
    "spatial_attention": check_spatial_attention,
    "maxpool": check_pool,
    "relu": check_relu,
    "upsample": check_upsample,
    "sigmoid_head": check_sigmoid_head,
    "loss": check_loss,
}
