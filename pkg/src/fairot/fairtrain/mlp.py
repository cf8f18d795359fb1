"""Fully connected network with ReLU hidden layers and manual backpropagation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInput, NumericFailure

HEADS = ("sigmoid", "identity")


@dataclass(eq=False)
class MlpModel:
    """Weights ``W[k]`` have shape (fan_in, fan_out); inputs are standardized
    with ``x_mean`` / ``x_scale`` before the first layer."""

    layer_sizes: list
    weights: list
    biases: list
    head: str = "sigmoid"
    x_mean: np.ndarray = None
    x_scale: np.ndarray = None
    feature_names: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.head not in HEADS:
            raise InvalidInput(f"unknown head {self.head!r}")
        sizes = list(self.layer_sizes)
        if len(sizes) < 2 or len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise InvalidInput("layer sizes do not match the parameter lists")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise InvalidInput(f"layer {k} has shape {W.shape}, expected {(sizes[k], sizes[k + 1])}")
        d = sizes[0]
        if self.x_mean is None:
            self.x_mean = np.zeros(d)
        if self.x_scale is None:
            self.x_scale = np.ones(d)
        self.layer_sizes = sizes

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def activations(self):
        return ["relu"] * (len(self.weights) - 1) + [self.head]

    def copy(self):
        return MlpModel(
            list(self.layer_sizes),
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.head,
            self.x_mean.copy(),
            self.x_scale.copy(),
            tuple(self.feature_names),
            dict(self.meta),
        )


def init_mlp(layer_sizes, rng, head="sigmoid") -> MlpModel:
    """He-normal weights and zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if any(s < 1 for s in sizes[1:]) or sizes[0] < 0:
        raise InvalidInput("layer sizes must be positive")
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        Ws.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / max(fan_in, 1)))
        bs.append(np.zeros(fan_out))
    return MlpModel(sizes, Ws, bs, head)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def standardize(model, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.layer_sizes[0]:
        raise InvalidInput(f"expected {model.layer_sizes[0]} input columns, got shape {X.shape}")
    return (X - model.x_mean) / model.x_scale


def forward(model: MlpModel, X, return_cache=False):
    """Outputs of the network for raw inputs X, shape (n,)."""
    h = standardize(model, X)
    cache = [h]
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        if k < last:
            h = np.maximum(z, 0.0)
            cache.append(h)
        else:
            pre = z[:, 0] if z.shape[1] == 1 else z
    out = _sigmoid(pre) if model.head == "sigmoid" else pre
    if not np.all(np.isfinite(out)):
        raise NumericFailure("non-finite network output")
    if return_cache:
        return out, (cache, pre, out)
    return out


def backward(model: MlpModel, cache, d_outputs=None, d_pre=None):
    """Parameter gradients given dL/d(outputs), or dL/d(pre-head logits) via ``d_pre``.

    Returns (grad_W list, grad_b list).
    """
    hs, pre, out = cache
    if (d_outputs is None) == (d_pre is None):
        raise InvalidInput("pass exactly one of d_outputs and d_pre")
    if d_pre is None:
        d_outputs = np.asarray(d_outputs, dtype=float)
        d_pre = d_outputs * out * (1.0 - out) if model.head == "sigmoid" else d_outputs
    g = np.asarray(d_pre, dtype=float).reshape(-1, 1)
    if not np.all(np.isfinite(g)):
        raise NumericFailure("non-finite gradient reaching the network")
    gW = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for k in range(len(model.weights) - 1, -1, -1):
        h = hs[k]
        gW[k] = h.T @ g
        gb[k] = g.sum(axis=0)
        if k > 0:
            g = (g @ model.weights[k].T) * (hs[k] > 0)
    return gW, gb


def get_params(model: MlpModel) -> np.ndarray:
    return np.concatenate([np.concatenate((W.ravel(), b)) for W, b in zip(model.weights, model.biases)])


def set_params(model: MlpModel, theta):
    theta = np.asarray(theta, dtype=float)
    pos = 0
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        model.weights[k] = theta[pos : pos + W.size].reshape(W.shape).copy()
        pos += W.size
        model.biases[k] = theta[pos : pos + b.size].copy()
        pos += b.size
    if pos != theta.size:
        raise InvalidInput("parameter vector has the wrong length")


def flatten_grads(gW, gb) -> np.ndarray:
    return np.concatenate([np.concatenate((W.ravel(), b)) for W, b in zip(gW, gb)])


class Adam:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
