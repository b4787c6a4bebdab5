"""Minimal fully-connected regression network with hand-written gradients.

The first layer consumes a dense feature block plus categorical id blocks;
each categorical block is a one-hot input realized as a row lookup into its
weight table, which keeps wide one-hot encodings out of the matmuls. All
math is float64 and deterministic given the seed.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class ReluNet:
    """ReLU MLP mapping (dense block, categorical ids...) -> scalar.

    Parameters live in `self.params` as a flat list, ordered: first-layer
    dense weights, one table per categorical block, first-layer bias, then
    (weights, bias) per remaining layer. `hidden=()` gives a plain affine
    model over the same inputs.
    """

    def __init__(
        self,
        dense_dim: int,
        cat_sizes: Sequence[int],
        hidden: Sequence[int] = (64, 64, 64),
        seed: int = 0,
        cat_init_scale: float = 0.0,
    ):
        self.dense_dim = int(dense_dim)
        self.cat_sizes = tuple(int(s) for s in cat_sizes)
        self.hidden = tuple(int(h) for h in hidden)
        rng = np.random.default_rng(seed)
        widths = [*self.hidden, 1]
        # Effective fan-in of the structured layer: each one-hot block
        # activates a single unit.
        fan_in = self.dense_dim + len(self.cat_sizes)
        scale = np.sqrt(2.0 / max(fan_in, 1)) if self.hidden else np.sqrt(1.0 / max(fan_in, 1))
        self.w_dense = rng.normal(0.0, scale, size=(self.dense_dim, widths[0]))
        # Zero-init by default: a categorical level never seen in training
        # then contributes nothing, so predictions for it fall back to the
        # dense-feature and remaining-block signal instead of init noise.
        self.w_cats = [
            rng.normal(0.0, scale, size=(v, widths[0])) * cat_init_scale
            for v in self.cat_sizes
        ]
        self.b_first = np.zeros(widths[0])
        self.layers = []
        for i in range(1, len(widths)):
            f = widths[i - 1]
            s = np.sqrt(2.0 / f) if i < len(widths) - 1 else np.sqrt(1.0 / f)
            self.layers.append((rng.normal(0.0, s, size=(f, widths[i])), np.zeros(widths[i])))

    @property
    def params(self) -> list:
        out = [self.w_dense, *self.w_cats, self.b_first]
        for w, b in self.layers:
            out.extend((w, b))
        return out

    def _forward(self, dense, cats):
        z = dense @ self.w_dense + self.b_first
        for table, ids in zip(self.w_cats, cats):
            z = z + table[ids]
        zs = [z]
        for w, b in self.layers:
            z = np.maximum(zs[-1], 0.0) @ w + b
            zs.append(z)
        return zs

    def predict(self, dense, cats) -> np.ndarray:
        return self._forward(dense, cats)[-1][:, 0]

    def _backward(self, dense, cats, zs, g_out):
        """Parameter gradients given d(loss)/d(output); returns the list
        aligned with `self.params`."""
        gz = g_out[:, None]
        layer_grads = []
        for (w, _b), z_prev in zip(reversed(self.layers), reversed(zs[:-1])):
            a_prev = np.maximum(z_prev, 0.0)
            layer_grads.append((a_prev.T @ gz, gz.sum(axis=0)))
            gz = (gz @ w.T) * (z_prev > 0)
        g_dense = dense.T @ gz
        g_cats = []
        for table, ids in zip(self.w_cats, cats):
            g = np.zeros_like(table)
            np.add.at(g, ids, gz)
            g_cats.append(g)
        grads = [g_dense, *g_cats, gz.sum(axis=0)]
        for gw, gb in reversed(layer_grads):
            grads.extend((gw, gb))
        return grads

    def loss_and_grads(self, dense, cats, y, loss: str = "squared"):
        """Mean loss over the batch and gradients for every parameter."""
        zs = self._forward(dense, cats)
        out = zs[-1][:, 0]
        n = out.shape[0]
        if loss == "squared":
            diff = out - y
            value = float(np.mean(diff * diff))
            g_out = 2.0 * diff / n
        elif loss == "cross_entropy":
            value = float(np.mean(y * _softplus(-out) + (1.0 - y) * _softplus(out)))
            g_out = (_sigmoid(out) - y) / n
        else:
            raise ValueError(f"unknown loss {loss!r}")
        return value, self._backward(dense, cats, zs, g_out)

    def pairwise_loss_and_grads(self, dense_a, cats_a, dense_b, cats_b, target):
        """Squared loss on prediction differences: mean((f(a) - f(b) - t)^2)."""
        zs_a = self._forward(dense_a, cats_a)
        zs_b = self._forward(dense_b, cats_b)
        diff = zs_a[-1][:, 0] - zs_b[-1][:, 0] - target
        n = diff.shape[0]
        value = float(np.mean(diff * diff))
        g = 2.0 * diff / n
        grads_a = self._backward(dense_a, cats_a, zs_a, g)
        grads_b = self._backward(dense_b, cats_b, zs_b, -g)
        return value, [ga + gb for ga, gb in zip(grads_a, grads_b)]


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        correction = np.sqrt(1.0 - self.beta2**self.t) / (1.0 - self.beta1**self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * correction * m / (np.sqrt(v) + self.eps)


def make_optimizer(name: str, lr: float):
    if name == "adam":
        return Adam(lr)
    if name == "sgd":
        return Sgd(lr)
    raise ValueError(f"unknown optimizer {name!r}")


def gradient_check(net: ReluNet, eval_fn, step: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    `eval_fn()` must return (loss, grads) for a fixed batch. Parameters are
    perturbed in place one coordinate at a time, so keep the net small.
    """
    _, grads = eval_fn()
    worst = 0.0
    for p, g in zip(net.params, grads):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + step
            up, _ = eval_fn()
            flat_p[i] = orig - step
            down, _ = eval_fn()
            flat_p[i] = orig
            fd = (up - down) / (2.0 * step)
            denom = max(abs(fd), abs(flat_g[i]), 1e-6)
            worst = max(worst, abs(fd - flat_g[i]) / denom)
    return worst
