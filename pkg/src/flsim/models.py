"""Desk-scale trainable bodies operating on flat float64 parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from flsim.errors import ConfigError


def softmax_xent(logits, y):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    norm = ez.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = float(np.sum(np.log(norm[:, 0]) - z[rows, y])) / n
    dz = ez / norm
    dz[rows, y] -= 1.0
    dz /= n
    return loss, dz


@dataclass(frozen=True)
class LogisticBody:
    """Multinomial logistic regression. Layout: W (features x classes) row-major, then b."""

    num_features: int
    num_classes: int

    @property
    def n_params(self) -> int:
        return self.num_features * self.num_classes + self.num_classes

    def init_params(self, rng=None) -> np.ndarray:
        return np.zeros(self.n_params)

    def _unpack(self, p):
        k = self.num_features * self.num_classes
        return p[:k].reshape(self.num_features, self.num_classes), p[k:]

    def logits(self, params, X):
        W, b = self._unpack(params)
        return X @ W + b

    def loss_and_grad(self, params, X, y):
        W, b = self._unpack(params)
        loss, dz = softmax_xent(X @ W + b, y)
        grad = np.empty_like(params)
        k = W.size
        np.matmul(X.T, dz, out=grad[:k].reshape(W.shape))
        grad[k:] = dz.sum(axis=0)
        return loss, grad

    def loss(self, params, X, y):
        return softmax_xent(self.logits(params, X), y)[0]


@dataclass(frozen=True)
class MlpBody:
    """Fully connected tanh network; each layer stores W (in x out) then b."""

    num_features: int
    hidden: tuple[int, ...]
    num_classes: int

    def __post_init__(self):
        if len(self.hidden) == 0:
            raise ConfigError("MLP needs at least one hidden layer")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden layer widths must be >= 1")

    @property
    def shapes(self):
        dims = [self.num_features, *self.hidden, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.shapes)

    def init_params(self, rng=None) -> np.ndarray:
        rng = np.random.default_rng(0) if rng is None else rng
        parts = []
        for i, o in self.shapes:
            parts.append(rng.normal(0.0, 1.0 / np.sqrt(i), size=i * o))
            parts.append(np.zeros(o))
        return np.concatenate(parts)

    def _unpack(self, p):
        layers, off = [], 0
        for i, o in self.shapes:
            W = p[off:off + i * o].reshape(i, o)
            off += i * o
            layers.append((W, p[off:off + o]))
            off += o
        return layers

    def _forward(self, params, X):
        acts = [X]
        layers = self._unpack(params)
        for W, b in layers[:-1]:
            acts.append(np.tanh(acts[-1] @ W + b))
        W, b = layers[-1]
        return layers, acts, acts[-1] @ W + b

    def logits(self, params, X):
        return self._forward(params, X)[2]

    def loss_and_grad(self, params, X, y):
        layers, acts, z = self._forward(params, X)
        loss, dz = softmax_xent(z, y)
        grads = []
        for li in range(len(layers) - 1, -1, -1):
            W, _ = layers[li]
            a = acts[li]
            grads.append(dz.sum(axis=0))
            grads.append((a.T @ dz).ravel())
            if li > 0:
                dz = (dz @ W.T) * (1.0 - a ** 2)
        return loss, np.concatenate(grads[::-1])

    def loss(self, params, X, y):
        return softmax_xent(self.logits(params, X), y)[0]
