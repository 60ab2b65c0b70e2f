"""Adam with lazy (row-sparse) embedding updates, and the training step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nets import Recommender, bce_loss, sigmoid

CLIP_NORM = 5.0


@dataclass
class AdamState:
    lr: float = 0.001
    l2: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: Recommender, lr: float = 0.001, l2: float = 0.0) -> AdamState:
        state = cls(lr=lr, l2=l2)
        for name, arr in model.params.items():
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        return state

    def apply(self, params: dict, grads: dict) -> None:
        """One update.  Embedding entries of ``grads`` are ``(rows, row_grads)``
        and only those rows move (and only their moments decay)."""
        self.step += 1
        bc1 = 1.0 - self.beta1 ** self.step
        bc2 = 1.0 - self.beta2 ** self.step
        for name, g in grads.items():
            theta, m, v = params[name], self.m[name], self.v[name]
            if isinstance(g, tuple):
                rows, g = g
                mr = self.beta1 * m[rows] + (1.0 - self.beta1) * g
                vr = self.beta2 * v[rows] + (1.0 - self.beta2) * g * g
                m[rows], v[rows] = mr, vr
                theta[rows] -= self.lr * (mr / bc1) / (np.sqrt(vr / bc2) + self.eps)
            else:
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                theta -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def loss_and_grads(model: Recommender, users, items, labels, l2: float = 0.0):
    """Mean BCE plus (l2/2)·‖θ‖² over dense parameters and touched embedding rows.

    Returns ``(objective, mean_bce, grads)``.  The data gradient uses ŷ − y
    directly so saturated-but-wrong predictions still get a signal.
    """
    labels = np.asarray(labels, dtype=float)
    n = len(labels)
    z, cache = model.forward(users, items)
    yhat = sigmoid(z)
    mean_bce = float(np.mean(bce_loss(labels, yhat)))
    grads = model.backward(cache, (yhat - labels) / n)
    penalty = 0.0
    if l2 > 0:
        for name, g in grads.items():
            theta = model.params[name]
            if isinstance(g, tuple):
                rows, rg = g
                sub = theta[rows]
                grads[name] = (rows, rg + l2 * sub)
                penalty += float(np.sum(sub * sub))
            else:
                grads[name] = g + l2 * theta
                penalty += float(np.sum(theta * theta))
    return mean_bce + 0.5 * l2 * penalty, mean_bce, grads


def grad_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        if isinstance(g, tuple):
            g = g[1]
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


@dataclass(frozen=True)
class TrainStats:
    loss: float  # mean BCE before the step
    objective: float
    grad_norm: float
    clipped: bool
    size: int


def train_step(model: Recommender, adam: AdamState, batch) -> TrainStats:
    """One Adam step on the mean BCE (+ L2) of a labelled batch, in place."""
    if len(batch) == 0:
        raise ValueError("training batch is empty")
    objective, loss, grads = loss_and_grads(model, batch.users, batch.items, batch.labels, adam.l2)
    norm = grad_norm(grads)
    if not np.isfinite(norm):
        snapshot = {k: float(np.linalg.norm(p)) for k, p in model.params.items()}
        raise FloatingPointError(f"non-finite gradient in {model.kind}; parameter norms: {snapshot}")
    clipped = norm > CLIP_NORM
    if clipped:
        scale = CLIP_NORM / norm
        grads = {k: (g[0], g[1] * scale) if isinstance(g, tuple) else g * scale
                 for k, g in grads.items()}
    adam.apply(model.params, grads)
    return TrainStats(loss, objective, norm, clipped, len(batch))
