"""Gaussian-activation feedforward networks and residual network arrays.

Each hidden unit computes ``exp(-(w . x)**2)`` for its weight row ``w``;
a constant 1 is appended to the input so the first layer can shift the
Gaussians. The output layer is linear with its own bias. An array of
networks predicts the sum of its members, each member having been fit to
what the previous members left unexplained.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

HIDDEN_LAYERS = 4
WIDTH_FACTOR = 4
ARRAY_SIZE = 2
PATIENCE = 20


class NumericError(FloatingPointError):
    """Training diverged (non-finite loss)."""


class KindMismatch(ValueError):
    pass


def gaussian_layer_forward(x, W) -> np.ndarray:
    """``exp(-(W_a . x)**2)`` for each row ``W_a``; batches along the first axis of ``x``."""
    z = np.asarray(x) @ np.asarray(W).T
    return np.exp(-z * z)


@dataclass
class GaussianNet:
    hidden: list[np.ndarray]
    w_out: np.ndarray
    b_out: float = 0.0

    @classmethod
    def create(cls, n_features: int, seed: int = 0, hidden_layers: int = HIDDEN_LAYERS,
               width: int | None = None) -> "GaussianNet":
        """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialization."""
        rng = np.random.default_rng(seed)
        width = width or WIDTH_FACTOR * n_features
        sizes = [n_features + 1] + [width] * hidden_layers
        hidden = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = 1.0 / math.sqrt(fan_in)
            hidden.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        lim = 1.0 / math.sqrt(sizes[-1])
        return cls(hidden, rng.uniform(-lim, lim, size=sizes[-1]), 0.0)

    @property
    def n_features(self) -> int:
        first = self.hidden[0] if self.hidden else self.w_out[None, :]
        return first.shape[1] - 1

    @property
    def layer_sizes(self) -> list[int]:
        return [self.n_features + 1] + [w.shape[0] for w in self.hidden] + [1]

    def copy(self) -> "GaussianNet":
        return GaussianNet([w.copy() for w in self.hidden], self.w_out.copy(), float(self.b_out))

    def params(self) -> list[np.ndarray]:
        return [*self.hidden, self.w_out]

    def _forward(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a = np.hstack([X, np.ones((len(X), 1))])
        acts, pre = [a], []
        for W in self.hidden:
            z = a @ W.T
            a = np.exp(-z * z)
            pre.append(z)
            acts.append(a)
        return a @ self.w_out + self.b_out, acts, pre

    def predict(self, X) -> np.ndarray:
        return self._forward(X)[0]

    def loss_and_grad(self, X, y):
        """Mean squared error and its gradient with respect to every weight.

        Returns ``(loss, hidden_grads, w_out_grad, b_out_grad)``.
        """
        y = np.asarray(y, dtype=float).ravel()
        out, acts, pre = self._forward(X)
        resid = out - y
        loss = float(np.mean(resid * resid))
        dout = 2.0 * resid / len(y)
        g_wout = acts[-1].T @ dout
        g_b = float(dout.sum())
        da = np.outer(dout, self.w_out)
        grads = [None] * len(self.hidden)
        for layer in range(len(self.hidden) - 1, -1, -1):
            z, a = pre[layer], acts[layer + 1]
            dz = da * (-2.0 * z * a)
            grads[layer] = dz.T @ acts[layer]
            if layer:
                da = dz @ self.hidden[layer]
        return loss, grads, g_wout, g_b

    def loss(self, X, y) -> float:
        r = self.predict(X) - np.asarray(y, dtype=float).ravel()
        return float(np.mean(r * r))


@dataclass
class NNArray:
    members: list[GaussianNet]
    kind: str
    n_features: int
    history: list[str] = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        """Sum of member predictions for a batch of descriptor rows."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"{self.kind}: expected {self.n_features} features, got {X.shape[1]}")
        return np.sum([m.predict(X) for m in self.members], axis=0)

    def copy(self) -> "NNArray":
        return NNArray([m.copy() for m in self.members], self.kind, self.n_features, list(self.history))


def array_predict(arr: NNArray, v) -> float:
    """Delta-energy prediction for one descriptor (kcal/mol)."""
    kind = getattr(v, "kind", None)
    values = getattr(v, "values", v)
    if kind is not None and kind != arr.kind:
        raise KindMismatch(f"descriptor kind {kind} != model kind {arr.kind}")
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or len(values) != arr.n_features:
        raise ValueError(f"{arr.kind}: expected {arr.n_features} features, got {values.shape}")
    return float(arr.predict(values[None, :])[0])


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    optimizer: str = "adam"
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 2000
    patience: int = PATIENCE
    min_delta: float = 1e-7
    lr_decay: float = 0.5
    plateau: int = 5
    min_lr: float = 1e-7
    finetune_lr_scale: float = 0.1
    seed: int = 0


@dataclass
class TrainResult:
    net: GaussianNet
    losses: list[float]
    best_epoch: int
    epochs: int
    stopped_early: bool


class _Optimizer:
    """Per-parameter update rule; ``reset`` clears state after a rollback."""

    def __init__(self, kind: str, momentum: float, beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind, self.beta1, self.beta2, self.eps = kind, momentum, beta2, eps

    def reset(self, params, keep_scale: bool = False):
        """Clear the momentum; ``keep_scale`` retains Adam's second-moment estimate."""
        self.m = [np.zeros_like(p) for p in params]
        if not keep_scale:
            self.v = [np.zeros_like(p) for p in params]
            self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if self.kind == "sgd":
                m *= b1
                m -= lr * g
                p += m
                continue
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / (1 - b1**self.t)) / (np.sqrt(v / (1 - b2**self.t)) + self.eps)


def train_network(net: GaussianNet, X, y, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Minibatch training with best-so-far tracking and early stopping.

    The full-data MSE is evaluated after every epoch and the best weights
    are kept, so ``losses`` (the accepted trace) never increases. The step
    size halves, restarting from the best weights, after every ``plateau``
    epochs without improvement and after any non-finite loss. Training
    ends once the best loss has not improved by ``min_delta`` for
    ``patience`` consecutive epochs.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if not len(y):
        raise ValueError("empty training set")
    if len(X) != len(y):
        raise ValueError("descriptor and label counts differ")
    rng = np.random.default_rng(cfg.seed)
    best = net.copy()
    best_loss = best.loss(X, y)
    if not np.isfinite(best_loss):
        raise NumericError(f"non-finite initial loss {best_loss}")
    losses = [best_loss]
    lr = cfg.learning_rate
    work = net.copy()
    bias = np.array([work.b_out])
    params = [*work.params(), bias]
    opt = _Optimizer(cfg.optimizer, cfg.momentum)
    opt.reset(params)
    stale = 0
    best_epoch = 0
    epoch = 0
    n = len(y)
    bs = max(1, min(cfg.batch_size, n))
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                work.b_out = float(bias[0])
                _, g_hidden, g_out, g_b = work.loss_and_grad(X[idx], y[idx])
                opt.step(params, [*g_hidden, g_out, np.array([g_b])], lr)
            work.b_out = float(bias[0])
            cur = work.loss(X, y)
        if not np.isfinite(cur):
            if lr <= cfg.min_lr:
                raise NumericError(f"non-finite loss at epoch {epoch} (lr={lr:g})")
            cur = math.inf
        if cur < best_loss:
            improved = best_loss - cur >= cfg.min_delta
            best, best_loss = work.copy(), cur
            losses.append(cur)
            if improved:
                stale, best_epoch = 0, epoch
            else:
                stale += 1
        else:
            stale += 1
        if not np.isfinite(cur) or (stale and stale % cfg.plateau == 0):
            # restart from the best weights with a smaller step
            work = best.copy()
            bias = np.array([work.b_out])
            params = [*work.params(), bias]
            opt.reset(params, keep_scale=np.isfinite(cur))
            lr = max(lr * cfg.lr_decay, cfg.min_lr)
        if stale >= cfg.patience:
            return TrainResult(best, losses, best_epoch, epoch, True)
    return TrainResult(best, losses, best_epoch, epoch, False)


def train_array(X, y, cfg: TrainConfig = TrainConfig(), kind: str = "", init: NNArray | None = None,
                n_members: int = ARRAY_SIZE, hidden_layers: int = HIDDEN_LAYERS) -> NNArray:
    """Fit members in sequence, each on the residual left by the previous ones.

    With ``init`` the members are warm-started from an existing array.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if not len(y):
        raise ValueError("empty training set")
    d = X.shape[1]
    if init is not None:
        if kind and init.kind != kind:
            raise KindMismatch(f"model kind {init.kind} != data kind {kind}")
        if init.n_features != d:
            raise ValueError(f"{init.kind}: model has {init.n_features} features, data {d}")
        kind = init.kind
        n_members = len(init.members)
    members = []
    resid = y.copy()
    for m in range(n_members):
        sub = replace(cfg, seed=cfg.seed * 1009 + m)
        if init is not None:
            start = init.members[m].copy()
        else:
            start = GaussianNet.create(d, seed=sub.seed, hidden_layers=hidden_layers)
            if m == 0:
                start.b_out = float(np.mean(resid))
        res = train_network(start, X, resid, sub)
        log.debug("%s member %d: %d epochs, loss %.3g", kind, m, res.epochs, res.losses[-1])
        members.append(res.net)
        resid = resid - res.net.predict(X)
    return NNArray(members, kind, d)


def transfer_slice(arr: NNArray, slice_X, slice_y, cumulative_X, cumulative_y,
                   cfg: TrainConfig = TrainConfig(), kind: str | None = None, label: str = "") -> NNArray:
    """Warm-started update: train on the new slice, then fine-tune on everything seen so far.

    The fine-tuning phase runs at ``cfg.finetune_lr_scale`` times the slice learning rate.
    """
    if kind is not None and kind != arr.kind:
        raise KindMismatch(f"slice kind {kind} != model kind {arr.kind}")
    out = train_array(slice_X, slice_y, cfg, init=arr)
    fine = replace(cfg, learning_rate=cfg.learning_rate * cfg.finetune_lr_scale, seed=cfg.seed + 7919)
    out = train_array(cumulative_X, cumulative_y, fine, init=out)
    out.history = list(arr.history) + ([label] if label else [])
    return out


def _propagate(net: GaussianNet, acts, pre, layer: int, da: np.ndarray) -> np.ndarray:
    """Output change caused by activation change ``da`` (batch, samples, width) after hidden ``layer``."""
    for nxt in range(layer + 1, len(net.hidden)):
        dz = da @ net.hidden[nxt].T
        z = pre[nxt]
        da = acts[nxt + 1] * np.expm1(-(2 * z + dz) * dz)
    return da @ net.w_out


def _output_shifts(net: GaussianNet, X, eps: float) -> list[np.ndarray]:
    """``out(w + eps * e_k) - out(w)`` for every weight ``k``, one array per parameter.

    The change is carried forward as a difference (``expm1`` at each Gaussian
    layer) instead of subtracting two full forward passes, so it keeps full
    relative precision even when the change is tiny.
    """
    _, acts, pre = net._forward(X)
    n = len(acts[0])
    out = []
    for l, W in enumerate(net.hidden):
        m, k = W.shape
        # unit i of layer l sees dz = eps * a_j for weight (i, j)
        dz = eps * acts[l][None, None, :, :].transpose(0, 1, 3, 2)  # (1, 1, k, n)
        dz = np.broadcast_to(dz, (m, 1, k, n))[:, 0]                 # (m, k, n)
        z = pre[l].T[:, None, :]                                      # (m, 1, n)
        a = acts[l + 1].T[:, None, :]
        da_i = a * np.expm1(-(2 * z + dz) * dz)                       # (m, k, n)
        rows = np.zeros((m, k, n, m))
        rows[np.arange(m), :, :, np.arange(m)] = da_i
        shift = _propagate(net, acts, pre, l, rows.reshape(m * k, n, m))
        out.append(shift.reshape(m, k, n))
    out.append((eps * acts[-1]).T)                                    # w_out: (width, n)
    out.append(np.full((1, n), eps))                                  # b_out
    return out


def gradient_check(net: GaussianNet, X, y, h: float = 1e-5, floor: float = 1e-8) -> float:
    """Largest relative gap between backprop and central-difference gradients.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``. The numeric
    gradient is ``(L(w + h) - L(w - h)) / 2h`` with the loss difference
    formed from output differences, so round-off stays far below ``floor``.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError("h must lie in [1e-6, 1e-4]")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    _, g_hidden, g_out, g_b = net.loss_and_grad(X, y)
    r0 = net.predict(X) - y
    worst = 0.0
    grads = [*g_hidden, g_out, np.array([g_b])]
    for g, up, down in zip(grads, _output_shifts(net, X, h), _output_shifts(net, X, -h)):
        # L+ - L- = mean((d+ - d-) * (2 r0 + d+ + d-))
        num = np.mean((up - down) * (2 * r0 + up + down), axis=-1) / (2 * h)
        num = num.reshape(g.shape)
        rel = np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), floor)
        worst = max(worst, float(rel.max()))
    return worst


def member_mae(arr: NNArray, X, y) -> float:
    return float(np.mean(np.abs(arr.predict(X) - np.asarray(y).ravel())))


def stack(rows: Sequence[np.ndarray]) -> np.ndarray:
    return np.vstack([np.asarray(r, dtype=float) for r in rows])
