"""Single-hidden-layer sigmoid networks trained with ADAM.

Parameters live in one flat float64 vector so that an ADAM update is a
handful of vectorized operations; ``W1``, ``b1``, ``W2`` and ``b2`` are
views into it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import expit

__all__ = [
    "LossKind",
    "Mlp",
    "AdamState",
    "sigmoid",
    "mlp_forward",
    "mlp_loss",
    "mlp_loss_grad",
    "mlp_backward",
    "forward_with_hidden",
    "logit_grad",
    "adam_step",
    "save_snapshot",
    "load_snapshot",
]


class LossKind(str, Enum):
    BCE = "binary-cross-entropy"
    MSE = "mean-squared-error"


def sigmoid(z):
    return expit(np.asarray(z, dtype=np.float64))


def _softplus(z):
    return np.logaddexp(0.0, z)


class Mlp:
    """``sigmoid(W2 @ sigmoid(W1 @ x + b1) + b2)``."""

    def __init__(self, input_dim: int, hidden_dim: int, output_dim: int,
                 theta: np.ndarray | None = None, seed: int | None = None):
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        self.output_dim = int(output_dim)
        self.seed = seed
        n = self.n_params(self.input_dim, self.hidden_dim, self.output_dim)
        if theta is None:
            theta = np.zeros(n)
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (n,):
            raise ValueError(f"expected {n} parameters, got shape {theta.shape}")
        self.theta = theta.copy()
        self._bind_views()

    @staticmethod
    def n_params(input_dim, hidden_dim, output_dim):
        return hidden_dim * input_dim + hidden_dim + output_dim * hidden_dim + output_dim

    def _bind_views(self):
        i, h, o = self.input_dim, self.hidden_dim, self.output_dim
        t = self.theta
        a = h * i
        self.W1 = t[:a].reshape(h, i)
        self.b1 = t[a:a + h]
        b = a + h
        self.W2 = t[b:b + o * h].reshape(o, h)
        self.b2 = t[b + o * h:]

    @classmethod
    def init(cls, input_dim, hidden_dim, output_dim, rng=None, seed=None):
        """Glorot-uniform weights, zero biases."""
        if rng is None:
            rng = np.random.default_rng(seed)
        model = cls(input_dim, hidden_dim, output_dim, seed=seed)
        lim1 = np.sqrt(6.0 / (input_dim + hidden_dim))
        lim2 = np.sqrt(6.0 / (hidden_dim + output_dim))
        model.W1[...] = rng.uniform(-lim1, lim1, size=model.W1.shape)
        model.W2[...] = rng.uniform(-lim2, lim2, size=model.W2.shape)
        return model

    def copy(self):
        return Mlp(self.input_dim, self.hidden_dim, self.output_dim, self.theta, self.seed)

    def __call__(self, x):
        return mlp_forward(self, x)

    def __repr__(self):
        return f"Mlp({self.input_dim}-{self.hidden_dim}-{self.output_dim})"


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: Mlp, **hyper):
        return cls(np.zeros_like(model.theta), np.zeros_like(model.theta), **hyper)


def _as_batch(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"input has shape {x.shape}, model expects last dim {model.input_dim}")
    return X, single


def forward_with_hidden(model: Mlp, X):
    """Hidden activations and output logits for a batch."""
    H = sigmoid(X @ model.W1.T + model.b1)
    Z = H @ model.W2.T + model.b2
    return H, Z


def mlp_forward(model: Mlp, x):
    """Forward pass for one input vector or a batch of rows."""
    X, single = _as_batch(model, x)
    _, Z = forward_with_hidden(model, X)
    Y = sigmoid(Z)
    return Y[0] if single else Y


def _check_batch(model, X, T, W):
    X, _ = _as_batch(model, X)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    T = np.asarray(T, dtype=np.float64).reshape(X.shape[0], model.output_dim)
    if np.any(T < 0) or np.any(T > 1):
        raise ValueError("targets must lie in [0, 1]")
    if W is None:
        W = np.ones_like(T)
    else:
        W = np.broadcast_to(np.asarray(W, dtype=np.float64), T.shape)
    return X, T, W


def mlp_loss(model: Mlp, X, T, loss: LossKind, W=None) -> float:
    """Batch-mean of the per-example weighted sum of coordinate losses."""
    X, T, W = _check_batch(model, X, T, W)
    _, Z = forward_with_hidden(model, X)
    if LossKind(loss) is LossKind.BCE:
        # -[t log s(z) + (1-t) log(1-s(z))] written on the logit
        L = _softplus(Z) - T * Z
    else:
        L = (sigmoid(Z) - T) ** 2
    return float(np.sum(W * L) / X.shape[0])


def mlp_backward(model: Mlp, X, H, dZ) -> np.ndarray:
    """Flat parameter gradient given the gradient w.r.t. output logits."""
    dW2 = dZ.T @ H
    db2 = dZ.sum(axis=0)
    dA = (dZ @ model.W2) * H * (1.0 - H)
    dW1 = dA.T @ X
    db1 = dA.sum(axis=0)
    return np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])


def logit_grad(Y, T, loss: LossKind):
    """Per-element derivative of the loss w.r.t. the output logit, given outputs ``Y``."""
    if loss is LossKind.BCE:
        return Y - T
    return 2.0 * (Y - T) * Y * (1.0 - Y)


def mlp_loss_grad(model: Mlp, X, T, loss: LossKind, W=None) -> np.ndarray:
    """Exact gradient of :func:`mlp_loss` as a flat vector aligned with ``model.theta``.

    ``W`` holds per-coordinate weights (same shape as ``T``); a zero weight
    masks that output coordinate out of the loss.
    """
    X, T, W = _check_batch(model, X, T, W)
    H, Z = forward_with_hidden(model, X)
    dZ = logit_grad(sigmoid(Z), T, LossKind(loss))
    dZ *= W / X.shape[0]
    return mlp_backward(model, X, H, dZ)


def adam_step(model: Mlp, grads: np.ndarray, state: AdamState):
    """Bias-corrected ADAM update, applied in place; returns ``(model, state)``."""
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != model.theta.shape:
        raise ValueError(f"gradient shape {g.shape} != parameter shape {model.theta.shape}")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    model.theta -= state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)
    return model, state


def snapshot_dict(model: Mlp, state: AdamState | None = None) -> dict:
    return {
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "output_dim": model.output_dim,
        "seed": model.seed,
        "step": 0 if state is None else state.t,
        "params": model.theta.tolist(),
    }


def model_from_dict(d: dict) -> Mlp:
    return Mlp(d["input_dim"], d["hidden_dim"], d["output_dim"],
               theta=np.asarray(d["params"], dtype=np.float64), seed=d.get("seed"))


def save_snapshot(path, model: Mlp, state: AdamState | None = None):
    Path(path).write_text(json.dumps(snapshot_dict(model, state)))


def load_snapshot(path) -> Mlp:
    return model_from_dict(json.loads(Path(path).read_text()))
