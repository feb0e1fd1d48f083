"""Small numpy multilayer perceptrons with hand-written backprop, AdamW and
warmup/cosine learning-rate schedules.

Matrices act on row vectors: a layer computes ``h @ W + b`` with ``W`` of
shape ``(d_in, d_out)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTIVATIONS = ("swish", "relu", "identity")


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"training diverged at step {step} (loss={loss})")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activate(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "swish":
        return x * _sigmoid(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def activate_grad(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "swish":
        s = _sigmoid(x)
        return s + x * s * (1.0 - s)
    if kind == "relu":
        return (x > 0).astype(x.dtype)
    if kind == "identity":
        return np.ones_like(x)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class NeuralNet:
    """Feed-forward net; the activation follows every layer but the last."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "swish"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("need at least one layer and one bias per layer")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {k}: weight {W.shape} and bias {b.shape} disagree")
            if k and W.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError(f"layer {k} expects {W.shape[0]} inputs, previous layer gives {self.weights[k - 1].shape[1]}")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "NeuralNet":
        return NeuralNet([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.activation)

    def __call__(self, inputs) -> np.ndarray:
        return forward(self, inputs)

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "activation": self.activation,
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "NeuralNet":
        weights = [np.asarray(layer["W"], dtype=float).reshape(-1, len(layer["b"])) for layer in obj["layers"]]
        biases = [np.asarray(layer["b"], dtype=float) for layer in obj["layers"]]
        net = cls(weights, biases, obj["activation"])
        if net.dims != list(obj["dims"]):
            raise ValueError(f"layer shapes {net.dims} do not match declared dims {obj['dims']}")
        return net


def orthogonalize(W: np.ndarray) -> np.ndarray:
    """Orthonormal basis with the same span as ``W``: orthonormal columns for
    tall matrices, orthonormal rows for wide ones."""
    if W.shape[0] >= W.shape[1]:
        Q, _ = np.linalg.qr(W)
        return Q
    Q, _ = np.linalg.qr(W.T)
    return Q.T


def init_net(
    dims: Sequence[int],
    activation: str = "swish",
    orthogonalize_weights: bool = False,
    rng=None,
    mode: str = "trainable",
) -> NeuralNet:
    """Random net with layer sizes ``dims``.

    ``mode="ground_truth"`` draws weights i.i.d. uniform[0, 1]; ``"trainable"``
    draws from U(-sqrt(3/fan_in), sqrt(3/fan_in)). Biases start at zero.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"invalid layer sizes {dims}")
    if mode not in ("trainable", "ground_truth"):
        raise ValueError(f"unknown init mode {mode!r}")
    rng = np.random.default_rng(rng)
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        if mode == "ground_truth":
            W = rng.uniform(0.0, 1.0, size=(d_in, d_out))
        else:
            bound = math.sqrt(3.0 / d_in)
            W = rng.uniform(-bound, bound, size=(d_in, d_out))
        if orthogonalize_weights:
            W = orthogonalize(W)
        weights.append(W)
        biases.append(np.zeros(d_out))
    return NeuralNet(weights, biases, activation)


def _check_inputs(net: NeuralNet, inputs) -> np.ndarray:
    X = np.asarray(inputs, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.in_dim:
        raise ValueError(f"net expects (n, {net.in_dim}) inputs, got {X.shape}")
    return X


def forward(net: NeuralNet, inputs) -> np.ndarray:
    h = _check_inputs(net, inputs)
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ W + b
        if k < last:
            h = activate(h, net.activation)
    return h


def _forward_cached(net: NeuralNet, X: np.ndarray):
    acts = [X]
    pre = []
    h = X
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W + b
        pre.append(z)
        h = activate(z, net.activation) if k < last else z
        acts.append(h)
    return h, (acts, pre)


def _backward(net: NeuralNet, cache, grad_out: np.ndarray):
    """Gradients of a scalar loss w.r.t. every parameter and the input, given
    the loss gradient ``grad_out`` w.r.t. the net's output."""
    acts, pre = cache
    grads = [None] * (2 * len(net.weights))
    g = grad_out
    for k in range(len(net.weights) - 1, -1, -1):
        if k < len(net.weights) - 1:
            g = g * activate_grad(pre[k], net.activation)
        grads[2 * k] = acts[k].T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ net.weights[k].T
    return grads, g


def mse(pred: np.ndarray, targets: np.ndarray) -> float:
    """Mean over samples of the squared error summed over output dimensions."""
    return float(np.sum((pred - targets) ** 2) / pred.shape[0])


def grad(net: NeuralNet, inputs, targets) -> list[np.ndarray]:
    """Exact gradient of :func:`mse` w.r.t. ``net.params()`` order (W0, b0, W1, ...)."""
    X = _check_inputs(net, inputs)
    Y = np.asarray(targets, dtype=float)
    pred, cache = _forward_cached(net, X)
    if pred.shape != Y.shape:
        raise ValueError(f"targets have shape {Y.shape}, net produces {pred.shape}")
    grads, _ = _backward(net, cache, 2.0 * (pred - Y) / X.shape[0])
    return grads


def jacobian(net: NeuralNet, x) -> np.ndarray:
    """Jacobian d out / d in at a single point, shape ``(out_dim, in_dim)``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    _, (acts, pre) = _forward_cached(net, _check_inputs(net, x))
    J = np.eye(net.in_dim)
    last = len(net.weights) - 1
    for k, W in enumerate(net.weights):
        J = J @ W
        if k < last:
            J = J * activate_grad(pre[k][0], net.activation)
    return J.T


# ---------------------------------------------------------------------------
# schedules and optimizer


@dataclass(frozen=True)
class CosineWarmup:
    max_lr: float = 1e-5
    min_lr: float = 1e-7
    warmup_steps: int = 1000
    decay_steps: int = 10000

    def __post_init__(self):
        if not 0 < self.min_lr <= self.max_lr:
            raise ValueError(f"need 0 < min_lr <= max_lr, got {self.min_lr}, {self.max_lr}")
        if self.warmup_steps < 0 or self.decay_steps < 0:
            raise ValueError("warmup_steps and decay_steps must be >= 0")

    def __call__(self, step: int) -> float:
        return cosine_warmup_lr(step, self)


@dataclass(frozen=True)
class Constant:
    lr: float = 5e-6

    def __call__(self, step: int) -> float:
        return self.lr


def cosine_warmup_lr(step: int, schedule: CosineWarmup) -> float:
    """Linear ramp from 0 to ``max_lr``, cosine decay to ``min_lr``, then flat."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step < schedule.warmup_steps:
        return schedule.max_lr * step / schedule.warmup_steps
    t = step - schedule.warmup_steps
    if t >= schedule.decay_steps:
        return schedule.min_lr
    w = 0.5 * (1.0 + math.cos(math.pi * t / schedule.decay_steps))
    return w * schedule.max_lr + (1.0 - w) * schedule.min_lr


@dataclass(frozen=True)
class AdamW:
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


class _AdamWState:
    def __init__(self, opt: AdamW, params: list[np.ndarray]):
        self.opt = opt
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        """In-place parameter update."""
        o = self.opt
        self.t += 1
        c1 = 1.0 - o.b1**self.t
        c2 = 1.0 - o.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= o.b1
            m += (1.0 - o.b1) * g
            v *= o.b2
            v += (1.0 - o.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + o.eps)
            if o.weight_decay:
                update = update + o.weight_decay * p
            p -= lr * update


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 1024
    optimizer: AdamW = field(default_factory=AdamW)
    schedule: CosineWarmup | Constant = field(default_factory=CosineWarmup)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        sched = self.schedule
        if isinstance(sched, CosineWarmup):
            sched_d = {"kind": "cosine_warmup", "max_lr": sched.max_lr, "min_lr": sched.min_lr,
                       "warmup_steps": sched.warmup_steps, "decay_steps": sched.decay_steps}
        else:
            sched_d = {"kind": "constant", "lr": sched.lr}
        o = self.optimizer
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "optimizer": {"b1": o.b1, "b2": o.b2, "eps": o.eps, "weight_decay": o.weight_decay},
            "schedule": sched_d,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        known = {"epochs", "batch_size", "optimizer", "schedule", "seed"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        kwargs = {}
        if "optimizer" in obj:
            kwargs["optimizer"] = AdamW(**obj["optimizer"])
        if "schedule" in obj:
            s = dict(obj["schedule"])
            kind = s.pop("kind", "cosine_warmup")
            if kind == "cosine_warmup":
                kwargs["schedule"] = CosineWarmup(**s)
            elif kind == "constant":
                kwargs["schedule"] = Constant(**s)
            else:
                raise ValueError(f"unknown schedule kind {kind!r}")
        for k in ("epochs", "batch_size", "seed"):
            if k in obj:
                kwargs[k] = int(obj[k])
        return cls(**kwargs)


# Table-3 estimator settings (identifiability and misspecification).
PAPER_ID_TRAIN = TrainConfig(500, 1024, AdamW(), CosineWarmup(1e-5, 1e-7, 1000, 10000))
# Table-4 estimator settings (transfer).
PAPER_TRANSFER_TRAIN = TrainConfig(500, 512, AdamW(), Constant(5e-6))


@dataclass
class TrainResult:
    encoder: NeuralNet
    decoder: NeuralNet | None
    losses: list[float]
    steps: int


def train(
    encoder: NeuralNet,
    inputs,
    targets,
    config: TrainConfig,
    decoder: NeuralNet | None = None,
    cond_inputs=None,
) -> TrainResult:
    """Mini-batch AdamW on mean squared error.

    With a ``decoder`` the model is ``decoder([encoder(inputs) | cond_inputs])``;
    conditioning never reaches the encoder. Nets are copied, not mutated.
    ``losses[0]`` is the full-data loss at initialization and ``losses[e]`` the
    full-data loss after epoch ``e``.
    """
    X = _check_inputs(encoder, inputs)
    Y = np.asarray(targets, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    C = None
    if cond_inputs is not None:
        C = np.asarray(cond_inputs, dtype=float)
        if C.ndim != 2 or C.shape[0] != n:
            raise ValueError(f"cond_inputs must have {n} rows, got shape {C.shape}")
        if C.shape[1] == 0:
            C = None
    if decoder is None and C is not None:
        raise ValueError("cond_inputs require a decoder")
    if decoder is not None:
        cond_dim = 0 if C is None else C.shape[1]
        if decoder.in_dim != encoder.out_dim + cond_dim:
            raise ValueError(
                f"decoder takes {decoder.in_dim} inputs, encoder gives {encoder.out_dim} + {cond_dim} conditioning"
            )

    enc = encoder.copy()
    dec = decoder.copy() if decoder is not None else None

    def predict(xb, cb):
        z = forward(enc, xb)
        if dec is None:
            return z
        return forward(dec, z if cb is None else np.hstack([z, cb]))

    losses = [mse(predict(X, C), Y)]
    params = enc.params() + (dec.params() if dec is not None else [])
    state = _AdamWState(config.optimizer, params)
    rng = np.random.default_rng(config.seed)
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = X[idx], Y[idx]
            cb = None if C is None else C[idx]
            z, enc_cache = _forward_cached(enc, xb)
            if dec is None:
                pred = z
            else:
                dec_in = z if cb is None else np.hstack([z, cb])
                pred, dec_cache = _forward_cached(dec, dec_in)
            loss = mse(pred, yb)
            if not math.isfinite(loss):
                raise DivergenceError(step, loss)
            g = 2.0 * (pred - yb) / xb.shape[0]
            if dec is None:
                grads, _ = _backward(enc, enc_cache, g)
            else:
                dec_grads, g_in = _backward(dec, dec_cache, g)
                enc_grads, _ = _backward(enc, enc_cache, g_in[:, : enc.out_dim])
                grads = enc_grads + dec_grads
            state.step(params, grads, config.schedule(step))
            step += 1
        loss = mse(predict(X, C), Y)
        if not math.isfinite(loss):
            raise DivergenceError(step, loss)
        losses.append(loss)
    return TrainResult(enc, dec, losses, step)
