"""Small numpy MLP: forward/backward with inverted dropout, optimizers, samplers.

Rows are samples.  Hidden layers use a rectifier, the output layer is linear.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, InputError, NumericError, TrainingError

DROPOUT_MODES = ("off", "train", "mc_inference")


@dataclass
class Mlp:
    weights: list  # (fan_in, fan_out) per layer
    biases: list
    out_bias: bool = True

    @classmethod
    def init(cls, layer_sizes, rng, out_bias=True):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ConfigError(f"invalid layer sizes {layer_sizes}")
        weights, biases = [], []
        for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
            last = i == len(sizes) - 2
            scale = np.sqrt((1.0 if last else 2.0) / a)
            weights.append(rng.normal(0.0, scale, size=(a, b)))
            biases.append(np.zeros(b))
        return cls(weights, biases, out_bias)

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self):
        return copy.deepcopy(self)

    def params(self):
        """Flat list of parameter arrays in a fixed order (w0, b0, w1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def check(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[1] != b.shape[0]:
                raise InputError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise InputError(f"layer {i} does not chain with layer {i - 1}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError(f"layer {i} has non-finite parameters")
        return self

    def to_dict(self):
        return {
            "layer_sizes": self.layer_sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "out_bias": self.out_bias,
        }

    @classmethod
    def from_dict(cls, d):
        m = cls(
            [np.array(w, dtype=float).reshape(a, b) for w, a, b in zip(d["weights"], d["layer_sizes"], d["layer_sizes"][1:])],
            [np.array(b, dtype=float) for b in d["biases"]],
            d.get("out_bias", True),
        )
        return m.check()


@dataclass(frozen=True)
class DropoutConfig:
    rate: float = 0.0
    mode: str = "off"

    def __post_init__(self):
        if not (0.0 <= self.rate < 1.0):
            raise ConfigError(f"dropout rate must be in [0, 1): {self.rate}")
        if self.mode not in DROPOUT_MODES:
            raise ConfigError(f"dropout mode must be one of {DROPOUT_MODES}")

    @property
    def active(self):
        return self.mode != "off" and self.rate > 0.0


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 60
    batch_size: int = 32
    seed: int = 0
    balanced_sampling: bool = True
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("learning_rate and batch_size must be positive, epochs >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class Trace:
    inputs: list  # input to each layer
    pre: list  # pre-activation of each hidden layer
    masks: list  # scaled dropout mask per hidden layer, or None
    squeeze: bool


def forward(params, x, dropout=None, rng=None):
    """Returns (trace, output).  Accepts one vector or a (n, D) batch."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != params.weights[0].shape[0]:
        raise InputError(f"expected input width {params.weights[0].shape[0]}, got shape {x.shape}")
    dropout = dropout or DropoutConfig()
    drop = dropout.active
    if drop and rng is None:
        raise InputError("an rng is required when dropout is active")
    keep = 1.0 - dropout.rate
    inputs, pre, masks = [], [], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b if (i < last or params.out_bias) else h @ w
        if i == last:
            h = z
            break
        pre.append(z)
        h = np.maximum(z, 0.0)
        if drop:
            m = (rng.random(h.shape) < keep) / keep
            h = h * m
            masks.append(m)
        else:
            masks.append(None)
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite network output")
    return Trace(inputs, pre, masks, squeeze), (h[0] if squeeze else h)


def backward(params, trace, grad_out):
    """Gradients (dW list, db list) of a scalar loss given d loss / d output."""
    g = np.asarray(grad_out, dtype=float)
    if trace.squeeze:
        g = g[None, :]
    n_out = params.weights[-1].shape[1]
    if g.shape != (trace.inputs[0].shape[0], n_out):
        raise InputError(f"loss gradient shape {g.shape} does not match output {n_out}")
    dW = [None] * len(params.weights)
    db = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        dW[i] = trace.inputs[i].T @ g
        db[i] = g.sum(axis=0)
        if i == len(params.weights) - 1 and not params.out_bias:
            db[i] = np.zeros_like(db[i])
        if i == 0:
            break
        g = g @ params.weights[i].T
        if trace.masks[i - 1] is not None:
            g = g * trace.masks[i - 1]
        g = g * (trace.pre[i - 1] > 0)
    return dW, db


class Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg):
    return Adam(cfg.learning_rate) if cfg.optimizer == "adam" else Sgd(cfg.learning_rate)


def balanced_batch_sampler(labels, batch_size, rng, n_draws=None):
    """Index batches drawn with replacement, weighted by inverse class frequency.

    One epoch yields ``n_draws`` indices (default: len(labels)) split into
    batches of ``batch_size``; the last batch may be shorter.
    """
    labels = np.asarray(labels)
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    classes, counts = np.unique(labels, return_counts=True)
    if len(labels) == 0 or np.any(counts == 0):
        raise ConfigError("every class must be present at least once")
    inv = {c: 1.0 / n for c, n in zip(classes, counts)}
    w = np.array([inv[c] for c in labels])
    w /= w.sum()
    total = len(labels) if n_draws is None else n_draws
    draws = rng.choice(len(labels), size=total, p=w)
    for start in range(0, total, batch_size):
        yield draws[start : start + batch_size]


def shuffled_batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def fit(params, extra, cfg, batches, loss_and_grads, val_loss):
    """Mini-batch training loop keeping the lowest validation loss snapshot.

    ``batches(rng)`` yields the batches of one epoch; ``loss_and_grads(params,
    extra, batch, rng)`` returns (loss, [grads for params.params()], grad_extra);
    ``val_loss(params, extra)`` is evaluated without dropout after each epoch.
    Returns (best_params, best_extra, history).
    """
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg)
    best = (params.copy(), extra.copy())
    history = []
    if cfg.epochs == 0:
        return best[0], best[1], history
    best_val = np.inf
    for epoch in range(1, cfg.epochs + 1):
        total, count = 0.0, 0
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                for batch in batches(rng):
                    loss, grads, gextra = loss_and_grads(params, extra, batch, rng)
                    if not np.isfinite(loss):
                        raise TrainingError(f"non-finite training loss at epoch {epoch}", epoch=epoch)
                    arrays = params.params() + ([extra] if extra.size else [])
                    opt.step(arrays, grads + ([gextra] if extra.size else []))
                    total += loss
                    count += 1
                vl = val_loss(params, extra)
        except TrainingError:
            raise
        except NumericError as exc:
            raise TrainingError(f"training diverged at epoch {epoch}: {exc}", epoch=epoch) from exc
        train_loss = total / max(count, 1)
        if not (np.isfinite(train_loss) and np.isfinite(vl)):
            raise TrainingError(f"training diverged at epoch {epoch}", epoch=epoch)
        history.append({"epoch": epoch, "train_loss": float(train_loss), "val_loss": float(vl)})
        if vl < best_val:
            best_val = vl
            best = (params.copy(), extra.copy())
    return best[0], best[1], history
