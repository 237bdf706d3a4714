"""Prediction heads, their losses, and conversion of raw outputs to continuous scores.

Four heads share the MLP trunk:

* multiclass -- k softmax outputs, cross-entropy; score = expected class index
* ordinal    -- CORAL: one shared output plus k-1 free biases, summed binary
                cross-entropies; score = sum of the k-1 exceedance probabilities
* regression -- one output, squared error against the class index; score = output
* siamese    -- embedding, contrastive loss on pairs; score = median distance to
                an anchor pool of class-0 training samples
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import net
from .errors import ConfigError, InputError
from .synthlab import MONOTONE_FEATURE

KINDS = ("multiclass", "ordinal", "regression", "siamese")


@dataclass(frozen=True)
class HeadSpec:
    kind: str
    k: int = 3
    embed_dim: int = 8
    margin: float = 1.0
    anchor_count: int = 10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown head kind {self.kind!r}")
        if self.k < 2:
            raise ConfigError("heads need k >= 2 classes")
        if self.kind == "siamese" and (self.embed_dim < 1 or self.margin <= 0 or self.anchor_count < 1):
            raise ConfigError("siamese head needs embed_dim >= 1, margin > 0, anchor_count >= 1")

    @property
    def output_width(self):
        return {"multiclass": self.k, "ordinal": 1, "regression": 1, "siamese": self.embed_dim}[self.kind]

    @property
    def bounded(self):
        return self.kind in ("multiclass", "ordinal")


@dataclass
class ScoredPrediction:
    """Scores for a batch of inputs (a single input is a batch of one)."""

    score: np.ndarray
    derived_class: np.ndarray
    raw_outputs: np.ndarray
    per_pass_scores: np.ndarray | None = None  # (n_passes, n)


# -- score converters and losses ---------------------------------------------

def softmax(logits):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def cl_score(probabilities):
    """Expected class index sum_i p_i * (i - 1) with 1-based i, in [0, k-1]."""
    p = np.asarray(probabilities, dtype=float)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
        raise InputError("probabilities must be non-negative and sum to 1")
    return p @ np.arange(p.shape[-1], dtype=float)


def o_score(logits):
    """Sum of the k-1 ordinal exceedance probabilities, in [0, k-1]."""
    return sigmoid(logits).sum(axis=-1)


def coral_levels(labels, k):
    labels = np.asarray(labels)
    return (labels[..., None] > np.arange(k - 1)).astype(float)


def coral_loss(logits, label):
    """Summed binary cross-entropy of the k-1 ordinal tasks.

    Works on one logit vector or a (n, k-1) batch; returns (loss, d loss/d logits)
    where a batch loss is the mean over rows.
    """
    z = np.asarray(logits, dtype=float)
    levels = coral_levels(label, z.shape[-1] + 1)
    # -[y log s(z) + (1-y) log(1-s(z))] = log(1+e^-z) + (1-y) z
    per = np.logaddexp(0.0, -z) + (1.0 - levels) * z
    grad = sigmoid(z) - levels
    if z.ndim == 1:
        return float(per.sum()), grad
    n = z.shape[0]
    return float(per.sum() / n), grad / n


def cross_entropy(logits, label):
    z = np.asarray(logits, dtype=float)
    zs = z - z.max(axis=-1, keepdims=True)
    logp = zs - np.log(np.exp(zs).sum(axis=-1, keepdims=True))
    onehot = np.eye(z.shape[-1])[np.asarray(label)]
    grad = np.exp(logp) - onehot
    if z.ndim == 1:
        return float(-logp[label]), grad
    n = z.shape[0]
    return float(-(logp * onehot).sum() / n), grad / n


def regression_loss_and_score(output, label, k=None):
    """Squared error against the class index.

    Returns (loss, d loss/d output, score, derived_class); batches use the mean loss.
    """
    o = np.asarray(output, dtype=float)
    y = np.asarray(label, dtype=float)
    diff = o - y
    n = diff.size
    loss = float(np.mean(diff**2))
    grad = 2.0 * diff / n
    derived = derive_class(o, k) if k is not None else None
    return loss, grad, o, derived


def derive_class(score, k):
    """Nearest class with half-up rounding, clamped to [0, k-1]."""
    return np.clip(np.floor(np.asarray(score, dtype=float) + 0.5), 0, k - 1).astype(int)


def contrastive_loss(emb_a, emb_b, same_class, margin=1.0):
    """Contrastive loss on Euclidean distance.

    Same-class pairs cost d^2, different-class pairs max(0, margin - d)^2.
    Returns (loss, d loss/d emb_a, d loss/d emb_b); batches use the mean.
    """
    a = np.atleast_2d(np.asarray(emb_a, dtype=float))
    b = np.atleast_2d(np.asarray(emb_b, dtype=float))
    same = np.atleast_1d(np.asarray(same_class, dtype=bool))
    diff = a - b
    d = np.sqrt((diff**2).sum(axis=1))
    hinge = np.maximum(0.0, margin - d)
    per = np.where(same, d**2, hinge**2)
    safe = np.where(d > 0, d, 1.0)
    coef = np.where(same, 2.0, np.where(d > 0, -2.0 * hinge / safe, 0.0))
    n = len(d)
    ga = coef[:, None] * diff / n
    loss = float(per.sum() / n)
    if np.ndim(emb_a) == 1:
        return loss, ga[0], -ga[0]
    return loss, ga, -ga


def median_anchor_distance(emb, anchor_emb):
    """Median Euclidean distance of each embedding row to the anchor embeddings."""
    emb = np.atleast_2d(emb)
    d = np.sqrt(((emb[:, None, :] - anchor_emb[None, :, :]) ** 2).sum(axis=2))
    return np.median(d, axis=1)


# -- samplers and anchors ----------------------------------------------------

def draw_pairs(labels, n, rng):
    """Vectorized pair draw: (idx_a, idx_b, same).

    Classes are picked uniformly; half the pairs (in expectation) are same-class.
    Same-class draws from a single-member class are discarded and redrawn.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ConfigError("pair sampling needs at least two classes")
    members = [np.flatnonzero(labels == c) for c in classes]
    sizes = np.array([len(m) for m in members])
    out_a, out_b, out_s = [], [], []
    need = n
    while need > 0:
        m = max(need, 16)
        same = rng.random(m) < 0.5
        ca = rng.integers(len(classes), size=m)
        shift = rng.integers(1, len(classes), size=m)
        cb = np.where(same, ca, (ca + shift) % len(classes))
        ok = ~same | (sizes[ca] >= 2)
        ia = np.empty(m, dtype=int)
        ib = np.empty(m, dtype=int)
        ua = rng.random(m)
        ub = rng.random(m)
        for j in range(m):
            if not ok[j]:
                continue
            ma, mb = members[ca[j]], members[cb[j]]
            pa = int(ua[j] * len(ma))
            if same[j]:
                pb = int(ub[j] * (len(mb) - 1))
                pb += pb >= pa
            else:
                pb = int(ub[j] * len(mb))
            ia[j], ib[j] = ma[pa], mb[pb]
        out_a.append(ia[ok])
        out_b.append(ib[ok])
        out_s.append(same[ok])
        need -= int(ok.sum())
    a = np.concatenate(out_a)[:n]
    b = np.concatenate(out_b)[:n]
    s = np.concatenate(out_s)[:n]
    return a, b, s


def pair_sampler(labels, rng, chunk=256):
    """Infinite stream of (i, j, same_class) index pairs."""
    while True:
        a, b, s = draw_pairs(labels, chunk, rng)
        for i, j, same in zip(a, b, s):
            yield int(i), int(j), bool(same)


@dataclass
class AnchorPool:
    indices: list
    features: np.ndarray

    def __post_init__(self):
        if len(self.indices) == 0:
            raise ConfigError("anchor pool is empty")


def select_anchors(X, y, count=10):
    """The ``count`` class-0 samples with the smallest monotone feature."""
    idx = np.flatnonzero(np.asarray(y) == 0)
    if len(idx) == 0:
        raise ConfigError("no class-0 samples available for anchors")
    order = idx[np.argsort(X[idx, MONOTONE_FEATURE], kind="stable")][:count]
    return AnchorPool([int(i) for i in order], np.asarray(X)[order].copy())


# -- trained model -----------------------------------------------------------

@dataclass
class TrainedModel:
    name: str
    head: HeadSpec
    mlp: net.Mlp
    extra: np.ndarray  # CORAL biases for ordinal heads, empty otherwise
    dropout_rate: float = 0.0
    train_config: net.TrainConfig = field(default_factory=net.TrainConfig)
    anchors: AnchorPool | None = None
    history: list = field(default_factory=list)

    def to_dict(self):
        head = asdict(self.head)
        if self.anchors is not None:
            head["anchor_indices"] = self.anchors.indices
            head["anchor_features"] = self.anchors.features.tolist()
        return {
            "name": self.name,
            "head": head,
            "network": self.mlp.to_dict(),
            "coral_biases": self.extra.tolist(),
            "dropout": {"rate": self.dropout_rate, "placement": "after_each_hidden_layer"},
            "train_config": self.train_config.to_dict(),
            "seed": self.train_config.seed,
            "history": self.history,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d):
        h = dict(d["head"])
        idx = h.pop("anchor_indices", None)
        feats = h.pop("anchor_features", None)
        anchors = AnchorPool(idx, np.array(feats, dtype=float)) if idx is not None else None
        return cls(
            d["name"],
            HeadSpec(**h),
            net.Mlp.from_dict(d["network"]),
            np.array(d["coral_biases"], dtype=float),
            d["dropout"]["rate"],
            net.TrainConfig.from_dict(d["train_config"]),
            anchors,
            d.get("history", []),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @property
    def biases_non_increasing(self):
        return self.head.kind == "ordinal" and bool(np.all(np.diff(self.extra) <= 0))


def outputs_to_scores(head, out, extra):
    """Per-row continuous scores from raw network outputs (not for siamese)."""
    if head.kind == "multiclass":
        return cl_score(softmax(out))
    if head.kind == "ordinal":
        return o_score(out[:, :1] + extra)
    if head.kind == "regression":
        return out[:, 0].copy()
    raise ConfigError("siamese scores need an anchor pool")


def raw_head_outputs(head, out, extra):
    """Head-level outputs: class probabilities, ordinal probabilities, or raw values."""
    if head.kind == "multiclass":
        return softmax(out)
    if head.kind == "ordinal":
        return sigmoid(out[:, :1] + extra)
    return out


def score_pass(model, X, dropout=None, rng=None):
    """One forward pass over a batch: (scores, head outputs)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _, out = net.forward(model.mlp, X, dropout, rng)
    if model.head.kind == "siamese":
        if model.anchors is None:
            raise ConfigError("siamese model has no anchor pool")
        _, anchor_emb = net.forward(model.mlp, model.anchors.features, dropout, rng)
        return median_anchor_distance(out, anchor_emb), out
    return outputs_to_scores(model.head, out, model.extra), raw_head_outputs(model.head, out, model.extra)


def classes_from(head, score, raw):
    if head.kind == "multiclass":
        return np.argmax(raw, axis=1)
    return derive_class(score, head.k)


def predict(model, X):
    """Deterministic (dropout off) scores for a batch of feature rows."""
    score, raw = score_pass(model, X)
    return ScoredPrediction(score, classes_from(model.head, score, raw), raw)


def siamese_score(model, x, pool=None):
    pool = pool if pool is not None else model.anchors
    if pool is None or len(pool.indices) == 0:
        raise ConfigError("anchor pool is empty")
    _, emb = net.forward(model.mlp, np.atleast_2d(x))
    _, anchor_emb = net.forward(model.mlp, pool.features)
    s = median_anchor_distance(emb, anchor_emb)
    return float(s[0]) if np.ndim(x) == 1 else s


# -- training ----------------------------------------------------------------

def _split_grads(dW, db):
    out = []
    for w, b in zip(dW, db):
        out += [w, b]
    return out


def head_loss_and_grads(head, mlp, extra, X, y, dropout=None, rng=None):
    """Batch loss and gradients for the classification/regression heads."""
    trace, out = net.forward(mlp, X, dropout, rng)
    gextra = np.zeros_like(extra)
    if head.kind == "multiclass":
        loss, dout = cross_entropy(out, y)
    elif head.kind == "ordinal":
        loss, dz = coral_loss(out[:, :1] + extra, y)
        dout = dz.sum(axis=1, keepdims=True)
        gextra = dz.sum(axis=0)
    elif head.kind == "regression":
        loss, dout, _, _ = regression_loss_and_score(out, np.asarray(y, dtype=float)[:, None])
    else:
        raise ConfigError("use siamese_loss_and_grads for siamese heads")
    dW, db = net.backward(mlp, trace, dout)
    return loss, _split_grads(dW, db), gextra


def siamese_loss_and_grads(head, mlp, Xa, Xb, same, dropout=None, rng=None):
    """Contrastive loss through both shared-weight branches; gradients are summed."""
    ta, ea = net.forward(mlp, Xa, dropout, rng)
    tb, eb = net.forward(mlp, Xb, dropout, rng)
    loss, ga, gb = contrastive_loss(ea, eb, same, head.margin)
    dWa, dba = net.backward(mlp, ta, ga)
    dWb, dbb = net.backward(mlp, tb, gb)
    grads = _split_grads([a + b for a, b in zip(dWa, dWb)], [a + b for a, b in zip(dba, dbb)])
    return loss, grads


def train(head, train_set, val_set, cfg, hidden=(32, 32), dropout_rate=0.0, name=None):
    """Fit one head on (X, y) arrays; keeps the lowest-validation-loss snapshot.

    ``train_set`` and ``val_set`` are (features, labels) pairs.
    """
    X, y = (np.asarray(a) for a in train_set[:2])
    Xv, yv = (np.asarray(a) for a in val_set[:2])
    if X.ndim != 2 or len(X) != len(y):
        raise InputError("training features must be (n, D) with one label per row")
    if y.min() < 0 or y.max() >= head.k:
        raise ConfigError(f"labels outside [0, {head.k - 1}] for a {head.k}-class head")
    init_rng = np.random.default_rng([cfg.seed, 1])
    mlp = net.Mlp.init([X.shape[1], *hidden, head.output_width], init_rng, out_bias=head.kind != "ordinal")
    extra = (np.arange(head.k - 1, 0, -1) / (head.k - 1)) if head.kind == "ordinal" else np.zeros(0)
    drop = net.DropoutConfig(dropout_rate, "train")
    anchors = select_anchors(X, y, head.anchor_count) if head.kind == "siamese" else None

    if head.kind == "siamese":
        va, vb, vs = draw_pairs(yv, max(len(yv), 2), np.random.default_rng([cfg.seed, 2]))

        def batches(rng):
            a, b, s = draw_pairs(y, len(y), rng)
            for start in range(0, len(y), cfg.batch_size):
                sl = slice(start, start + cfg.batch_size)
                yield a[sl], b[sl], s[sl]

        def step(mlp_, extra_, batch, rng):
            a, b, s = batch
            loss, grads = siamese_loss_and_grads(head, mlp_, X[a], X[b], s, drop, rng)
            return loss, grads, np.zeros(0)

        def val_loss(mlp_, extra_):
            _, ea = net.forward(mlp_, Xv[va])
            _, eb = net.forward(mlp_, Xv[vb])
            return contrastive_loss(ea, eb, vs, head.margin)[0]
    else:
        def batches(rng):
            if cfg.balanced_sampling:
                return net.balanced_batch_sampler(y, cfg.batch_size, rng)
            return net.shuffled_batches(len(y), cfg.batch_size, rng)

        def step(mlp_, extra_, batch, rng):
            return head_loss_and_grads(head, mlp_, extra_, X[batch], y[batch], drop, rng)

        def val_loss(mlp_, extra_):
            return head_loss_and_grads(head, mlp_, extra_, Xv, yv)[0]

    best, best_extra, history = net.fit(mlp, extra, cfg, batches, step, val_loss)
    return TrainedModel(name or head.kind, head, best, best_extra, dropout_rate, cfg, anchors, history)
