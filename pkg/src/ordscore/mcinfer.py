"""Monte Carlo dropout inference."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import heads, net
from .errors import ConfigError


@dataclass(frozen=True)
class McConfig:
    n_passes: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.n_passes < 1:
            raise ConfigError("n_passes must be >= 1")


def pass_rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def mc_predict(model, X, cfg=None):
    """Average the head's continuous score over ``n_passes`` dropout passes.

    Pass ``p`` draws its masks from ``(cfg.seed, p)`` only, so any pass can be
    replayed on its own.  Scores are averaged, not logits.
    """
    cfg = cfg or McConfig()
    if cfg.n_passes < 1:
        raise ConfigError("n_passes must be >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    drop = net.DropoutConfig(model.dropout_rate, "mc_inference")
    scores, raws = [], []
    for p in range(cfg.n_passes):
        s, raw = heads.score_pass(model, X, drop, pass_rng(cfg.seed, p))
        scores.append(s)
        raws.append(raw)
    per_pass = np.stack(scores)
    # shifted mean: exact when all passes agree
    score = per_pass[0] + (per_pass - per_pass[0]).mean(axis=0)
    raw = raws[0] + (np.stack(raws) - raws[0]).mean(axis=0)
    return heads.ScoredPrediction(score, heads.classes_from(model.head, score, raw), raw, per_pass)
