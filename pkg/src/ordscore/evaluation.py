"""Metrics for continuous scores and the bootstrap / t-test machinery."""
from __future__ import annotations

import csv
import io
import itertools
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError, InputError, UndefinedMetricError

SIGNIFICANCE = 0.05


def _pair(x, y, min_len=2):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise InputError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < min_len:
        raise InputError(f"need at least {min_len} values, got {x.size}")
    return x, y


def average_ranks(x):
    return stats.rankdata(np.asarray(x, dtype=float), method="average")


def pearson(x, y):
    x, y = _pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise UndefinedMetricError("correlation is undefined for constant input")
    r = np.dot(dx, dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def spearman(x, y):
    """Pearson correlation of average ranks."""
    x, y = _pair(x, y)
    return pearson(average_ranks(x), average_ranks(y))


def normalized_rank_mse(true_ranks, predicted_scores):
    """MSE between ground-truth ranks and score-derived ranks, both divided by n.

    Both inputs are re-ranked with average ranks, which leaves a permutation of
    1..n unchanged and keeps bootstrap resamples (with repeats) comparable.
    """
    t, s = _pair(true_ranks, predicted_scores)
    n = t.size
    return float(np.mean((average_ranks(t) / n - average_ranks(s) / n) ** 2))


@dataclass(frozen=True)
class ClinicalSplit:
    negative_classes: tuple
    positive_classes: tuple

    @classmethod
    def upper(cls, k, n_negative=None):
        """Lower classes negative, the top class(es) positive (default: top one)."""
        n_negative = k - 1 if n_negative is None else n_negative
        if not 0 < n_negative < k:
            raise ConfigError("clinical split needs non-empty negative and positive groups")
        return cls(tuple(range(n_negative)), tuple(range(n_negative, k)))

    @classmethod
    def from_negatives(cls, negatives, k):
        neg = tuple(sorted(int(c) for c in negatives))
        pos = tuple(c for c in range(k) if c not in neg)
        if not neg or not pos or any(c < 0 or c >= k for c in neg):
            raise ConfigError(f"invalid clinical split {negatives} for k={k}")
        if min(pos) < max(neg):
            raise ConfigError("positive classes must be the upper classes")
        return cls(neg, pos)

    def binarize(self, labels):
        return np.isin(np.asarray(labels), self.positive_classes).astype(int)


def auc_binary(scores, labels, split=None):
    """P(random positive outscores random negative), ties counted one half.

    ``labels`` are class indices collapsed with ``split``, or already 0/1 when
    ``split`` is None.
    """
    s, lab = _pair(scores, labels)
    pos = split.binarize(lab) if split is not None else (lab > 0).astype(int)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative cases")
    r = average_ranks(s)
    u = r[pos == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rescale_score(score, head_kind, k=3, scale_points=9):
    """Map a model score onto the 1..9 rating scale.

    Bounded 3-class heads (multiclass, ordinal, regression): score * 2 + 1.
    Siamese distances: score + 1, clipped to [1, scale_points].
    """
    s = np.asarray(score, dtype=float)
    if head_kind == "siamese":
        out = np.clip(s + 1.0, 1.0, scale_points)
    elif head_kind in ("multiclass", "ordinal", "regression"):
        if k != 3:
            raise ConfigError(f"score rescaling is defined for 3-class heads, got k={k}")
        out = s * 2.0 + 1.0
    else:
        raise ConfigError(f"no rescaling rule for head {head_kind!r}")
    return float(out) if out.ndim == 0 else out


def fine_rating_mse(consensus_ratings, rescaled_scores):
    c, s = _pair(consensus_ratings, rescaled_scores, min_len=1)
    return float(np.mean((c - s) ** 2))


def longitudinal_diff_mse(rating_t0, rating_t1=None, score_t0=None, score_t1=None):
    """MSE between rating differences and (already rescaled) score differences.

    Accepts four aligned vectors, or a single sequence of
    (rating_t0, rating_t1, score_t0, score_t1) tuples.
    """
    if rating_t1 is None:
        arr = np.asarray(rating_t0, dtype=float).reshape(-1, 4)
        rating_t0, rating_t1, score_t0, score_t1 = arr.T
    dr = np.asarray(rating_t1, dtype=float) - np.asarray(rating_t0, dtype=float)
    ds = np.asarray(score_t1, dtype=float) - np.asarray(score_t0, dtype=float)
    dr, ds = _pair(dr, ds, min_len=1)
    return float(np.mean((dr - ds) ** 2))


# -- bootstrap ---------------------------------------------------------------

@dataclass
class BootstrapDistribution:
    values: np.ndarray
    point: float
    seed: int
    iterations: int

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def ci(self):
        lo, hi = np.percentile(self.values, [2.5, 97.5])
        return float(lo), float(hi)

    def summary(self):
        lo, hi = self.ci
        return {"mean": self.mean, "ci_low": lo, "ci_high": hi, "point": self.point}

    def to_dict(self):
        return {"values": self.values.tolist(), "point": self.point, "seed": self.seed, "iterations": self.iterations}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["values"], dtype=float), d["point"], d["seed"], d["iterations"])


def bootstrap(metric, data, iterations=500, seed=0, max_redraws=100):
    """Percentile bootstrap of ``metric(*columns)`` over aligned data columns.

    Resample ``i`` draws from ``rng(seed, i)``; a resample on which the metric is
    undefined is redrawn from the same stream, at most ``max_redraws`` times.
    """
    columns = [np.asarray(c) for c in (data if isinstance(data, (list, tuple)) else [data])]
    n = len(columns[0])
    if n < 2 or any(len(c) != n for c in columns):
        raise InputError("bootstrap needs aligned columns with at least 2 rows")
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    point = float(metric(*columns))
    values = np.empty(iterations)
    for i in range(iterations):
        rng = np.random.default_rng([int(seed), i])
        for _ in range(max_redraws + 1):
            idx = rng.integers(0, n, size=n)
            try:
                values[i] = metric(*(c[idx] for c in columns))
                break
            except UndefinedMetricError:
                continue
        else:
            raise UndefinedMetricError(f"metric undefined on {max_redraws} redraws of resample {i}")
    return BootstrapDistribution(values, point, int(seed), iterations)


def pairwise_ttest(dist_a, dist_b):
    """Two-sided Welch t-test p-value between two bootstrap distributions."""
    a = np.asarray(getattr(dist_a, "values", dist_a), dtype=float)
    b = np.asarray(getattr(dist_b, "values", dist_b), dtype=float)
    if a.size < 2 or b.size < 2:
        raise InputError("t-test needs at least 2 values per distribution")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0 and vb == 0:
        return 1.0 if a.mean() == b.mean() else 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return float(stats.ttest_ind(a, b, equal_var=False).pvalue)


@dataclass
class ComparisonGrid:
    metric: str
    names: list
    p_values: np.ndarray

    @property
    def significant(self):
        mask = self.p_values < SIGNIFICANCE
        np.fill_diagonal(mask, False)
        return mask

    @property
    def n_pairs(self):
        return len(self.names) * (len(self.names) - 1) // 2

    def to_dict(self):
        p = self.p_values.copy()
        np.fill_diagonal(p, np.nan)
        return {
            "metric": self.metric,
            "names": list(self.names),
            "p_values": [[None if np.isnan(v) else float(v) for v in row] for row in p],
            "significant": self.significant.tolist(),
            "alpha": SIGNIFICANCE,
            "n_pairs": self.n_pairs,
        }

    @classmethod
    def from_dict(cls, d):
        p = np.array([[np.nan if v is None else v for v in row] for row in d["p_values"]], dtype=float)
        return cls(d["metric"], list(d["names"]), p)


def comparison_grid(metric, distributions):
    """Symmetric p-value matrix over every pair of named distributions."""
    names = list(distributions)
    p = np.full((len(names), len(names)), np.nan)
    for i, j in itertools.combinations(range(len(names)), 2):
        p[i, j] = p[j, i] = pairwise_ttest(distributions[names[i]], distributions[names[j]])
    return ComparisonGrid(metric, names, p)


# -- reports -----------------------------------------------------------------

METRIC_ORDER = ("spearman", "pearson", "rank_mse", "auc", "fine_rating_mse", "longitudinal_mse")


@dataclass
class MetricReport:
    model: str
    metrics: dict = field(default_factory=dict)  # name -> summary dict

    def to_dict(self):
        return asdict(self)


def summary_table_csv(reports):
    """Flat per-model table: model, mse, mse_ci, spearman, spearman_ci, auc, auc_ci."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "mse", "mse_ci", "spearman", "spearman_ci", "auc", "auc_ci"])

    def cell(summary):
        return f"{summary['mean']:.6f}", f"[{summary['ci_low']:.6f}, {summary['ci_high']:.6f}]"

    for r in reports:
        row = [r.model]
        for key in ("rank_mse", "spearman", "auc"):
            row += cell(r.metrics[key])
        w.writerow(row)
    return buf.getvalue()


def dump_json(obj, path):
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n")
