"""Synthetic benchmarks with a known continuous latent severity.

Every sample carries a hidden severity drawn uniformly on [0, 1].  Ordinal
training labels are obtained by bucketing the severity with fixed cuts, and
the evaluation sets mimic the three kinds of finer ground truth used for
continuous scores: full rankings, ratings on a 1..9 scale from a rater panel,
and the continuous value itself.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError

MONOTONE_FEATURE = 0


@dataclass(frozen=True)
class LatentSample:
    id: int
    patient_id: str
    timepoint: int
    latent: float
    label: int
    features: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, LatentSample):
            return NotImplemented
        return (
            self.id == other.id
            and self.patient_id == other.patient_id
            and self.timepoint == other.timepoint
            and self.latent == other.latent
            and self.label == other.label
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None


@dataclass(frozen=True)
class ThresholdSpec:
    """Strictly increasing cuts in (0, 1); class = number of cuts <= latent."""

    cuts: tuple

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cuts)
        if not cuts:
            raise ConfigError("at least one cut is required (k >= 2)")
        if any(not (0.0 < c < 1.0) for c in cuts):
            raise ConfigError(f"cuts must lie in (0, 1): {cuts}")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ConfigError(f"cuts must be strictly increasing: {cuts}")
        object.__setattr__(self, "cuts", cuts)

    @classmethod
    def from_proportions(cls, proportions):
        p = np.asarray(proportions, dtype=float)
        if p.ndim != 1 or len(p) < 2 or np.any(p <= 0):
            raise ConfigError(f"class proportions must be >= 2 positive values: {proportions}")
        cum = np.cumsum(p / p.sum())[:-1]
        return cls(tuple(float(c) for c in cum))

    @property
    def k(self):
        return len(self.cuts) + 1

    def bucket(self, latent):
        """Class index of one latent value or an array of them."""
        out = np.searchsorted(np.asarray(self.cuts), latent, side="right")
        return int(out) if np.ndim(out) == 0 else out.astype(int)

    def bounds(self, cls_index):
        edges = (0.0,) + self.cuts + (1.0,)
        return edges[cls_index], edges[cls_index + 1]

    def probabilities(self):
        """Exact class probabilities under the uniform latent prior."""
        edges = np.array((0.0,) + self.cuts + (1.0,))
        return np.diff(edges)


@dataclass(frozen=True)
class RaterPanel:
    n_raters: int = 5
    noise_sigma: float = 0.7
    scale_points: int = 9

    def __post_init__(self):
        if self.n_raters < 1 or self.scale_points < 1:
            raise ConfigError("rater panel needs n_raters >= 1 and scale_points >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("rater noise_sigma must be >= 0")


@dataclass(frozen=True)
class DomainShiftSpec:
    """Shift applied to a test population: feature noise scale and class priors."""

    noise_scale: float = 1.0
    class_priors: tuple | None = None
    n: int | None = None

    def __post_init__(self):
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be >= 0")
        if self.class_priors is not None:
            p = tuple(float(v) for v in self.class_priors)
            if any(v < 0 for v in p) or sum(p) <= 0:
                raise ConfigError(f"invalid class priors: {p}")
            object.__setattr__(self, "class_priors", p)

    @property
    def is_identity(self):
        return self.noise_scale == 1.0 and self.class_priors is None


@dataclass
class BenchmarkConfig:
    k: int = 3
    cuts: list | None = None
    class_weights: list | None = None
    n_features: int = 10
    noise_sigma: float = 0.05
    nuisance_sigma: float = 1.0
    logistic_slope: float = 8.0
    n_train: int = 2000
    n_val: int = 400
    n_test: int = 467
    n_ranked: int = 100
    n_longitudinal: int = 200
    images_per_patient: int = 2
    drift_mean: float = 0.0
    drift_sd: float = 0.1
    raters: RaterPanel = field(default_factory=RaterPanel)

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown benchmark config keys: {sorted(unknown)}")
        raters = data.pop("raters", None)
        try:
            cfg = cls(**data)
            if raters is not None:
                cfg.raters = raters if isinstance(raters, RaterPanel) else RaterPanel(**raters)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    def to_dict(self):
        d = asdict(self)
        d["raters"] = asdict(self.raters)
        return d

    @property
    def thresholds(self):
        if self.cuts is not None:
            spec = ThresholdSpec(tuple(self.cuts))
        elif self.class_weights is not None:
            spec = ThresholdSpec.from_proportions(self.class_weights)
        else:
            spec = ThresholdSpec(tuple(i / self.k for i in range(1, self.k)))
        if spec.k != self.k:
            raise ConfigError(f"k={self.k} but thresholds define {spec.k} classes")
        return spec

    def validate(self):
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if self.n_features < 1:
            raise ConfigError("n_features must be >= 1")
        spec = self.thresholds
        for name in ("n_train", "n_val", "n_test", "n_ranked"):
            if getattr(self, name) < spec.k:
                raise ConfigError(f"{name}={getattr(self, name)} is smaller than k={spec.k}")
        if self.n_longitudinal < 0:
            raise ConfigError("n_longitudinal must be >= 0")
        if self.images_per_patient < 1:
            raise ConfigError("images_per_patient must be >= 1")
        if self.noise_sigma < 0 or self.nuisance_sigma < 0 or self.drift_sd < 0:
            raise ConfigError("noise scales must be >= 0")
        if self.logistic_slope <= 0:
            raise ConfigError("logistic_slope must be > 0")
        return self


@dataclass
class Benchmark:
    config: BenchmarkConfig
    seed: int
    train: list
    val: list
    test: list
    ranked_test: list  # (sample, true_rank)
    fine_rated_test: list  # (sample, ratings, consensus)
    longitudinal_pairs: list  # (t0 fine-rated entry, t1 fine-rated entry)

    @property
    def continuous_test(self):
        return [(s, s.latent) for s in self.test]

    def all_samples(self):
        seen = {}
        for s in self.train + self.val + self.test:
            seen[s.id] = s
        for s, _ in self.ranked_test:
            seen[s.id] = s
        for a, b in self.longitudinal_pairs:
            seen[a[0].id] = a[0]
            seen[b[0].id] = b[0]
        return [seen[i] for i in sorted(seen)]


def _logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def monotone_map(latent, slope):
    """Logistic of the latent rescaled so that latent 0 -> 0 and latent 1 -> 1."""
    lo, hi = _logistic(-slope / 2), _logistic(slope / 2)
    return (_logistic(slope * (np.asarray(latent, dtype=float) - 0.5)) - lo) / (hi - lo)


def features_from_latent(latent, config, rng, noise_scale=1.0):
    """Observable features for one latent value or a vector of them.

    Column 0 is the monotone coordinate plus gaussian noise; the remaining
    columns are pure nuisance noise.
    """
    latent = np.asarray(latent, dtype=float)
    scalar = latent.ndim == 0
    lat = np.atleast_1d(latent)
    n = lat.shape[0]
    feats = np.empty((n, config.n_features))
    feats[:, 0] = monotone_map(lat, config.logistic_slope) + rng.normal(
        0.0, config.noise_sigma * noise_scale, size=n
    )
    if config.n_features > 1:
        feats[:, 1:] = rng.normal(0.0, config.nuisance_sigma * noise_scale, size=(n, config.n_features - 1))
    return feats[0] if scalar else feats


def _round_half_up(x):
    return np.floor(np.asarray(x) + 0.5)


def quantile_rating(latent, scale_points):
    """Equal-quantile bin of a uniform latent on the 1..scale_points scale."""
    latent = np.asarray(latent, dtype=float)
    return np.minimum(np.floor(latent * scale_points), scale_points - 1) + 1


def simulate_fine_ratings(sample, panel, rng):
    """Per-rater integer ratings and their median for one sample."""
    base = quantile_rating(sample.latent, panel.scale_points)
    noisy = base + rng.normal(0.0, panel.noise_sigma, size=panel.n_raters)
    ratings = np.clip(_round_half_up(noisy), 1, panel.scale_points).astype(int)
    return [int(r) for r in ratings], float(np.median(ratings))


class _IdSource:
    def __init__(self, start=0, patient_start=0, prefix="P"):
        self.next_id = start
        self.next_patient = patient_start
        self.prefix = prefix

    def sample_id(self):
        i = self.next_id
        self.next_id += 1
        return i

    def patient(self):
        p = f"{self.prefix}{self.next_patient:06d}"
        self.next_patient += 1
        return p


def _draw_latents(n, thresholds, rng, priors=None):
    if priors is None:
        return rng.uniform(0.0, 1.0, size=n)
    p = np.asarray(priors, dtype=float)
    if len(p) != thresholds.k:
        raise ConfigError(f"class priors need {thresholds.k} entries, got {len(p)}")
    classes = rng.choice(thresholds.k, size=n, p=p / p.sum())
    edges = np.array((0.0,) + thresholds.cuts + (1.0,))
    return edges[classes] + rng.uniform(0.0, 1.0, size=n) * (edges[classes + 1] - edges[classes])


def _make_samples(latents, config, rng, ids, noise_scale=1.0, images_per_patient=None):
    """Samples grouped into patients; images of one patient share the latent."""
    ipp = images_per_patient or config.images_per_patient
    thresholds = config.thresholds
    n = len(latents)
    n_patients = math.ceil(n / ipp)
    patient_latent = np.asarray(latents[:n_patients], dtype=float)
    lat = np.repeat(patient_latent, ipp)[:n]
    feats = features_from_latent(lat, config, rng, noise_scale=noise_scale)
    labels = thresholds.bucket(lat)
    samples = []
    patient = None
    for i in range(n):
        if i % ipp == 0:
            patient = ids.patient()
        samples.append(
            LatentSample(ids.sample_id(), patient, 0, float(lat[i]), int(labels[i]), feats[i])
        )
    return samples


def _split(config, n, rng, ids, noise_scale=1.0, priors=None):
    n_patients = math.ceil(n / config.images_per_patient)
    latents = _draw_latents(n_patients, config.thresholds, rng, priors)
    return _make_samples(latents, config, rng, ids, noise_scale)


def _ranked_split(config, rng, ids):
    """Stratified across classes: equal counts per class, latent uniform within bucket."""
    th = config.thresholds
    counts = np.full(th.k, config.n_ranked // th.k)
    counts[: config.n_ranked % th.k] += 1
    latents = []
    for c, m in enumerate(counts):
        lo, hi = th.bounds(c)
        latents.append(lo + rng.uniform(0.0, 1.0, size=m) * (hi - lo))
    latents = np.concatenate(latents)
    samples = _make_samples(latents, config, rng, ids, images_per_patient=1)
    order = sorted(samples, key=lambda s: (s.latent, s.id))
    rank = {s.id: r + 1 for r, s in enumerate(order)}
    return [(s, rank[s.id]) for s in samples]


def make_longitudinal_pairs(config, rng, ids=None, n=None):
    """Pairs of samples of one patient at timepoints 0 and 1, each with fine ratings."""
    ids = ids or _IdSource()
    n = config.n_longitudinal if n is None else n
    th = config.thresholds
    lat0 = rng.uniform(0.0, 1.0, size=n)
    drift = rng.normal(config.drift_mean, config.drift_sd, size=n) if config.drift_sd > 0 else np.full(n, config.drift_mean)
    lat1 = np.clip(lat0 + drift, 0.0, 1.0)
    f0 = features_from_latent(lat0, config, rng)
    f1 = features_from_latent(lat1, config, rng)
    pairs = []
    for i in range(n):
        patient = ids.patient()
        s0 = LatentSample(ids.sample_id(), patient, 0, float(lat0[i]), th.bucket(lat0[i]), f0[i])
        s1 = LatentSample(ids.sample_id(), patient, 1, float(lat1[i]), th.bucket(lat1[i]), f1[i])
        r0 = simulate_fine_ratings(s0, config.raters, rng)
        r1 = simulate_fine_ratings(s1, config.raters, rng)
        pairs.append(((s0, *r0), (s1, *r1)))
    return pairs


def make_shifted_testset(config, shift, rng, ids=None):
    """Test population under a feature-noise and/or class-prior shift.

    Thresholds are unchanged.  With the identity shift this follows exactly the
    code path of the in-domain test split.
    """
    ids = ids or _IdSource()
    n = shift.n if shift.n is not None else config.n_test
    return _split(config, n, rng, ids, noise_scale=shift.noise_scale, priors=shift.class_priors)


def generate_benchmark(config, seed):
    """Build train/val/test splits plus the ranked, fine-rated and longitudinal sets."""
    if not isinstance(config, BenchmarkConfig):
        config = BenchmarkConfig.from_dict(config)
    config.validate()
    rng = np.random.default_rng(seed)
    ids = _IdSource()
    train = _split(config, config.n_train, rng, ids)
    val = _split(config, config.n_val, rng, ids)
    test = _split(config, config.n_test, rng, ids)
    ranked = _ranked_split(config, rng, ids)
    fine = [(s, *simulate_fine_ratings(s, config.raters, rng)) for s in test]
    pairs = make_longitudinal_pairs(config, rng, ids)
    return Benchmark(config, int(seed), train, val, test, ranked, fine, pairs)


def stack(samples):
    """(features, labels, latents) arrays for a list of samples."""
    if not samples:
        return np.empty((0, 0)), np.empty(0, dtype=int), np.empty(0)
    X = np.stack([s.features for s in samples])
    y = np.array([s.label for s in samples], dtype=int)
    lat = np.array([s.latent for s in samples])
    return X, y, lat


# -- serialization -----------------------------------------------------------

def _fmt(x):
    return format(float(x), ".17g")


def samples_to_csv(samples, n_features):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "patient_id", "timepoint", "latent", "label"] + [f"f_{j}" for j in range(n_features)])
    for s in samples:
        w.writerow([s.id, s.patient_id, s.timepoint, _fmt(s.latent), s.label] + [_fmt(v) for v in s.features])
    return buf.getvalue()


def samples_from_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    n_feat = len(header) - 5
    out = []
    for r in body:
        out.append(
            LatentSample(
                int(r[0]), r[1], int(r[2]), float(r[3]), int(r[4]),
                np.array([float(v) for v in r[5 : 5 + n_feat]]),
            )
        )
    return out


def benchmark_sidecar(bench):
    return {
        "config": bench.config.to_dict(),
        "seed": bench.seed,
        "splits": {
            "train": [s.id for s in bench.train],
            "val": [s.id for s in bench.val],
            "test": [s.id for s in bench.test],
        },
        "ranked": [[s.id, r] for s, r in bench.ranked_test],
        "fine_rated": [[s.id, ratings, cons] for s, ratings, cons in bench.fine_rated_test],
        "longitudinal": [
            [a[0].id, b[0].id, a[1], a[2], b[1], b[2]] for a, b in bench.longitudinal_pairs
        ],
        "continuous": [s.id for s in bench.test],
    }


def save_benchmark(bench, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / "benchmark.csv"
    json_path = directory / "benchmark.json"
    csv_path.write_text(samples_to_csv(bench.all_samples(), bench.config.n_features))
    json_path.write_text(json.dumps(benchmark_sidecar(bench), indent=1, sort_keys=True) + "\n")
    return csv_path, json_path


def load_benchmark(directory):
    directory = Path(directory)
    by_id = {s.id: s for s in samples_from_csv((directory / "benchmark.csv").read_text())}
    side = json.loads((directory / "benchmark.json").read_text())
    cfg = BenchmarkConfig.from_dict(side["config"])
    pick = lambda ids: [by_id[i] for i in ids]  # noqa: E731
    return Benchmark(
        cfg,
        side["seed"],
        pick(side["splits"]["train"]),
        pick(side["splits"]["val"]),
        pick(side["splits"]["test"]),
        [(by_id[i], r) for i, r in side["ranked"]],
        [(by_id[i], list(rt), c) for i, rt, c in side["fine_rated"]],
        [
            ((by_id[a], list(ra), ca), (by_id[b], list(rb), cb))
            for a, b, ra, ca, rb, cb in side["longitudinal"]
        ],
    )
