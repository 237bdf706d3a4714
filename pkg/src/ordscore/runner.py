"""End-to-end experiment pipeline.

Stages run in order and each writes into its own directory under the output
root, finishing with a ``_stage.json`` marker that records the configuration
hash.  A stage whose marker matches the current configuration is skipped, so a
partially deleted tree is rebuilt from the first missing stage.  A marker with
a different hash is a resume conflict.

All randomness descends from the master seed through :func:`child_seed`.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import heads, mcinfer, net, synthlab
from .errors import ConfigError, OrdscoreError, ResumeConflict, StageError

log = logging.getLogger(__name__)

STAGES = ("generate", "train", "predict", "evaluate", "report")
STAGE_DIRS = {"generate": "benchmark", "train": "models", "predict": "predictions", "evaluate": "metrics", "report": "report"}
OUT_ENV = "ORDSCORE_OUT"
MARKER = "_stage.json"


def child_seed(master, stage, name=""):
    """63-bit seed from sha256 of 'master:stage:name'."""
    digest = hashlib.sha256(f"{int(master)}:{stage}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass
class ExperimentConfig:
    benchmark: synthlab.BenchmarkConfig = field(default_factory=synthlab.BenchmarkConfig)
    train: net.TrainConfig = field(default_factory=lambda: net.TrainConfig(epochs=150))
    train_overrides: dict = field(default_factory=dict)
    heads: list = field(default_factory=lambda: list(heads.KINDS))
    hidden: list = field(default_factory=lambda: [64, 64])
    dropout_rate: float = 0.2
    mc_passes: int = 50
    siamese: dict = field(default_factory=lambda: {"embed_dim": 8, "margin": 1.0, "anchor_count": 10})
    clinical_negatives: list | None = None
    bootstrap_iterations: int = 500
    shift: dict = field(default_factory=lambda: {"noise_scale": 2.0, "class_priors": [0.96, 0.03, 0.01], "n": 1000})
    master_seed: int = 0
    out: str | None = None

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        bench = synthlab.BenchmarkConfig.from_dict(data.pop("benchmark", {}))
        train = net.TrainConfig.from_dict({"epochs": 150, **data.pop("train", {})})
        try:
            cfg = cls(benchmark=bench, train=train, **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def validate(self):
        for kind in self.heads:
            if kind not in heads.KINDS:
                raise ConfigError(f"unknown head {kind!r}")
        for kind, over in self.train_overrides.items():
            if kind not in heads.KINDS:
                raise ConfigError(f"train override for unknown head {kind!r}")
            net.TrainConfig.from_dict({**self.train.to_dict(), **over})
        net.DropoutConfig(self.dropout_rate)
        mcinfer.McConfig(self.mc_passes)
        if self.bootstrap_iterations < 1:
            raise ConfigError("bootstrap_iterations must be >= 1")
        self.clinical_split
        self.shift_spec
        for kind in self.heads:
            self.head_spec(kind)
        return self

    def to_dict(self):
        d = asdict(self)
        d["benchmark"] = self.benchmark.to_dict()
        d["train"] = self.train.to_dict()
        d.pop("out")
        return d

    def config_hash(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @property
    def clinical_split(self):
        k = self.benchmark.k
        if self.clinical_negatives is None:
            return ev.ClinicalSplit.upper(k)
        return ev.ClinicalSplit.from_negatives(self.clinical_negatives, k)

    @property
    def shift_spec(self):
        s = dict(self.shift)
        if s.get("class_priors") is not None and len(s["class_priors"]) != self.benchmark.k:
            raise ConfigError("shift class_priors must have one entry per class")
        try:
            return synthlab.DomainShiftSpec(**s)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def head_spec(self, kind):
        extra = self.siamese if kind == "siamese" else {}
        return heads.HeadSpec(kind, self.benchmark.k, **extra)

    def model_names(self):
        """Plain and MC variant for every head, in table order."""
        out = []
        for kind in self.heads:
            out += [kind, f"mc_{kind}"]
        return out

    def train_config(self, kind, seed):
        return net.TrainConfig.from_dict({**self.train.to_dict(), **self.train_overrides.get(kind, {}), "seed": seed})


def model_kind(name):
    return name[3:] if name.startswith("mc_") else name


def is_mc(name):
    return name.startswith("mc_")


# -- io helpers --------------------------------------------------------------

def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _json(obj):
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def _fmt(x):
    return format(float(x), ".17g")


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# -- stages ------------------------------------------------------------------

def stage_generate(cfg, root):
    d = root / STAGE_DIRS["generate"]
    bench = synthlab.generate_benchmark(cfg.benchmark, child_seed(cfg.master_seed, "generate", "benchmark"))
    synthlab.save_benchmark(bench, d)
    start = max(s.id for s in bench.all_samples()) + 1
    ids = synthlab._IdSource(start, prefix="S")
    rng = np.random.default_rng(child_seed(cfg.master_seed, "generate", "shifted"))
    shifted = synthlab.make_shifted_testset(cfg.benchmark, cfg.shift_spec, rng, ids)
    single_rater = synthlab.RaterPanel(1, cfg.benchmark.raters.noise_sigma, cfg.benchmark.raters.scale_points)
    ratings = [synthlab.simulate_fine_ratings(s, single_rater, rng) for s in shifted]
    _write(d / "shifted.csv", synthlab.samples_to_csv(shifted, cfg.benchmark.n_features))
    _write(
        d / "shifted.json",
        _json({"shift": asdict(cfg.shift_spec), "ratings": [[s.id, r[0][0]] for s, r in zip(shifted, ratings)]}),
    )


def load_shifted(root):
    d = root / STAGE_DIRS["generate"]
    samples = synthlab.samples_from_csv((d / "shifted.csv").read_text())
    ratings = dict((i, r) for i, r in json.loads((d / "shifted.json").read_text())["ratings"])
    return samples, ratings


def stage_train(cfg, root):
    bench = synthlab.load_benchmark(root / STAGE_DIRS["generate"])
    X, y, _ = synthlab.stack(bench.train)
    Xv, yv, _ = synthlab.stack(bench.val)
    for name in cfg.model_names():
        kind = model_kind(name)
        tc = cfg.train_config(kind, child_seed(cfg.master_seed, "train", name))
        log.info("training %s", name)
        model = heads.train(
            cfg.head_spec(kind), (X, y), (Xv, yv), tc,
            hidden=cfg.hidden, dropout_rate=cfg.dropout_rate if is_mc(name) else 0.0, name=name,
        )
        _write(root / STAGE_DIRS["train"] / f"{name}.json", model.to_json())


def load_model(root, name):
    return heads.TrainedModel.from_json((root / STAGE_DIRS["train"] / f"{name}.json").read_text())


def evaluation_samples(bench, shifted):
    seen = {}
    for s in bench.test:
        seen[s.id] = s
    for s, _ in bench.ranked_test:
        seen[s.id] = s
    for a, b in bench.longitudinal_pairs:
        seen[a[0].id] = a[0]
        seen[b[0].id] = b[0]
    for s in shifted:
        seen[s.id] = s
    return [seen[i] for i in sorted(seen)]


def predict_model(model, X, mc_passes, seed, mc):
    if mc:
        return mcinfer.mc_predict(model, X, mcinfer.McConfig(mc_passes, seed))
    return heads.predict(model, X)


def prediction_csv(ids, pred):
    n_pass = 0 if pred.per_pass_scores is None else pred.per_pass_scores.shape[0]
    header = ["id", "score", "derived_class"] + [f"pass_{p}" for p in range(n_pass)]
    rows = []
    for j, i in enumerate(ids):
        row = [i, _fmt(pred.score[j]), int(pred.derived_class[j])]
        if n_pass:
            row += [_fmt(v) for v in pred.per_pass_scores[:, j]]
        rows.append(row)
    return _csv(header, rows)


def stage_predict(cfg, root):
    bench = synthlab.load_benchmark(root / STAGE_DIRS["generate"])
    shifted, _ = load_shifted(root)
    samples = evaluation_samples(bench, shifted)
    X, _, _ = synthlab.stack(samples)
    ids = [s.id for s in samples]
    for name in cfg.model_names():
        model = load_model(root, name)
        pred = predict_model(model, X, cfg.mc_passes, child_seed(cfg.master_seed, "predict", name), is_mc(name))
        _write(root / STAGE_DIRS["predict"] / f"{name}.csv", prediction_csv(ids, pred))


def load_scores(root, name):
    _, rows = _read_csv(root / STAGE_DIRS["predict"] / f"{name}.csv")
    return {int(r[0]): float(r[1]) for r in rows}


@dataclass
class EvalData:
    """Ground truth and scores of one model aligned per analysis."""

    ranked_ids: list
    true_rank: np.ndarray
    ranked_label: np.ndarray
    ranked_score: np.ndarray
    test_ids: list
    consensus: np.ndarray
    test_latent: np.ndarray
    test_score: np.ndarray
    long_ids: list
    long_ratings: np.ndarray  # (n, 2)
    long_scores: np.ndarray  # (n, 2)
    shifted_ids: list
    shifted_rating: np.ndarray
    shifted_latent: np.ndarray
    shifted_score: np.ndarray


def eval_data(bench, shifted, shifted_ratings, scores):
    ranked = bench.ranked_test
    fine = bench.fine_rated_test
    pairs = bench.longitudinal_pairs
    return EvalData(
        [s.id for s, _ in ranked],
        np.array([r for _, r in ranked], dtype=float),
        np.array([s.label for s, _ in ranked]),
        np.array([scores[s.id] for s, _ in ranked]),
        [s.id for s, _, _ in fine],
        np.array([c for _, _, c in fine], dtype=float),
        np.array([s.latent for s, _, _ in fine]),
        np.array([scores[s.id] for s, _, _ in fine]),
        [(a[0].id, b[0].id) for a, b in pairs],
        np.array([[a[2], b[2]] for a, b in pairs], dtype=float).reshape(-1, 2),
        np.array([[scores[a[0].id], scores[b[0].id]] for a, b in pairs], dtype=float).reshape(-1, 2),
        [s.id for s in shifted],
        np.array([shifted_ratings[s.id] for s in shifted], dtype=float),
        np.array([s.latent for s in shifted]),
        np.array([scores[s.id] for s in shifted]),
    )


def metric_specs(cfg, kind, data):
    """name -> (metric function, data columns); rating-scale metrics need k == 3."""
    split = cfg.clinical_split
    specs = {
        "spearman": (ev.spearman, [data.true_rank, data.ranked_score]),
        "pearson": (lambda t, s: ev.pearson(ev.average_ranks(t), ev.average_ranks(s)), [data.true_rank, data.ranked_score]),
        "rank_mse": (ev.normalized_rank_mse, [data.true_rank, data.ranked_score]),
        "auc": (lambda s, lab: ev.auc_binary(s, lab, split), [data.ranked_score, data.ranked_label]),
        "continuous_pearson": (ev.pearson, [data.test_latent, data.test_score]),
        "shifted_spearman": (ev.spearman, [data.shifted_latent, data.shifted_score]),
    }
    if kind == "siamese" or cfg.benchmark.k == 3:
        rs = lambda s: ev.rescale_score(s, kind, cfg.benchmark.k, cfg.benchmark.raters.scale_points)  # noqa: E731
        specs["fine_rating_mse"] = (lambda c, s: ev.fine_rating_mse(c, rs(s)), [data.consensus, data.test_score])
        specs["shifted_rating_mse"] = (lambda c, s: ev.fine_rating_mse(c, rs(s)), [data.shifted_rating, data.shifted_score])
        if len(data.long_ids) >= 2:
            specs["longitudinal_mse"] = (
                lambda r0, r1, s0, s1: ev.longitudinal_diff_mse(r0, r1, rs(s0), rs(s1)),
                [data.long_ratings[:, 0], data.long_ratings[:, 1], data.long_scores[:, 0], data.long_scores[:, 1]],
            )
    return specs


def stage_evaluate(cfg, root):
    bench = synthlab.load_benchmark(root / STAGE_DIRS["generate"])
    shifted, shifted_ratings = load_shifted(root)
    for name in cfg.model_names():
        data = eval_data(bench, shifted, shifted_ratings, load_scores(root, name))
        out = {"model": name, "metrics": {}, "bootstrap": {}}
        for metric, (fn, cols) in metric_specs(cfg, model_kind(name), data).items():
            dist = ev.bootstrap(fn, cols, cfg.bootstrap_iterations, child_seed(cfg.master_seed, "bootstrap", metric))
            out["metrics"][metric] = dist.summary()
            out["bootstrap"][metric] = dist.to_dict()
        _write(root / STAGE_DIRS["evaluate"] / f"{name}.json", _json(out))


def load_metrics(root, name):
    return json.loads((root / STAGE_DIRS["evaluate"] / f"{name}.json").read_text())


def _plot_files(cfg, root, bench, shifted, shifted_ratings):
    k = cfg.benchmark.k
    rows = {key: [] for key in ("rank_vs_score", "rank_vs_rank", "rating_vs_score", "longitudinal", "latent_vs_score", "shifted_rating_vs_score")}
    for name in cfg.model_names():
        kind = model_kind(name)
        data = eval_data(bench, shifted, shifted_ratings, load_scores(root, name))
        pred_rank = ev.average_ranks(data.ranked_score)
        for i, t, s, pr in zip(data.ranked_ids, data.true_rank, data.ranked_score, pred_rank):
            rows["rank_vs_score"].append([name, i, int(t), _fmt(s)])
            rows["rank_vs_rank"].append([name, i, int(t), _fmt(pr)])
        for i, lat, s in zip(data.test_ids, data.test_latent, data.test_score):
            rows["latent_vs_score"].append([name, i, _fmt(lat), _fmt(s)])
        if kind == "siamese" or k == 3:
            rs = lambda s: ev.rescale_score(s, kind, k, cfg.benchmark.raters.scale_points)  # noqa: E731
            for i, c, s in zip(data.test_ids, data.consensus, rs(data.test_score)):
                rows["rating_vs_score"].append([name, i, _fmt(c), _fmt(s)])
            for (i0, i1), r, s in zip(data.long_ids, data.long_ratings, data.long_scores):
                rows["longitudinal"].append([name, i0, i1, _fmt(r[1] - r[0]), _fmt(rs(s[1]) - rs(s[0]))])
            for i, c, s in zip(data.shifted_ids, data.shifted_rating, rs(data.shifted_score)):
                rows["shifted_rating_vs_score"].append([name, i, _fmt(c), _fmt(s)])
    headers = {
        "rank_vs_score": ["model", "id", "true_rank", "score"],
        "rank_vs_rank": ["model", "id", "true_rank", "predicted_rank"],
        "rating_vs_score": ["model", "id", "consensus_rating", "rescaled_score"],
        "longitudinal": ["model", "id_t0", "id_t1", "rating_diff", "score_diff"],
        "latent_vs_score": ["model", "id", "latent", "score"],
        "shifted_rating_vs_score": ["model", "id", "rating", "rescaled_score"],
    }
    files = []
    for key, header in headers.items():
        rel = f"{STAGE_DIRS['report']}/plots/{key}.csv"
        _write(root / rel, _csv(header, rows[key]))
        files.append(rel)
    return files


def stage_report(cfg, root):
    bench = synthlab.load_benchmark(root / STAGE_DIRS["generate"])
    shifted, shifted_ratings = load_shifted(root)
    d = root / STAGE_DIRS["report"]
    names = cfg.model_names()
    metrics = {n: load_metrics(root, n) for n in names}
    reports = [ev.MetricReport(n, metrics[n]["metrics"]) for n in names]
    _write(d / "summary_table.csv", ev.summary_table_csv(reports))
    grid_files = []
    metric_names = [m for m in metrics[names[0]]["metrics"] if all(m in metrics[n]["metrics"] for n in names)]
    for metric in metric_names:
        grid = ev.comparison_grid(metric, {n: np.array(metrics[n]["bootstrap"][metric]["values"]) for n in names})
        rel = f"{STAGE_DIRS['report']}/grids/{metric}.json"
        _write(root / rel, _json(grid.to_dict()))
        grid_files.append(rel)
    plot_files = _plot_files(cfg, root, bench, shifted, shifted_ratings)
    report = {
        "master_seed": cfg.master_seed,
        "benchmark_seed": bench.seed,
        "config_hash": cfg.config_hash(),
        "models": names,
        "metrics": {r.model: r.metrics for r in reports},
        "grids": grid_files,
        "plots": plot_files,
        "table": f"{STAGE_DIRS['report']}/summary_table.csv",
        "notes": {
            "rescale": "bounded heads are rescaled with score*2+1, covering [1, 5] of the 1..9 rating scale; siamese scores use score+1 clipped to [1, 9]",
        },
    }
    _write(d / "report.json", _json(report))


STAGE_FUNCS = {
    "generate": stage_generate,
    "train": stage_train,
    "predict": stage_predict,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


def _marker_state(root, stage, chash):
    path = root / STAGE_DIRS[stage] / MARKER
    if not path.exists():
        return "missing"
    found = json.loads(path.read_text()).get("config_hash")
    if found != chash:
        raise ResumeConflict(
            f"{path} was produced by config {found[:12]}..., current config is {chash[:12]}...; "
            "use a fresh output directory"
        )
    return "done"


def resolve_out(cfg, out=None):
    target = out or cfg.out or os.environ.get(OUT_ENV)
    if not target:
        raise ConfigError(f"no output directory: pass --out, set 'out' in the config, or set {OUT_ENV}")
    return Path(target)


def run(cfg, out=None, until="report"):
    """Run stages up to and including ``until``; returns the output root."""
    if until not in STAGES:
        raise ConfigError(f"unknown stage {until!r}")
    root = resolve_out(cfg, out)
    root.mkdir(parents=True, exist_ok=True)
    chash = cfg.config_hash()
    _write(root / "config.json", _json(cfg.to_dict()))
    for stage in STAGES[: STAGES.index(until) + 1]:
        if _marker_state(root, stage, chash) == "done":
            log.info("stage %s already complete, skipping", stage)
            continue
        log.info("stage %s", stage)
        try:
            STAGE_FUNCS[stage](cfg, root)
        except OrdscoreError as exc:
            raise StageError(stage, exc) from exc
        except Exception as exc:  # noqa: BLE001 - reported with the stage name
            raise StageError(stage, exc) from exc
        _write(root / STAGE_DIRS[stage] / MARKER, _json({"stage": stage, "config_hash": chash}))
    return root


def run_path(config_path, out=None, seed=None, until="report"):
    cfg = ExperimentConfig.load(config_path)
    if seed is not None:
        cfg.master_seed = int(seed)
    return run(cfg, out, until)


# -- compare -----------------------------------------------------------------

def _report_root(path):
    path = Path(path)
    if path.is_dir():
        return path if (path / STAGE_DIRS["report"]).exists() else path.parent
    return path.parent.parent


def compare(report_paths):
    """Merged pairwise p-value grids over the models of several reports.

    With one report the model names are kept; with several they are prefixed
    by the report's position (``r0:multiclass``).  All reports must share the
    benchmark seed.
    """
    if not report_paths:
        raise ConfigError("compare needs at least one report")
    roots = [_report_root(p) for p in report_paths]
    reports = []
    for r in roots:
        path = r / STAGE_DIRS["report"] / "report.json"
        if not path.exists():
            raise ConfigError(f"no report found at {path}")
        reports.append(json.loads(path.read_text()))
    seeds = {rep["benchmark_seed"] for rep in reports}
    if len(seeds) > 1:
        raise ConfigError(
            f"reports were built on different benchmarks (benchmark seeds {sorted(seeds)}); "
            "their bootstrap distributions are not comparable"
        )
    dists = {}
    for idx, (root, rep) in enumerate(zip(roots, reports)):
        for name in rep["models"]:
            label = name if len(roots) == 1 else f"r{idx}:{name}"
            dists[label] = load_metrics(root, name)["bootstrap"]
    common = set.intersection(*(set(d) for d in dists.values()))
    metrics = [m for m in ev.METRIC_ORDER if m in common] + sorted(common - set(ev.METRIC_ORDER))
    return {
        m: ev.comparison_grid(m, {label: np.array(d[m]["values"]) for label, d in dists.items()})
        for m in metrics
    }


def write_grids(grids, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for metric, grid in grids.items():
        _write(out / f"{metric}.json", _json(grid.to_dict()))
    return out
