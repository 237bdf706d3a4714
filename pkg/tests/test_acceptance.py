"""Acceptance gate: ten criteria, one PASS/FAIL line each in the terminal summary.

Criteria 3, 4, 5, 6, 7, 9 and 10 share five full runs of the reference config
(master seeds 0-4).
"""
import csv
import json
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from ordscore import evaluation as ev
from ordscore import heads, mcinfer, net, runner, synthlab

ROOT = Path(__file__).resolve().parents[1]
REFERENCE = ROOT / "configs" / "reference.json"
SEEDS = range(5)
RESULTS = {}


def record(number, title, ok, detail):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


def tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def reference_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("reference")
    runs, times = {}, {}
    for seed in SEEDS:
        start = time.perf_counter()
        runs[seed] = runner.run_path(REFERENCE, base / f"seed{seed}", seed=seed)
        times[seed] = time.perf_counter() - start
    return runs, times


def scores_by_id(root, name):
    with open(root / "predictions" / f"{name}.csv") as fh:
        return {int(r["id"]): float(r["score"]) for r in csv.DictReader(fh)}


def per_seed(runs, fn):
    return np.array([fn(root, synthlab.load_benchmark(root / "benchmark")) for root in runs.values()])


def ranked_spearman(name):
    def fn(root, bench):
        s = scores_by_id(root, name)
        return ev.spearman([x.latent for x, _ in bench.ranked_test], [s[x.id] for x, _ in bench.ranked_test])

    return fn


def ranked_rank_mse(name):
    def fn(root, bench):
        s = scores_by_id(root, name)
        return ev.normalized_rank_mse([r for _, r in bench.ranked_test], [s[x.id] for x, _ in bench.ranked_test])

    return fn


def report_point(name, metric):
    def fn(root, bench):
        return json.loads((root / "report" / "report.json").read_text())["metrics"][name][metric]["point"]

    return fn


# -- 1 -----------------------------------------------------------------------

def test_criterion_01_metric_oracles():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for case in range(1000):
        n = int(rng.integers(4, 51))
        # every other case uses coarse integers so ties are exercised
        draw = (lambda: rng.integers(0, 6, size=n).astype(float)) if case % 2 else (lambda: rng.normal(size=n))
        x, y = draw(), draw()
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            x[0], y[0] = x[0] + 1.0, y[0] + 1.0
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        truth = (rng.permutation(n) + 1).astype(float)
        worst = max(
            worst,
            abs(ev.spearman(x, y) - oracles.spearman(list(x), list(y))),
            abs(ev.pearson(x, y) - oracles.pearson(list(x), list(y))),
            abs(ev.auc_binary(x, labels) - oracles.auc(list(x), list(labels))),
            abs(ev.normalized_rank_mse(truth, y) - oracles.rank_mse(list(truth), list(y))),
        )
    elapsed = time.perf_counter() - start
    record(1, "metric oracles", worst <= 1e-12 and elapsed < 10, f"max abs diff {worst:.2e} over 1000 cases, {elapsed:.1f}s")


# -- 2 -----------------------------------------------------------------------

def _numeric(mlp, loss, h=1e-5):
    out = []
    for p in mlp.params():
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            up = loss()
            p[i] = old - h
            down = loss()
            p[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


KINK = 1e-3  # cases this close to a rectifier, norm or hinge kink are redrawn
# relative-error denominator floor for exact-zero gradients, where the central
# difference is pure roundoff of order eps * |loss| / h
REL_FLOOR = 1e-6


def _gradient_case(kind, rng):
    head = heads.HeadSpec(kind, embed_dim=3, margin=1.5)
    mlp = net.Mlp.init([3, 5, 4, head.output_width], rng, out_bias=kind != "ordinal")
    for b in mlp.biases:
        b[:] = rng.normal(0, 0.1, size=b.shape)
    X = rng.normal(size=(5, 3))
    traces = [net.forward(mlp, X)]
    if kind == "siamese":
        Xb, same = rng.normal(size=(5, 3)), rng.integers(0, 2, size=5).astype(bool)
        traces.append(net.forward(mlp, Xb))
        d = np.linalg.norm(traces[0][1] - traces[1][1], axis=1)
        smooth = np.all(d > KINK) and np.all(np.abs(d - head.margin) > KINK)
        loss = lambda: heads.siamese_loss_and_grads(head, mlp, X, Xb, same)[0]  # noqa: E731
        grads = heads.siamese_loss_and_grads(head, mlp, X, Xb, same)[1]
    else:
        smooth = True
        y = rng.integers(0, 3, size=5)
        extra = np.sort(rng.normal(size=2))[::-1].copy() if kind == "ordinal" else np.zeros(0)
        loss = lambda: heads.head_loss_and_grads(head, mlp, extra, X, y)[0]  # noqa: E731
        grads = heads.head_loss_and_grads(head, mlp, extra, X, y)[1]
    smooth &= all(np.all(np.abs(p) > KINK) for trace, _ in traces for p in trace.pre)
    return smooth, mlp, loss, grads


def test_criterion_02_gradients():
    start = time.perf_counter()
    worst, redraws = 0.0, 0
    for kind in heads.KINDS:
        rng = np.random.default_rng([2, heads.KINDS.index(kind)])
        done = 0
        while done < 100:
            smooth, mlp, loss, grads = _gradient_case(kind, rng)
            if not smooth:
                redraws += 1
                continue
            floor = REL_FLOOR * max(1.0, abs(loss()))
            for g, n in zip(grads, _numeric(mlp, loss)):
                worst = max(worst, float(np.max(np.abs(g - n) / np.maximum(floor, np.abs(g) + np.abs(n)))))
            done += 1
    elapsed = time.perf_counter() - start
    record(
        2, "gradient checks", worst < 1e-4 and elapsed < 30,
        f"max rel err {worst:.2e} over 4x100 cases ({redraws} kink cases redrawn), {elapsed:.1f}s",
    )


# -- 3, 4, 5, 9 --------------------------------------------------------------

def test_criterion_03_latent_recovery(reference_runs):
    runs, times = reference_runs
    ordinal = per_seed(runs, ranked_spearman("mc_ordinal")).mean()
    regression = per_seed(runs, ranked_spearman("mc_regression")).mean()
    total = sum(times.values())
    ok = ordinal >= 0.90 and regression >= 0.90 and total < 600
    record(3, "latent recovery", ok, f"mean Spearman mc_ordinal {ordinal:.4f}, mc_regression {regression:.4f} (floor 0.90), {total:.0f}s for 5 seeds")


def test_criterion_04_mc_improvement(reference_runs):
    runs, _ = reference_runs
    parts, ok = [], True
    for kind in heads.KINDS:
        rho_plain = per_seed(runs, ranked_spearman(kind)).mean()
        rho_mc = per_seed(runs, ranked_spearman(f"mc_{kind}")).mean()
        mse_plain = per_seed(runs, ranked_rank_mse(kind)).mean()
        mse_mc = per_seed(runs, ranked_rank_mse(f"mc_{kind}")).mean()
        ok &= rho_mc >= rho_plain and mse_mc <= mse_plain
        parts.append(f"{kind} rho {rho_plain:.3f}->{rho_mc:.3f} mse {mse_plain:.4f}->{mse_mc:.4f}")
    record(4, "MC improvement", ok, "; ".join(parts))


def plateau_fraction(name):
    def fn(root, bench):
        s = scores_by_id(root, name)
        v = np.array([s[x.id] for x in bench.test])
        return np.mean(np.abs(v - np.round(v)) <= 0.05)

    return fn


def test_criterion_05_plateaus(reference_runs):
    runs, _ = reference_runs
    multi = per_seed(runs, plateau_fraction("multiclass")).mean()
    ordinal = per_seed(runs, plateau_fraction("ordinal")).mean()
    ratio = multi / ordinal
    record(5, "plateau phenomenon", ratio >= 1.5, f"near-integer fraction multiclass {multi:.3f} vs ordinal {ordinal:.3f}, ratio {ratio:.2f} (need 1.5)")


def test_criterion_09_longitudinal(reference_runs):
    runs, _ = reference_runs
    mc_ord = per_seed(runs, report_point("mc_ordinal", "longitudinal_mse")).mean()
    multi = per_seed(runs, report_point("multiclass", "longitudinal_mse")).mean()
    record(9, "longitudinal fidelity", mc_ord <= multi, f"mean diff-MSE mc_ordinal {mc_ord:.4f} vs multiclass {multi:.4f}")


# -- 6, 7 --------------------------------------------------------------------

def test_criterion_06_rank_consistency(reference_runs):
    runs, _ = reference_runs
    model = runner.load_model(runs[0], "ordinal")
    assert model.biases_non_increasing, "precondition: trained biases must be non-increasing"
    X = np.random.default_rng(6).normal(size=(1000, model.mlp.layer_sizes[0])) * 2
    probs = heads.predict(model, X).raw_outputs
    violations = int(np.sum(np.any(np.diff(probs, axis=1) > 0, axis=1)))
    record(6, "CORAL rank consistency", violations == 0, f"{violations} of 1000 inputs with increasing probabilities, biases {np.round(model.extra, 4).tolist()}")


def test_criterion_07_mc_identity(reference_runs):
    runs, _ = reference_runs
    X = np.random.default_rng(7).normal(size=(100, 10))
    mismatched = []
    for kind in heads.KINDS:
        model = runner.load_model(runs[0], f"mc_{kind}")
        model.dropout_rate = 0.0
        mc = mcinfer.mc_predict(model, X, mcinfer.McConfig(50, seed=1))
        det = heads.predict(model, X)
        if not (np.array_equal(mc.score, det.score) and np.array_equal(mc.derived_class, det.derived_class)):
            mismatched.append(kind)
    record(7, "MC identity at rate 0", not mismatched, f"bit-exact for {4 - len(mismatched)}/4 heads on 100 inputs")


# -- 8 -----------------------------------------------------------------------

def test_criterion_08_bootstrap_ttest():
    rng = np.random.default_rng(8)
    truth = rng.normal(size=80)
    good = truth + rng.normal(0, 0.3, size=80)
    poor = truth + rng.normal(0, 1.5, size=80)
    d_good = ev.bootstrap(ev.spearman, [truth, good], 500, seed=1)
    d_poor = ev.bootstrap(ev.spearman, [truth, poor], 500, seed=1)
    separated = ev.comparison_grid("spearman", {"good": d_good, "poor": d_poor}).significant[0, 1]
    identical = ev.comparison_grid("spearman", {"a": d_good, "b": ev.bootstrap(ev.spearman, [truth, good], 500, seed=1)})
    a = [0.81, 0.84, 0.79, 0.88, 0.83]
    b = [0.76, 0.80, 0.74, 0.79, 0.71]
    gap = abs(ev.pairwise_ttest(a, b) - oracles.welch_p(a, b))
    ok = separated and not identical.significant[0, 1] and gap < 1e-9
    record(8, "bootstrap and t-test", ok, f"separated flagged={bool(separated)}, identical flagged={bool(identical.significant[0, 1])}, Welch |diff| {gap:.1e}")


# -- 10 ----------------------------------------------------------------------

def test_criterion_10_determinism(reference_runs, tmp_path):
    runs, _ = reference_runs
    start = time.perf_counter()
    again = runner.run_path(REFERENCE, tmp_path / "again", seed=0)
    elapsed = time.perf_counter() - start
    a, b = tree(runs[0]), tree(again)
    ok = a == b and elapsed < 900
    record(10, "end-to-end determinism", ok, f"{len(a)} files byte-identical={a == b}, reference run {elapsed:.1f}s")
