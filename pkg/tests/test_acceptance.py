"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The heavyweight experiments (minimum-region replication, overfit-model
score orderings) share module-scoped fixtures; everything here stays well
inside the stated runtime budgets on a laptop-class machine.
"""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

import bdmia
from bdmia.boundary import class_seed, sample_seed
from bdmia.cli import parse_config, run_experiment
from bdmia.evaluation import auc, min_region_analysis, roc_curve, spearman
from bdmia.mia import KIND_SINGLE, ScoreRecord, relative_boundary_score
from bdmia.model import (
    Dataset,
    LabeledSample,
    ModelOracle,
    NearestCentroidOracle,
    Sample,
    TrainConfig,
    half_plane_oracle,
    make_synthetic_dataset,
    split_dataset,
    train_mlp,
)


def report(number, name, ok, detail=""):
    print(f"\n[criterion {number}] {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {number} ({name}) failed: {detail}"


def records_from(member_scores, nonmember_scores):
    recs = [ScoreRecord(i, True, float(s), KIND_SINGLE, 0) for i, s in enumerate(member_scores)]
    recs += [
        ScoreRecord(len(recs) + i, False, float(s), KIND_SINGLE, 0) for i, s in enumerate(nonmember_scores)
    ]
    return recs


# ---------------------------------------------------------------------------
# criterion 1: analytic convergence on a half-plane
# ---------------------------------------------------------------------------


def test_criterion_1_analytic_convergence():
    started = time.time()
    analytic = 0.3
    hits = 0
    worst = 0.0
    for seed in range(20):
        oracle = half_plane_oracle([1.0, 0.0], -0.5)
        x = Sample(np.array([0.2, 0.7]), (1, 2, 1))
        result = bdmia.untargeted_hsja(x, 0, oracle, bdmia.HsjaParams(T=30, B0=20, seed=seed))
        rel = abs(result.distance - analytic) / analytic
        worst = max(worst, rel)
        hits += rel <= 0.05
    elapsed = time.time() - started
    report(
        1,
        "analytic convergence",
        hits >= 19 and elapsed < 10.0,
        f"({hits}/20 within 5%, worst rel err {worst:.4f}, {elapsed:.1f}s)",
    )


# ---------------------------------------------------------------------------
# criteria 2 + 3: minimum-region replication and query-cost ordering
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def minregion_runs():
    """Per-sample results of all three drivers on a 6-class MLP, 100 cbalanced samples."""
    full = make_synthetic_dataset(
        n_classes=6, n_per_class=70, shape=(6, 6, 1), spread=0.12, seed=20, smooth_centers=True
    )
    parts = split_dataset(full, {"train": 40, "test": 20, "aux": 10})
    target = train_mlp(parts["train"], TrainConfig(epochs=120, batch_size=64, hidden=(64,), seed=1))
    oracle = ModelOracle(target)
    evalset = bdmia.build_cbalanced_set(parts["train"], parts["test"], oracle, n_per_side=50, seed=2)
    params = bdmia.HsjaParams(T=50, theta=0.01, B0=30, Bmax=150, seed=0)
    multi_cfg = bdmia.MultiTargetConfig(T=50, T_f=10, r=0.5, seed=0)

    started = time.time()
    runs = []
    for entry in evalset.entries:
        x, y = entry.sample.sample, entry.sample.label
        seed = sample_seed(0, entry.sample_id)
        p = replace(params, seed=seed)
        inits = bdmia.select_class_inits(parts["aux"], y, oracle, 6, seed=seed)
        runs.append(
            {
                "all": bdmia.all_targeted_hsja(x, y, inits, oracle, p),
                "multi": bdmia.multi_targeted_hsja(x, y, parts["aux"], oracle, replace(multi_cfg, seed=seed), p),
                "untargeted": bdmia.untargeted_hsja(x, y, oracle, p),
                "x": x,
                "y": y,
                "inits": inits,
                "params": p,
            }
        )
    return {"runs": runs, "oracle": oracle, "elapsed": time.time() - started}


def test_criterion_2_minimum_region_replication(minregion_runs):
    runs = minregion_runs["runs"]
    counts = {"untargeted": 0, "multi": 0, "all": 0}
    for run in runs:
        flags = min_region_analysis(
            {name: run[name].distance for name in ("untargeted", "multi", "all")}
        )
        for name in counts:
            counts[name] += flags[name]
    ok = (
        counts["all"] == 100
        and counts["multi"] >= 95
        and counts["untargeted"] < counts["multi"]
        and minregion_runs["elapsed"] < 600.0
    )
    report(
        2,
        "minimum-region replication",
        ok,
        f"(all {counts['all']}/100, multi {counts['multi']}/100, untargeted {counts['untargeted']}/100, "
        f"{minregion_runs['elapsed']:.0f}s)",
    )


def test_criterion_3_query_cost_ordering(minregion_runs):
    runs = minregion_runs["runs"]
    oracle = minregion_runs["oracle"]
    multi_cheaper = sum(run["multi"].queries < run["all"].queries for run in runs)

    # (n-1) x single targeted cost vs all-targeted, checked per class on a subset
    worst_ratio_gap = 0.0
    for run in runs[:10]:
        n_minus_1 = len(run["inits"])
        for c, init in run["inits"].items():
            single = bdmia.targeted_hsja(
                run["x"], run["y"], c, init, oracle, replace(run["params"], seed=class_seed(run["params"].seed, c))
            )
            gap = abs(n_minus_1 * single.queries - run["all"].queries) / run["all"].queries
            worst_ratio_gap = max(worst_ratio_gap, gap)
    ok = multi_cheaper == len(runs) and worst_ratio_gap <= 0.10
    report(
        3,
        "query-cost ordering",
        ok,
        f"(multi<all on {multi_cheaper}/{len(runs)} samples, worst (n-1)x-targeted gap {worst_ratio_gap:.3f})",
    )


# ---------------------------------------------------------------------------
# criterion 4: filter schedule
# ---------------------------------------------------------------------------


def test_criterion_4_filter_schedule_trace():
    rng = np.random.default_rng(0)
    centroids = rng.uniform(0.05, 0.95, (10, 2))
    oracle = NearestCentroidOracle(centroids)
    aux = Dataset(
        [LabeledSample(Sample(np.clip(centroids[k], 0, 1), (1, 2, 1)), k) for k in range(10)],
        n_classes=10,
        role="aux",
    )
    x = aux.samples[3].sample
    result = bdmia.multi_targeted_hsja(
        x, 3, aux, oracle, bdmia.MultiTargetConfig(T=50, T_f=10, r=0.5, seed=0), bdmia.HsjaParams(T=50, seed=0)
    )
    ok = result.trace.survivor_counts == [9, 4, 2, 1]
    report(4, "filter-schedule trace", ok, f"(survivors {result.trace.survivor_counts})")


# ---------------------------------------------------------------------------
# criterion 5: metric oracles
# ---------------------------------------------------------------------------


def test_criterion_5_metric_oracles():
    rng = np.random.default_rng(3)

    # AUC vs brute-force pairwise probability on 200 random score sets
    worst_auc = 0.0
    for _ in range(200):
        n_m = int(rng.integers(1, 40))
        n_n = int(rng.integers(1, 40))
        members = list(rng.integers(0, 8, n_m) / 7.0)
        nonmembers = list(rng.integers(0, 8, n_n) / 7.0)
        got = auc(roc_curve(records_from(members, nonmembers)))
        wins = sum(
            1.0 if m > n else 0.5 if m == n else 0.0 for m in members for n in nonmembers
        )
        worst_auc = max(worst_auc, abs(got - wins / (n_m * n_n)))

    # Spearman vs independent rank-then-Pearson
    def spearman_by_hand(a, b):
        def ranks(values):
            out = [0.0] * len(values)
            ordered = sorted(range(len(values)), key=lambda i: values[i])
            i = 0
            while i < len(values):
                j = i
                while j + 1 < len(values) and values[ordered[j + 1]] == values[ordered[i]]:
                    j += 1
                for k in range(i, j + 1):
                    out[ordered[k]] = (i + j) / 2 + 1
                i = j + 1
            return out

        ra, rb = ranks(a), ranks(b)
        ma, mb = sum(ra) / len(ra), sum(rb) / len(rb)
        num = sum((p - ma) * (q - mb) for p, q in zip(ra, rb))
        den = math.sqrt(sum((p - ma) ** 2 for p in ra) * sum((q - mb) ** 2 for q in rb))
        return num / den

    worst_rho = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 30))
        a = list(rng.integers(0, 5, n).astype(float))
        b = list(rng.integers(0, 5, n).astype(float))
        if len(set(a)) < 2 or len(set(b)) < 2:
            continue
        worst_rho = max(worst_rho, abs(spearman(a, b) - spearman_by_hand(a, b)))

    # ROC vs exhaustive threshold enumeration
    roc_exact = True
    for _ in range(100):
        n_m = int(rng.integers(1, 25))
        n_n = int(rng.integers(1, 25))
        members = list(rng.integers(0, 6, n_m) / 5.0)
        nonmembers = list(rng.integers(0, 6, n_n) / 5.0)
        curve = roc_curve(records_from(members, nonmembers))
        expect = [(0.0, 0.0)]
        for tau in sorted(set(members) | set(nonmembers), reverse=True):
            expect.append(
                (
                    sum(1 for s in nonmembers if s >= tau) / n_n,
                    sum(1 for s in members if s >= tau) / n_m,
                )
            )
        roc_exact = roc_exact and curve.points == expect

    ok = worst_auc <= 1e-9 and worst_rho <= 1e-12 and roc_exact
    report(
        5,
        "metric oracles",
        ok,
        f"(worst AUC gap {worst_auc:.2e}, worst Spearman gap {worst_rho:.2e}, ROC exact {roc_exact})",
    )


# ---------------------------------------------------------------------------
# criterion 6: cbalanced property
# ---------------------------------------------------------------------------


def test_criterion_6_cbalanced_property():
    full = make_synthetic_dataset(
        n_classes=4, n_per_class=80, shape=(4, 4, 1), spread=0.3, seed=5, smooth_centers=True
    )
    parts = split_dataset(full, {"train": 40, "test": 40})
    target = train_mlp(parts["train"], TrainConfig(epochs=120, batch_size=64, seed=6))
    oracle = ModelOracle(target)
    evalset = bdmia.build_cbalanced_set(parts["train"], parts["test"], oracle, n_per_side=40, seed=7)

    misclassified = sum(oracle.query(e.sample.sample) != e.sample.label for e in evalset.entries)
    members = sum(e.is_member for e in evalset.entries)
    records = [
        bdmia.baseline_gap_attack(e.sample_id, e.sample.sample, e.sample.label, oracle, is_member=e.is_member)
        for e in evalset.entries
    ]
    accuracies = []
    for threshold in (0.25, 0.5, 1.0):
        verdicts = [bdmia.decide_membership(r, threshold) for r in records]
        accuracies.append(float(np.mean([v == r.is_member for v, r in zip(verdicts, records)])))
    ok = misclassified == 0 and members == len(evalset.entries) // 2 and all(a == 0.5 for a in accuracies)
    report(
        6,
        "cbalanced property",
        ok,
        f"(misclassified {misclassified}, members {members}/{len(evalset.entries)}, baseline acc {accuracies})",
    )


# ---------------------------------------------------------------------------
# criterion 7: relative-score properties
# ---------------------------------------------------------------------------


def test_criterion_7_relative_score_properties():
    from bdmia.boundary import BoundaryResult, BoundaryTrace
    from bdmia.mia import neighboring_points

    x = Sample.from_image(np.full((2, 2, 1), 0.5))
    neighbors = neighboring_points(x).neighbors

    class AlwaysSame(NearestCentroidOracle):
        def __init__(self):
            super().__init__(np.zeros((2, 4)))

        def _label_batch(self, x2d):
            return np.ones(len(x2d), dtype=np.int64)

    def stub(distances):
        table = {round(float(x.data.sum()), 6): distances[0]}
        for n, d in zip(neighbors, distances[1:]):
            table[round(float(n.data.sum()), 6)] = d

        def attack(sample, label, seed):
            d = table[round(float(sample.data.sum()), 6)]
            return BoundaryResult(sample, d, None, BoundaryTrace([d], [1], [None], [], []), queries=3)

        return attack

    base = [0.41, 0.17, 0.29, 0.33, 0.25]
    r0 = relative_boundary_score(0, x, 1, AlwaysSame(), stub(base))
    shift_ok = True
    for c in (0.05, 0.4, 2.1):
        rc = relative_boundary_score(0, x, 1, AlwaysSame(), stub([d + c for d in base]))
        shift_ok = shift_ok and abs(rc.score - r0.score) <= 1e-12

    fixed = relative_boundary_score(0, x, 1, AlwaysSame(), stub([0.3] * 5))
    fixed_ok = fixed.score == 0.0

    oracle = AlwaysSame()
    before = oracle.ledger.total
    record = relative_boundary_score(0, x, 1, oracle, stub(base))
    # 5 prechecks on the real oracle; 5 stub attack runs at 3 accounted queries each
    accounting_ok = oracle.ledger.total - before == 5 and record.boundary_queries == 5 * 3 + 5

    ok = shift_ok and fixed_ok and accounting_ok
    report(
        7,
        "relative-score properties",
        ok,
        f"(shift invariance {shift_ok}, fixed point {fixed_ok}, accounting {accounting_ok})",
    )


# ---------------------------------------------------------------------------
# criterion 8: qualitative replication of the score-option orderings
# ---------------------------------------------------------------------------


def _ordering_config(seed, attack_kind, score_kind):
    return {
        "seed": seed,
        "dataset": {
            "synthetic": {
                "n_classes": 6,
                "shape": [6, 6, 1],
                "train_per_class": 30,
                "test_per_class": 60,
                "aux_per_class": 10,
                "spread": 0.4,
                "smooth_centers": True,
                "seed": 1000 + seed,
            }
        },
        "model": {"epochs": 400, "batch_size": 64, "hidden": [128], "seed": 2000 + seed},
        "attack": {
            "kind": attack_kind,
            "T": 40,
            "T_f": 10,
            "r": 0.5,
            "theta": 0.01,
            "B0": 24,
            "Bmax": 120,
            "seed": 3000 + seed,
        },
        "score": {"kind": score_kind},
        "eval_set": {"kind": "cbalanced", "n_per_side": 100, "seed": 4000 + seed},
    }


def test_criterion_8_score_option_orderings(tmp_path):
    started = time.time()
    per_seed = []
    passes = 0
    for seed in range(5):
        results = {}
        for label, (kind, score) in {
            "untargeted": ("untargeted", "single"),
            "adaptive": ("multi-targeted", "relative"),
        }.items():
            cfg_path = tmp_path / f"c8-{seed}-{label}.json"
            cfg_path.write_text(json.dumps(_ordering_config(seed, kind, score)))
            cfg = parse_config(cfg_path)
            cfg.workers = 4
            report_, _ = run_experiment(cfg, out_dir=tmp_path / f"c8-{seed}-{label}")
            results[label] = report_
        unt, adp = results["untargeted"], results["adaptive"]
        seed_ok = (
            adp.auc >= unt.auc
            and adp.tpr_at[0.01] >= unt.tpr_at[0.01]
            and adp.auc > 0.5
            and unt.auc > 0.5
        )
        passes += seed_ok
        per_seed.append(
            f"seed{seed}: unt {unt.auc:.3f}/{unt.tpr_at[0.01]:.2f} vs adp {adp.auc:.3f}/{adp.tpr_at[0.01]:.2f}"
            f" {'ok' if seed_ok else 'X'}"
        )
    elapsed = time.time() - started
    ok = passes >= 4 and elapsed < 1800.0
    report(8, "score-option orderings", ok, f"({passes}/5 seeds, {elapsed:.0f}s; " + "; ".join(per_seed) + ")")


# ---------------------------------------------------------------------------
# criterion 9: determinism
# ---------------------------------------------------------------------------


def test_criterion_9_determinism(tmp_path):
    doc = {
        "seed": 11,
        "dataset": {
            "synthetic": {
                "n_classes": 3,
                "shape": [4, 4, 1],
                "train_per_class": 20,
                "test_per_class": 20,
                "aux_per_class": 8,
                "spread": 0.25,
                "smooth_centers": True,
            }
        },
        "model": {"epochs": 60, "batch_size": 32, "hidden": [32]},
        "attack": {"kind": "multi-targeted", "T": 10, "T_f": 5, "theta": 0.01, "B0": 8, "Bmax": 40},
        "score": {"kind": "relative"},
        "eval_set": {"kind": "cbalanced", "n_per_side": 6},
    }
    cfg_path = tmp_path / "det.json"
    cfg_path.write_text(json.dumps(doc))
    out1, out2 = tmp_path / "det1", tmp_path / "det2"
    run_experiment(parse_config(cfg_path), out_dir=out1)
    run_experiment(parse_config(cfg_path), out_dir=out2)
    scores_same = (out1 / "scores.csv").read_bytes() == (out2 / "scores.csv").read_bytes()
    metrics_same = (out1 / "metrics.json").read_bytes() == (out2 / "metrics.json").read_bytes()
    ok = scores_same and metrics_same
    report(9, "determinism", ok, f"(scores identical {scores_same}, metrics identical {metrics_same})")
