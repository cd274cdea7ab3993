"""Evaluation sets, ROC metrics at low FPR, and boundary-distance stability analyses."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .boundary import BoundaryResult, HsjaParams, derive_seed, untargeted_hsja
from .errors import InsufficientCorrect, InsufficientData
from .mia import ScoreRecord
from .model import Dataset, HardLabelOracle, LabeledSample

DEFAULT_FPR_LEVELS = (0.001, 0.01)
STABILITY_REPEATS = 10


# ---------------------------------------------------------------------------
# evaluation sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalEntry:
    sample_id: int
    sample: LabeledSample
    is_member: bool


@dataclass
class EvalSet:
    entries: list[EvalEntry]
    kind: str
    seed: int

    def members(self) -> list[EvalEntry]:
        return [e for e in self.entries if e.is_member]

    def nonmembers(self) -> list[EvalEntry]:
        return [e for e in self.entries if not e.is_member]


def build_balanced_set(train: Dataset, test: Dataset, n_per_side: int, seed: int) -> EvalSet:
    """n_per_side members sampled from train plus the same number of nonmembers from test."""
    if n_per_side < 1:
        raise ValueError("n_per_side must be >= 1")
    if len(train) < n_per_side:
        raise InsufficientData(f"train side has {len(train)} samples, need {n_per_side}")
    if len(test) < n_per_side:
        raise InsufficientData(f"test side has {len(test)} samples, need {n_per_side}")
    rng = np.random.default_rng(seed)
    member_idx = rng.choice(len(train), size=n_per_side, replace=False)
    nonmember_idx = rng.choice(len(test), size=n_per_side, replace=False)
    entries = [EvalEntry(i, train.samples[int(j)], True) for i, j in enumerate(member_idx)]
    entries += [EvalEntry(n_per_side + i, test.samples[int(j)], False) for i, j in enumerate(nonmember_idx)]
    return EvalSet(entries=entries, kind="balanced", seed=seed)


def build_cbalanced_set(
    train: Dataset,
    test: Dataset,
    oracle: HardLabelOracle,
    n_per_side: int,
    seed: int,
) -> EvalSet:
    """Balanced set restricted to samples the oracle classifies correctly."""
    if n_per_side < 1:
        raise ValueError("n_per_side must be >= 1")
    rng = np.random.default_rng(seed)

    def pick(dataset: Dataset, side: str) -> list[LabeledSample]:
        chosen = []
        for idx in rng.permutation(len(dataset)):
            ls = dataset.samples[int(idx)]
            if oracle.query(ls.sample, "eval-filter") == ls.label:
                chosen.append(ls)
                if len(chosen) == n_per_side:
                    return chosen
        raise InsufficientCorrect(
            f"{side} side has only {len(chosen)} correctly classified samples, need {n_per_side}",
            side=side,
        )

    members = pick(train, "member")
    nonmembers = pick(test, "nonmember")
    entries = [EvalEntry(i, ls, True) for i, ls in enumerate(members)]
    entries += [EvalEntry(n_per_side + i, ls, False) for i, ls in enumerate(nonmembers)]
    return EvalSet(entries=entries, kind="cbalanced", seed=seed)


# ---------------------------------------------------------------------------
# ROC metrics
# ---------------------------------------------------------------------------


@dataclass
class RocCurve:
    """Threshold sweep (descending) with one point per distinct score, plus endpoints."""

    thresholds: list[float]
    points: list[tuple[float, float]]  # (fpr, tpr)


@dataclass
class MetricsReport:
    auc: float
    tpr_at: dict[float, float]
    n_members: int
    n_nonmembers: int
    kind: str


def roc_curve(records: Sequence[ScoreRecord]) -> RocCurve:
    """ROC from score records: member iff score >= threshold, ties move together."""
    member_scores = np.array([r.score for r in records if r.is_member], dtype=np.float64)
    nonmember_scores = np.array([r.score for r in records if not r.is_member], dtype=np.float64)
    if member_scores.size == 0 or nonmember_scores.size == 0:
        raise ValueError("ROC needs at least one member and one nonmember record")
    thresholds = [math.inf] + sorted({float(r.score) for r in records}, reverse=True)
    points = []
    for tau in thresholds:
        tpr = float(np.mean(member_scores >= tau)) if tau != math.inf else 0.0
        fpr = float(np.mean(nonmember_scores >= tau)) if tau != math.inf else 0.0
        points.append((fpr, tpr))
    return RocCurve(thresholds=thresholds, points=points)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the sweep; equals the pairwise Mann-Whitney probability."""
    fprs = np.array([p[0] for p in curve.points])
    tprs = np.array([p[1] for p in curve.points])
    return float(np.trapezoid(tprs, fprs))


def tpr_at_fpr(curve: RocCurve, fpr_level: float) -> float:
    """Highest swept TPR among points with FPR <= the level (step function, no interpolation)."""
    if not 0.0 <= fpr_level <= 1.0:
        raise ValueError("fpr_level must be in [0, 1]")
    return max(tpr for fpr, tpr in curve.points if fpr <= fpr_level)


def compute_metrics(
    records: Sequence[ScoreRecord],
    kind: str | None = None,
    fpr_levels: Sequence[float] = DEFAULT_FPR_LEVELS,
) -> MetricsReport:
    curve = roc_curve(records)
    if kind is None:
        kinds = {r.kind for r in records}
        kind = kinds.pop() if len(kinds) == 1 else "mixed"
    return MetricsReport(
        auc=auc(curve),
        tpr_at={level: tpr_at_fpr(curve, level) for level in fpr_levels},
        n_members=sum(1 for r in records if r.is_member),
        n_nonmembers=sum(1 for r in records if not r.is_member),
        kind=kind,
    )


# ---------------------------------------------------------------------------
# stability analyses
# ---------------------------------------------------------------------------


def stability_classify(mean: float, std: float) -> str:
    """"stable" iff the standard deviation is below one tenth of the mean (strict)."""
    if mean < 0 or std < 0:
        raise ValueError("mean and std must be non-negative")
    if mean == 0:
        return "stable" if std == 0 else "bias"
    return "stable" if std < 0.1 * mean else "bias"


def min_region_analysis(distances: Mapping[str, float]) -> dict[str, bool]:
    """Which methods land in [d_min, 1.1 * d_min], with d_min the best finite distance."""
    finite = [v for v in distances.values() if math.isfinite(v)]
    if not finite:
        raise ValueError("min-region analysis needs at least one finite distance")
    d_min = min(finite)
    return {k: math.isfinite(v) and v <= 1.1 * d_min for k, v in distances.items()}


def _rank_average_ties(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson correlation of fractional (average) ranks."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or len(x) != len(y):
        raise ValueError("inputs must be 1-D sequences of equal length")
    if len(x) < 2:
        raise ValueError("need at least two observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ValueError("correlation undefined for a constant input")
    rx = _rank_average_ties(x) - (len(x) + 1) / 2.0
    ry = _rank_average_ties(y) - (len(y) + 1) / 2.0
    return float(np.sum(rx * ry) / math.sqrt(float(np.sum(rx * rx)) * float(np.sum(ry * ry))))


@dataclass
class StabilityRecord:
    """Repeated-attack statistics for one sample.

    ``reached_min_region`` marks whether the mean lies within 1.1x the best
    distance seen across the repeats (the runs concentrate near their own
    minimum). ``winning_classes`` holds the adversarial class of each repeat's
    final point.
    """

    sample_id: int
    mean: float
    std: float
    stable: bool
    reached_min_region: bool
    winning_classes: list[int]


@dataclass
class StabilityReport:
    records: list[StabilityRecord]
    repeats: int


def stability_experiment(
    samples: Sequence[tuple[int, LabeledSample]],
    oracle: HardLabelOracle,
    params: HsjaParams,
    repeats: int = STABILITY_REPEATS,
) -> StabilityReport:
    """Repeat the untargeted attack per sample and classify distance stability."""
    if repeats < 2:
        raise ValueError("need at least two repeats")
    records = []
    for sid, ls in samples:
        distances, classes = [], []
        for rep in range(repeats):
            result: BoundaryResult = untargeted_hsja(
                ls.sample, ls.label, oracle, replace(params, seed=derive_seed(params.seed, 5, sid, rep))
            )
            distances.append(result.distance)
            classes.append(oracle.query(result.x_p, "stability-label"))
        mean = float(np.mean(distances))
        std = float(np.std(distances))
        records.append(
            StabilityRecord(
                sample_id=sid,
                mean=mean,
                std=std,
                stable=stability_classify(mean, std) == "stable",
                reached_min_region=min_region_analysis({"mean": mean, "best": min(distances)})["mean"],
                winning_classes=classes,
            )
        )
    return StabilityReport(records=records, repeats=repeats)


def stability_summary(report: StabilityReport) -> dict:
    """Aggregate counts plus the rank correlation between same-target-class and stability.

    Coding: same_class = 1 when every repeat ended in one adversarial class,
    stable = 1 for a stable sample. The correlation is null when either
    variable is constant.
    """
    same_class = [1.0 if len(set(r.winning_classes)) == 1 else 0.0 for r in report.records]
    stable = [1.0 if r.stable else 0.0 for r in report.records]
    try:
        rho = spearman(same_class, stable)
    except ValueError:
        rho = None
    return {
        "n_samples": len(report.records),
        "repeats": report.repeats,
        "n_stable": int(sum(stable)),
        "n_same_class": int(sum(same_class)),
        "spearman_same_class_vs_stable": rho,
    }


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def write_roc_csv(path, curve: RocCurve) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["threshold", "fpr", "tpr"])
        for tau, (fpr, tpr) in zip(curve.thresholds, curve.points):
            writer.writerow([repr(float(tau)), repr(float(fpr)), repr(float(tpr))])


def metrics_to_dict(report: MetricsReport) -> dict:
    doc = {"auc": report.auc, "kind": report.kind, "n": report.n_members + report.n_nonmembers}
    for level, tpr in sorted(report.tpr_at.items()):
        doc[f"tpr_at_{level:g}"] = tpr
    return doc


def write_metrics_json(path, report: MetricsReport) -> None:
    with open(path, "w") as f:
        json.dump(metrics_to_dict(report), f, sort_keys=True, indent=2)
        f.write("\n")


def write_stability_csv(path, report: StabilityReport) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "mean", "std", "stable", "reached_min_region", "winning_classes"])
        for r in report.records:
            writer.writerow(
                [
                    r.sample_id,
                    repr(float(r.mean)),
                    repr(float(r.std)),
                    int(r.stable),
                    int(r.reached_min_region),
                    "|".join(str(c) for c in r.winning_classes),
                ]
            )
