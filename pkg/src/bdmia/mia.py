"""Membership scoring: neighboring points, boundary-distance scores, baseline gap attack.

Scores are oriented so that higher means more member-like for every score
kind, which lets one ROC convention serve all attacks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import boundary
from .boundary import BoundaryResult, derive_seed
from .model import HardLabelOracle, Sample

KIND_SINGLE = "single-distance"
KIND_RELATIVE = "relative-distance"
KIND_BASELINE = "baseline-gap"

NEIGHBOR_DIRECTIONS = ("up", "down", "left", "right")

# (x, label, seed) -> BoundaryResult; see make_boundary_attack
AttackFn = Callable[[Sample, int, int], BoundaryResult]


@dataclass(frozen=True)
class NeighborSet:
    """One-pixel translations of a sample, in up/down/left/right order."""

    directions: tuple[str, ...]
    neighbors: tuple[Sample, ...]


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: int
    is_member: bool | None
    score: float
    kind: str
    boundary_queries: int

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError("membership score must be finite")


@dataclass(frozen=True)
class DistanceRow:
    """One boundary-distance measurement: the sample itself or one of its neighbors."""

    sample_id: int
    role: str  # "self" or a neighbor direction
    is_member: bool | None
    label: int
    oracle_label: int
    distance: float
    queries: int
    winning_class: int | None

    @property
    def correct(self) -> bool:
        return self.oracle_label == self.label


def neighboring_points(x: Sample) -> NeighborSet:
    """Shift the image by one pixel along each axis, zero-filling the vacated edge.

    The "up" neighbor has the content one row higher (bottom row zero), and so
    on; all channels shift together. Requires height and width >= 2.
    """
    h, w, _ = x.shape
    if h < 2 or w < 2:
        raise ValueError(f"neighboring points need height and width >= 2, got {x.shape}")
    img = x.as_image()
    shifted = {
        "up": np.zeros_like(img),
        "down": np.zeros_like(img),
        "left": np.zeros_like(img),
        "right": np.zeros_like(img),
    }
    shifted["up"][:-1, :, :] = img[1:, :, :]
    shifted["down"][1:, :, :] = img[:-1, :, :]
    shifted["left"][:, :-1, :] = img[:, 1:, :]
    shifted["right"][:, 1:, :] = img[:, :-1, :]
    return NeighborSet(
        directions=NEIGHBOR_DIRECTIONS,
        neighbors=tuple(Sample.from_image(shifted[d]) for d in NEIGHBOR_DIRECTIONS),
    )


def sample_distances(
    sample_id: int,
    x: Sample,
    y: int,
    oracle: HardLabelOracle,
    attack: AttackFn,
    seed: int,
    with_neighbors: bool,
    is_member: bool | None = None,
    strict: bool = True,
) -> tuple[list[DistanceRow], list[tuple[str, BoundaryResult]]]:
    """Boundary distances for a sample and (optionally) its four neighbors.

    A misclassified sample raises when ``strict`` (the attack is only defined
    on correctly classified inputs); otherwise it gets distance 0 without an
    attack run, mirroring the baseline treatment of misclassified samples.
    Misclassified neighbors always contribute distance 0 and stay in the set.
    Returns the distance rows plus (trace id, result) pairs for trace export.
    """
    rows: list[DistanceRow] = []
    traces: list[tuple[str, BoundaryResult]] = []
    y_hat = oracle.query(x, "precheck")
    if y_hat == y:
        result = attack(x, y, seed)
        rows.append(
            DistanceRow(sample_id, "self", is_member, y, y_hat, result.distance, result.queries + 1, result.winning_target_class)
        )
        traces.append((f"{sample_id}", result))
    else:
        if strict:
            raise ValueError(f"sample {sample_id} is misclassified ({y_hat} != {y}); boundary score undefined")
        rows.append(DistanceRow(sample_id, "self", is_member, y, y_hat, 0.0, 1, None))

    if with_neighbors:
        ns = neighboring_points(x)
        for i, (direction, xn) in enumerate(zip(ns.directions, ns.neighbors)):
            yn = oracle.query(xn, "precheck")
            if yn == y:
                result = attack(xn, yn, derive_seed(seed, 3, i))
                rows.append(
                    DistanceRow(sample_id, direction, is_member, y, yn, result.distance, result.queries + 1, result.winning_target_class)
                )
                traces.append((f"{sample_id}/{direction}", result))
            else:
                rows.append(DistanceRow(sample_id, direction, is_member, y, yn, 0.0, 1, None))
    return rows, traces


def score_from_rows(rows: Sequence[DistanceRow], kind: str, strict: bool = True) -> ScoreRecord:
    """Turn the distance rows of one sample into its membership score."""
    self_rows = [r for r in rows if r.role == "self"]
    if len(self_rows) != 1:
        raise ValueError("expected exactly one self row per sample")
    self_row = self_rows[0]
    neighbor_rows = [r for r in rows if r.role != "self"]
    total_queries = sum(r.queries for r in rows)

    if kind == KIND_BASELINE:
        score = 1.0 if self_row.correct else 0.0
    elif kind == KIND_SINGLE:
        if strict and not self_row.correct:
            raise ValueError("single-distance score undefined for a misclassified sample")
        score = self_row.distance
    elif kind == KIND_RELATIVE:
        if strict and not self_row.correct:
            raise ValueError("relative score undefined for a misclassified sample")
        if len(neighbor_rows) != len(NEIGHBOR_DIRECTIONS):
            raise ValueError(f"relative score needs {len(NEIGHBOR_DIRECTIONS)} neighbor rows, got {len(neighbor_rows)}")
        score = self_row.distance - float(np.mean([r.distance for r in neighbor_rows]))
    else:
        raise ValueError(f"unknown score kind {kind!r}")
    return ScoreRecord(
        sample_id=self_row.sample_id,
        is_member=self_row.is_member,
        score=float(score),
        kind=kind,
        boundary_queries=total_queries,
    )


def boundary_distance_score(
    sample_id: int,
    x: Sample,
    y: int,
    oracle: HardLabelOracle,
    attack: AttackFn,
    seed: int = 0,
    is_member: bool | None = None,
) -> ScoreRecord:
    """Single boundary-distance membership score (requires a correctly classified x)."""
    rows, _ = sample_distances(sample_id, x, y, oracle, attack, seed, with_neighbors=False, is_member=is_member)
    return score_from_rows(rows, KIND_SINGLE)


def relative_boundary_score(
    sample_id: int,
    x: Sample,
    y: int,
    oracle: HardLabelOracle,
    attack: AttackFn,
    seed: int = 0,
    is_member: bool | None = None,
) -> ScoreRecord:
    """Relative boundary-distance score: d(x) minus the mean neighbor distance.

    Each neighbor is attacked with its own oracle label when that label
    matches y; a neighbor the oracle labels differently contributes distance 0
    and is retained in the mean.
    """
    rows, _ = sample_distances(sample_id, x, y, oracle, attack, seed, with_neighbors=True, is_member=is_member)
    return score_from_rows(rows, KIND_RELATIVE)


def baseline_gap_attack(
    sample_id: int,
    x: Sample,
    y_true: int,
    oracle: HardLabelOracle,
    is_member: bool | None = None,
) -> ScoreRecord:
    """Predict member iff the oracle classifies the sample correctly (score 1 or 0)."""
    correct = oracle.query(x, "baseline") == y_true
    return ScoreRecord(sample_id=sample_id, is_member=is_member, score=1.0 if correct else 0.0, kind=KIND_BASELINE, boundary_queries=1)


def decide_membership(record: ScoreRecord, threshold: float) -> bool:
    """Member iff the score reaches the threshold (boundary inclusive)."""
    return record.score >= threshold


def make_boundary_attack(kind, oracle, params, multi=None, aux=None) -> AttackFn:
    """Bind a boundary driver into an (x, label, seed) -> BoundaryResult callable.

    ``kind`` is one of "untargeted", "all-targeted", "multi-targeted"; the
    targeted kinds need an auxiliary dataset for initializations. The seed
    passed per call replaces ``params.seed`` (and derives the candidate
    scan-order seed), so pipelines can give each sample its own stream.
    """
    if kind not in ("untargeted", "all-targeted", "multi-targeted"):
        raise ValueError(f"unknown attack kind {kind!r}")
    if kind in ("all-targeted", "multi-targeted") and aux is None:
        raise ValueError(f"{kind} attack needs an auxiliary dataset")
    if kind == "multi-targeted" and multi is None:
        raise ValueError("multi-targeted attack needs a MultiTargetConfig")

    def attack(x: Sample, y: int, seed: int) -> BoundaryResult:
        p = replace(params, seed=seed)
        if kind == "untargeted":
            return boundary.untargeted_hsja(x, y, oracle, p)
        if kind == "multi-targeted":
            cfg = replace(multi, seed=derive_seed(seed, 4))
            return boundary.multi_targeted_hsja(x, y, aux, oracle, cfg, p)
        inits = boundary.select_class_inits(aux, y, oracle, aux.n_classes, derive_seed(seed, 4))
        return boundary.all_targeted_hsja(x, y, inits, oracle, p)

    return attack


# ---------------------------------------------------------------------------
# CSV persistence
# ---------------------------------------------------------------------------


def write_scores_csv(path, records: Sequence[ScoreRecord]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "is_member", "kind", "score", "queries"])
        for r in records:
            member = "" if r.is_member is None else int(r.is_member)
            writer.writerow([r.sample_id, member, r.kind, repr(float(r.score)), r.boundary_queries])


def read_scores_csv(path) -> list[ScoreRecord]:
    records = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            member = None if row["is_member"] == "" else bool(int(row["is_member"]))
            records.append(
                ScoreRecord(
                    sample_id=int(row["sample_id"]),
                    is_member=member,
                    score=float(row["score"]),
                    kind=row["kind"],
                    boundary_queries=int(row["queries"]),
                )
            )
    return records


def write_distances_csv(path, rows: Sequence[DistanceRow]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "role", "is_member", "label", "oracle_label", "distance", "queries", "winning_class"])
        for r in rows:
            member = "" if r.is_member is None else int(r.is_member)
            winning = "" if r.winning_class is None else r.winning_class
            writer.writerow([r.sample_id, r.role, member, r.label, r.oracle_label, repr(float(r.distance)), r.queries, winning])


def read_distances_csv(path) -> list[DistanceRow]:
    rows = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rows.append(
                DistanceRow(
                    sample_id=int(row["sample_id"]),
                    role=row["role"],
                    is_member=None if row["is_member"] == "" else bool(int(row["is_member"])),
                    label=int(row["label"]),
                    oracle_label=int(row["oracle_label"]),
                    distance=float(row["distance"]),
                    queries=int(row["queries"]),
                    winning_class=None if row["winning_class"] == "" else int(row["winning_class"]),
                )
            )
    return rows
