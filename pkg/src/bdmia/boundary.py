"""Decision-based attack engine: bisection, gradient estimation, and the HSJA drivers.

All drivers return a :class:`BoundaryResult` whose perturbed point satisfies
its adversarial predicate and whose trace records best-so-far distances per
iteration. Randomness is fully determined by integer seeds; per-class streams
are derived via :func:`class_seed` so that the targeted, all-targeted, and
multi-targeted drivers are exactly comparable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .errors import InitFailure, InsufficientAux, InvalidBracket, InvalidInit
from .model import Dataset, HardLabelOracle, Sample

STEP_FLOOR = 1e-12
DELTA_FLOOR = 1e-6

_SEED_MASK = (1 << 63) - 1


def derive_seed(base: int, *keys: int) -> int:
    """Stable child seed from a base seed and non-negative integer keys."""
    ss = np.random.SeedSequence([int(base) & _SEED_MASK, *[int(k) & _SEED_MASK for k in keys]])
    return int(ss.generate_state(1, np.uint64)[0])


def class_seed(seed: int, target_class: int) -> int:
    """Seed of the per-class attack stream used by the all/multi-targeted drivers."""
    return derive_seed(seed, 1, target_class)


def sample_seed(seed: int, sample_id: int) -> int:
    """Seed of the per-sample attack stream used by scoring pipelines."""
    return derive_seed(seed, 2, sample_id)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdvPredicate:
    """Adversarial success condition evaluated on oracle labels.

    Untargeted: the label differs from the source label. Targeted: the label
    equals the target class (which must differ from the source label).
    """

    source_label: int
    target_class: int | None = None

    def __post_init__(self):
        if self.target_class is not None and self.target_class == self.source_label:
            raise ValueError("target class must differ from the source label")

    @staticmethod
    def untargeted(source_label: int) -> "AdvPredicate":
        return AdvPredicate(source_label=source_label)

    @staticmethod
    def targeted(source_label: int, target_class: int) -> "AdvPredicate":
        return AdvPredicate(source_label=source_label, target_class=target_class)

    @property
    def is_targeted(self) -> bool:
        return self.target_class is not None

    def holds(self, label: int) -> bool:
        if self.target_class is None:
            return label != self.source_label
        return label == self.target_class

    def holds_batch(self, labels: np.ndarray) -> np.ndarray:
        if self.target_class is None:
            return labels != self.source_label
        return labels == self.target_class


@dataclass(frozen=True)
class HsjaParams:
    """Knobs of one HSJA run.

    theta is the bisection tolerance as a fraction of the current segment;
    the probe count at iteration t is min(Bmax, ceil(B0 * sqrt(t))) and the
    probe radius is max(1e-6, theta * current distance). ``max_queries``
    optionally soft-caps a single driver run (checked per iteration).
    """

    T: int = 50
    theta: float = 1e-3
    B0: int = 20
    Bmax: int = 200
    init_attempts: int = 1000
    seed: int = 0
    max_queries: int | None = None

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must be in (0, 1)")
        if self.B0 < 4:
            raise ValueError("B0 must be >= 4")
        if self.Bmax < self.B0:
            raise ValueError("Bmax must be >= B0")
        if self.init_attempts < 1:
            raise ValueError("init_attempts must be >= 1")
        if self.max_queries is not None and self.max_queries < 1:
            raise ValueError("max_queries must be >= 1 when set")


@dataclass(frozen=True)
class MultiTargetConfig:
    """Iteration budget and filter schedule of the multi-targeted driver."""

    T: int = 50
    T_f: int = 10
    r: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 1 <= self.T_f <= self.T:
            raise ValueError("T_f must be in [1, T]")
        if not 0.0 < self.r < 1.0:
            raise ValueError("r must be in (0, 1)")


@dataclass
class BoundaryTrace:
    """Per-iteration history of a driver run.

    Index 0 is the state right after initialization (projection to the
    boundary); index t is the state after iteration t. Distances are
    best-so-far and therefore non-increasing. ``survivor_counts`` is only
    populated by the multi-targeted driver: the initial candidate count
    followed by the count after each filter event.
    """

    distances: list[float]
    queries: list[int]
    candidate_classes: list[int | None]
    survivor_counts: list[int]
    degenerate_iterations: list[int]
    budget_exceeded: bool = False


@dataclass
class BoundaryResult:
    x_p: Sample
    distance: float
    winning_target_class: int | None
    trace: BoundaryTrace
    queries: int


class IterateResult(NamedTuple):
    x: np.ndarray
    distance: float
    degenerate: bool


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def _vec(x) -> np.ndarray:
    if isinstance(x, Sample):
        return x.data.astype(np.float64)
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _decide(oracle: HardLabelOracle, pred: AdvPredicate, point: np.ndarray, phase: str) -> bool:
    return pred.holds(oracle.query(point, phase))


def bisect_to_boundary(x, x_adv, pred: AdvPredicate, oracle: HardLabelOracle, theta: float) -> np.ndarray:
    """Binary search along [x, x_adv] for a boundary point on the adversarial side.

    Requires pred(x_adv) (re-checked with one query; violation raises
    :class:`InvalidBracket`) and pred(x) false, which is the caller's
    contract. The bracket is narrowed until its width is at most
    theta * ||x_adv - x||; segments already shorter than theta are returned
    as-is. The result is clamped to [0, 1].
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must be in (0, 1)")
    x0 = _vec(x)
    x1 = _vec(x_adv)
    if not _decide(oracle, pred, x1, "bisect"):
        raise InvalidBracket("x_adv does not satisfy the adversarial predicate")
    if float(np.linalg.norm(x1 - x0)) <= theta:
        return np.clip(x1, 0.0, 1.0)
    lo, hi = 0.0, 1.0
    while hi - lo > theta:
        mid = 0.5 * (lo + hi)
        if _decide(oracle, pred, x0 + mid * (x1 - x0), "bisect"):
            hi = mid
        else:
            lo = mid
    return np.clip(x0 + hi * (x1 - x0), 0.0, 1.0)


def estimate_gradient(
    x_b,
    pred: AdvPredicate,
    oracle: HardLabelOracle,
    delta: float,
    B: int,
    seed,
) -> tuple[np.ndarray, bool]:
    """Monte-Carlo estimate of the boundary-normal direction at x_b.

    Draws B unit-sphere probes u, scores each probe +1/-1 by the predicate at
    clamp(x_b + delta * u), and returns the normalized mean-centered weighted
    sum. When every probe lands on one side the weighted sum is exactly zero;
    a fresh random unit vector is returned instead and flagged as degenerate.
    ``seed`` may be an int or a numpy Generator.
    """
    if not delta > 0:
        raise ValueError("delta must be > 0")
    if B < 4:
        raise ValueError("B must be >= 4")
    rng = np.random.default_rng(seed)
    xb = _vec(x_b)
    u = rng.standard_normal((B, xb.size))
    u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-30)
    probes = np.clip(xb + delta * u, 0.0, 1.0)
    labels = oracle.query_batch(probes, "grad")
    phi = np.where(pred.holds_batch(labels), 1.0, -1.0)
    weighted = ((phi - phi.mean())[:, None] * u).sum(axis=0)
    if not weighted.any():
        g = rng.standard_normal(xb.size)
        return g / np.linalg.norm(g), True
    return weighted / np.linalg.norm(weighted), False


def geometric_step(x, x_b, grad: np.ndarray, pred: AdvPredicate, oracle: HardLabelOracle, t: int) -> np.ndarray:
    """Step from the boundary point along grad, halving until adversarial.

    The initial step size is ||x_b - x|| / sqrt(t); if it shrinks below 1e-12
    without finding an adversarial candidate, x_b is returned unchanged.
    Candidates are clamped to [0, 1].
    """
    if t < 1:
        raise ValueError("iteration t must be >= 1")
    x0 = _vec(x)
    xb = _vec(x_b)
    xi = float(np.linalg.norm(xb - x0)) / math.sqrt(t)
    while xi >= STEP_FLOOR:
        candidate = np.clip(xb + xi * grad, 0.0, 1.0)
        if _decide(oracle, pred, candidate, "step"):
            return candidate
        xi *= 0.5
    return xb.copy()


def hsja_iterate(
    x,
    x_t,
    pred: AdvPredicate,
    oracle: HardLabelOracle,
    params: HsjaParams,
    t: int,
    rng=None,
) -> IterateResult:
    """One full HSJA step: gradient estimate, geometric step, boundary bisection.

    Returns the best-so-far iterate: whichever of the incoming point and the
    refined candidate lies closer to x.
    """
    x0 = _vec(x)
    xt = _vec(x_t)
    d_prev = float(np.linalg.norm(xt - x0))
    B_t = min(params.Bmax, math.ceil(params.B0 * math.sqrt(t)))
    delta_t = max(DELTA_FLOOR, params.theta * d_prev)
    grad, degenerate = estimate_gradient(xt, pred, oracle, delta_t, B_t, rng if rng is not None else params.seed)
    stepped = geometric_step(x0, xt, grad, pred, oracle, t)
    refined = bisect_to_boundary(x0, stepped, pred, oracle, params.theta)
    d_new = float(np.linalg.norm(refined - x0))
    if d_new <= d_prev:
        return IterateResult(refined, d_new, degenerate)
    return IterateResult(xt, d_prev, degenerate)


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


def _finalize(x: Sample, best: np.ndarray, winning: int | None, trace: BoundaryTrace, queries: int) -> BoundaryResult:
    x_p = Sample(np.clip(best, 0.0, 1.0), x.shape)
    distance = float(np.linalg.norm(x_p.data.astype(np.float64) - x.data.astype(np.float64)))
    return BoundaryResult(x_p=x_p, distance=distance, winning_target_class=winning, trace=trace, queries=queries)


def _over_budget(oracle: HardLabelOracle, start: int, params: HsjaParams) -> bool:
    return params.max_queries is not None and oracle.ledger.total - start >= params.max_queries


def _drive(
    x: Sample,
    pred: AdvPredicate,
    init: np.ndarray,
    oracle: HardLabelOracle,
    params: HsjaParams,
    rng: np.random.Generator,
    winning: int | None,
    run_start: int,
) -> BoundaryResult:
    """Shared untargeted/targeted loop: project the init, then iterate T times."""
    x0 = _vec(x)
    mark = oracle.ledger.total
    cur = bisect_to_boundary(x0, init, pred, oracle, params.theta)
    d = float(np.linalg.norm(cur - x0))
    trace = BoundaryTrace(
        distances=[d],
        queries=[oracle.ledger.total - mark],
        candidate_classes=[winning],
        survivor_counts=[],
        degenerate_iterations=[],
    )
    for t in range(1, params.T + 1):
        if _over_budget(oracle, run_start, params):
            trace.budget_exceeded = True
            break
        mark = oracle.ledger.total
        res = hsja_iterate(x0, cur, pred, oracle, params, t, rng)
        cur, d = res.x, res.distance
        if res.degenerate:
            trace.degenerate_iterations.append(t)
        trace.distances.append(d)
        trace.queries.append(oracle.ledger.total - mark)
        trace.candidate_classes.append(winning)
    return _finalize(x, cur, winning, trace, oracle.ledger.total - run_start)


def untargeted_hsja(x: Sample, y: int, oracle: HardLabelOracle, params: HsjaParams) -> BoundaryResult:
    """Untargeted attack from a uniform-random misclassified initialization.

    Requires the oracle to classify x as y. Random points in [0, 1]^dim are
    drawn until one is misclassified (at most ``init_attempts``, else
    :class:`InitFailure`), projected to the boundary, then iterated T times.
    """
    pred = AdvPredicate.untargeted(y)
    run_start = oracle.ledger.total
    if oracle.query(x, "precheck") != y:
        raise ValueError("untargeted attack requires a correctly classified sample")
    rng = np.random.default_rng(params.seed)
    init = None
    for _ in range(params.init_attempts):
        candidate = rng.uniform(0.0, 1.0, x.dim)
        if _decide(oracle, pred, candidate, "init"):
            init = candidate
            break
    if init is None:
        raise InitFailure(f"no adversarial initialization found in {params.init_attempts} attempts")
    return _drive(x, pred, init, oracle, params, rng, None, run_start)


def targeted_hsja(
    x: Sample,
    y: int,
    target_class: int,
    x_init: Sample,
    oracle: HardLabelOracle,
    params: HsjaParams,
) -> BoundaryResult:
    """Targeted attack from a fixed initialization classified as the target class."""
    pred = AdvPredicate.targeted(y, target_class)
    run_start = oracle.ledger.total
    if oracle.query(x_init, "init") != target_class:
        raise InvalidInit(f"initialization is not classified as class {target_class}", target_class=target_class)
    rng = np.random.default_rng(params.seed)
    return _drive(x, pred, _vec(x_init), oracle, params, rng, target_class, run_start)


def _aggregate_traces(per_class: dict[int, BoundaryTrace]) -> BoundaryTrace:
    """Best distance across class runs per iteration; query counts summed."""
    classes = sorted(per_class)
    length = max(len(per_class[c].distances) for c in classes)
    distances, queries, cand = [], [], []
    for i in range(length):
        best_c = None
        best_d = math.inf
        q = 0
        for c in classes:
            tr = per_class[c]
            d = tr.distances[min(i, len(tr.distances) - 1)]
            if d < best_d:
                best_d, best_c = d, c
            if i < len(tr.queries):
                q += tr.queries[i]
        distances.append(best_d)
        queries.append(q)
        cand.append(best_c)
    degenerate = sorted({t for c in classes for t in per_class[c].degenerate_iterations})
    budget = any(per_class[c].budget_exceeded for c in classes)
    return BoundaryTrace(distances, queries, cand, [], degenerate, budget)


def all_targeted_hsja(
    x: Sample,
    y: int,
    inits: Mapping[int, Sample],
    oracle: HardLabelOracle,
    params: HsjaParams,
) -> BoundaryResult:
    """Run a targeted attack per non-source class and keep the shortest distance.

    Each class run uses the derived stream ``class_seed(params.seed, c)``, so
    its result is identical to a standalone targeted run with that seed. The
    query count is the sum over class runs.
    """
    if not inits:
        raise ValueError("all-targeted attack needs at least one initialization")
    if y in inits:
        raise InvalidInit("source class cannot be an attack target", target_class=y)
    results: dict[int, BoundaryResult] = {}
    for c in sorted(inits):
        results[c] = targeted_hsja(x, y, c, inits[c], oracle, replace(params, seed=class_seed(params.seed, c)))
    best_class = min(results, key=lambda c: (results[c].distance, c))
    best = results[best_class]
    trace = _aggregate_traces({c: r.trace for c, r in results.items()})
    total = sum(r.queries for r in results.values())
    return BoundaryResult(
        x_p=best.x_p,
        distance=best.distance,
        winning_target_class=best_class,
        trace=trace,
        queries=total,
    )


def select_class_inits(
    aux: Dataset,
    y: int,
    oracle: HardLabelOracle,
    n_classes: int,
    seed: int,
    phase: str = "init",
) -> dict[int, Sample]:
    """First correctly classified auxiliary sample per non-source class, in seeded scan order."""
    needed = set(range(n_classes)) - {y}
    order = np.random.default_rng(seed).permutation(len(aux.samples))
    found: dict[int, Sample] = {}
    for idx in order:
        ls = aux.samples[int(idx)]
        if ls.label in needed and ls.label not in found:
            if oracle.query(ls.sample, phase) == ls.label:
                found[ls.label] = ls.sample
                if len(found) == len(needed):
                    break
    missing = sorted(needed - found.keys())
    if missing:
        raise InsufficientAux(
            f"auxiliary dataset has no correctly classified sample for classes {missing}",
            missing_classes=missing,
        )
    return found


def multi_targeted_hsja(
    x: Sample,
    y: int,
    aux: Dataset,
    oracle: HardLabelOracle,
    config: MultiTargetConfig,
    params: HsjaParams,
) -> BoundaryResult:
    """Jointly advance one candidate per non-source class, periodically pruning.

    Candidates start from correctly classified auxiliary samples (one per
    class, seeded scan order). Every ``T_f`` iterations the candidates are
    sorted by current distance and the best max(1, floor(r * k)) survive,
    until a single candidate remains. Per-candidate randomness uses
    ``class_seed(params.seed, c)``, matching the all-targeted driver exactly.
    """
    run_start = oracle.ledger.total
    x0 = _vec(x)
    inits = select_class_inits(aux, y, oracle, aux.n_classes, config.seed)

    candidates = []
    for c in sorted(inits):
        pred = AdvPredicate.targeted(y, c)
        cur = bisect_to_boundary(x0, _vec(inits[c]), pred, oracle, params.theta)
        candidates.append(
            {
                "c": c,
                "pred": pred,
                "rng": np.random.default_rng(class_seed(params.seed, c)),
                "x": cur,
                "d": float(np.linalg.norm(cur - x0)),
                "degenerate": [],
            }
        )

    best0 = min(candidates, key=lambda s: (s["d"], s["c"]))
    trace = BoundaryTrace(
        distances=[best0["d"]],
        queries=[oracle.ledger.total - run_start],
        candidate_classes=[best0["c"]],
        survivor_counts=[len(candidates)],
        degenerate_iterations=[],
    )

    for t in range(1, config.T + 1):
        if _over_budget(oracle, run_start, params):
            trace.budget_exceeded = True
            break
        mark = oracle.ledger.total
        for cand in candidates:
            res = hsja_iterate(x0, cand["x"], cand["pred"], oracle, params, t, cand["rng"])
            cand["x"], cand["d"] = res.x, res.distance
            if res.degenerate:
                cand["degenerate"].append(t)
        best = min(candidates, key=lambda s: (s["d"], s["c"]))
        trace.distances.append(best["d"])
        trace.queries.append(oracle.ledger.total - mark)
        trace.candidate_classes.append(best["c"])
        if t % config.T_f == 0 and len(candidates) > 1:
            candidates.sort(key=lambda s: (s["d"], s["c"]))
            keep = max(1, math.floor(config.r * len(candidates)))
            candidates = candidates[:keep]
            trace.survivor_counts.append(keep)

    winner = min(candidates, key=lambda s: (s["d"], s["c"]))
    trace.degenerate_iterations = sorted({t for cand in candidates for t in cand["degenerate"]})
    return _finalize(x, winner["x"], winner["c"], trace, oracle.ledger.total - run_start)


# ---------------------------------------------------------------------------
# trace export
# ---------------------------------------------------------------------------


def write_trace_csv(path, items: Iterable[tuple[object, BoundaryResult]]) -> None:
    """CSV of per-iteration attack progress: one row per (sample, iteration)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "iteration", "candidate_class", "distance", "cumulative_queries"])
        for sample_id, result in items:
            cumulative = 0
            tr = result.trace
            for i, (dist, q, cls) in enumerate(zip(tr.distances, tr.queries, tr.candidate_classes)):
                cumulative += q
                writer.writerow([sample_id, i, "" if cls is None else cls, repr(float(dist)), cumulative])
