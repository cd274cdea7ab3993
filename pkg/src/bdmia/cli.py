"""Experiment orchestration: JSON configs, pipeline stages, artifact files, CLI.

Every pipeline stage is a pure function of its persisted inputs, so a run can
be resumed from any artifact. A full run writes scores.csv, roc.csv,
metrics.json, trace.csv, distances.csv, and manifest.json into the output
directory; identical configs and seeds reproduce the score and metrics files
byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import boundary, evaluation, mia, model
from .boundary import HsjaParams, MultiTargetConfig, derive_seed, sample_seed
from .errors import ConfigError, InsufficientData, QueryFailure, TrainingFailure

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_QUERY = 3
EXIT_TRAINING = 4
EXIT_INSUFFICIENT = 5

SCORE_KINDS = {"single": mia.KIND_SINGLE, "relative": mia.KIND_RELATIVE, "baseline": mia.KIND_BASELINE}
ATTACK_KINDS = ("untargeted", "all-targeted", "multi-targeted")

ARTIFACTS = ("scores.csv", "roc.csv", "metrics.json", "trace.csv", "distances.csv", "manifest.json")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    n_classes: int = 6
    shape: tuple[int, int, int] = (8, 8, 1)
    train_per_class: int = 40
    test_per_class: int = 40
    aux_per_class: int = 20
    spread: float = 0.15
    smooth_centers: bool = True
    seed: int = 0


@dataclass
class DatasetConfig:
    train_path: str | None = None
    test_path: str | None = None
    aux_path: str | None = None
    synthetic: SyntheticSpec | None = None


@dataclass
class ModelConfig:
    path: str | None = None
    epochs: int = 150
    batch_size: int = 128
    learning_rate: float = 1e-3
    hidden: tuple[int, ...] = (64,)
    seed: int = 0


@dataclass
class AttackConfig:
    kind: str = "untargeted"
    T: int = 50
    T_f: int = 10
    r: float = 0.5
    theta: float = 1e-3
    B0: int = 20
    Bmax: int = 200
    init_attempts: int = 1000
    seed: int = 0
    max_queries: int | None = None

    def hsja_params(self) -> HsjaParams:
        return HsjaParams(
            T=self.T,
            theta=self.theta,
            B0=self.B0,
            Bmax=self.Bmax,
            init_attempts=self.init_attempts,
            seed=self.seed,
            max_queries=self.max_queries,
        )

    def multi_config(self) -> MultiTargetConfig:
        return MultiTargetConfig(T=self.T, T_f=self.T_f, r=self.r, seed=self.seed)


@dataclass
class EvalSetConfig:
    kind: str = "cbalanced"
    n_per_side: int = 50
    seed: int = 0


@dataclass
class OracleConfig:
    mode: str = "in-process"
    url: str | None = None
    retries: int = 3
    backoff: float = 0.5


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str | None = None
    workers: int = 1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    score_kind: str = "single"
    eval_set: EvalSetConfig = field(default_factory=EvalSetConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)


def _require(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ConfigError(f"{path}: {message}")


def _check_keys(doc: dict, allowed: set[str], path: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key")


def _get(doc: dict, key: str, default, path: str, types) -> object:
    value = doc.get(key, default)
    if value is not None and not isinstance(value, types):
        raise ConfigError(f"{path}.{key}: expected {types}, got {type(value).__name__}")
    return value


def _parse_synthetic(doc: dict, path: str, default_seed: int) -> SyntheticSpec:
    _check_keys(
        doc,
        {"n_classes", "shape", "train_per_class", "test_per_class", "aux_per_class", "spread", "smooth_centers", "seed"},
        path,
    )
    spec = SyntheticSpec(
        n_classes=int(_get(doc, "n_classes", 6, path, int)),
        train_per_class=int(_get(doc, "train_per_class", 40, path, int)),
        test_per_class=int(_get(doc, "test_per_class", 40, path, int)),
        aux_per_class=int(_get(doc, "aux_per_class", 20, path, int)),
        spread=float(_get(doc, "spread", 0.15, path, (int, float))),
        smooth_centers=bool(_get(doc, "smooth_centers", True, path, bool)),
        seed=int(doc.get("seed", default_seed)),
    )
    shape = doc.get("shape", [8, 8, 1])
    _require(isinstance(shape, list) and len(shape) == 3, f"{path}.shape", "expected [height, width, channels]")
    spec.shape = tuple(int(v) for v in shape)
    _require(spec.n_classes >= 2, f"{path}.n_classes", "must be >= 2")
    _require(spec.spread > 0, f"{path}.spread", "must be > 0")
    _require(min(spec.shape) >= 1, f"{path}.shape", "dims must be >= 1")
    return spec


def parse_config(path, seed_override: int | None = None) -> ExperimentConfig:
    """Load and fully validate an experiment config; unknown keys are rejected.

    Section seeds not given explicitly are derived from the top-level seed;
    ``seed_override`` replaces the top-level seed and re-derives every section
    seed (the CLI --seed flag).
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc

    _check_keys(doc, {"seed", "out_dir", "workers", "dataset", "model", "attack", "score", "eval_set", "oracle"}, "config")
    cfg = ExperimentConfig()
    cfg.seed = int(_get(doc, "seed", 0, "config", int))
    if seed_override is not None:
        cfg.seed = int(seed_override)
        for section in ("dataset", "model", "attack", "eval_set"):
            if isinstance(doc.get(section), dict):
                doc[section].pop("seed", None)
            if section == "dataset" and isinstance(doc.get("dataset", {}).get("synthetic"), dict):
                doc["dataset"]["synthetic"].pop("seed", None)
    cfg.out_dir = _get(doc, "out_dir", None, "config", str)
    cfg.workers = int(_get(doc, "workers", 1, "config", int))
    _require(cfg.workers >= 1, "config.workers", "must be >= 1")

    ds_doc = doc.get("dataset", {})
    _check_keys(ds_doc, {"train_path", "test_path", "aux_path", "synthetic"}, "config.dataset")
    cfg.dataset = DatasetConfig(
        train_path=_get(ds_doc, "train_path", None, "config.dataset", str),
        test_path=_get(ds_doc, "test_path", None, "config.dataset", str),
        aux_path=_get(ds_doc, "aux_path", None, "config.dataset", str),
    )
    if "synthetic" in ds_doc:
        cfg.dataset.synthetic = _parse_synthetic(ds_doc["synthetic"], "config.dataset.synthetic", derive_seed(cfg.seed, 10))
    has_paths = cfg.dataset.train_path is not None and cfg.dataset.test_path is not None
    _require(
        (cfg.dataset.synthetic is not None) != has_paths,
        "config.dataset",
        "give either synthetic or train_path+test_path, not both",
    )

    m_doc = doc.get("model", {})
    _check_keys(m_doc, {"path", "epochs", "batch_size", "learning_rate", "hidden", "seed"}, "config.model")
    hidden = m_doc.get("hidden", [64])
    _require(isinstance(hidden, list) and all(isinstance(h, int) for h in hidden), "config.model.hidden", "expected a list of ints")
    cfg.model = ModelConfig(
        path=_get(m_doc, "path", None, "config.model", str),
        epochs=int(_get(m_doc, "epochs", 150, "config.model", int)),
        batch_size=int(_get(m_doc, "batch_size", 128, "config.model", int)),
        learning_rate=float(_get(m_doc, "learning_rate", 1e-3, "config.model", (int, float))),
        hidden=tuple(hidden),
        seed=int(m_doc.get("seed", derive_seed(cfg.seed, 11))),
    )
    _require(cfg.model.epochs >= 1, "config.model.epochs", "must be >= 1")
    _require(cfg.model.batch_size >= 1, "config.model.batch_size", "must be >= 1")
    _require(cfg.model.learning_rate > 0, "config.model.learning_rate", "must be > 0")

    a_doc = doc.get("attack", {})
    _check_keys(a_doc, {"kind", "T", "T_f", "r", "theta", "B0", "Bmax", "init_attempts", "seed", "max_queries"}, "config.attack")
    cfg.attack = AttackConfig(
        kind=_get(a_doc, "kind", "untargeted", "config.attack", str),
        T=int(_get(a_doc, "T", 50, "config.attack", int)),
        T_f=int(_get(a_doc, "T_f", 10, "config.attack", int)),
        r=float(_get(a_doc, "r", 0.5, "config.attack", (int, float))),
        theta=float(_get(a_doc, "theta", 1e-3, "config.attack", (int, float))),
        B0=int(_get(a_doc, "B0", 20, "config.attack", int)),
        Bmax=int(_get(a_doc, "Bmax", 200, "config.attack", int)),
        init_attempts=int(_get(a_doc, "init_attempts", 1000, "config.attack", int)),
        seed=int(a_doc.get("seed", derive_seed(cfg.seed, 12))),
        max_queries=a_doc.get("max_queries"),
    )
    _require(cfg.attack.kind in ATTACK_KINDS, "config.attack.kind", f"must be one of {ATTACK_KINDS}")
    _require(cfg.attack.T >= 1, "config.attack.T", "must be >= 1")
    _require(0.0 < cfg.attack.r < 1.0, "config.attack.r", "must be in (0,1)")
    _require(0.0 < cfg.attack.theta < 1.0, "config.attack.theta", "must be in (0,1)")
    _require(cfg.attack.B0 >= 4, "config.attack.B0", "must be >= 4")
    _require(cfg.attack.Bmax >= cfg.attack.B0, "config.attack.Bmax", "must be >= B0")
    if cfg.attack.kind == "multi-targeted":
        _require(1 <= cfg.attack.T_f <= cfg.attack.T, "config.attack.T_f", "must be in [1, T]")
    if cfg.attack.max_queries is not None:
        _require(isinstance(cfg.attack.max_queries, int) and cfg.attack.max_queries >= 1, "config.attack.max_queries", "must be a positive int")

    s_doc = doc.get("score", {})
    _check_keys(s_doc, {"kind"}, "config.score")
    cfg.score_kind = _get(s_doc, "kind", "single", "config.score", str)
    _require(cfg.score_kind in SCORE_KINDS, "config.score.kind", f"must be one of {sorted(SCORE_KINDS)}")

    e_doc = doc.get("eval_set", {})
    _check_keys(e_doc, {"kind", "n_per_side", "seed"}, "config.eval_set")
    cfg.eval_set = EvalSetConfig(
        kind=_get(e_doc, "kind", "cbalanced", "config.eval_set", str),
        n_per_side=int(_get(e_doc, "n_per_side", 50, "config.eval_set", int)),
        seed=int(e_doc.get("seed", derive_seed(cfg.seed, 13))),
    )
    _require(cfg.eval_set.kind in ("balanced", "cbalanced"), "config.eval_set.kind", "must be balanced|cbalanced")
    _require(cfg.eval_set.n_per_side >= 1, "config.eval_set.n_per_side", "must be >= 1")

    o_doc = doc.get("oracle", {})
    _check_keys(o_doc, {"mode", "url", "retries", "backoff"}, "config.oracle")
    cfg.oracle = OracleConfig(
        mode=_get(o_doc, "mode", "in-process", "config.oracle", str),
        url=_get(o_doc, "url", None, "config.oracle", str),
        retries=int(_get(o_doc, "retries", 3, "config.oracle", int)),
        backoff=float(_get(o_doc, "backoff", 0.5, "config.oracle", (int, float))),
    )
    _require(cfg.oracle.mode in ("in-process", "remote"), "config.oracle.mode", "must be in-process|remote")
    if cfg.oracle.mode == "remote":
        _require(cfg.oracle.url is not None, "config.oracle.url", "required for remote mode")
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = dataclasses.asdict(cfg)
    doc["score"] = {"kind": doc.pop("score_kind")}
    return doc


# ---------------------------------------------------------------------------
# pipeline stages
# ---------------------------------------------------------------------------


def _stage_datasets(cfg: ExperimentConfig) -> dict[str, model.Dataset]:
    ds = cfg.dataset
    if ds.synthetic is not None:
        spec = ds.synthetic
        total = spec.train_per_class + spec.test_per_class + spec.aux_per_class
        full = model.make_synthetic_dataset(
            n_classes=spec.n_classes,
            n_per_class=total,
            shape=spec.shape,
            spread=spec.spread,
            seed=spec.seed,
            smooth_centers=spec.smooth_centers,
        )
        return model.split_dataset(
            full, {"train": spec.train_per_class, "test": spec.test_per_class, "aux": spec.aux_per_class}
        )
    out = {
        "train": model.load_dataset(ds.train_path, role="train"),
        "test": model.load_dataset(ds.test_path, role="test"),
    }
    if ds.aux_path is not None:
        out["aux"] = model.load_dataset(ds.aux_path, role="aux")
    return out


def _stage_model(cfg: ExperimentConfig, datasets: dict[str, model.Dataset]) -> model.MlpModel | None:
    if cfg.oracle.mode == "remote":
        return None
    if cfg.model.path is not None:
        return model.load_model(cfg.model.path)
    train_cfg = model.TrainConfig(
        epochs=cfg.model.epochs,
        batch_size=cfg.model.batch_size,
        learning_rate=cfg.model.learning_rate,
        hidden=cfg.model.hidden,
        seed=cfg.model.seed,
    )
    return model.train_mlp(datasets["train"], train_cfg)


def _oracle_factory(cfg: ExperimentConfig, target: model.MlpModel | None):
    if cfg.oracle.mode == "remote":
        return lambda: model.RemoteOracle(cfg.oracle.url, retries=cfg.oracle.retries, backoff=cfg.oracle.backoff)
    return lambda: model.ModelOracle(target)


def _stage_eval_set(cfg: ExperimentConfig, datasets, oracle) -> evaluation.EvalSet:
    if cfg.eval_set.kind == "balanced":
        return evaluation.build_balanced_set(datasets["train"], datasets["test"], cfg.eval_set.n_per_side, cfg.eval_set.seed)
    return evaluation.build_cbalanced_set(
        datasets["train"], datasets["test"], oracle, cfg.eval_set.n_per_side, cfg.eval_set.seed
    )


def _attack_eval_set(cfg: ExperimentConfig, evalset, datasets, oracle_factory, master_ledger):
    """Attack every entry (optionally its neighbors) and collect distance rows.

    Entries run on a bounded worker pool; results are reduced in entry order
    and per-entry seeds derive from the attack seed and the sample id, so the
    outcome is independent of scheduling.
    """
    aux = datasets.get("aux")
    with_neighbors = cfg.score_kind == "relative"
    params = cfg.attack.hsja_params()
    multi = cfg.attack.multi_config() if cfg.attack.kind == "multi-targeted" else None

    def run_entry(entry):
        oracle = oracle_factory()
        attack = mia.make_boundary_attack(cfg.attack.kind, oracle, params, multi=multi, aux=aux)
        rows, traces = mia.sample_distances(
            entry.sample_id,
            entry.sample.sample,
            entry.sample.label,
            oracle,
            attack,
            seed=sample_seed(cfg.attack.seed, entry.sample_id),
            with_neighbors=with_neighbors,
            is_member=entry.is_member,
            strict=False,
        )
        return rows, traces, oracle.ledger

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(run_entry, evalset.entries))
    else:
        outcomes = [run_entry(e) for e in evalset.entries]

    all_rows, all_traces = [], []
    for rows, traces, ledger in outcomes:
        all_rows.extend(rows)
        all_traces.extend(traces)
        master_ledger.merge(ledger)
    return all_rows, all_traces


def _baseline_records(evalset, oracle) -> list[mia.ScoreRecord]:
    return [
        mia.baseline_gap_attack(e.sample_id, e.sample.sample, e.sample.label, oracle, is_member=e.is_member)
        for e in evalset.entries
    ]


def scores_from_distance_rows(rows: list[mia.DistanceRow], score_kind: str) -> list[mia.ScoreRecord]:
    """Group distance rows by sample and compute one score record each."""
    by_sample: dict[int, list[mia.DistanceRow]] = {}
    for row in rows:
        by_sample.setdefault(row.sample_id, []).append(row)
    kind = SCORE_KINDS[score_kind]
    return [mia.score_from_rows(by_sample[sid], kind, strict=False) for sid in sorted(by_sample)]


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> tuple[evaluation.MetricsReport, dict]:
    """Full pipeline: data, model, eval set, attacks, scores, metrics, artifacts.

    Returns the metrics report and the manifest. On a stage failure the
    manifest (with the failed stage) and any artifacts produced so far are
    still written before the exception propagates.
    """
    out = Path(out_dir if out_dir is not None else cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    ledger = model.QueryLedger()
    manifest = {
        "config": config_to_dict(cfg),
        "status": "running",
        "failed_stage": None,
        "artifacts": [],
        "total_queries": 0,
        "queries_by_phase": {},
        "wall_time_s": None,
    }

    def finish(status, failed=None):
        manifest["status"] = status
        manifest["failed_stage"] = failed
        manifest["total_queries"] = ledger.total
        manifest["queries_by_phase"] = dict(sorted(ledger.phases().items()))
        manifest["wall_time_s"] = round(time.time() - started, 3)
        with open(out / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")

    stage = "dataset"
    try:
        datasets = _stage_datasets(cfg)
        stage = "model"
        target = _stage_model(cfg, datasets)
        factory = _oracle_factory(cfg, target)

        stage = "eval-set"
        eval_oracle = factory()
        evalset = _stage_eval_set(cfg, datasets, eval_oracle)
        ledger.merge(eval_oracle.ledger)

        stage = "attack"
        if cfg.score_kind == "baseline":
            rows, traces = [], []
            score_oracle = factory()
            records = _baseline_records(evalset, score_oracle)
            ledger.merge(score_oracle.ledger)
        else:
            rows, traces = _attack_eval_set(cfg, evalset, datasets, factory, ledger)
            stage = "score"
            records = scores_from_distance_rows(rows, cfg.score_kind)

        stage = "evaluate"
        report = evaluation.compute_metrics(records)

        stage = "write"
        mia.write_distances_csv(out / "distances.csv", rows)
        boundary.write_trace_csv(out / "trace.csv", traces)
        mia.write_scores_csv(out / "scores.csv", records)
        evaluation.write_roc_csv(out / "roc.csv", evaluation.roc_curve(records))
        evaluation.write_metrics_json(out / "metrics.json", report)
        manifest["artifacts"] = [name for name in ARTIFACTS if (out / name).exists()]
        manifest["n_entries"] = len(evalset.entries)
        finish("ok")
        return report, manifest
    except Exception:
        manifest["artifacts"] = [name for name in ARTIFACTS if (out / name).exists()]
        finish("failed", failed=stage)
        raise


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _apply_overrides(args) -> ExperimentConfig:
    cfg = parse_config(args.config, seed_override=args.seed)
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "oracle_url", None) is not None:
        cfg.oracle.mode = "remote"
        cfg.oracle.url = args.oracle_url
    if getattr(args, "out", None) is not None:
        cfg.out_dir = str(args.out)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _apply_overrides(args)
    if cfg.dataset.synthetic is None:
        raise ConfigError("config.dataset.synthetic: required by gen-data")
    out = Path(cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    datasets = _stage_datasets(cfg)
    for role, ds in datasets.items():
        path = out / f"{role}.miads"
        model.save_dataset(ds, path)
        print(f"wrote {path} ({len(ds)} samples, {ds.n_classes} classes)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _apply_overrides(args)
    out = Path(cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    datasets = _stage_datasets(cfg)
    target = _stage_model(cfg, datasets)
    if target is None:
        raise ConfigError("config.oracle.mode: train needs an in-process model")
    path = out / "model.json"
    model.save_model(target, path)
    train_acc = model.accuracy(target, datasets["train"])
    test_acc = model.accuracy(target, datasets["test"])
    print(f"wrote {path} (train acc {train_acc:.3f}, test acc {test_acc:.3f})")
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = _apply_overrides(args)
    out = Path(cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    ledger = model.QueryLedger()
    datasets = _stage_datasets(cfg)
    target = _stage_model(cfg, datasets)
    factory = _oracle_factory(cfg, target)
    eval_oracle = factory()
    evalset = _stage_eval_set(cfg, datasets, eval_oracle)
    ledger.merge(eval_oracle.ledger)
    rows, traces = _attack_eval_set(cfg, evalset, datasets, factory, ledger)
    mia.write_distances_csv(out / "distances.csv", rows)
    boundary.write_trace_csv(out / "trace.csv", traces)
    print(f"wrote {out / 'distances.csv'} and {out / 'trace.csv'} ({ledger.total} queries)")
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = _apply_overrides(args)
    out = Path(cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    distances = Path(args.distances if args.distances else out / "distances.csv")
    rows = mia.read_distances_csv(distances)
    records = scores_from_distance_rows(rows, cfg.score_kind)
    mia.write_scores_csv(out / "scores.csv", records)
    print(f"wrote {out / 'scores.csv'} ({len(records)} records)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    records = mia.read_scores_csv(args.scores)
    report = evaluation.compute_metrics(records)
    evaluation.write_roc_csv(out / "roc.csv", evaluation.roc_curve(records))
    evaluation.write_metrics_json(out / "metrics.json", report)
    doc = evaluation.metrics_to_dict(report)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_stability(args) -> int:
    cfg = _apply_overrides(args)
    out = Path(cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    datasets = _stage_datasets(cfg)
    target = _stage_model(cfg, datasets)
    factory = _oracle_factory(cfg, target)
    oracle = factory()
    evalset = _stage_eval_set(cfg, datasets, oracle)
    entries = evalset.entries[: args.n] if args.n else evalset.entries
    samples = [(e.sample_id, e.sample) for e in entries]
    report = evaluation.stability_experiment(samples, oracle, cfg.attack.hsja_params(), repeats=args.repeats)
    evaluation.write_stability_csv(out / "stability.csv", report)
    summary = evaluation.stability_summary(report)
    with open(out / "stability_summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_full_run(args) -> int:
    cfg = _apply_overrides(args)
    report, manifest = run_experiment(cfg, out_dir=cfg.out_dir)
    print(json.dumps(evaluation.metrics_to_dict(report), sort_keys=True))
    print(f"total queries: {manifest['total_queries']}, wall time: {manifest['wall_time_s']}s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdmia", description="Label-only membership inference via boundary distances")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment config JSON")
            p.add_argument("--seed", type=int, default=None, help="override the top-level seed")
            p.add_argument("--workers", type=int, default=None, help="attack worker threads")
            p.add_argument("--oracle-url", default=None, help="use a remote oracle at this URL")
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("gen-data", help="write synthetic train/test/aux dataset files")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the target model and write model.json")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="attack the evaluation set; write distances.csv and trace.csv")
    common(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("score", help="turn distances.csv into scores.csv")
    common(p)
    p.add_argument("--distances", default=None, help="distances CSV (default <out>/distances.csv)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="compute ROC and metrics from scores.csv")
    p.add_argument("--scores", required=True, help="score CSV")
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stability", help="repeat untargeted attacks and report distance stability")
    common(p)
    p.add_argument("--repeats", type=int, default=evaluation.STABILITY_REPEATS)
    p.add_argument("--n", type=int, default=None, help="limit to the first N evaluation entries")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("full-run", help="run the whole pipeline and write all artifacts")
    common(p)
    p.set_defaults(func=cmd_full_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QueryFailure as exc:
        print(f"query failure: {exc}", file=sys.stderr)
        return EXIT_QUERY
    except TrainingFailure as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except InsufficientData as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT


def script_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    script_main()
