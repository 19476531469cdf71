"""Experiment orchestration: config loading, warm start then RAPO, evaluation,
the reward-mode ablation matrix and artifact writing.

Configs are YAML with a ``schema_version`` key; unknown keys are rejected so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import metrics
from .dataset import Dataset, load_dataset, normalize_mos, split_dataset, synth_generate
from .policy import (
    argmax_scores,
    expected_scores,
    init_policy,
    load_checkpoint,
    save_checkpoint,
    warm_start_step,
)
from .rapo import RapoConfig, batch_schedule, init_state, train
from .rewards import RewardConfig, RewardMode

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------- config types


@dataclass(frozen=True)
class SynthSpec:
    n: int = 640
    d: int = 8
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.d < 1:
            raise ConfigError("synth: n must be >= 2 and d >= 1")
        if self.noise < 0:
            raise ConfigError("synth: noise must be non-negative")


@dataclass(frozen=True)
class DatasetSpec:
    """Either a file (``path``, optional ``format`` and ``raw_range``) or ``synth``."""

    path: str | None = None
    format: str | None = None
    raw_range: tuple[float, float] = (0.0, 1.0)
    synth: SynthSpec | None = None

    def __post_init__(self):
        if (self.path is None) == (self.synth is None):
            raise ConfigError("dataset: give exactly one of 'path' or 'synth'")
        if len(self.raw_range) != 2 or not self.raw_range[1] > self.raw_range[0]:
            raise ConfigError("dataset: raw_range must be [min, max] with max > min")
        object.__setattr__(self, "raw_range", tuple(float(v) for v in self.raw_range))
        if self.path is not None and not Path(self.path).is_file():
            raise ConfigError(f"dataset: file not found: {self.path}")


@dataclass(frozen=True)
class PolicySpec:
    hidden: int = 32
    n_bins: int = 101
    out_scale: float = 0.01

    def __post_init__(self):
        if self.hidden < 1 or self.n_bins < 2 or self.out_scale < 0:
            raise ConfigError("policy: need hidden >= 1, n_bins >= 2, out_scale >= 0")


@dataclass(frozen=True)
class WarmStartConfig:
    epochs: int = 0
    lr: float = 1e-2
    batch: int = 32

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("warm_start: epochs must be >= 0")
        if self.lr <= 0 or self.batch < 1:
            raise ConfigError("warm_start: lr must be positive and batch >= 1")


@dataclass(frozen=True)
class EvalConfig:
    split_ratio: float = 0.8
    split_seed: int = 0
    metrics_every: int = 50
    histogram_bins: int = 10
    argmax: bool = False

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ConfigError("eval: split_ratio must lie in (0, 1)")
        if self.metrics_every < 0 or self.histogram_bins < 1:
            raise ConfigError("eval: metrics_every must be >= 0 and histogram_bins >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    output_dir: str
    seed: int = 0
    steps: int = 1500
    checkpoint_every: int = 0
    policy: PolicySpec = field(default_factory=PolicySpec)
    warm_start: WarmStartConfig = field(default_factory=WarmStartConfig)
    rapo: RapoConfig = field(default_factory=RapoConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.steps < 0 or self.checkpoint_every < 0:
            raise ConfigError("steps and checkpoint_every must be >= 0")
        # one seed drives init, warm-start batches and RAPO sampling
        if self.rapo.seed != self.seed:
            object.__setattr__(self, "rapo", replace(self.rapo, seed=self.seed))

    def to_dict(self) -> dict:
        d = _plain(self)
        d["rapo"].pop("seed")
        d["dataset"] = {k: v for k, v in d["dataset"].items() if v is not None}
        return {"schema_version": SCHEMA_VERSION, **d}


@dataclass(frozen=True)
class AblationSpec:
    base: ExperimentConfig
    modes: tuple[RewardMode, ...]
    seeds: tuple[int, ...]
    output_dir: str

    def __post_init__(self):
        modes = tuple(RewardMode(m) for m in self.modes)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(set(modes)) != len(modes) or len(modes) < 2:
            raise ConfigError("ablation: need at least 2 distinct modes")
        if len(set(self.seeds)) != len(self.seeds) or len(self.seeds) < 3:
            raise ConfigError("ablation: need at least 3 distinct seeds")


def _plain(obj) -> Any:
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, RewardMode):
        return obj.value
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    return obj


# ----------------------------------------------------------------- config loading


def _build(cls, raw, where: str, nested: dict | None = None):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = dict(raw)
    for key, sub in (nested or {}).items():
        if key in kwargs:
            kwargs[key] = sub(kwargs[key], f"{where}.{key}")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _rapo_from(raw, where: str) -> RapoConfig:
    if isinstance(raw, dict) and "seed" in raw:
        raise ConfigError(f"{where}: set the top-level 'seed' instead of rapo.seed")
    return _build(RapoConfig, raw, where, {"reward": lambda r, w: _build(RewardConfig, r, w)})


def _resolve(path: str, base: Path) -> str:
    p = Path(path).expanduser()
    return str(p if p.is_absolute() else base / p)


def _check_schema(raw, where: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: top level must be a mapping")
    raw = dict(raw)
    version = raw.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{where}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    return raw


def experiment_from_dict(raw: dict, base_dir: Path | str = ".", where: str = "config") -> ExperimentConfig:
    base_dir = Path(base_dir)
    raw = _check_schema(raw, where)

    def dataset(r, w):
        if isinstance(r, dict) and r.get("path") is not None:
            r = {**r, "path": _resolve(r["path"], base_dir)}
        return _build(DatasetSpec, r, w, {"synth": lambda s, w2: _build(SynthSpec, s, w2)})

    if "output_dir" in raw and isinstance(raw["output_dir"], str):
        raw["output_dir"] = _resolve(raw["output_dir"], base_dir)
    for key in ("dataset", "output_dir"):
        if key not in raw:
            raise ConfigError(f"{where}: missing required key '{key}'")
    return _build(
        ExperimentConfig,
        raw,
        where,
        {
            "dataset": dataset,
            "policy": lambda r, w: _build(PolicySpec, r, w),
            "warm_start": lambda r, w: _build(WarmStartConfig, r, w),
            "rapo": _rapo_from,
            "eval": lambda r, w: _build(EvalConfig, r, w),
        },
    )


def _read_yaml(path) -> dict:
    path = Path(path)
    try:
        with path.open() as fh:
            return yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return experiment_from_dict(_read_yaml(path), path.parent, str(path))


def load_ablation(path) -> AblationSpec:
    path = Path(path)
    raw = _check_schema(_read_yaml(path), str(path))
    unknown = sorted(set(raw) - {"base", "modes", "seeds", "output_dir"})
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    for key in ("base", "modes", "seeds", "output_dir"):
        if key not in raw:
            raise ConfigError(f"{path}: missing required key '{key}'")
    base = raw["base"]
    if isinstance(base, str):
        base = load_config(_resolve(base, path.parent))
    else:
        base = experiment_from_dict({"schema_version": SCHEMA_VERSION, "output_dir": ".", **base}, path.parent, f"{path}:base")
    try:
        return AblationSpec(
            base=base,
            modes=tuple(raw["modes"]),
            seeds=tuple(raw["seeds"]),
            output_dir=_resolve(raw["output_dir"], path.parent),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dump_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    return path


# ----------------------------------------------------------------- running


@dataclass(frozen=True)
class EvalPoint:
    label: str
    step: int
    report: metrics.MetricsReport


@dataclass(frozen=True)
class RunArtifacts:
    output_dir: Path
    run_log: Path
    evaluations_csv: Path
    checkpoints: dict[str, Path]
    predictions: Path
    histograms: dict[str, Path]
    summary_path: Path
    evaluations: tuple[EvalPoint, ...]
    summary: dict


def ensure_writable(path) -> Path:
    """Create ``path`` if needed and prove a file can be written there."""
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=p, prefix=".probe-"):
            pass
    except OSError as exc:
        raise ConfigError(f"output_dir {p} is not writable: {exc}") from None
    return p


def build_splits(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    spec = cfg.dataset
    if spec.synth is not None:
        s = spec.synth
        full = synth_generate(s.n, s.d, s.noise, s.seed)
    else:
        full = normalize_mos(load_dataset(spec.path, spec.format), *spec.raw_range)
    return split_dataset(full, cfg.eval.split_ratio, cfg.eval.split_seed)


def predict(policy, dataset: Dataset, argmax: bool = False) -> np.ndarray:
    fn = argmax_scores if argmax else expected_scores
    return fn(policy, dataset.features)


def evaluate(policy, dataset: Dataset, argmax: bool = False) -> tuple[np.ndarray, metrics.MetricsReport]:
    pred = predict(policy, dataset, argmax)
    return pred, metrics.metrics_report(pred, dataset.mos, metrics.mean_entropy(policy, dataset))


def run_warm_start(policy, train_set: Dataset, ws: WarmStartConfig, seed: int):
    """``ws.epochs`` passes of full mini-batches; returns the policy and per-step losses."""
    if ws.epochs == 0:
        return policy, []
    batch = min(ws.batch, len(train_set))
    per_epoch = len(train_set) // batch
    sched = batch_schedule(len(train_set), batch, seed, stream=2)
    losses = []
    for _ in range(ws.epochs * per_epoch):
        policy, loss = warm_start_step(policy, train_set.subset(next(sched)), ws.lr)
        losses.append(loss)
    return policy, losses


def _write_evaluations(points, path: Path) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "step", "plcc", "srcc", "mean_entropy", "n", "note"])
        for pt in points:
            r = pt.report
            w.writerow([pt.label, pt.step, _cell(r.plcc), _cell(r.srcc), repr(r.mean_entropy), r.n, r.note])
    return path


def _cell(v) -> str:
    return "" if v is None else repr(v)


def write_predictions(ids, pred, gt, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "pred", "gt"])
        for i, p, g in zip(ids, pred, gt):
            w.writerow([i, repr(float(p)), repr(float(g))])
    return path


def run_experiment(cfg: ExperimentConfig) -> RunArtifacts:
    """Warm start, then RAPO, evaluating on the held-out split along the way.

    Evaluation points: ``init`` (untrained), ``warm_start`` (RAPO start),
    then every ``eval.metrics_every`` RAPO steps and the final step.
    """
    out = ensure_writable(cfg.output_dir)
    ck_dir = out / "checkpoints"
    ck_dir.mkdir(exist_ok=True)

    train_set, test_set = build_splits(cfg)
    argmax = cfg.eval.argmax
    policy = init_policy(train_set.d, cfg.policy.hidden, cfg.policy.n_bins, cfg.seed, cfg.policy.out_scale)

    points = [EvalPoint("init", 0, evaluate(policy, test_set, argmax)[1])]
    policy, ws_losses = run_warm_start(policy, train_set, cfg.warm_start, cfg.seed)
    points.append(EvalPoint("warm_start", 0, evaluate(policy, test_set, argmax)[1]))
    checkpoints = {"warm_start": save_checkpoint(policy, ck_dir / "warm_start.json", stage="warm_start")}

    every = cfg.eval.metrics_every

    def on_step(state):
        if state.step == cfg.steps or (every and state.step % every == 0):
            points.append(EvalPoint("rapo", state.step, evaluate(state.policy, test_set, argmax)[1]))
        if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0 and state.step < cfg.steps:
            name = f"step-{state.step:06d}"
            checkpoints[name] = save_checkpoint(state.policy, ck_dir / f"{name}.json", stage="rapo", step=state.step)

    state, log = train(init_state(policy), train_set, cfg.rapo, cfg.steps, metrics_every=every, callback=on_step)
    checkpoints["final"] = save_checkpoint(
        state.policy, ck_dir / "final.json", stage="final", steps=cfg.steps, reward_mode=cfg.rapo.reward_mode.value
    )

    run_log = log.write_csv(out / "run_log.csv")
    evals_csv = _write_evaluations(points, out / "evaluations.csv")
    pred, final = evaluate(state.policy, test_set, argmax)
    predictions = write_predictions(test_set.ids, pred, test_set.mos, out / "predictions.csv")
    hists = {
        "pred": metrics.histogram(pred, cfg.eval.histogram_bins).write_csv(out / "hist_pred.csv"),
        "gt": metrics.histogram(test_set.mos, cfg.eval.histogram_bins).write_csv(out / "hist_gt.csv"),
    }
    dump_config(cfg, out / "config.yaml")

    ent = log.column("entropy") if len(log) else np.array([])
    summary = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "n_train": len(train_set),
        "n_test": len(test_set),
        "warm_start_steps": len(ws_losses),
        "warm_start_final_loss": ws_losses[-1] if ws_losses else None,
        "rapo_steps": cfg.steps,
        "untrained": points[0].report.to_dict(),
        "post_warm_start": points[1].report.to_dict(),
        "final": final.to_dict(),
        "entropy": {
            "post_warm_start": points[1].report.mean_entropy,
            "final": final.mean_entropy,
            "max_step_drop": float(np.max(1.0 - ent[1:] / ent[:-1])) if ent.size > 1 else 0.0,
        },
        "artifacts": {
            "run_log": run_log.name,
            "evaluations": evals_csv.name,
            "predictions": predictions.name,
            "histograms": {k: v.name for k, v in hists.items()},
            "checkpoints": {k: str(v.relative_to(out)) for k, v in checkpoints.items()},
        },
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunArtifacts(
        output_dir=out,
        run_log=run_log,
        evaluations_csv=evals_csv,
        checkpoints=checkpoints,
        predictions=predictions,
        histograms=hists,
        summary_path=summary_path,
        evaluations=tuple(points),
        summary=summary,
    )


# ----------------------------------------------------------------- ablation


def _mean_or_none(values) -> float | None:
    if any(v is None for v in values):
        return None
    return math.fsum(values) / len(values)


def summarize_ablation(raw: dict[str, list[dict]]) -> dict:
    """Seed-mean PLCC/SRCC per mode from per-run final metrics.

    ``raw`` maps mode -> list of ``{"seed", "plcc", "srcc", ...}``. A mean is
    ``None`` when any seed's value is undefined.
    """
    rows = []
    for mode, runs in raw.items():
        rows.append(
            {
                "mode": mode,
                "plcc": _mean_or_none([r["plcc"] for r in runs]),
                "srcc": _mean_or_none([r["srcc"] for r in runs]),
                "n_seeds": len(runs),
            }
        )
    return {"schema_version": SCHEMA_VERSION, "rows": rows, "raw": raw}


def run_ablation(spec: AblationSpec) -> dict:
    """One experiment per (mode, seed) under ``output_dir/<mode>/seed-<s>``."""
    out = ensure_writable(spec.output_dir)
    raw: dict[str, list[dict]] = {}
    for mode in spec.modes:
        runs = []
        for seed in spec.seeds:
            cfg = replace(
                spec.base,
                seed=seed,
                rapo=replace(spec.base.rapo, reward_mode=mode, seed=seed),
                output_dir=str(out / mode.value / f"seed-{seed}"),
            )
            art = run_experiment(cfg)
            fin = art.summary["final"]
            runs.append(
                {
                    "seed": seed,
                    "plcc": fin["plcc"],
                    "srcc": fin["srcc"],
                    "final_entropy": fin["mean_entropy"],
                    "post_warm_start_entropy": art.summary["entropy"]["post_warm_start"],
                    "max_entropy_step_drop": art.summary["entropy"]["max_step_drop"],
                    "summary": str(art.summary_path.relative_to(out)),
                }
            )
        raw[mode.value] = runs
    table = summarize_ablation(raw)
    (out / "ablation_summary.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    with (out / "ablation_table.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "plcc", "srcc", "n_seeds"])
        for row in table["rows"]:
            w.writerow([row["mode"], _cell(row["plcc"]), _cell(row["srcc"]), row["n_seeds"]])
    return table


# ----------------------------------------------------------------- evaluation


def evaluate_checkpoint(
    checkpoint, dataset: Dataset, bins: int = 10, argmax: bool = False
) -> tuple[metrics.MetricsReport, tuple[metrics.Histogram, metrics.Histogram], np.ndarray]:
    """Report, (prediction, ground-truth) histograms and the predictions.

    Undefined correlations (for example a uniform policy predicting 0.5
    everywhere) come back as ``None`` with an explanatory note.
    """
    if len(dataset) == 0:
        raise ConfigError("evaluation dataset is empty")
    policy = load_checkpoint(checkpoint)
    if policy.d != dataset.d:
        raise ConfigError(f"checkpoint expects d={policy.d}, dataset has d={dataset.d}")
    pred, report = evaluate(policy, dataset, argmax)
    return report, (metrics.histogram(pred, bins), metrics.histogram(dataset.mos, bins)), pred


def config_for_cli(path, seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    cfg = load_config(path)
    if seed is not None:
        cfg = replace(cfg, seed=seed, rapo=replace(cfg.rapo, seed=seed))
    if output_dir is not None:
        cfg = replace(cfg, output_dir=os.fspath(output_dir))
    return cfg


__all__ = [
    "AblationSpec",
    "ConfigError",
    "DatasetSpec",
    "EvalConfig",
    "EvalPoint",
    "ExperimentConfig",
    "PolicySpec",
    "RunArtifacts",
    "SCHEMA_VERSION",
    "SynthSpec",
    "WarmStartConfig",
    "build_splits",
    "dump_config",
    "ensure_writable",
    "evaluate",
    "evaluate_checkpoint",
    "experiment_from_dict",
    "load_ablation",
    "load_config",
    "run_ablation",
    "run_experiment",
    "run_warm_start",
    "summarize_ablation",
    "write_predictions",
]
