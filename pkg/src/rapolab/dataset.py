"""Image-score data: loading, MOS normalization, splits, level-balanced sampling
and a seeded synthetic generator.

Features stand in for images. Every sample carries a d-dimensional feature
vector and a mean opinion score (MOS) that must lie in [0, 1] before training.

All randomness goes through numpy's ``PCG64`` bit generator
(``np.random.default_rng``), so a fixed seed gives the same permutation on
every platform numpy supports.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DatasetError(ValueError):
    """Malformed input data or an impossible dataset request."""


@dataclass(frozen=True)
class ImageSample:
    id: str
    features: tuple[float, ...]
    mos: float


class AestheticLevel(str, enum.Enum):
    BAD = "bad"
    FAIR = "fair"
    GOOD = "good"

    @classmethod
    def from_mos(cls, mos: float) -> "AestheticLevel":
        # Lower-inclusive: 0.4 is fair, 0.7 is good.
        if mos < 0.4:
            return cls.BAD
        if mos < 0.7:
            return cls.FAIR
        return cls.GOOD


@dataclass(frozen=True)
class Dataset:
    samples: tuple[ImageSample, ...]
    d: int
    provenance: str = "real"
    normalized: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.samples:
            raise DatasetError("dataset is empty")
        if self.d <= 0:
            raise DatasetError(f"feature dimension must be positive, got {self.d}")
        if self.provenance not in ("real", "synthetic"):
            raise DatasetError(f"unknown provenance {self.provenance!r}")
        seen = set()
        for n, s in enumerate(self.samples):
            if len(s.features) != self.d:
                raise DatasetError(
                    f"sample {n} ({s.id!r}) has {len(s.features)} features, expected {self.d}"
                )
            if s.id in seen:
                raise DatasetError(f"duplicate id {s.id!r} at sample {n}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @cached_property
    def features(self) -> np.ndarray:
        arr = np.array([s.features for s in self.samples], dtype=np.float64).reshape(len(self), self.d)
        arr.setflags(write=False)
        return arr

    @cached_property
    def mos(self) -> np.ndarray:
        arr = np.array([s.mos for s in self.samples], dtype=np.float64)
        arr.setflags(write=False)
        return arr

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        picked = tuple(self.samples[i] for i in indices)
        return replace(self, samples=picked)


def _parse_float(value, where: str, name: str) -> float:
    if value is None or (isinstance(value, str) and value.strip() == ""):
        raise DatasetError(f"{where}: missing {name}")
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise DatasetError(f"{where}: {name} is not a number: {value!r}") from None
    if not np.isfinite(out):
        raise DatasetError(f"{where}: {name} is not finite")
    return out


def _records_csv(path: Path):
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "id" not in reader.fieldnames or "mos" not in reader.fieldnames:
            raise DatasetError(f"{path}: header must contain 'id' and 'mos'")
        fcols = [c for c in reader.fieldnames if c.startswith("f") and c[1:].isdigit()]
        fcols.sort(key=lambda c: int(c[1:]))
        for n, row in enumerate(reader):
            where = f"row {n}"
            feats = [_parse_float(row.get(c), where, c) for c in fcols]
            yield n, row.get("id"), row.get("mos"), feats


def _records_jsonl(path: Path):
    with path.open() as fh:
        n = 0
        for line in fh:
            if not line.strip():
                continue
            where = f"row {n}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{where}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DatasetError(f"{where}: expected a JSON object")
            feats = obj.get("features")
            if not isinstance(feats, list):
                raise DatasetError(f"{where}: 'features' must be an array")
            feats = [_parse_float(v, where, "features") for v in feats]
            yield n, obj.get("id"), obj.get("mos"), feats
            n += 1


def load_dataset(path, format: str | None = None) -> Dataset:
    """Read ``id,mos,f0,f1,...`` CSV or ``{"id", "mos", "features"}`` JSONL.

    Scores are kept as given (``normalized=False``); run :func:`normalize_mos`
    before training.
    """
    path = Path(path)
    if format is None:
        format = "jsonl" if path.suffix.lower() in (".jsonl", ".json") else "csv"
    if format == "csv":
        records = _records_csv(path)
    elif format == "jsonl":
        records = _records_jsonl(path)
    else:
        raise DatasetError(f"unknown format {format!r}")

    samples = []
    d = None
    seen = set()
    for n, rid, raw_mos, feats in records:
        where = f"row {n}"
        if rid is None or str(rid) == "":
            raise DatasetError(f"{where}: missing id")
        rid = str(rid)
        mos = _parse_float(raw_mos, where, "mos")
        if d is None:
            d = len(feats)
            if d == 0:
                raise DatasetError(f"{where}: no feature values")
        elif len(feats) != d:
            raise DatasetError(f"{where}: inconsistent feature length {len(feats)} (expected {d})")
        if rid in seen:
            raise DatasetError(f"{where}: duplicate id {rid!r}")
        seen.add(rid)
        samples.append(ImageSample(rid, tuple(feats), mos))
    if not samples:
        raise DatasetError(f"{path}: no records")
    return Dataset(tuple(samples), d, provenance="real", normalized=False)


def save_dataset(dataset: Dataset, path, format: str | None = None) -> None:
    path = Path(path)
    if format is None:
        format = "jsonl" if path.suffix.lower() in (".jsonl", ".json") else "csv"
    if format == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "mos"] + [f"f{i}" for i in range(dataset.d)])
            for s in dataset:
                w.writerow([s.id, repr(s.mos)] + [repr(v) for v in s.features])
    elif format == "jsonl":
        with path.open("w") as fh:
            for s in dataset:
                fh.write(json.dumps({"id": s.id, "mos": s.mos, "features": list(s.features)}) + "\n")
    else:
        raise DatasetError(f"unknown format {format!r}")


def normalize_mos(dataset: Dataset, raw_min: float, raw_max: float) -> Dataset:
    """Min-max map raw scores on ``[raw_min, raw_max]`` onto ``[0, 1]``."""
    if not raw_max > raw_min:
        raise DatasetError(f"raw_max ({raw_max}) must exceed raw_min ({raw_min})")
    span = raw_max - raw_min
    out = []
    for n, s in enumerate(dataset):
        if s.mos < raw_min or s.mos > raw_max:
            raise DatasetError(f"row {n} ({s.id!r}): raw score {s.mos} outside [{raw_min}, {raw_max}]")
        v = min(1.0, max(0.0, (s.mos - raw_min) / span))
        out.append(replace(s, mos=v))
    return replace(dataset, samples=tuple(out), normalized=True)


def split_dataset(dataset: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded permutation; the first ``floor(ratio * M)`` samples become train."""
    if not 0.0 < ratio < 1.0:
        raise DatasetError(f"split ratio must lie in (0, 1), got {ratio}")
    m = len(dataset)
    n_train = int(np.floor(ratio * m))
    if n_train == 0:
        raise DatasetError(f"split of {m} samples at ratio {ratio} leaves the train side empty")
    if n_train == m:
        raise DatasetError(f"split of {m} samples at ratio {ratio} leaves the test side empty")
    perm = np.random.default_rng(seed).permutation(m)
    return dataset.subset(perm[:n_train].tolist()), dataset.subset(perm[n_train:].tolist())


def balanced_sample(dataset: Dataset, per_level: int, seed: int) -> Dataset:
    """Draw exactly ``per_level`` samples from each of bad / fair / good."""
    if per_level <= 0:
        raise DatasetError("per_level must be positive")
    groups = {lvl: [] for lvl in AestheticLevel}
    for n, s in enumerate(dataset):
        groups[AestheticLevel.from_mos(s.mos)].append(n)
    short = {lvl.value: len(ix) for lvl, ix in groups.items() if len(ix) < per_level}
    if short:
        detail = ", ".join(f"{k} has {v}" for k, v in short.items())
        raise DatasetError(f"insufficient members for {per_level} per level: {detail}")
    rng = np.random.default_rng(seed)
    picked: list[int] = []
    for lvl in AestheticLevel:
        ix = np.asarray(groups[lvl])
        picked.extend(ix[rng.permutation(len(ix))[:per_level]].tolist())
    return dataset.subset(picked)


@dataclass(frozen=True)
class SynthTask:
    """Coefficients of the fixed target map ``g``; derived from the seed alone."""

    linear: np.ndarray
    quad_dir: np.ndarray
    quad_scale: float
    bias: float

    def target(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        q = x @ self.quad_dir
        z = x @ self.linear + self.quad_scale * (q * q - 1.0) + self.bias
        return 1.0 / (1.0 + np.exp(-z))


def synth_task(d: int, seed: int) -> SynthTask:
    coef_seq, _ = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(coef_seq)
    linear = rng.normal(0.0, 0.7 / np.sqrt(d), size=d)
    quad_dir = rng.normal(0.0, 1.0 / np.sqrt(d), size=d)
    bias = float(rng.normal(0.0, 0.2))
    return SynthTask(linear=linear, quad_dir=quad_dir, quad_scale=0.5, bias=bias)


def synth_generate(n: int, d: int, noise: float, seed: int) -> Dataset:
    """``n`` samples with standard-normal features and
    ``mos = clip(g(x) + noise * eta, 0, 1)``, ``g`` a logistic of a linear form
    plus a mild quadratic term."""
    if n <= 0 or d <= 0:
        raise DatasetError("n and d must be positive")
    if noise < 0:
        raise DatasetError("noise must be non-negative")
    task = synth_task(d, seed)
    _, data_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(data_seq)
    x = rng.standard_normal((n, d))
    eta = rng.standard_normal(n)
    mos = np.clip(task.target(x) + noise * eta, 0.0, 1.0)
    samples = tuple(
        ImageSample(f"syn-{i:05d}", tuple(float(v) for v in x[i]), float(mos[i])) for i in range(n)
    )
    return Dataset(
        samples,
        d,
        provenance="synthetic",
        normalized=True,
        meta={"n": n, "d": d, "noise": noise, "seed": seed},
    )


def standard_task(seed: int = 0, noise: float = 0.05) -> tuple[Dataset, Dataset]:
    """The 512-train / 128-test, d=8 synthetic benchmark used by the experiments."""
    full = synth_generate(640, 8, noise, seed)
    return split_dataset(full, 0.8, seed)


def as_arrays(batch: Sequence[ImageSample] | Dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, Dataset):
        return np.ascontiguousarray(batch.features), np.asarray(batch.mos)
    x = np.array([s.features for s in batch], dtype=np.float64)
    y = np.array([s.mos for s in batch], dtype=np.float64)
    return np.ascontiguousarray(x), y
