"""Reward functions for score prediction.

* rank reward: fidelity between a Gaussian pairwise win probability and the
  ground-truth preference, averaged over the other images of the batch;
* absolute reward: Gaussian kernel of the score error plus a small floor;
* binary reward: 1 when the error is under a threshold (baseline);
* combinations of the above, selected by :class:`RewardMode`.

Scalar functions here are the reference path. :func:`batch_rewards` is the
vectorized path used by the trainer; it goes through the kernel backend for
the O(N^2 K) rank term.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels


class RewardConfigError(ValueError):
    pass


class RewardMode(str, enum.Enum):
    BINARY = "binary"
    ERROR = "error"
    RANK = "rank"
    BINARY_RANK = "binary_rank"
    ERROR_RANK = "error_rank"

    @property
    def uses_rank(self) -> bool:
        return self in (RewardMode.RANK, RewardMode.BINARY_RANK, RewardMode.ERROR_RANK)

    @property
    def uses_abs(self) -> bool:
        return self in (RewardMode.ERROR, RewardMode.ERROR_RANK)

    @property
    def uses_binary(self) -> bool:
        return self in (RewardMode.BINARY, RewardMode.BINARY_RANK)


@dataclass(frozen=True)
class RewardConfig:
    sigma: float = 0.1
    gamma: float = 1e-6
    eps_floor: float = 1e-3
    binary_threshold: float = 0.05

    def __post_init__(self):
        for name in ("sigma", "gamma", "eps_floor", "binary_threshold"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise RewardConfigError(f"{name} must be a positive finite number, got {v!r}")


@dataclass(frozen=True)
class GroupStats:
    mu: float
    var: float


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-output reward components. ``None`` marks a component not computed."""

    rank: float | None
    abs: float | None
    binary: float | None
    combined: float


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite input: {v!r}")


def std_normal_cdf(z: float) -> float:
    """Standard normal CDF via the complementary error function (~1e-16 abs. error)."""
    _check_finite(z)
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def group_stats(scores: Sequence[float]) -> GroupStats:
    """Mean and population variance of one image's K sampled scores."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("group_stats needs at least one score")
    mu = float(arr.mean())
    var = float(((arr - mu) ** 2).mean())
    return GroupStats(mu, var)


def pairwise_prob(o_ik: float, stats_i: GroupStats, stats_j: GroupStats, gamma: float) -> float:
    """Probability that output ``o_ik`` beats image ``j``."""
    _check_finite(o_ik, stats_i.mu, stats_i.var, stats_j.mu, stats_j.var, gamma)
    if gamma <= 0:
        raise RewardConfigError("gamma must be positive")
    return std_normal_cdf((o_ik - stats_j.mu) / math.sqrt(stats_i.var + stats_j.var + gamma))


def preference_label(s_i: float, s_j: float) -> int:
    return 1 if s_i >= s_j else 0


def _fidelity(p_c: float, p: float) -> float:
    return math.sqrt(p_c * p) + math.sqrt((1.0 - p_c) * (1.0 - p))


def rank_reward(
    o_ik: float,
    i: int,
    batch_stats: Sequence[GroupStats],
    batch_mos: Sequence[float],
    gamma: float,
) -> float:
    n = len(batch_stats)
    if n < 2:
        raise RewardConfigError("rank reward needs a batch of at least 2 images")
    if len(batch_mos) != n:
        raise ValueError("batch_stats and batch_mos must be aligned")
    total = 0.0
    for j in range(n):
        if j == i:
            continue
        p_c = preference_label(batch_mos[i], batch_mos[j])
        p = pairwise_prob(o_ik, batch_stats[i], batch_stats[j], gamma)
        total += _fidelity(p_c, p)
    return total / (n - 1)


def abs_reward(o_ik: float, s_i: float, sigma: float, eps_floor: float) -> float:
    if sigma <= 0:
        raise RewardConfigError("sigma must be positive")
    e = abs(o_ik - s_i) / sigma
    return math.exp(-0.5 * e * e) + eps_floor


def binary_reward(o_ik: float, s_i: float, threshold: float) -> int:
    if threshold <= 0:
        raise RewardConfigError("threshold must be positive")
    return 1 if abs(o_ik - s_i) < threshold else 0


def combined_reward(
    mode: RewardMode | str,
    *,
    rank: float | None = None,
    abs: float | None = None,
    binary: float | None = None,
) -> RewardBreakdown:
    """Sum the components selected by ``mode``; others pass through unused."""
    mode = RewardMode(mode)
    total = 0.0
    needed = []
    if mode.uses_rank:
        needed.append(("rank", rank))
    if mode.uses_abs:
        needed.append(("abs", abs))
    if mode.uses_binary:
        needed.append(("binary", binary))
    for name, value in needed:
        if value is None:
            raise RewardConfigError(f"mode {mode.value} needs the {name} component")
        total += value
    return RewardBreakdown(rank=rank, abs=abs, binary=binary, combined=total)


@dataclass
class BatchRewards:
    """Rewards for an ``N x K`` block of sampled scores."""

    rank: np.ndarray | None
    abs: np.ndarray
    binary: np.ndarray
    combined: np.ndarray
    mu: np.ndarray
    var: np.ndarray

    def breakdown(self, i: int, k: int) -> RewardBreakdown:
        return RewardBreakdown(
            rank=None if self.rank is None else float(self.rank[i, k]),
            abs=float(self.abs[i, k]),
            binary=float(self.binary[i, k]),
            combined=float(self.combined[i, k]),
        )


def batch_rewards(scores: np.ndarray, mos: np.ndarray, mode: RewardMode | str, cfg: RewardConfig) -> BatchRewards:
    """All reward components for ``scores`` (N x K) against ``mos`` (N,).

    Group statistics for every image are computed first; only then are
    per-output rank rewards evaluated, since each one reads every other
    image's statistics.
    """
    mode = RewardMode(mode)
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    mos = np.ascontiguousarray(mos, dtype=np.float64)
    n = scores.shape[0]
    mu = scores.mean(axis=1)
    var = ((scores - mu[:, None]) ** 2).mean(axis=1)

    err = np.abs(scores - mos[:, None])
    abs_r = np.exp(-0.5 * (err / cfg.sigma) ** 2) + cfg.eps_floor
    bin_r = (err < cfg.binary_threshold).astype(np.float64)

    if mode.uses_rank and n < 2:
        raise RewardConfigError(f"mode {mode.value} needs a batch of at least 2 images, got {n}")
    # computed for logging whenever defined, even if the mode ignores it
    rank_r = kernels.rank_reward_matrix(scores, mu, var, mos, float(cfg.gamma)) if n >= 2 else None

    combined = np.zeros_like(scores)
    if mode.uses_rank:
        combined += rank_r
    if mode.uses_abs:
        combined += abs_r
    if mode.uses_binary:
        combined += bin_r
    return BatchRewards(rank=rank_r, abs=abs_r, binary=bin_r, combined=combined, mu=mu, var=var)
