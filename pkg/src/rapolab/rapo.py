"""Group-relative policy optimization with relative + absolute rewards.

One training step:

1. freeze the live policy as the ``old`` snapshot;
2. draw K scores per image from it;
3. compute every image's group statistics, then per-output rewards;
4. standardize rewards within each group (population std, zero-variance
   groups get zero advantage);
5. ascend the mean of ``min(r*A, clip(r, 1-eps_low, 1+eps_high)*A) - beta*KL``
   where ``r`` is the current/old probability ratio and KL is the k3
   estimator ``u - log u - 1`` with ``u = pi_ref / pi``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import metrics
from .dataset import Dataset, as_arrays
from .policy import (
    PolicyGrad,
    PolicySnapshot,
    ScorePolicy,
    apply_update,
    backward,
    entropy_batch,
    expected_scores,
    forward_batch,
    log_probs,
    sample_bins,
    snapshot,
)
from .rewards import RewardConfig, RewardConfigError, RewardMode, batch_rewards

ZERO_STD = 1e-12


class RapoError(RuntimeError):
    pass


class NonFiniteGradientError(RapoError):
    def __init__(self, step: int):
        super().__init__(f"non-finite gradient at step {step}; update skipped")
        self.step = step


@dataclass(frozen=True)
class RapoConfig:
    K: int = 4
    beta: float = 0.01
    eps_low: float = 0.2
    eps_high: float = 0.28
    lr: float = 1e-3
    momentum: float = 0.0
    batch_size: int = 32
    epochs_per_rollout: int = 1
    reward_mode: RewardMode = RewardMode.ERROR_RANK
    reward: RewardConfig = field(default_factory=RewardConfig)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "reward_mode", RewardMode(self.reward_mode))
        if isinstance(self.reward, dict):
            object.__setattr__(self, "reward", RewardConfig(**self.reward))
        if self.K < 1:
            raise RewardConfigError("K must be at least 1")
        if self.beta < 0:
            raise RewardConfigError("beta must be non-negative")
        if not 0 < self.eps_low < 1:
            raise RewardConfigError("eps_low must lie in (0, 1)")
        if self.eps_high <= 0:
            raise RewardConfigError("eps_high must be positive")
        if self.lr <= 0:
            raise RewardConfigError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise RewardConfigError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise RewardConfigError("batch_size must be positive")
        if not 1 <= self.epochs_per_rollout <= 4:
            raise RewardConfigError("epochs_per_rollout must be between 1 and 4")
        if self.reward_mode.uses_rank and self.batch_size < 2:
            raise RewardConfigError(f"mode {self.reward_mode.value} needs batch_size >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reward_mode"] = self.reward_mode.value
        return d


@dataclass(frozen=True)
class TrainState:
    policy: ScorePolicy
    old: PolicySnapshot
    ref: PolicySnapshot
    step: int = 0
    velocity: PolicyGrad | None = None


def init_state(policy: ScorePolicy) -> TrainState:
    """Start RL from ``policy``; it also becomes the fixed reference."""
    return TrainState(policy=policy, old=snapshot(policy, "old"), ref=snapshot(policy, "reference"))


@dataclass(frozen=True)
class StepReport:
    step: int
    objective: float
    mean_reward: float
    mean_rank: float
    mean_abs: float
    mean_binary: float
    mean_abs_adv: float
    kl: float
    clip_fraction: float
    entropy: float
    train_plcc: float | None = None
    train_srcc: float | None = None


LOG_COLUMNS = [f.name for f in fields(StepReport)]


@dataclass
class RunLog:
    steps: list[StepReport] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.steps], dtype=np.float64)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for r in self.steps:
                w.writerow(["" if getattr(r, c) is None else repr(getattr(r, c)) for c in LOG_COLUMNS])
        return path


def compute_advantages(rewards: Sequence[float]) -> np.ndarray:
    """``(r - mean) / std`` with population std; all zeros if std < 1e-12."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("compute_advantages needs at least one reward")
    return group_advantages(r[None, :])[0]


def group_advantages(rewards: np.ndarray) -> np.ndarray:
    """Row-wise :func:`compute_advantages` for an ``N x K`` block."""
    mean = rewards.mean(axis=1, keepdims=True)
    centered = rewards - mean
    # second pass removes the rounding error of the first mean
    centered = centered - centered.mean(axis=1, keepdims=True)
    std = np.sqrt((centered * centered).mean(axis=1, keepdims=True))
    safe = np.where(std < ZERO_STD, 1.0, std)
    return np.where(std < ZERO_STD, 0.0, centered / safe)


def prob_ratio(logprob_current: float, logprob_old: float) -> float:
    if not (math.isfinite(logprob_current) and math.isfinite(logprob_old)):
        raise ValueError("non-finite log-probability")
    return math.exp(logprob_current - logprob_old)


def kl_approx(logprob_ref: float, logprob_current: float) -> float:
    if not (math.isfinite(logprob_ref) and math.isfinite(logprob_current)):
        raise ValueError("non-finite log-probability")
    log_u = logprob_ref - logprob_current
    return math.exp(log_u) - log_u - 1.0


def surrogate_term(ratio: float, advantage: float, eps_low: float, eps_high: float) -> float:
    clipped = min(max(ratio, 1.0 - eps_low), 1.0 + eps_high)
    return min(ratio * advantage, clipped * advantage)


@dataclass(frozen=True)
class ObjectiveEval:
    value: float
    grad: PolicyGrad
    kl: float
    clip_fraction: float


def step_objective(
    policy: ScorePolicy,
    x: np.ndarray,
    bins: np.ndarray,
    logp_old: np.ndarray,
    logp_ref: np.ndarray,
    adv: np.ndarray,
    cfg: RapoConfig,
) -> ObjectiveEval:
    """Value and analytic gradient of the clipped objective.

    ``bins``, ``logp_old``, ``logp_ref`` and ``adv`` are ``N x K``; the old and
    reference log-probabilities are those of the sampled bins.
    """
    n, k = bins.shape
    hidden, logp = forward_batch(policy, x)
    rows = np.arange(n)[:, None]
    lp = logp[rows, bins]

    ratio = np.exp(lp - logp_old)
    lo, hi = 1.0 - cfg.eps_low, 1.0 + cfg.eps_high
    in_range = (ratio >= lo) & (ratio <= hi)
    unclipped = ratio * adv
    clipped = np.clip(ratio, lo, hi) * adv
    surr = np.minimum(unclipped, clipped)
    # gradient flows through the ratio unless the clipped branch is the minimum
    live = in_range | (unclipped < clipped)

    log_u = logp_ref - lp
    u = np.exp(log_u)
    kl = u - log_u - 1.0

    value = float((surr - cfg.beta * kl).mean())

    coef = (np.where(live, adv * ratio, 0.0) - cfg.beta * (1.0 - u)) / (n * k)
    g_logits = -coef.sum(axis=1, keepdims=True) * np.exp(logp)
    np.add.at(g_logits, (np.broadcast_to(rows, bins.shape), bins), coef)
    grad = backward(policy, x, hidden, g_logits)
    return ObjectiveEval(value=value, grad=grad, kl=float(kl.mean()), clip_fraction=float((~in_range).mean()))


def rapo_step(state: TrainState, batch, cfg: RapoConfig) -> tuple[TrainState, StepReport]:
    """One rollout-and-update step on ``batch`` (samples or a Dataset)."""
    x, mos = as_arrays(batch)
    return rapo_step_arrays(state, x, mos, cfg)


def rapo_step_arrays(state: TrainState, x: np.ndarray, mos: np.ndarray, cfg: RapoConfig) -> tuple[TrainState, StepReport]:
    n = x.shape[0]
    if n == 0:
        raise RapoError("empty batch")
    if cfg.reward_mode.uses_rank and n < 2:
        raise RewardConfigError(f"mode {cfg.reward_mode.value} needs at least 2 images per batch, got {n}")

    old = snapshot(state.policy, "old")
    logp_all_old = log_probs(old, x)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0, state.step]))
    bins = sample_bins(logp_all_old, cfg.K, rng)
    scores = old.policy.bin_values[bins]

    rw = batch_rewards(scores, mos, cfg.reward_mode, cfg.reward)
    adv = group_advantages(rw.combined)

    rows = np.arange(n)[:, None]
    logp_old = logp_all_old[rows, bins]
    logp_ref = log_probs(state.ref, x)[rows, bins]

    policy = state.policy
    velocity = state.velocity
    first = None
    for _ in range(cfg.epochs_per_rollout):
        ev = step_objective(policy, x, bins, logp_old, logp_ref, adv, cfg)
        if not ev.grad.is_finite():
            raise NonFiniteGradientError(state.step)
        if first is None:
            first = ev
        if cfg.momentum > 0:
            velocity = ev.grad if velocity is None else velocity * cfg.momentum + ev.grad
            policy = apply_update(policy, velocity, cfg.lr)
        else:
            policy = apply_update(policy, ev.grad, cfg.lr)

    report = StepReport(
        step=state.step,
        objective=first.value,
        mean_reward=float(rw.combined.mean()),
        mean_rank=float(rw.rank.mean()) if rw.rank is not None else float("nan"),
        mean_abs=float(rw.abs.mean()),
        mean_binary=float(rw.binary.mean()),
        mean_abs_adv=float(np.abs(adv).mean()),
        kl=first.kl,
        clip_fraction=first.clip_fraction,
        entropy=float(entropy_batch(logp_all_old).mean()),
    )
    new_state = TrainState(policy=policy, old=old, ref=state.ref, step=state.step + 1, velocity=velocity)
    return new_state, report


def batch_schedule(m: int, batch_size: int, seed: int, stream: int = 1):
    """Endless seeded mini-batch index stream: reshuffle each epoch, drop the ragged tail.

    ``stream`` separates independent consumers of the same seed (RAPO uses 1,
    the warm start 2).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, stream]))
    size = min(batch_size, m)
    while True:
        perm = rng.permutation(m)
        for start in range(0, m - size + 1, size):
            yield perm[start : start + size]


def train(
    state0: TrainState,
    dataset: Dataset,
    cfg: RapoConfig,
    steps: int,
    metrics_every: int = 0,
    callback: Callable[[TrainState], None] | None = None,
) -> tuple[TrainState, RunLog]:
    """Run ``steps`` RAPO steps on seeded mini-batches of ``dataset``.

    The logged entropy is the sampling policy's mean entropy over the whole
    training set, so the curve is not confounded by batch composition. Every
    ``metrics_every`` steps (and at the last step) the report also carries
    train-set PLCC/SRCC of the expected score. ``callback`` sees the state
    after each step.
    """
    if len(dataset) == 0:
        raise RapoError("dataset is empty")
    log = RunLog()
    state = state0
    if steps <= 0:
        return state, log
    sched = batch_schedule(len(dataset), cfg.batch_size, cfg.seed)
    x_all, y_all = as_arrays(dataset)
    for t in range(steps):
        idx = next(sched)
        ent = float(entropy_batch(log_probs(state.policy, x_all)).mean())
        state, report = rapo_step_arrays(state, np.ascontiguousarray(x_all[idx]), y_all[idx], cfg)
        report = replace(report, entropy=ent)
        if metrics_every and ((t + 1) % metrics_every == 0 or t == steps - 1):
            pred = expected_scores(state.policy, x_all)
            report = replace(
                report,
                train_plcc=metrics.safe_plcc(pred, y_all),
                train_srcc=metrics.safe_srcc(pred, y_all),
            )
        log.steps.append(report)
        if callback is not None:
            callback(state)
    return state, log
