"""A small categorical score policy.

Features go through one tanh hidden layer, then a softmax over ``B`` score
bins with values ``k / (B - 1)``. The single sampled bin is the whole output,
so the per-token sums of a sequence policy collapse to one term.

Gradients are analytic. Batched forward/backward passes go through
:mod:`rapolab.kernels`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels

CHECKPOINT_FORMAT = "rapolab-policy"
CHECKPOINT_VERSION = 1

PARAM_NAMES = ("w1", "b1", "w2", "b2")


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class ScorePolicy:
    w1: np.ndarray  # (d, h)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h, B)
    b2: np.ndarray  # (B,)
    bin_values: np.ndarray  # (B,)
    seed: int | None = None

    def __post_init__(self):
        d, h = self.w1.shape
        if self.b1.shape != (h,) or self.w2.shape[0] != h:
            raise PolicyError("hidden dimension mismatch between layers")
        nb = self.w2.shape[1]
        if nb < 2:
            raise PolicyError("need at least 2 score bins")
        if self.b2.shape != (nb,) or self.bin_values.shape != (nb,):
            raise PolicyError("bin dimension mismatch")

    @property
    def d(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def n_bins(self) -> int:
        return self.w2.shape[1]

    def params(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)

    def with_params(self, w1, b1, w2, b2) -> "ScorePolicy":
        return ScorePolicy(w1, b1, w2, b2, self.bin_values, self.seed)

    def check_finite(self) -> None:
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise PolicyError(f"non-finite values in parameter {name}")


@dataclass(frozen=True)
class PolicySnapshot:
    """Read-only copy of a policy, tagged ``old`` or ``reference``."""

    policy: ScorePolicy
    role: str

    def __post_init__(self):
        if self.role not in ("old", "reference"):
            raise PolicyError(f"unknown snapshot role {self.role!r}")


@dataclass(frozen=True)
class PolicyGrad:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def __add__(self, other: "PolicyGrad") -> "PolicyGrad":
        return PolicyGrad(*(a + b for a, b in zip(self.arrays(), other.arrays())))

    def __mul__(self, c: float) -> "PolicyGrad":
        return PolicyGrad(*(a * c for a in self.arrays()))

    __rmul__ = __mul__

    @classmethod
    def zeros_like(cls, policy: ScorePolicy) -> "PolicyGrad":
        return cls(*(np.zeros_like(a) for a in policy.params()))


@dataclass(frozen=True)
class SampledOutput:
    bin: int
    score: float
    logprob_current: float
    logprob_old: float
    logprob_ref: float
    entropy_at_sample: float


def _unwrap(policy) -> ScorePolicy:
    return policy.policy if isinstance(policy, PolicySnapshot) else policy


def bin_grid(n_bins: int) -> np.ndarray:
    if n_bins < 2:
        raise PolicyError("need at least 2 score bins")
    return np.arange(n_bins, dtype=np.float64) / (n_bins - 1)


def init_policy(
    d: int,
    hidden: int = 32,
    n_bins: int = 101,
    seed: int = 0,
    out_scale: float = 0.01,
) -> ScorePolicy:
    """Seeded small-uniform initialization.

    Hidden weights are ``U(-1/sqrt(d), 1/sqrt(d))``; output weights are
    ``U(-out_scale, out_scale)`` so the initial score distribution is close to
    uniform. Biases start at zero.
    """
    rng = np.random.default_rng(seed)
    a = 1.0 / math.sqrt(d)
    w1 = rng.uniform(-a, a, size=(d, hidden))
    w2 = rng.uniform(-out_scale, out_scale, size=(hidden, n_bins))
    return ScorePolicy(
        w1=w1,
        b1=np.zeros(hidden),
        w2=w2,
        b2=np.zeros(n_bins),
        bin_values=bin_grid(n_bins),
        seed=seed,
    )


def zero_policy(d: int, hidden: int = 32, n_bins: int = 101) -> ScorePolicy:
    """All-zero parameters: the uniform score distribution."""
    return ScorePolicy(
        np.zeros((d, hidden)), np.zeros(hidden), np.zeros((hidden, n_bins)), np.zeros(n_bins), bin_grid(n_bins)
    )


def _as_batch(policy: ScorePolicy, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != policy.d:
        raise PolicyError(f"expected features of length {policy.d}, got shape {np.shape(features)}")
    if not np.all(np.isfinite(x)):
        raise PolicyError("non-finite features")
    return np.ascontiguousarray(x)


def forward_batch(policy, features) -> tuple[np.ndarray, np.ndarray]:
    """``(hidden, logp)`` for a batch of feature rows."""
    p = _unwrap(policy)
    p.check_finite()
    x = _as_batch(p, features)
    return kernels.mlp_forward(x, *(np.ascontiguousarray(a) for a in p.params()))


def log_probs(policy, features) -> np.ndarray:
    return forward_batch(policy, features)[1]


def forward_logits(policy, features) -> np.ndarray:
    """Unnormalized logits for one feature vector."""
    p = _unwrap(policy)
    p.check_finite()
    x = _as_batch(p, features)[0]
    return np.tanh(x @ p.w1 + p.b1) @ p.w2 + p.b2


def _check_bin(p: ScorePolicy, b: int) -> int:
    b = int(b)
    if not 0 <= b < p.n_bins:
        raise PolicyError(f"bin {b} out of range [0, {p.n_bins})")
    return b


def log_prob(policy, features, bin: int) -> float:
    p = _unwrap(policy)
    b = _check_bin(p, bin)
    return float(log_probs(p, features)[0, b])


def entropy_batch(logp: np.ndarray) -> np.ndarray:
    prob = np.exp(logp)
    # round-off can push the sum a few ulp outside the true range [0, log B]
    return np.clip(-(prob * logp).sum(axis=1), 0.0, np.log(logp.shape[1]))


def entropy(policy, features) -> float:
    """Shannon entropy of the score distribution, in nats."""
    return float(entropy_batch(log_probs(policy, features))[0])


def expected_scores(policy, features) -> np.ndarray:
    p = _unwrap(policy)
    # row-wise sum, not a matvec: identical rows must give identical scores
    return (np.exp(log_probs(p, features)) * p.bin_values).sum(axis=1)


def argmax_scores(policy, features) -> np.ndarray:
    p = _unwrap(policy)
    return p.bin_values[np.argmax(log_probs(p, features), axis=1)]


def backward(policy, features, hidden: np.ndarray, g_logits: np.ndarray) -> PolicyGrad:
    """Chain ``g_logits`` (N x B) back to the parameters."""
    p = _unwrap(policy)
    x = _as_batch(p, features)
    return PolicyGrad(
        *kernels.mlp_backward(x, hidden, np.ascontiguousarray(p.w2), np.ascontiguousarray(g_logits, dtype=np.float64))
    )


def grad_log_prob(policy, features, bin: int) -> PolicyGrad:
    p = _unwrap(policy)
    b = _check_bin(p, bin)
    hidden, logp = forward_batch(p, features)
    g = -np.exp(logp)
    g[0, b] += 1.0
    return backward(p, features, hidden, g)


def sample_bins(logp: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if k < 1:
        raise PolicyError("K must be at least 1")
    u = rng.random((logp.shape[0], k))
    return kernels.sample_bins(np.ascontiguousarray(logp), u)


def sample_outputs(policy, features, K: int, seed: int, old=None, ref=None) -> list[SampledOutput]:
    """Draw ``K`` scores for one feature vector.

    Draws come from ``policy``. ``old`` / ``ref`` snapshots, when given, supply
    the other two log-probabilities; otherwise they equal the current one.
    """
    if K < 1:
        raise PolicyError("K must be at least 1")
    p = _unwrap(policy)
    logp = log_probs(p, features)
    bins = sample_bins(logp, K, np.random.default_rng(seed))[0]
    lp_old = logp if old is None else log_probs(old, features)
    lp_ref = logp if ref is None else log_probs(ref, features)
    h = float(entropy_batch(logp)[0])
    return [
        SampledOutput(
            bin=int(b),
            score=float(p.bin_values[b]),
            logprob_current=float(logp[0, b]),
            logprob_old=float(lp_old[0, b]),
            logprob_ref=float(lp_ref[0, b]),
            entropy_at_sample=h,
        )
        for b in bins
    ]


def target_bins(policy, mos) -> np.ndarray:
    """Nearest bin to each score; exact ties go to the lower bin."""
    p = _unwrap(policy)
    mos = np.atleast_1d(np.asarray(mos, dtype=np.float64))
    return np.argmin(np.abs(p.bin_values[None, :] - mos[:, None]), axis=1)


def cross_entropy(policy, features, targets: np.ndarray) -> float:
    logp = log_probs(policy, features)
    return float(-logp[np.arange(len(targets)), targets].mean())


def warm_start_step(policy: ScorePolicy, batch, lr: float) -> tuple[ScorePolicy, float]:
    """One gradient-descent step on mean cross-entropy to the nearest bins.

    ``batch`` is a sequence of :class:`~rapolab.dataset.ImageSample` or a
    :class:`~rapolab.dataset.Dataset`. Returns the new policy and the loss
    before the step.
    """
    from .dataset import as_arrays

    if len(batch) == 0:
        raise PolicyError("warm-start batch is empty")
    if lr < 0:
        raise PolicyError("learning rate must be non-negative")
    x, mos = as_arrays(batch)
    targets = target_bins(policy, mos)
    hidden, logp = forward_batch(policy, x)
    n = len(targets)
    loss = float(-logp[np.arange(n), targets].mean())
    g = np.exp(logp)
    g[np.arange(n), targets] -= 1.0
    g /= n
    grad = backward(policy, x, hidden, g)
    return apply_update(policy, grad, -lr), loss


def apply_update(policy: ScorePolicy, grad: PolicyGrad, step: float) -> ScorePolicy:
    """``params + step * grad``, as a new policy."""
    if step == 0.0:
        return policy.with_params(*(a.copy() for a in policy.params()))
    return policy.with_params(*(a + step * g for a, g in zip(policy.params(), grad.arrays())))


def snapshot(policy, role: str) -> PolicySnapshot:
    p = _unwrap(policy)
    arrays = []
    for a in (*p.params(), p.bin_values):
        c = np.array(a, dtype=np.float64, copy=True)
        c.setflags(write=False)
        arrays.append(c)
    return PolicySnapshot(ScorePolicy(*arrays, seed=p.seed), role)


def live_copy(policy) -> ScorePolicy:
    """Writable copy of a policy or snapshot."""
    p = _unwrap(policy)
    return ScorePolicy(*(np.array(a, copy=True) for a in (*p.params(), p.bin_values)), seed=p.seed)


def to_checkpoint(policy, **metadata) -> dict:
    p = _unwrap(policy)
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "shape": {"d": p.d, "h": p.hidden, "B": p.n_bins},
        "seed": p.seed,
        "metadata": metadata,
        "bin_values": p.bin_values.tolist(),
        "w1": p.w1.tolist(),
        "b1": p.b1.tolist(),
        "w2": p.w2.tolist(),
        "b2": p.b2.tolist(),
    }


def save_checkpoint(policy, path, **metadata) -> Path:
    """Write a JSON checkpoint. Floats are written with ``repr``, so a reload
    reproduces every parameter bit for bit."""
    path = Path(path)
    path.write_text(json.dumps(to_checkpoint(policy, **metadata), allow_nan=False))
    return path


def from_checkpoint(obj: dict) -> ScorePolicy:
    try:
        if obj.get("format") != CHECKPOINT_FORMAT:
            raise PolicyError(f"not a policy checkpoint (format={obj.get('format')!r})")
        if obj.get("version") != CHECKPOINT_VERSION:
            raise PolicyError(f"unsupported checkpoint version {obj.get('version')!r}")
        shape = obj["shape"]
        d, h, nb = int(shape["d"]), int(shape["h"]), int(shape["B"])
        arrays = {
            "w1": np.array(obj["w1"], dtype=np.float64).reshape(d, h),
            "b1": np.array(obj["b1"], dtype=np.float64).reshape(h),
            "w2": np.array(obj["w2"], dtype=np.float64).reshape(h, nb),
            "b2": np.array(obj["b2"], dtype=np.float64).reshape(nb),
            "bin_values": np.array(obj["bin_values"], dtype=np.float64).reshape(nb),
        }
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, PolicyError):
            raise
        raise PolicyError(f"corrupt checkpoint: {exc}") from None
    policy = ScorePolicy(**arrays, seed=obj.get("seed"))
    policy.check_finite()
    return policy


def load_checkpoint(path) -> ScorePolicy:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise PolicyError(f"corrupt checkpoint {path}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise PolicyError(f"corrupt checkpoint {path}")
    return from_checkpoint(obj)
