"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, or when
``RAPOLAB_PURE_PYTHON=1`` is set. Signatures and results match the Cython
versions to floating-point rounding.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr


def mlp_forward(x, w1, b1, w2, b2):
    """Return ``(hidden, logp)`` for a batch of feature rows.

    ``hidden = tanh(x @ w1 + b1)`` and ``logp`` is the log-softmax of
    ``hidden @ w2 + b2`` along the bin axis.
    """
    hidden = np.tanh(x @ w1 + b1)
    logits = hidden @ w2 + b2
    shift = logits.max(axis=1, keepdims=True)
    z = logits - shift
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return hidden, logp


def mlp_backward(x, hidden, w2, g_logits):
    """Backpropagate ``g_logits`` (dObjective/dLogits, shape N x B) to parameters."""
    gw2 = hidden.T @ g_logits
    gb2 = g_logits.sum(axis=0)
    g_pre = (g_logits @ w2.T) * (1.0 - hidden * hidden)
    gw1 = x.T @ g_pre
    gb1 = g_pre.sum(axis=0)
    return gw1, gb1, gw2, gb2


def sample_bins(logp, u):
    """Inverse-CDF categorical draws: row ``i`` of ``logp`` against uniforms ``u[i, :]``."""
    cdf = np.cumsum(np.exp(logp), axis=1)
    n_bins = logp.shape[1]
    out = np.empty(u.shape, dtype=np.int64)
    for i in range(u.shape[0]):
        target = u[i] * cdf[i, -1]
        idx = np.searchsorted(cdf[i], target, side="right")
        out[i] = np.minimum(idx, n_bins - 1)
    return out


def rank_reward_matrix(scores, mu, var, mos, gamma):
    """Relative rank reward for every output ``scores[i, k]`` against the batch.

    Each entry averages, over ``j != i``, the fidelity between the Gaussian
    win probability ``Phi((o_ik - mu_j) / sqrt(var_i + var_j + gamma))`` and the
    ground-truth preference ``mos_i >= mos_j``.
    """
    n = scores.shape[0]
    denom = np.sqrt(var[:, None] + var[None, :] + gamma)  # (i, j)
    z = (scores[:, :, None] - mu[None, None, :]) / denom[:, None, :]
    p = ndtr(z)
    pc = (mos[:, None] >= mos[None, :]).astype(np.float64)[:, None, :]
    fid = np.sqrt(pc * p) + np.sqrt((1.0 - pc) * (1.0 - p))
    idx = np.arange(n)
    fid[idx, :, idx] = 0.0
    return fid.sum(axis=2) / (n - 1)
