"""Acceptance criteria A1-A10. Each test prints one ``A<n> PASS|FAIL`` line.

A2, A3, A7 and A10 train real models (about 2 minutes in total on one core)
and are marked ``slow``.
"""

from __future__ import annotations

import json
import time
from dataclasses import replace

import numpy as np
import oracles
import pytest
from conftest import DATA, REPO
from test_policy import random_policy
from test_rapo import _objective_case, block_rel_err, fd, nested

from rapolab import harness
from rapolab.critique_filter import CritiqueRecord, detect_score_leakage, filter_dataset
from rapolab.metrics import UndefinedCorrelationError, plcc, srcc
from rapolab.policy import grad_log_prob, log_prob
from rapolab.rapo import RapoConfig, compute_advantages, kl_approx, step_objective, surrogate_term
from rapolab.rewards import RewardMode, abs_reward, binary_reward, group_stats, pairwise_prob, rank_reward

CONFIGS = REPO / "configs"


@pytest.fixture
def verdict(capsys):
    def report(tag: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{tag} {'PASS' if ok else 'FAIL'}: {detail}")

    return report


# --------------------------------------------------------------------- A1


def test_a1_formula_oracle_equivalence(verdict):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    dev: dict[str, float] = {}

    def track(name, got, want):
        dev[name] = max(dev.get(name, 0.0), abs(float(got) - float(want)))

    for _ in range(1000):
        n, k = int(rng.integers(2, 7)), int(rng.integers(1, 6))
        groups = rng.random((n, k)).tolist()
        mos = np.round(rng.random(n), 1).tolist()
        stats = [group_stats(g) for g in groups]
        gamma = float(10 ** rng.uniform(-7, -2))
        i = int(rng.integers(n))
        o = groups[i][int(rng.integers(k))]
        track("rank_reward", rank_reward(o, i, stats, mos, gamma), oracles.rank_reward(o, i, groups, mos, gamma))
        j = (i + 1) % n
        gi, gj = groups[i], groups[j]
        track(
            "pairwise_prob",
            pairwise_prob(o, stats[i], stats[j], gamma),
            oracles.pairwise_prob(o, oracles.mean(gi), oracles.pop_var(gi), oracles.mean(gj), oracles.pop_var(gj), gamma),
        )
        s, sigma, eps = float(rng.random()), float(rng.uniform(0.01, 0.5)), float(10 ** rng.uniform(-4, -1))
        track("abs_reward", abs_reward(o, s, sigma, eps), oracles.abs_reward(o, s, sigma, eps))
        thr = float(rng.uniform(0.01, 0.3))
        track("binary_reward", binary_reward(o, s, thr), oracles.binary_reward(o, s, thr))
        rs = (rng.normal(size=int(rng.integers(2, 9))) * 10 ** rng.uniform(-3, 2)).tolist()
        got = compute_advantages(rs)
        want = oracles.advantages(rs)
        track("compute_advantages", max(abs(a - b) for a, b in zip(got, want)), 0.0)
        lp_ref, lp_cur = float(rng.uniform(-6, 0)), float(rng.uniform(-6, 0))
        track("kl_approx", kl_approx(lp_ref, lp_cur), oracles.kl_k3(lp_ref, lp_cur))
        r, a = float(rng.uniform(0.3, 1.8)), float(rng.normal())
        el, eh = float(rng.uniform(0.05, 0.5)), float(rng.uniform(0.05, 0.5))
        track("surrogate_term", surrogate_term(r, a, el, eh), oracles.surrogate(r, a, el, eh))
        m = int(rng.integers(3, 30))
        x = rng.normal(size=m)
        y = x * rng.normal() + rng.normal(size=m)
        track("plcc", plcc(x, y), oracles.pearson(x.tolist(), y.tolist()))
        xr = np.round(x, 0)  # ties
        try:
            track("srcc", srcc(xr, y), oracles.spearman(xr.tolist(), y.tolist()))
        except UndefinedCorrelationError:
            track("srcc", srcc(x, y), oracles.spearman(x.tolist(), y.tolist()))
    elapsed = time.perf_counter() - t0
    worst = max(dev.values())
    ok = worst <= 1e-10 and elapsed < 10 and len(dev) == 9
    verdict("A1", ok, f"max deviation {worst:.2e} over 9 functions x 1000 inputs in {elapsed:.1f} s")
    assert ok, dev


# ------------------------------------------------------------ A2, A7 shared


@pytest.fixture(scope="module")
def ablation(tmp_path_factory):
    spec = harness.load_ablation(CONFIGS / "ablation.yaml")
    spec = replace(spec, output_dir=str(tmp_path_factory.mktemp("ablation")))
    t0 = time.perf_counter()
    table = harness.run_ablation(spec)
    return spec, table, time.perf_counter() - t0


@pytest.mark.slow
def test_a2_reward_mode_ordering(ablation, verdict):
    spec, table, elapsed = ablation
    base = spec.base
    tr, te = harness.build_splits(base)
    assert (len(tr), len(te), tr.d) == (512, 128, 8)
    assert base.dataset.synth.noise == 0.05 and base.policy.n_bins == 101 and base.rapo.K == 4 and base.steps == 1500
    assert len(spec.seeds) == 5 and {m.value for m in spec.modes} == {m.value for m in RewardMode}
    rows = {r["mode"]: r for r in table["rows"]}
    er, bi, rk = rows["error_rank"], rows["binary"], rows["rank"]
    d_plcc, d_srcc = er["plcc"] - bi["plcc"], er["srcc"] - bi["srcc"]
    gap = rk["srcc"] - rk["plcc"]
    best = max(rows.values(), key=lambda r: r["plcc"])["mode"]
    parts = {
        "i": d_plcc >= 0.05 and d_srcc >= 0.05,
        "ii": gap >= 0.05,
        "iii": best == "error_rank",
        "time": elapsed < 20 * 60,
    }
    means = ", ".join(f"{m} {r['plcc']:.3f}/{r['srcc']:.3f}" for m, r in rows.items())
    detail = (
        f"(i) error_rank-binary PLCC {d_plcc:+.3f} SRCC {d_srcc:+.3f} [{'ok' if parts['i'] else 'needs >= 0.05'}]; "
        f"(ii) rank SRCC-PLCC {gap:+.3f} [{'ok' if parts['ii'] else 'needs >= 0.05'}]; "
        f"(iii) best PLCC {best} [{'ok' if parts['iii'] else 'not error_rank'}]; "
        f"{elapsed:.0f} s; seed-mean PLCC/SRCC: {means}"
    )
    verdict("A2", all(parts.values()), detail)
    assert all(parts.values()), parts


@pytest.mark.slow
def test_a7_entropy_non_collapse(ablation, verdict):
    _, table, _ = ablation
    runs = table["raw"]["error_rank"]
    frac = [r["final_entropy"] / r["post_warm_start_entropy"] for r in runs]
    drops = [r["max_entropy_step_drop"] for r in runs]
    ok = sum(f >= 0.10 for f in frac) >= 4 and max(drops) <= 0.5
    verdict(
        "A7",
        ok,
        f"final/post-warm-start entropy {', '.join(f'{f:.3f}' for f in frac)}; largest step drop {max(drops):.3f}",
    )
    assert ok


# --------------------------------------------------------------------- A3


@pytest.mark.slow
def test_a3_zero_warm_start_learns(tmp_path, verdict):
    base = harness.load_config(CONFIGS / "zero.yaml")
    assert base.warm_start.epochs == 0 and base.rapo.reward_mode is RewardMode.ERROR_RANK
    gains, worst_time = [], 0.0
    for seed in range(5):
        cfg = replace(base, seed=seed, rapo=replace(base.rapo, seed=seed), output_dir=str(tmp_path / f"s{seed}"))
        t0 = time.perf_counter()
        s = harness.run_experiment(cfg).summary
        worst_time = max(worst_time, time.perf_counter() - t0)
        gains.append(s["final"]["srcc"] - s["untrained"]["srcc"])
    ok = all(g >= 0.3 for g in gains) and worst_time < 300
    verdict("A3", ok, f"SRCC gains {', '.join(f'{g:+.3f}' for g in gains)}; slowest seed {worst_time:.1f} s")
    assert ok


# --------------------------------------------------------------------- A4


def test_a4_gradient_correctness(verdict):
    rng = np.random.default_rng(404)
    cfg = RapoConfig(beta=0.05)
    t0 = time.perf_counter()
    worst_lp = worst_obj = 0.0
    for _ in range(20):
        p = random_policy(rng)
        x = rng.normal(size=p.d)
        b = int(rng.integers(p.n_bins))
        worst_lp = max(worst_lp, block_rel_err(grad_log_prob(p, x, b), fd(lambda q: log_prob(q, x, b), p, step=1e-5)))

        cur, xs, bins, lp_old, lp_ref, adv = _objective_case(rng)
        ev = step_objective(cur, xs, bins, lp_old, lp_ref, adv, cfg)

        def objective(q):
            return oracles.rapo_objective(
                nested(q), xs.tolist(), bins.tolist(), lp_old.tolist(), lp_ref.tolist(), adv.tolist(),
                cfg.beta, cfg.eps_low, cfg.eps_high,
            )

        worst_obj = max(worst_obj, block_rel_err(ev.grad, fd(objective, cur, step=1e-5)))
    elapsed = time.perf_counter() - t0
    ok = worst_lp <= 1e-4 and worst_obj <= 1e-4 and elapsed < 30
    verdict("A4", ok, f"log_prob rel err {worst_lp:.1e}, objective rel err {worst_obj:.1e}, {elapsed:.1f} s")
    assert ok


# --------------------------------------------------------------------- A5


def test_a5_advantage_normalization(verdict):
    rng = np.random.default_rng(505)
    worst_mean = worst_std = 0.0
    for _ in range(10_000):
        k = int(rng.integers(2, 17))
        r = rng.normal(size=k) * 10 ** rng.uniform(-3, 3) + rng.normal() * 10
        if np.std(r) < 1e-9:
            continue
        a = compute_advantages(r)
        worst_mean = max(worst_mean, abs(float(np.mean(a))))
        worst_std = max(worst_std, abs(float(np.std(a)) - 1.0))
    flat_ok = all(
        np.all(compute_advantages([v] * k) == 0.0) for v in (0.0, 0.37, 1.0, -5.0) for k in (1, 2, 4, 16)
    )
    ok = worst_mean <= 1e-10 and worst_std <= 1e-10 and flat_ok
    verdict("A5", ok, f"max |mean| {worst_mean:.1e}, max |std-1| {worst_std:.1e}, flat groups zero: {flat_ok}")
    assert ok


# --------------------------------------------------------------------- A6


def test_a6_default_hyperparameters(verdict):
    snap = RapoConfig().to_dict()
    expected = {"K": 4, "beta": 0.01, "eps_high": 0.28}
    got = {key: snap[key] for key in expected}
    ok = got == expected and snap["reward"]["sigma"] == 0.1
    verdict("A6", ok, f"K={snap['K']} sigma={snap['reward']['sigma']} beta={snap['beta']} eps_high={snap['eps_high']}")
    assert ok
    assert snap == {
        "K": 4,
        "beta": 0.01,
        "eps_low": 0.2,
        "eps_high": 0.28,
        "lr": 1e-3,
        "momentum": 0.0,
        "batch_size": 32,
        "epochs_per_rollout": 1,
        "reward_mode": "error_rank",
        "reward": {"sigma": 0.1, "gamma": 1e-6, "eps_floor": 1e-3, "binary_threshold": 0.05},
        "seed": 0,
    }


# --------------------------------------------------------------------- A8

_LEAKS = ["It earns a rating of {v:.2f}.", "Score: {v:.2f}", "I'd give it {p}%.", "Verdict {v:.2f} overall."]
_CLEAN = ["Three birds at f/2.8.", "Shot in 2021 at 1/250 s.", "Warm light and a calm horizon.", "Two people, ISO 800."]


def test_a8_leakage_filter(verdict):
    rows = [json.loads(line) for line in (DATA / "leakage_corpus.jsonl").open()]
    pred = [detect_score_leakage(CritiqueRecord(r["id"], r["critique"], r["hidden_score"])) for r in rows]
    tp = sum(p and r["leak"] for p, r in zip(pred, rows))
    fp = sum(p and not r["leak"] for p, r in zip(pred, rows))
    positives = sum(r["leak"] for r in rows)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / positives

    rng = np.random.default_rng(808)
    partition_ok = True
    for c in range(1000):
        records = []
        for i in range(int(rng.integers(0, 15))):
            v = float(rng.integers(0, 101)) / 100
            tpl = _LEAKS[rng.integers(4)] if rng.random() < 0.4 else _CLEAN[rng.integers(4)]
            records.append(CritiqueRecord(f"{c}-{i}", tpl.format(v=v, p=round(v * 100)), v))
        kept, rejected = filter_dataset(records)
        ids_k, ids_r = [r.id for r in kept], [r.id for r, _ in rejected]
        partition_ok &= sorted(ids_k + ids_r) == sorted(r.id for r in records) and not set(ids_k) & set(ids_r)
    ok = len(rows) == 50 and precision == 1.0 and recall >= 0.96 and partition_ok
    verdict("A8", ok, f"precision {precision:.3f}, recall {recall:.3f} ({tp}/{positives}), partition on 1000 corpora: {partition_ok}")
    assert ok


# --------------------------------------------------------------------- A9

# Reference values as stated in the acceptance criteria. Hand computation
# gives 0.946256 and 0.948683 (see test_metrics.py); these are checked as
# stated, not adjusted.
STATED_PLCC = 0.969286
STATED_SRCC = 0.989743


def test_a9_metric_reference_values(verdict):
    got_p = plcc([1, 2, 3, 5], [2, 4, 6, 7])
    got_s = srcc([1, 2, 2, 4], [1, 2, 3, 4])
    gt = np.array([0.1, 0.3, 0.2, 0.9, 0.5])
    signs = [plcc(gt, gt), plcc(3 - gt, gt), srcc(np.exp(gt), gt), srcc(-gt, gt)]
    exact_ok = signs == [1.0, -1.0, 1.0, -1.0]
    p_ok = abs(got_p - STATED_PLCC) <= 1e-5
    s_ok = abs(got_s - STATED_SRCC) <= 1e-5
    ok = p_ok and s_ok and exact_ok
    verdict(
        "A9",
        ok,
        f"PLCC {got_p:.6f} vs stated {STATED_PLCC} [{'ok' if p_ok else 'mismatch'}]; "
        f"SRCC {got_s:.6f} vs stated {STATED_SRCC} [{'ok' if s_ok else 'mismatch'}]; "
        f"exact +-1: {exact_ok}",
    )
    assert exact_ok
    assert p_ok and s_ok, (got_p, got_s)


# -------------------------------------------------------------------- A10


@pytest.mark.slow
def test_a10_determinism(tmp_path, verdict):
    cfg = replace(harness.load_config(CONFIGS / "standard.yaml"), output_dir=str(tmp_path / "run"))
    first = harness.run_experiment(cfg)
    blobs = [first.summary_path.read_bytes(), first.run_log.read_bytes(), first.evaluations_csv.read_bytes()]
    second = harness.run_experiment(cfg)
    again = [second.summary_path.read_bytes(), second.run_log.read_bytes(), second.evaluations_csv.read_bytes()]
    ok = blobs == again
    verdict("A10", ok, f"summary {len(blobs[0])} B, run log {len(blobs[1])} B, byte-identical: {ok}")
    assert ok
