from __future__ import annotations

import copy
import csv
import json
import math

import numpy as np
import pytest
import yaml
from conftest import REPO

from rapolab import harness
from rapolab.dataset import save_dataset, standard_task, synth_generate
from rapolab.metrics import plcc
from rapolab.policy import save_checkpoint, zero_policy
from rapolab.rewards import RewardMode

BASE = {
    "schema_version": 1,
    "seed": 0,
    "output_dir": "out",
    "steps": 12,
    "checkpoint_every": 5,
    "dataset": {"synth": {"n": 60, "d": 3, "noise": 0.05, "seed": 1}},
    "policy": {"hidden": 6, "n_bins": 21, "out_scale": 0.01},
    "warm_start": {"epochs": 1, "lr": 0.1, "batch": 8},
    "rapo": {"K": 4, "lr": 0.05, "batch_size": 8, "reward_mode": "error_rank"},
    "eval": {"metrics_every": 4},
}


def small(tmp_path, **over) -> harness.ExperimentConfig:
    raw = copy.deepcopy(BASE)
    raw.update(over)
    return harness.experiment_from_dict(raw, tmp_path)


def write_yaml(path, obj):
    path.write_text(yaml.safe_dump(obj))
    return path


class TestConfig:
    def test_shipped_configs_load(self):
        std = harness.load_config(REPO / "configs" / "standard.yaml")
        assert std.steps == 1500 and std.rapo.K == 4 and std.rapo.reward_mode is RewardMode.ERROR_RANK
        assert std.rapo.seed == std.seed
        assert harness.load_config(REPO / "configs" / "zero.yaml").warm_start.epochs == 0
        abl = harness.load_ablation(REPO / "configs" / "ablation.yaml")
        assert len(abl.modes) == 5 and len(abl.seeds) == 5

    def test_unknown_key(self, tmp_path):
        with pytest.raises(harness.ConfigError, match="unknown key"):
            small(tmp_path, stepz=3)
        raw = copy.deepcopy(BASE)
        raw["rapo"]["kk"] = 1
        with pytest.raises(harness.ConfigError, match="kk"):
            harness.experiment_from_dict(raw, tmp_path)

    def test_schema_version(self, tmp_path):
        with pytest.raises(harness.ConfigError, match="schema_version"):
            small(tmp_path, schema_version=2)

    def test_rapo_seed_rejected(self, tmp_path):
        raw = copy.deepcopy(BASE)
        raw["rapo"]["seed"] = 3
        with pytest.raises(harness.ConfigError, match="seed"):
            harness.experiment_from_dict(raw, tmp_path)

    def test_missing_dataset_file(self, tmp_path):
        with pytest.raises(harness.ConfigError, match="not found"):
            small(tmp_path, dataset={"path": "nope.csv"})
        with pytest.raises(harness.ConfigError, match="exactly one"):
            small(tmp_path, dataset={})

    def test_relative_paths_and_round_trip(self, tmp_path):
        save_dataset(synth_generate(30, 3, 0.0, 0), tmp_path / "d.csv")
        path = write_yaml(tmp_path / "c.yaml", {**BASE, "dataset": {"path": "d.csv"}})
        cfg = harness.load_config(path)
        assert cfg.dataset.path == str(tmp_path / "d.csv")
        assert cfg.output_dir == str(tmp_path / "out")
        again = harness.load_config(harness.dump_config(cfg, tmp_path / "again.yaml"))
        assert again == cfg

    def test_ablation_needs_three_seeds(self, tmp_path):
        path = write_yaml(tmp_path / "a.yaml", {"schema_version": 1, "base": BASE, "modes": ["binary", "error"], "seeds": [0, 1], "output_dir": "x"})
        with pytest.raises(harness.ConfigError, match="3 distinct seeds"):
            harness.load_ablation(path)


def test_harness_split_matches_standard_task():
    tr, te = harness.build_splits(harness.load_config(REPO / "configs" / "standard.yaml"))
    str_, ste = standard_task(0)
    assert tr.ids == str_.ids and te.ids == ste.ids
    assert np.array_equal(tr.features, str_.features)


class TestRunExperiment:
    @pytest.fixture(scope="class")
    @staticmethod
    def run(tmp_path_factory):
        tmp = tmp_path_factory.mktemp("run")
        return harness.run_experiment(small(tmp))

    def test_artifacts(self, run):
        out = run.output_dir
        for name in ("run_log.csv", "evaluations.csv", "predictions.csv", "hist_pred.csv", "hist_gt.csv", "config.yaml", "summary.json"):
            assert (out / name).is_file(), name
        assert sorted(run.checkpoints) == ["final", "step-000005", "step-000010", "warm_start"]
        assert all(p.is_file() for p in run.checkpoints.values())
        summary = json.loads(run.summary_path.read_text())
        assert summary["n_train"] == 48 and summary["n_test"] == 12
        assert summary["warm_start_steps"] == 6

    def test_evaluation_cadence(self, run):
        assert [(p.label, p.step) for p in run.evaluations] == [
            ("init", 0), ("warm_start", 0), ("rapo", 4), ("rapo", 8), ("rapo", 12)
        ]
        rows = list(csv.DictReader(run.run_log.open()))
        assert [int(r["step"]) for r in rows] == list(range(12))

    def test_predictions_recompute(self, run):
        rows = list(csv.DictReader(run.predictions.open()))
        pred = [float(r["pred"]) for r in rows]
        gt = [float(r["gt"]) for r in rows]
        assert abs(plcc(pred, gt) - run.summary["final"]["plcc"]) <= 1e-10

    def test_determinism(self, run, tmp_path):
        again = harness.run_experiment(small(tmp_path, output_dir=str(run.output_dir.parent / "again")))
        assert again.run_log.read_bytes() == run.run_log.read_bytes()
        s1 = json.loads(run.summary_path.read_text())
        s2 = json.loads(again.summary_path.read_text())
        s1["config"].pop("output_dir"), s2["config"].pop("output_dir")
        assert s1 == s2

    def test_reevaluating_checkpoint(self, run):
        _, te = harness.build_splits(small(run.output_dir))
        r1, _, p1 = harness.evaluate_checkpoint(run.checkpoints["final"], te)
        r2, _, p2 = harness.evaluate_checkpoint(run.checkpoints["final"], te)
        assert r1 == r2 and np.array_equal(p1, p2)
        assert r1.plcc == run.summary["final"]["plcc"]


def test_unwritable_output_fails_before_training(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(harness.ConfigError, match="not writable"):
        harness.run_experiment(small(tmp_path, output_dir=str(blocker / "sub")))
    assert not (blocker.parent / "sub").exists()


def test_uniform_checkpoint_reports_undefined(tmp_path):
    ds = synth_generate(20, 3, 0.05, 0)
    ck = save_checkpoint(zero_policy(3, hidden=4, n_bins=11), tmp_path / "u.json")
    report, (hp, hg), pred = harness.evaluate_checkpoint(ck, ds, bins=5)
    assert report.plcc is None and report.srcc is None and "undefined" in report.note
    assert np.allclose(pred, 0.5) and hp.n == hg.n == 20
    assert report.mean_entropy == pytest.approx(math.log(11), abs=1e-12)


def test_summarize_ablation_means():
    raw = {
        "binary": [{"plcc": 0.1, "srcc": 0.2}, {"plcc": 0.3, "srcc": 0.4}, {"plcc": 0.5, "srcc": 0.6}],
        "error": [{"plcc": 0.7, "srcc": None}, {"plcc": 0.8, "srcc": 0.1}, {"plcc": 0.9, "srcc": 0.2}],
    }
    rows = {r["mode"]: r for r in harness.summarize_ablation(raw)["rows"]}
    assert rows["binary"]["plcc"] == pytest.approx(0.3, abs=1e-15)
    assert rows["binary"]["srcc"] == pytest.approx(0.4, abs=1e-15)
    assert rows["error"]["srcc"] is None and rows["error"]["n_seeds"] == 3


def test_ablation_cardinality(tmp_path):
    base = small(tmp_path, steps=4, checkpoint_every=0)
    spec = harness.AblationSpec(base, (RewardMode.BINARY, RewardMode.ERROR_RANK), (0, 1, 2), str(tmp_path / "abl"))
    table = harness.run_ablation(spec)
    assert [r["mode"] for r in table["rows"]] == ["binary", "error_rank"]
    runs = sorted((tmp_path / "abl").glob("*/seed-*/summary.json"))
    assert len(runs) == 6
    for row in table["rows"]:
        finals = [json.loads((tmp_path / "abl" / row["mode"] / f"seed-{s}" / "summary.json").read_text())["final"] for s in (0, 1, 2)]
        if row["plcc"] is not None:
            assert row["plcc"] == pytest.approx(sum(f["plcc"] for f in finals) / 3, abs=1e-12)
    on_disk = json.loads((tmp_path / "abl" / "ablation_summary.json").read_text())
    assert on_disk["rows"] == table["rows"]
    assert len(list(csv.reader((tmp_path / "abl" / "ablation_table.csv").open()))) == 3
