"""Command-line entry point: ``rapolab {train,ablate,eval,filter,synth}``.

Every subcommand prints a JSON summary on stdout and exits 0 on success;
errors go to stderr with exit code 2.
"""

from __future__ import annotations

import argparse
import importlib
import json
import sys
from pathlib import Path

from . import critique_filter as cf
from . import harness
from .dataset import DatasetError, load_dataset, normalize_mos, save_dataset, synth_generate
from .policy import PolicyError


def _print(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_train(args) -> int:
    cfg = harness.config_for_cli(args.config, args.seed, args.output_dir)
    art = harness.run_experiment(cfg)
    s = art.summary
    _print(
        {
            "output_dir": str(art.output_dir),
            "summary": str(art.summary_path),
            "final": s["final"],
            "post_warm_start": s["post_warm_start"],
            "untrained": s["untrained"],
        }
    )
    return 0


def cmd_ablate(args) -> int:
    spec = harness.load_ablation(args.spec)
    if args.output_dir is not None:
        spec = harness.AblationSpec(spec.base, spec.modes, spec.seeds, args.output_dir)
    table = harness.run_ablation(spec)
    _print({"output_dir": spec.output_dir, "rows": table["rows"]})
    return 0


def cmd_eval(args) -> int:
    ds = normalize_mos(load_dataset(args.dataset, args.format), *args.raw_range)
    report, (h_pred, h_gt), pred = harness.evaluate_checkpoint(args.checkpoint, ds, args.bins, args.argmax)
    out = {"report": report.to_dict()}
    if args.out is not None:
        d = harness.ensure_writable(args.out)
        harness.write_predictions(ds.ids, pred, ds.mos, d / "predictions.csv")
        h_pred.write_csv(d / "hist_pred.csv")
        h_gt.write_csv(d / "hist_gt.csv")
        (d / "report.json").write_text(report.to_json() + "\n")
        out["output_dir"] = str(d)
    _print(out)
    return 0


def _load_plugin(text: str) -> cf.CheckPlugin:
    """``flag=module:function`` -> a plugin calling ``function(record) -> bool``."""
    try:
        flag, target = text.split("=", 1)
        mod_name, fn_name = target.split(":", 1)
    except ValueError:
        raise argparse.ArgumentTypeError(f"plugin must look like flag=module:function, got {text!r}") from None
    fn = getattr(importlib.import_module(mod_name), fn_name)
    return cf.CheckPlugin(name=target, flag=flag, evaluator=fn)


def cmd_filter(args) -> int:
    records = cf.load_critiques(args.corpus)
    plugins = [_load_plugin(p) for p in args.plugin]
    kept, rejected = cf.filter_dataset(records, plugins, args.tolerance)
    cf.write_kept(kept, args.kept)
    cf.write_rejected(rejected, args.rejected)
    _print(
        {
            "input": len(records),
            "kept": len(kept),
            "rejected": len(rejected),
            "leak": sum(f.leak for _, f in rejected),
            "align": sum(f.align for _, f in rejected),
            "fact": sum(f.fact for _, f in rejected),
            "unscreened": sum(bool(f.unscreened) for _, f in rejected),
        }
    )
    return 0


def cmd_synth(args) -> int:
    ds = synth_generate(args.n, args.d, args.noise, args.seed)
    save_dataset(ds, args.out, args.format)
    _print({"path": str(args.out), "n": len(ds), "d": ds.d, "noise": args.noise, "seed": args.seed})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rapolab", description="Desk-scale RAPO aesthetic-scoring lab.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="warm start + RAPO run from a YAML config")
    t.add_argument("config", type=Path)
    t.add_argument("--seed", type=int, default=None, help="override the config seed")
    t.add_argument("--output-dir", default=None)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="reward-mode x seed matrix from a YAML spec")
    a.add_argument("spec", type=Path)
    a.add_argument("--output-dir", default=None)
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="evaluate a policy checkpoint on a dataset")
    e.add_argument("checkpoint", type=Path)
    e.add_argument("dataset", type=Path)
    e.add_argument("--format", choices=("csv", "jsonl"), default=None)
    e.add_argument("--raw-range", type=float, nargs=2, default=(0.0, 1.0), metavar=("MIN", "MAX"))
    e.add_argument("--bins", type=int, default=10)
    e.add_argument("--argmax", action="store_true", help="score by the modal bin instead of the mean")
    e.add_argument("--out", type=Path, default=None, help="directory for predictions and histograms")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("filter", help="screen a critique corpus for score leakage")
    f.add_argument("corpus", type=Path)
    f.add_argument("--kept", type=Path, required=True)
    f.add_argument("--rejected", type=Path, required=True)
    f.add_argument("--tolerance", type=float, default=cf.DEFAULT_TOLERANCE)
    f.add_argument("--plugin", action="append", default=[], help="align=module:function or fact=module:function")
    f.set_defaults(func=cmd_filter)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--n", type=int, default=640)
    s.add_argument("--d", type=int, default=8)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=("csv", "jsonl"), default=None)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, DatasetError, PolicyError, ValueError, OSError, ImportError, AttributeError) as exc:
        print(f"rapolab {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
