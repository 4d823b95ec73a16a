"""Command-line entry points: run, generate, evaluate, serve.

The run config is a flat JSON document whose experiment keys are exactly
the :class:`alpool.core.ExperimentConfig` field names; run-level keys
(``dataset``, ``eval_dataset``, ``out_dir``, ``port``, ``shared_secret``,
``label_timeout``, ``ui_dir``) sit alongside them. Malformed configs exit
non-zero with the offending key named.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

RUN_KEYS = {"dataset", "eval_dataset", "out_dir", "port", "shared_secret",
            "label_timeout", "ui_dir"}


class CliError(SystemExit):
    def __init__(self, message: str):
        print(f"error: {message}", file=sys.stderr)
        super().__init__(2)


def load_run_config(path: str):
    from alpool.core import ConfigError, ExperimentConfig

    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise CliError(f"config is not valid JSON: {err}")
    run_opts = {key: raw.pop(key) for key in list(raw) if key in RUN_KEYS}
    try:
        config = ExperimentConfig.from_dict(raw)
    except ConfigError as err:
        raise CliError(str(err))
    except TypeError as err:
        raise CliError(f"bad config value: {err}")
    if "dataset" not in run_opts:
        raise CliError("config key 'dataset': required (path to a dataset manifest)")
    if "eval_dataset" not in run_opts:
        raise CliError("config key 'eval_dataset': required (path to a dataset manifest)")
    return config, run_opts


def load_eval_split(manifest_path: str):
    from alpool.dataio import read_features, read_labels, read_manifest

    manifest = read_manifest(manifest_path)
    base = Path(manifest_path).parent
    X = read_features(base / manifest.features_path).astype(np.float64)
    y = read_labels(base / manifest.labels_path, manifest.sample_count, manifest.class_count)
    return X, y, manifest


def cmd_generate(args):
    from alpool.dataio import SyntheticSpec, save_synthetic

    try:
        raw = json.loads(Path(args.spec).read_text())
    except (FileNotFoundError, json.JSONDecodeError) as err:
        raise CliError(f"cannot read spec: {err}")
    try:
        spec = SyntheticSpec.from_dict(raw)
    except (TypeError, ValueError) as err:
        raise CliError(f"bad synthetic spec: {err}")
    manifest_path = save_synthetic(spec, args.out, name=args.name)
    print(f"wrote {manifest_path}")
    return 0


def _finish_run(runner, run_opts):
    from alpool import model, report, tapt

    out_dir = Path(run_opts.get("out_dir", "runs/latest"))
    files = report.write_report(runner.report, out_dir)
    model.save_checkpoint(runner.classifier, out_dir / "checkpoint")
    if runner.tapt_state is not None:
        tapt.save_tapt(runner.tapt_state, out_dir / "checkpoint" / "tapt")
    final = runner.report.final()
    print(f"final UA {final.ua:.4f}  WA {final.wa:.4f}  labeled {final.labeled}")
    for name, path in files.items():
        print(f"  {name}: {path}")
    return 0


def cmd_run(args):
    from alpool.dataio import load_dataset
    from alpool.loop import ExperimentRunner

    config, run_opts = load_run_config(args.config)
    if config.annotator_mode == "human":
        raise CliError("config key 'annotator_mode': use `alpool serve` for human mode")
    pool = load_dataset(run_opts["dataset"])
    eval_X, eval_y, eval_manifest = load_eval_split(run_opts["eval_dataset"])
    out_dir = Path(run_opts.get("out_dir", "runs/latest"))
    out_dir.mkdir(parents=True, exist_ok=True)
    runner = ExperimentRunner(
        config, pool, eval_X, eval_y, class_names=eval_manifest.class_names,
        snapshot_path=out_dir / "state.json",
    )
    runner.run()
    return _finish_run(runner, run_opts)


def cmd_evaluate(args):
    from alpool.loop import evaluate
    from alpool.model import load_checkpoint
    from alpool import tapt

    state = load_checkpoint(args.checkpoint)
    X, y, _ = load_eval_split(args.dataset)
    tapt_dir = Path(args.checkpoint) / "tapt"
    if (tapt_dir / "tapt.json").exists():
        X = tapt.encode(tapt.load_tapt(tapt_dir), X)
    ua, wa, confusion = evaluate(state, X, y)
    print(f"UA {ua:.4f}")
    print(f"WA {wa:.4f}")
    print("confusion:")
    for row in confusion:
        print("  " + " ".join(f"{v:6d}" for v in row))
    return 0


def cmd_serve(args):
    from alpool.annotate import LabelQueue
    from alpool.dataio import load_dataset
    from alpool.loop import ExperimentRunner
    from alpool.service import start_service

    config, run_opts = load_run_config(args.config)
    if config.annotator_mode != "human":
        raise CliError("config key 'annotator_mode': must be 'human' for serve")
    pool = load_dataset(run_opts["dataset"])
    eval_X, eval_y, eval_manifest = load_eval_split(run_opts["eval_dataset"])
    queue = LabelQueue(class_count=pool.class_count)
    out_dir = Path(run_opts.get("out_dir", "runs/latest"))
    out_dir.mkdir(parents=True, exist_ok=True)
    runner = ExperimentRunner(
        config, pool, eval_X, eval_y,
        class_names=eval_manifest.class_names,
        queue=queue,
        snapshot_path=out_dir / "state.json",
        label_timeout=run_opts.get("label_timeout"),
    )
    ui_dir = args.ui or run_opts.get("ui_dir")
    server = start_service(
        queue, runner.progress,
        port=int(run_opts.get("port", 8787)),
        shared_secret=run_opts.get("shared_secret"),
        ui_dir=ui_dir,
    )
    host, port = server.server_address[:2]
    print(f"annotation service on http://{host}:{port} (Ctrl-C aborts)")
    try:
        runner.run()
    finally:
        server.shutdown()
    return _finish_run(runner, run_opts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alpool",
        description="Budgeted pool-based active learning for classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment from a config file")
    p_run.add_argument("--config", required=True)
    p_run.set_defaults(fn=cmd_run)

    p_gen = sub.add_parser("generate", help="emit a synthetic dataset")
    p_gen.add_argument("--spec", required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--name", default="synthetic")
    p_gen.set_defaults(fn=cmd_generate)

    p_eval = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.set_defaults(fn=cmd_evaluate)

    p_serve = sub.add_parser("serve", help="run in human mode behind the HTTP service")
    p_serve.add_argument("--config", required=True)
    p_serve.add_argument("--ui", help="directory of built UI assets to serve at /")
    p_serve.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
