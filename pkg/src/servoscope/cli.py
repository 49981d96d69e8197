"""Command-line front end.

    servoscope <gen-demos|train|execute|evaluate|sphere> --config PATH [--seed N] --out DIR

Exit codes: 0 success, 1 bad usage or configuration, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import nn_core
from .config import ExperimentConfig, config_to_dict, load_config
from .errors import ConfigError, ServoscopeError, UsageError
from .experiment import (CURVE_FILE, DEMO_DIR, TRAIN_META_FILE, WEIGHTS_FILE, evaluate_suite,
                         generate_demos, load_demos, probe_reward_field, run_trial, save_demos,
                         task_function, train_model, write_field_summary)
from .irl_trainer import write_reward_field_csv

log = logging.getLogger("servoscope")

COMMANDS = ("gen-demos", "train", "execute", "evaluate", "sphere")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="servoscope", description="Learn a visual task function from "
                "demonstrations and servo with it.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON experiment configuration")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _demos_for(cfg: ExperimentConfig, out: Path):
    demo_dir = out / DEMO_DIR
    if demo_dir.is_dir():
        log.info("loading demonstrations from %s", demo_dir)
        return load_demos(demo_dir)
    return generate_demos(cfg)


def _load_weights(out: Path):
    path = out / WEIGHTS_FILE
    if not path.exists():
        raise ServoscopeError(f"{path} not found; run `servoscope train` with the same --out first")
    return nn_core.load_network(path)


def cmd_gen_demos(cfg: ExperimentConfig, out: Path) -> None:
    demos = generate_demos(cfg, max((cfg.demos,) + tuple(cfg.demo_counts)))
    save_demos(demos, out / DEMO_DIR, cfg.seed)
    log.info("wrote %d demonstrations (%d reached the target)", len(demos),
             sum(d.reached for d in demos))


def cmd_train(cfg: ExperimentConfig, out: Path) -> None:
    demos = _demos_for(cfg, out)[:cfg.demos]
    net, curve, secs = train_model(cfg, demos)
    nn_core.save_network(net, out / WEIGHTS_FILE)
    curve.write_csv(out / CURVE_FILE, wall_clock=cfg.wall_clock)
    # kept apart from the curve so that the curve stays byte-reproducible
    (out / TRAIN_META_FILE).write_text(json.dumps({"train_seconds": secs, "demos": len(demos)}) + "\n")
    log.info("trained on %d demos in %.1fs; final mean ll %.3f (%.2f of bound)",
             len(demos), secs, curve.mean_ll[-1], curve.bound_fraction[-1])


def cmd_execute(cfg: ExperimentConfig, out: Path) -> None:
    taskfn = task_function(cfg, _load_weights(out))
    trace = run_trial(cfg, taskfn, cfg.execute_trial)
    trace.write_csv(out / f"trace_{cfg.execute_trial:03d}.csv")
    log.info("trial %d: %s after %d steps, error %.2f -> %.2f px %s", cfg.execute_trial,
             "success" if trace.success else "failure", trace.steps_used,
             trace.initial_error, trace.final_error, trace.reason)


def cmd_evaluate(cfg: ExperimentConfig, out: Path) -> None:
    net, secs = None, float("nan")
    if not cfg.demo_counts and (out / WEIGHTS_FILE).exists():
        net = _load_weights(out)
        meta = out / TRAIN_META_FILE
        if meta.exists():
            secs = float(json.loads(meta.read_text()).get("train_seconds", secs))
    demos = load_demos(out / DEMO_DIR) if (out / DEMO_DIR).is_dir() else None
    result = evaluate_suite(cfg, net, secs, demos=demos)
    result.write_csv(out / "suite.csv")
    for row in result.rows:
        tdir = out / "traces" / row.setting.replace("(", "_").replace(")", "").replace(",", "_")
        tdir.mkdir(parents=True, exist_ok=True)
        for i, tr in enumerate(row.traces):
            tr.write_csv(tdir / f"trial_{i:03d}.csv")
        log.info("%-40s %s", row.setting, row.success_label)


def cmd_sphere(cfg: ExperimentConfig, out: Path) -> None:
    fields_, summaries = probe_reward_field(cfg, _load_weights(out))
    for k, f in enumerate(fields_):
        write_reward_field_csv(f, out / f"reward_field_{k}.csv")
    write_field_summary(summaries, out / "reward_field_summary.csv")
    for s in summaries:
        log.info("center %s: argmax %.1f deg from the target direction", s.center, s.angle_deg)


HANDLERS = {
    "gen-demos": cmd_gen_demos,
    "train": cmd_train,
    "execute": cmd_execute,
    "evaluate": cmd_evaluate,
    "sphere": cmd_sphere,
}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"servoscope: {exc}\nusage: servoscope {{{','.join(COMMANDS)}}} --config PATH "
              "[--seed N] --out DIR", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.json").write_text(json.dumps(config_to_dict(cfg), indent=1) + "\n")
        HANDLERS[args.command](cfg, out)
    except (ConfigError, UsageError) as exc:
        print(f"servoscope: invalid configuration: {exc}", file=sys.stderr)
        return 1
    except (ServoscopeError, OSError) as exc:
        print(f"servoscope: {args.command} failed: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
