"""Command-line entry point.

Commands::

    fairis train     --config configs/desk.yaml --out runs/ddpg-baseline
    fairis evaluate  --checkpoint runs/ddpg-baseline/checkpoint.json
    fairis pattern   --checkpoint runs/k1/checkpoint.json --episode-seed 3
    fairis report    runs/* --out runs/report
    fairis config    --config configs/desk.yaml

Exit status: 0 on success, 1 on usage or configuration errors, 2 on runtime
errors (divergence, I/O, incompatible or corrupt files).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np
import yaml

from . import __version__
from .agents import TrainingDivergedError
from .config import ConfigError, RunConfig, parse_config
from .nn import load_checkpoint
from .telemetry import SERIES_WINDOWS, RunManifest, read_series_csv
from .training import beam_patterns, evaluate, load_agent, train

log = logging.getLogger("fairis")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_set(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    return out


def resolve_config(args, base: dict | None = None) -> RunConfig:
    """Config file (or ``base``) < ``--set`` < dedicated flags."""
    overrides = _parse_set(getattr(args, "set", None))
    for flag, key in (("seed", "run.master_seed"), ("episodes", "run.episodes"),
                      ("decisive", "env.decisive_reward"), ("agent", "agent.variant")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "out", None) is not None and args.command == "train":
        overrides["run.output_dir"] = args.out
    if args.config is not None:
        return parse_config(args.config, overrides)
    return parse_config(base or {}, overrides)


def _add_config_flags(p: argparse.ArgumentParser, run_flags: bool = True) -> None:
    p.add_argument("--config", help="YAML config with dotted section.key settings")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one setting, e.g. --set agent.tau=0.001 (repeatable)")
    p.add_argument("--seed", type=int, help="master seed (run.master_seed)")
    if run_flags:
        p.add_argument("--episodes", type=int, help="training episodes (run.episodes)")
        p.add_argument("--decisive", choices=("baseline", "qos", "fqos"),
                       help="reward the agent optimises (env.decisive_reward)")
        p.add_argument("--agent", choices=("ddpg", "td3"), help="agent.variant")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairis", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train an agent and write metrics, checkpoint, manifest")
    _add_config_flags(p)
    p.add_argument("--out", help="output directory (run.output_dir)")
    p.add_argument("--no-svg", action="store_true", help="skip the per-metric SVG charts")

    p = sub.add_parser("evaluate", help="exploration-free evaluation of a checkpoint")
    _add_config_flags(p, run_flags=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n-episodes", type=int, default=30)
    p.add_argument("--out", help="directory for evaluation.json/.csv (default: checkpoint's)")

    p = sub.add_parser("pattern", help="beam patterns of one deterministic step")
    _add_config_flags(p, run_flags=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episode-seed", type=int, default=0)
    p.add_argument("--out", help="output directory (default: <checkpoint dir>/patterns)")
    p.add_argument("--png", action="store_true", help="also render a PNG")

    p = sub.add_parser("report", help="compare metric CSVs across run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--tail", type=float, default=0.1,
                   help="fraction of each series averaged in summary.csv (default 0.1)")
    p.add_argument("--png", action="store_true", help="also render PNG copies")

    p = sub.add_parser("config", help="print the fully resolved config")
    _add_config_flags(p)
    return parser


# -- commands ----------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = cfg.output_dir

    def progress(episode, store):
        if log.isEnabledFor(logging.INFO) and (episode + 1) % 10 == 0:
            last = store.episodic["reward_baseline"].raw[-1]
            log.info("episode %d/%d  baseline reward %.3f", episode + 1, cfg.episodes, last)

    result = train(cfg, output_dir=out, svg=not args.no_svg, progress=progress)
    print(f"wrote {len(result.files)} files to {out}")
    return EXIT_OK


def _config_for_checkpoint(args) -> tuple[RunConfig, dict]:
    _, _, meta = load_checkpoint(args.checkpoint)
    base = meta.get("config") if isinstance(meta, dict) else None
    cfg = resolve_config(args, base=base)
    return cfg, meta


def cmd_evaluate(args) -> int:
    if args.n_episodes < 1:
        raise UsageError("--n-episodes must be >= 1")
    cfg, _ = _config_for_checkpoint(args)
    agent = load_agent(cfg, args.checkpoint)
    metrics = evaluate(cfg, agent, args.n_episodes, seed=args.seed)
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "evaluation.json"), "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out, "evaluation.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "mean", "std"])
        for name, v in metrics.items():
            if isinstance(v, dict):
                w.writerow([name, repr(v["mean"]), repr(v["std"])])
    for name in ("reward_baseline", "mean_jfi", "jfi_at_best"):
        print(f"{name:16s} {metrics[name]['mean']:.4f} +- {metrics[name]['std']:.4f}")
    return EXIT_OK


def cmd_pattern(args) -> int:
    from .plotting import plot_beam_patterns

    cfg, _ = _config_for_checkpoint(args)
    agent = load_agent(cfg, args.checkpoint)
    res = beam_patterns(cfg, agent, args.episode_seed)
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "patterns")
    os.makedirs(out, exist_ok=True)
    angles = res["angles"]
    for name, p in res["patterns"].items():
        with open(os.path.join(out, f"{name}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["angle_rad", "power_linear"])
            for a, v in zip(angles, p):
                w.writerow([repr(float(a)), repr(float(v))])
    bearings = {k: float(v) for k, v in res["bearings"].items()}
    with open(os.path.join(out, "bearings.json"), "w") as fh:
        json.dump({"bearings_rad": bearings, "episode_seed": args.episode_seed,
                   "ue_positions": np.asarray(res["ue_positions"]).tolist()},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    markers = {f"{k} bearing": v for k, v in bearings.items() if k.startswith("ue")}
    ris = {k: v for k, v in res["patterns"].items() if k.startswith("ris")}
    bs = {k: v for k, v in res["patterns"].items() if k.startswith("bs")}
    exts = ("svg", "png") if args.png else ("svg",)
    for ext in exts:
        plot_beam_patterns(angles, ris, os.path.join(out, f"ris_patterns.{ext}"), markers)
        plot_beam_patterns(angles, bs, os.path.join(out, f"bs_patterns.{ext}"),
                           {"RIS bearing": bearings["ris_from_bs"]})
    print(f"wrote {len(res['patterns'])} patterns to {out}")
    return EXIT_OK


def _run_label(run_dir: str) -> str:
    path = os.path.join(run_dir, "manifest.json")
    try:
        return RunManifest.read(path).notes.get("label") or os.path.basename(run_dir)
    except FileNotFoundError:
        return os.path.basename(os.path.normpath(run_dir))
    except (ValueError, KeyError) as exc:
        raise RuntimeError(f"{path}: corrupt manifest ({exc})") from exc


def load_runs(run_dirs: list[str]) -> dict[str, dict[str, tuple]]:
    """Reads every metric CSV of each run; labels are made unique."""
    runs: dict[str, dict[str, tuple]] = {}
    for d in run_dirs:
        if not os.path.isdir(d):
            raise RuntimeError(f"{d}: not a run directory")
        label = _run_label(d)
        if label in runs:
            label = f"{label} ({os.path.basename(os.path.normpath(d))})"
        metrics = {}
        for name in SERIES_WINDOWS:
            path = os.path.join(d, f"{name}.csv")
            if not os.path.exists(path):
                raise RuntimeError(f"{path}: missing metric file")
            try:
                metrics[name] = read_series_csv(path)
            except (ValueError, IndexError) as exc:
                raise RuntimeError(f"{path}: corrupt metric file ({exc})") from exc
        runs[label] = metrics
    return runs


def tail_mean(values: np.ndarray, fraction: float) -> float:
    if len(values) == 0:
        return math.nan
    n = max(1, int(round(len(values) * fraction)))
    return float(np.mean(values[-n:]))


def cmd_report(args) -> int:
    from .plotting import plot_comparison

    if not 0 < args.tail <= 1:
        raise UsageError("--tail must lie in (0, 1]")
    runs = load_runs(args.run_dirs)
    os.makedirs(args.out, exist_ok=True)
    exts = ("svg", "png") if args.png else ("svg",)
    for name in SERIES_WINDOWS:
        curves = {label: (m[name][0], m[name][2]) for label, m in runs.items()}
        unit = "timestep" if name == "buffer_mean_reward" else "episode"
        for ext in exts:
            plot_comparison(name, curves, unit, os.path.join(args.out, f"{name}.{ext}"))
    with open(os.path.join(args.out, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", *SERIES_WINDOWS])
        for label, m in runs.items():
            w.writerow([label, *(repr(tail_mean(m[name][1], args.tail)) for name in SERIES_WINDOWS)])
    print(f"compared {len(runs)} runs in {args.out}")
    return EXIT_OK


def cmd_config(args) -> int:
    cfg = resolve_config(args)
    sys.stdout.write(yaml.safe_dump(cfg.to_flat(), sort_keys=False))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "pattern": cmd_pattern,
            "report": cmd_report, "config": cmd_config}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"fairis {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergedError, OSError, RuntimeError, ValueError, KeyError) as exc:
        print(f"fairis {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
