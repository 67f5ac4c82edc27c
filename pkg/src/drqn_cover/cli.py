"""Command-line entry points: ``mapgen``, ``train``, ``eval`` and ``compare``.

Every failure prints one line ``error[<kind>] <ExceptionName>: <message>`` to
stderr and exits with the code for ``<kind>``: usage 2, config 3, io 4,
runtime 5.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import grid_env as env
from .config import TrainConfig, parse_budget, parse_config_text
from .errors import ConfigError, CoverageError, MapFormatError, SchemaMismatchError
from .mapgen import generate_map
from .qmodel import QNetwork
from .trainer import Trainer, TrainingLog, evaluate, map_hash, summarize

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_IO, EXIT_RUNTIME = 0, 2, 3, 4, 5
MANIFEST_VERSION = 1


class CliError(Exception):
    def __init__(self, kind: str, code: int, exc: BaseException):
        super().__init__(str(exc))
        self.kind, self.code, self.exc = kind, code, exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", EXIT_USAGE, ValueError(message))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError("io", EXIT_IO, exc) from None


def _write_text(path, text: str):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError("io", EXIT_IO, exc) from None


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2) + "\n")


def _load_map(path) -> env.GridMap:
    try:
        return env.load_map(_read_text(path))
    except MapFormatError as exc:
        raise CliError("config", EXIT_CONFIG, exc) from None


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if getattr(args, "config", None):
        cfg = parse_config_text(_read_text(args.config))
    overrides = {}
    for name in ("seed", "variant", "budget", "episodes"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return cfg.replace(**overrides) if overrides else cfg


# -- mapgen -------------------------------------------------------------------

def cmd_mapgen(args) -> int:
    budget = parse_budget(args.budget, args.n) if args.budget is not None else None
    try:
        grid = generate_map(args.n, args.stations, args.density, args.seed, budget=budget, max_tries=args.max_tries)
    except ValueError as exc:
        raise CliError("usage", EXIT_USAGE, exc) from None
    text = env.render_map(grid)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- train --------------------------------------------------------------------

def train_run(grid: env.GridMap, cfg: TrainConfig, out_dir: Path, map_text: str, log=print) -> dict:
    """Train and write metrics, checkpoints, best solution and manifest under ``out_dir``."""
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    try:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("io", EXIT_IO, exc) from None
    started = _now()
    trainer = Trainer(grid, cfg)
    checkpoints = []

    def on_episode(tr, rec):
        done = rec.index + 1
        if done % cfg.checkpoint_every == 0 or done == cfg.episodes:
            path = ckpt_dir / f"episode_{done:06d}.cbqn"
            tr.policy.save(path, {"episode": done, "seed": cfg.seed})
            checkpoints.append(str(path.relative_to(out_dir)))
            log(f"episode {done}/{cfg.episodes}: coverage {rec.coverage_pct:.1f}% violations {rec.violations} "
                f"reward {rec.total_reward:.2f}")

    trainer.run(on_episode)
    metrics = out_dir / "metrics.csv"
    _write_text(metrics, trainer.log.to_csv())
    best_path = out_dir / "best_solution.json"
    best = trainer.best.to_json(grid, trainer.budget) if trainer.best else None
    _write_json(best_path, {"map_hash": map_hash(grid), "budget": trainer.budget, "best": best})
    manifest = {
        "version": MANIFEST_VERSION,
        "config": cfg.to_dict(),
        "map_hash": map_hash(grid),
        "map": map_text,
        "seed": cfg.seed,
        "variant": cfg.variant,
        "budget": trainer.budget,
        "started": started,
        "finished": _now(),
        "artifacts": {"metrics": "metrics.csv", "checkpoints": checkpoints, "best_solution": "best_solution.json"},
    }
    _write_json(out_dir / "manifest.json", manifest)
    return manifest


def _manifest_inputs(path):
    try:
        manifest = json.loads(_read_text(path))
        cfg = TrainConfig(**manifest["config"])
        map_text = manifest["map"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError("config", EXIT_CONFIG, SchemaMismatchError(f"{path}: not a run manifest ({exc})")) from None
    grid = env.load_map(map_text)
    if map_hash(grid) != manifest.get("map_hash"):
        raise CliError("config", EXIT_CONFIG, SchemaMismatchError(f"{path}: map hash does not match embedded map"))
    return grid, cfg, map_text


def cmd_train(args) -> int:
    if args.manifest:
        grid, cfg, map_text = _manifest_inputs(args.manifest)
    else:
        if not args.map:
            raise CliError("usage", EXIT_USAGE, ValueError("train needs --map or --manifest"))
        map_text = _read_text(args.map)
        grid = _load_map(args.map)
        cfg = _load_config(args)
    log = (lambda *_: None) if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    manifest = train_run(grid, cfg, Path(args.out), map_text, log)
    s = summarize(TrainingLog.from_csv(_read_text(Path(args.out) / "metrics.csv")).records)
    print(f"{args.out}: {s.episodes} episodes, {s.full_coverage} full coverage, {s.no_violation} no violation, "
          f"{s.best} best, max reward {s.max_reward_text} ({manifest['variant']})")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------

def cmd_eval(args) -> int:
    grid = _load_map(args.map)
    cfg = _load_config(args)
    try:
        net = QNetwork.load(args.checkpoint, variant=args.variant)
    except OSError as exc:
        raise CliError("io", EXIT_IO, exc) from None
    record, path = evaluate(net, grid, cfg.replace(variant=net.variant))
    result = {
        "map_hash": map_hash(grid),
        "budget": cfg.resolve_budget(grid.n),
        "variant": net.variant,
        "seed": cfg.seed,
        "steps": record.steps,
        "coverage_pct": record.coverage_pct,
        "violations": record.violations,
        "reward": record.total_reward,
        "is_best": record.is_best,
        "path": [list(p) for p in path],
    }
    if args.out:
        _write_json(args.out, result)
    print(f"steps {record.steps} coverage {record.coverage_pct:.2f}% violations {record.violations} "
          f"reward {record.total_reward:.2f}")
    return EXIT_OK


# -- compare ------------------------------------------------------------------

def _summary_from_manifest(path, limit):
    try:
        manifest = json.loads(_read_text(path))
        metrics = Path(path).parent / manifest["artifacts"]["metrics"]
        report = manifest["config"].get("report_episodes")
        label = manifest.get("variant", Path(path).parent.name)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError("config", EXIT_CONFIG, SchemaMismatchError(f"{path}: not a run manifest ({exc})")) from None
    log = TrainingLog.from_csv(_read_text(metrics))
    return label, summarize(log.records, limit or report)


def format_table(columns) -> str:
    """Four-row comparison table; ``columns`` is a list of (label, Summary)."""
    rows = [
        ("Full-Coverage episodes", lambda s: str(s.full_coverage)),
        ("No-Violation episodes", lambda s: str(s.no_violation)),
        ("Best episodes", lambda s: str(s.best)),
        ("Max Reward", lambda s: s.max_reward_text),
    ]
    header = ["metric"] + [label for label, _ in columns]
    body = [[name] + [fmt(s) for _, s in columns] for name, fmt in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths)))
             for r in [header] + body]
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    columns = [_summary_from_manifest(p, args.episodes) for p in args.manifests]
    seen = {}
    for i, (label, s) in enumerate(columns):
        if label in seen:
            columns[i] = (f"{label}#{i + 1}", s)
        seen[label] = True
    sys.stdout.write(format_table(columns))
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drqn-cover", description="Energy-constrained coverage planning with a recurrent DQN.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("mapgen", help="generate a random square map")
    p.add_argument("--n", type=int, default=16, help="side length (>= 4)")
    p.add_argument("--stations", type=int, default=3, help="number of charging stations including the start")
    p.add_argument("--density", type=float, default=0.1, help="obstacle fraction in [0, 0.4]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", default=None, help="budget used for the validity check (default 5n)")
    p.add_argument("--max-tries", type=int, default=1000)
    p.add_argument("--out", help="map file to write (stdout if omitted)")
    p.set_defaults(func=cmd_mapgen)

    def run_flags(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--variant", choices=["recurrent", "cnn"])
        p.add_argument("--budget", help="4n, 5n, 6n or an integer")

    p = sub.add_parser("train", help="train a policy and write run artifacts")
    p.add_argument("--map")
    p.add_argument("--manifest", help="re-run the configuration recorded in a previous manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--episodes", type=int)
    p.add_argument("--quiet", action="store_true")
    run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy rollout of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--out", help="path JSON to write")
    run_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="summary table from run manifests")
    p.add_argument("manifests", nargs="+")
    p.add_argument("--episodes", type=int, help="only count the first N episodes (default: report_episodes)")
    p.set_defaults(func=cmd_compare)
    return parser


def _classify(exc: BaseException) -> tuple[str, int]:
    if isinstance(exc, (ConfigError, MapFormatError, SchemaMismatchError)):
        return "config", EXIT_CONFIG
    if isinstance(exc, OSError):
        return "io", EXIT_IO
    return "runtime", EXIT_RUNTIME


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as err:
        kind, code, exc = err.kind, err.code, err.exc
    except (CoverageError, OSError, ValueError) as exc_:
        exc = exc_
        kind, code = _classify(exc)
    message = str(exc).replace("\n", " ")
    print(f"error[{kind}] {type(exc).__name__}: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
