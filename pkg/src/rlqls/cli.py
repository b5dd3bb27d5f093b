"""Command-line driver tying compilation, training, and analysis together.

Subcommands: build-tm, train, evaluate, baseline, tree, report. Every
command is a pure function of (config file, seed, input files): reruns with
the same inputs produce identical primary outputs. A single master seed is
expanded into named per-component streams so, e.g., changing how many random
numbers evaluation consumes cannot perturb training.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import agent as agent_mod
from . import analysis, env as env_mod, propagator, thermal
from .agent import DqnConfig, Mlp, load_checkpoint, save_checkpoint, train, write_training_curve
from .env import EnvConfig, StatePrepEnv, run_episode, sweeping_policy, write_episode_log
from .levels import format_label, load_level_table
from .presets import PRESET_NAMES, PresetBundle, load_preset
from .pulses import MergeRule, TrapConfig, build_pulse_library, load_rabi_table
from .thermal import bbr_rates, load_einstein_table

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_CONFIG_VERSION = 1

# Environment variables may override file paths (paths only, never values).
_ENV_PATH_OVERRIDES = {
    "levels_path": "RLQLS_LEVELS_PATH",
    "rabi_path": "RLQLS_RABI_PATH",
    "einstein_path": "RLQLS_EINSTEIN_PATH",
}


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


@dataclasses.dataclass
class RunConfig:
    """Validated run configuration assembled from the YAML document."""

    preset: str = "synthetic"
    levels_path: str | None = None
    rabi_path: str | None = None
    einstein_path: str | None = None
    trap: dict = dataclasses.field(default_factory=dict)
    env: dict = dataclasses.field(default_factory=dict)
    dqn: dict = dataclasses.field(default_factory=dict)
    preset_options: dict = dataclasses.field(default_factory=dict)
    seed: int = 0
    out_dir: str = "runs/default"
    n_eval_episodes: int = 1000
    compile_step: object = "auto"
    tree_prune_prob: float = 1e-4
    tree_max_depth: int = 200


def load_config(path: str | None) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    version = doc.pop("version", _CONFIG_VERSION)
    if version != _CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version}")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**doc)
    for attr, var in _ENV_PATH_OVERRIDES.items():
        if os.environ.get(var):
            setattr(cfg, attr, os.environ[var])
    if cfg.preset not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {cfg.preset!r}; choose from {PRESET_NAMES}")
    if cfg.n_eval_episodes < 1:
        raise ConfigError("n_eval_episodes must be at least 1")
    for p in (cfg.levels_path, cfg.rabi_path, cfg.einstein_path):
        if p is not None and not Path(p).exists():
            raise ConfigError(f"referenced file does not exist: {p}")
    return cfg


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Named child stream of the master seed; stable across runs."""
    return np.random.default_rng(
        np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())]))


def _build_bundle(cfg: RunConfig) -> PresetBundle:
    bundle = load_preset(cfg.preset, **cfg.preset_options)
    table, library, trap, env_config = (bundle.table, bundle.library,
                                        bundle.trap, bundle.env_config)
    if cfg.levels_path is not None:
        table = load_level_table(cfg.levels_path)
    if cfg.trap:
        trap = dataclasses.replace(trap, **cfg.trap)
    if cfg.rabi_path is not None:
        entries = load_rabi_table(cfg.rabi_path, table)
        library = build_pulse_library(table, entries, trap, MergeRule())
    if cfg.env:
        env_config = dataclasses.replace(env_config, **cfg.env)
    einstein = bundle.einstein
    if cfg.einstein_path is not None:
        einstein = load_einstein_table(cfg.einstein_path, table)
    return dataclasses.replace(bundle, table=table, library=library, trap=trap,
                               env_config=env_config, einstein=einstein)


def _dqn_config(cfg: RunConfig) -> DqnConfig:
    try:
        return DqnConfig(**{k: tuple(v) if k == "hidden_widths" else v
                            for k, v in cfg.dqn.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid dqn settings: {exc}")


def _archive_path(out_dir: Path) -> Path:
    return out_dir / "transition_matrices.npz"


def _load_tms(bundle: PresetBundle, out_dir: Path):
    if bundle.transition_matrices is not None:
        return list(bundle.transition_matrices)
    path = _archive_path(out_dir)
    if not path.exists():
        raise DataError(f"no transition-matrix archive at {path}; "
                        "run the build-tm command first")
    try:
        return propagator.load_transition_matrices(path, bundle.library, bundle.trap)
    except ValueError as exc:
        raise DataError(f"stale or incompatible archive {path}: {exc}")


def _make_env(bundle: PresetBundle, tms) -> StatePrepEnv:
    generator = None
    if bundle.env_config.bbr_enabled:
        if bundle.einstein is None:
            raise ConfigError("bbr_enabled requires an Einstein-coefficient table")
        generator = bbr_rates(bundle.einstein, bundle.table,
                              bundle.env_config.bbr_temperature)
    return StatePrepEnv(bundle.table, tms, bundle.env_config, generator,
                        durations=bundle.durations)


def _compile_one(args):
    pulse, table, trap, step = args
    return propagator.compile_pulse(pulse, table, trap, step)


# --- subcommands ---------------------------------------------------------------

def cmd_build_tm(cfg: RunConfig, out_dir: Path, jobs: int) -> int:
    bundle = _build_bundle(cfg)
    path = _archive_path(out_dir)
    if bundle.transition_matrices is not None:
        tms = list(bundle.transition_matrices)
        propagator.save_transition_matrices(path, tms, bundle.library, bundle.trap)
        print(f"wrote {len(tms)} analytic transition-matrix pairs to {path}")
        return EXIT_OK
    if path.exists():
        try:
            tms = propagator.load_transition_matrices(path, bundle.library, bundle.trap)
            print(f"cache hit: {path} matches the current library and trap "
                  f"({len(tms)} pulses); nothing to do")
            return EXIT_OK
        except ValueError:
            print(f"stale archive at {path}; rebuilding")
    work = [(p, bundle.table, bundle.trap, cfg.compile_step)
            for p in bundle.library.pulses]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            tms = list(pool.map(_compile_one, work))
    else:
        tms = [_compile_one(w) for w in work]
    propagator.save_transition_matrices(path, tms, bundle.library, bundle.trap)
    print(f"compiled {len(tms)} pulses -> {path}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, out_dir: Path, jobs: int) -> int:
    bundle = _build_bundle(cfg)
    tms = _load_tms(bundle, out_dir)
    environment = _make_env(bundle, tms)
    dqn = _dqn_config(cfg)
    rng = rng_stream(cfg.seed, "train")
    checkpoint = out_dir / "checkpoint.npz"
    mlp, curve = train(environment, dqn, rng, checkpoint_path=checkpoint)
    write_training_curve(out_dir / "training_curve.csv", curve)
    print(f"trained {dqn.n_training} episodes; checkpoint -> {checkpoint}")
    if curve:
        print(f"final 100-episode moving average length: {curve[-1][2]:.3f}")
    return EXIT_OK


def _eval_chunk(args):
    (weights, biases, table, tms, config, einstein, durations, seeds) = args
    mlp = Mlp(weights, biases)
    generator = None
    if config.bbr_enabled:
        generator = bbr_rates(einstein, table, config.bbr_temperature)
    environment = StatePrepEnv(table, tms, config, generator, durations)
    records = []
    for s in seeds:
        rng = np.random.default_rng(np.random.SeedSequence(s))
        policy = lambda step, state: int(np.argmax(agent_mod.forward(mlp, state.p))) + 1
        records.append(run_episode(environment, policy, rng))
    return records


def _greedy_records(mlp: Mlp, bundle: PresetBundle, tms, n_episodes: int,
                    seed: int, jobs: int):
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(b"evaluate")])
    episode_seeds = ss.generate_state(n_episodes, dtype=np.uint64).tolist()
    chunks = max(1, jobs)
    parts = [episode_seeds[i::chunks] for i in range(chunks)]
    work = [(mlp.weights, mlp.biases, bundle.table, tms, bundle.env_config,
             bundle.einstein, bundle.durations, part) for part in parts if part]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_eval_chunk, work))
    else:
        results = [_eval_chunk(w) for w in work]
    return [r for chunk in results for r in chunk]


def _summarize(records, out_dir: Path, stem: str) -> dict:
    curve = analysis.success_curve(records)
    per_state, per_action = analysis.terminal_histogram(records)
    lengths = [r.length for r in records]
    stats = {
        "n_episodes": len(records),
        "mean_length": float(np.mean(lengths)),
        "finished_fraction": sum(r.terminated for r in records) / len(records),
        "terminal_histogram": {str(k): v for k, v in sorted(per_state.items())},
        "action_histogram": {str(k): v for k, v in sorted(per_action.items())},
    }
    analysis.export_curve_csv(curve, out_dir / f"{stem}_success_curve.csv")
    write_episode_log(out_dir / f"{stem}_episodes.csv", records)
    with open(out_dir / f"{stem}_stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=1, sort_keys=True)
    return stats


def cmd_evaluate(cfg: RunConfig, out_dir: Path, jobs: int) -> int:
    bundle = _build_bundle(cfg)
    tms = _load_tms(bundle, out_dir)
    path = out_dir / "checkpoint.npz"
    if not path.exists():
        raise DataError(f"no checkpoint at {path}; run the train command first")
    mlp, _, _ = load_checkpoint(path)
    if mlp.widths[0] != bundle.table.n_states or mlp.widths[-1] != len(tms):
        raise DataError("checkpoint network shape does not match this model")
    records = _greedy_records(mlp, bundle, tms, cfg.n_eval_episodes, cfg.seed, jobs)
    stats = _summarize(records, out_dir, "evaluate")
    print(f"greedy policy: mean length {stats['mean_length']:.3f} over "
          f"{stats['n_episodes']} episodes "
          f"({stats['finished_fraction']:.1%} finished)")
    return EXIT_OK


def cmd_baseline(cfg: RunConfig, out_dir: Path, jobs: int) -> int:
    bundle = _build_bundle(cfg)
    tms = _load_tms(bundle, out_dir)
    environment = _make_env(bundle, tms)
    rng = rng_stream(cfg.seed, "baseline")
    policy = lambda step, state: sweeping_policy(step, bundle.library)
    records = [run_episode(environment, policy, rng)
               for _ in range(cfg.n_eval_episodes)]
    stats = _summarize(records, out_dir, "baseline")
    print(f"sweeping policy: mean length {stats['mean_length']:.3f} over "
          f"{stats['n_episodes']} episodes "
          f"({stats['finished_fraction']:.1%} finished)")
    return EXIT_OK


def cmd_tree(cfg: RunConfig, out_dir: Path, jobs: int) -> int:
    bundle = _build_bundle(cfg)
    tms = _load_tms(bundle, out_dir)
    path = out_dir / "checkpoint.npz"
    if not path.exists():
        raise DataError(f"no checkpoint at {path}; run the train command first")
    mlp, _, _ = load_checkpoint(path)
    environment = _make_env(bundle, tms)
    tree = analysis.extract_decision_tree(mlp, environment,
                                          prune_prob=cfg.tree_prune_prob,
                                          max_depth=cfg.tree_max_depth)
    labels = [format_label(lab) for lab in bundle.table.labels]
    analysis.export_tree_dot(tree, out_dir / "decision_tree.dot", labels)
    print(f"decision tree: {len(tree.nodes)} nodes, leaf mass {tree.leaf_mass:.6f}, "
          f"pruned {tree.pruned_mass:.2e}, unexpanded {tree.unexpanded_mass:.2e}")
    print(f"expected depth {tree.expected_depth:.3f} pulses -> "
          f"{out_dir / 'decision_tree.dot'}")
    if not tree.complete:
        print("warning: tree is partial (mass left at max depth)")
    return EXIT_OK


def cmd_report(cfg: RunConfig, out_dir: Path, jobs: int) -> int:
    stats = {}
    curves = {}
    for stem, label in (("evaluate", "RL policy"), ("baseline", "sweeping")):
        spath = out_dir / f"{stem}_stats.json"
        if not spath.exists():
            raise DataError(f"missing {spath}; run the {stem} command first")
        with open(spath, encoding="utf-8") as fh:
            stats[label] = json.load(fh)
        curves[label] = analysis.read_curve_csv(out_dir / f"{stem}_success_curve.csv")
    with open(out_dir / "report.csv", "w", encoding="utf-8") as fh:
        fh.write("policy,mean_length,finished_fraction,n_episodes\n")
        for label, s in stats.items():
            fh.write(f"{label},{s['mean_length']:.6g},{s['finished_fraction']:.6g},"
                     f"{s['n_episodes']}\n")
    analysis.plot_curves(curves, out_dir / "report.svg",
                         xlabel="pulses applied", ylabel="finished fraction",
                         title="cumulative preparation success")
    print("policy          mean length   finished")
    for label, s in stats.items():
        print(f"{label:<15s} {s['mean_length']:>11.3f}   {s['finished_fraction']:.1%}")
    print(f"report -> {out_dir / 'report.csv'}, {out_dir / 'report.svg'}")
    return EXIT_OK


_COMMANDS = {
    "build-tm": cmd_build_tm,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "tree": cmd_tree,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rlqls",
        description="Simulate and train measurement-based molecular state preparation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel workers for compilation/evaluation")
        p.add_argument("--out", help="output directory (overrides config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out_dir, args.jobs)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
