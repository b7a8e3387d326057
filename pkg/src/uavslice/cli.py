"""Experiment harness: train / eval / baseline / export subcommands.

All artifacts land in the run directory: a config snapshot, a run-info
record, CSV metric streams, and binary checkpoints.  CSV numbers are
written with repr() so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

import numpy as np

from . import maddpg as maddpg_mod
from .baselines import BaselinePolicy
from .config import ConfigError, ExperimentConfig, parse_config
from .environment import World

TRAIN_HEADER = ("policy,step,episode,reward,qos,energy,fairness,"
                "sat_embb,sat_urllc,sat_mmtc,mean_energy_j,jain,sigma")
EVAL_HEADER = ("policy,step,seed,reward,qos,energy,fairness,"
               "sat_embb,sat_urllc,sat_mmtc,mean_energy_j,jain,"
               "satisfied_fraction")
FIGURE_METRICS = ("reward", "qos", "energy", "fairness")
SMOOTH_WINDOW = 50


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


class CsvWriter:
    def __init__(self, path: str, header: str):
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        self.fh = open(path, "w", encoding="utf-8", newline="\n")
        self.fh.write(header + "\n")

    def row(self, *values):
        self.fh.write(",".join(_fmt(v) for v in values) + "\n")

    def close(self):
        self.fh.close()


def _version_string() -> str:
    try:
        from importlib.metadata import version
        base = version("uavslice")
    except Exception:
        base = "0.1.0"
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5).stdout.strip()
    except Exception:
        desc = ""
    return f"uavslice {base}" + (f" ({desc})" if desc else "")


def _write_run_artifacts(out_dir: str, cfg: ExperimentConfig, command: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    info = {
        "command": command,
        "config_hash": cfg.config_hash(),
        "seed": cfg.run.seed,
        "version": _version_string(),
    }
    with open(os.path.join(out_dir, "run_info.json"), "w",
              encoding="utf-8") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_train(cfg: ExperimentConfig, out_dir: str) -> int:
    _write_run_artifacts(out_dir, cfg, "train")
    train_csv = CsvWriter(os.path.join(out_dir, "train.csv"), TRAIN_HEADER)
    eval_csv = CsvWriter(os.path.join(out_dir, "eval.csv"), EVAL_HEADER)

    def metrics_sink(step, episode, metrics, sigma, critic_loss, actor_loss):
        ss = metrics.slice_satisfaction
        train_csv.row("train", step, episode, metrics.total, metrics.qos,
                      metrics.energy, metrics.fairness, ss["embb"],
                      ss["urllc"], ss["mmtc"], metrics.mean_energy_j,
                      metrics.fairness, sigma)

    def eval_sink(step, rows):
        for r in rows:
            eval_csv.row("maddpg", step, r["seed"], r["reward"], r["qos"],
                         r["energy"], r["fairness"], 0.0, 0.0, 0.0,
                         r["mean_energy_j"], r["fairness"],
                         r["satisfied_fraction"])

    def progress(step, eval_reward, sigma):
        print(f"step {step}: eval reward {eval_reward:.4f} sigma {sigma:.4f}",
              flush=True)

    learner, _history = maddpg_mod.train(
        cfg, metrics_sink=metrics_sink, eval_sink=eval_sink, progress=progress)
    train_csv.close()
    eval_csv.close()
    manifest = {
        "step": cfg.run.steps,
        "config_hash": cfg.config_hash(),
        "n_agents": cfg.scenario.n_uav,
        "version": 1,
    }
    learner.save_checkpoint(os.path.join(out_dir, "checkpoint.ckpt"), manifest)
    return 0


def _rollout(cfg: ExperimentConfig, policy_name: str, action_fn,
             out_path: str) -> None:
    """Continuous noise-free rollout, one CSV row per step."""
    writer = CsvWriter(out_path, EVAL_HEADER)
    world = World(cfg, cfg.run.seed)
    obs = world.joint_observation()
    for step in range(1, cfg.run.steps + 1):
        actions = action_fn(world, obs)
        obs, metrics, _ = world.step(actions)
        ss = metrics.slice_satisfaction
        writer.row(policy_name, step, cfg.run.seed, metrics.total,
                   metrics.qos, metrics.energy, metrics.fairness,
                   ss["embb"], ss["urllc"], ss["mmtc"],
                   metrics.mean_energy_j, metrics.fairness,
                   metrics.satisfied_fraction)
    writer.close()


def run_eval(cfg: ExperimentConfig, out_dir: str, checkpoint: str,
             force: bool) -> int:
    _write_run_artifacts(out_dir, cfg, "eval")
    if not os.path.exists(checkpoint):
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    learner = maddpg_mod.MADDPG(cfg, cfg.scenario.n_uav, cfg.run.seed)
    manifest = learner.load_checkpoint(checkpoint)
    want = cfg.config_hash()
    got = manifest.get("config_hash")
    if got is not None and got != want:
        print(f"warning: checkpoint config hash {got} != current {want}",
              file=sys.stderr)
        if not force:
            raise ConfigError(
                "config hash mismatch; pass --force to evaluate anyway")

    def action_fn(world, obs):
        return np.stack([learner.actors[u].act(obs[u])
                         for u in range(world.n_uav)])

    _rollout(cfg, "maddpg", action_fn, os.path.join(out_dir, "eval.csv"))
    return 0


def run_baseline(cfg: ExperimentConfig, out_dir: str, policy: str) -> int:
    _write_run_artifacts(out_dir, cfg, f"baseline:{policy}")
    provider = BaselinePolicy(policy, seed=cfg.run.seed)

    def action_fn(world, obs):
        return provider.joint_action(world)

    _rollout(cfg, policy, action_fn,
             os.path.join(out_dir, f"baseline_{policy}.csv"))
    return 0


def _moving_average(values, window=SMOOTH_WINDOW):
    out = []
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(i + 1, window))
    return out


def export_figure_data(csv_paths, out_path: str) -> int:
    """Reshape per-step CSVs into one tidy (policy, step, metric, value)."""
    writer = CsvWriter(out_path, "policy,step,metric,value")
    for path in csv_paths:
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            for col in ("policy", "step") + FIGURE_METRICS:
                if col not in header:
                    raise ValueError(f"{path}: missing column {col!r}")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        if not rows:
            continue
        col = {name: header.index(name) for name in header}
        # reward must recompose from its components before we reshape it
        policy = rows[0][col["policy"]]
        series = {m: [float(r[col[m]]) for r in rows] for m in FIGURE_METRICS}
        steps = [int(r[col["step"]]) for r in rows]
        for metric in FIGURE_METRICS:
            vals = series[metric]
            for step, v in zip(steps, vals):
                writer.row(policy, step, metric, v)
            for step, v in zip(steps, _moving_average(vals)):
                writer.row(policy, step, f"{metric}_smooth{SMOOTH_WINDOW}", v)
    writer.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uavslice",
        description="UAV network-slicing simulator and MADDPG harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--out", default=None, help="run output directory")

    p_train = sub.add_parser("train", help="train the MADDPG learner")
    common(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a trained checkpoint")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--force", action="store_true",
                        help="ignore config hash mismatch")

    p_base = sub.add_parser("baseline", help="roll out a heuristic policy")
    common(p_base)
    p_base.add_argument("--policy", required=True,
                        choices=("random", "coverage", "qos"))

    p_exp = sub.add_parser("export", help="tidy long-format figure data")
    p_exp.add_argument("csvs", nargs="+", help="per-step metric CSVs")
    p_exp.add_argument("--out", default="figure_data.csv")
    return parser


def _load_cfg(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["run.seed"] = args.seed
    if args.steps is not None:
        overrides["run.steps"] = args.steps
    if getattr(args, "out", None):
        overrides["run.out_dir"] = args.out
    return cfg.apply(overrides) if overrides else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            return export_figure_data(args.csvs, args.out)
        cfg = _load_cfg(args)
        out_dir = cfg.run.out_dir
        if args.command == "train":
            return run_train(cfg, out_dir)
        if args.command == "eval":
            return run_eval(cfg, out_dir, args.checkpoint, args.force)
        if args.command == "baseline":
            return run_baseline(cfg, out_dir, args.policy)
        raise AssertionError(args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
