"""Command-line entry point: ``rocketland {train,evaluate,cascade,guide-test,export-plots}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from rocketland.approx import load_checkpoint
from rocketland.config import RunConfig, load_config
from rocketland.environment import BASE_OBS_DIM, obs_dim
from rocketland.evaluation import evaluate, load_policy, write_eval_csv, write_trajectories_csv

log = logging.getLogger("rocketland")


class CliError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. ppo.entropy_coef=0.01 (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="run / output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rocketland", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy")
    _common(p)
    p.add_argument("--workers", type=int)
    p.add_argument("--steps", type=int, help="environment step budget")
    p.add_argument("--no-resume", action="store_true", help="ignore an existing checkpoint in --out")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint (or the PID guide without one)")
    _common(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--episodes", type=int)
    p.add_argument("--trajectories", type=int, default=0, help="episodes to export as downsampled trajectories")

    p = sub.add_parser("cascade", help="train with a trained checkpoint as the guide")
    _common(p)
    p.add_argument("--parent", type=Path, required=True,
                   help="checkpoint used as the new guide, or 'pid' for the built-in guide")
    p.add_argument("--workers", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--no-smoothing", action="store_true", help="keep absolute actions and no smoothness loss")
    p.add_argument("--smoothness", type=float, default=0.01)

    p = sub.add_parser("guide-test", help="evaluate the PID guide")
    _common(p)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--nominal", action="store_true", help="nominal initial state, no wind")
    p.add_argument("--trace", type=Path, help="write the first episode's trace to this CSV")

    p = sub.add_parser("export-plots", help="write plot-ready CSVs from a run directory")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    return ap


def _config(args, extra: list[str] | None = None) -> tuple[RunConfig, list[str]]:
    overrides = list(args.overrides) + list(extra or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "workers", None) is not None:
        overrides.append(f"workers={args.workers}")
    if getattr(args, "steps", None) is not None:
        overrides.append(f"total_steps={args.steps}")
    if getattr(args, "out", None) is not None:
        overrides.append(f"out={args.out}")
    if args.config is not None and not args.config.exists():
        raise CliError(f"config file not found: {args.config}")
    try:
        cfg = load_config(args.config, overrides)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid config: {exc}") from exc
    _validate(cfg)
    return cfg, overrides


def _validate(cfg: RunConfig) -> None:
    from rocketland.jumpstart import VARIANTS
    p = cfg.ppo
    if not 0 < p.gamma <= 1 or not 0 <= p.lam <= 1 or p.clip <= 0:
        raise CliError("invalid config: need 0 < gamma <= 1, 0 <= lam <= 1, clip > 0")
    if p.batch_size < 1 or cfg.total_steps < 0:
        raise CliError("invalid config: batch_size must be positive and total_steps non-negative")
    if cfg.schedule.variant not in VARIANTS:
        raise CliError(f"invalid config: schedule.variant must be one of {VARIANTS}")
    if cfg.schedule.h_bar < 0:
        raise CliError("invalid config: schedule.h_bar must be non-negative")
    kind = cfg.guide.kind
    if kind != "pid" and not (kind.startswith("checkpoint:") and Path(kind.split(":", 1)[1]).exists()):
        raise CliError(f"invalid config: guide.kind must be 'pid' or 'checkpoint:<existing path>', got {kind!r}")
    try:
        cfg.plant.substeps
    except ValueError as exc:
        raise CliError(f"invalid config: {exc}") from exc


def _print_progress(row: dict) -> None:
    print(f"iter {row['iteration']:5d}  steps {row['env_steps']:>10d}  success {row['success_rate']:.3f}  "
          f"beta {row['beta']:.3f}  kl {row['kl']:.4f}  entropy {row['entropy']:.2f}", flush=True)


def cmd_train(args) -> int:
    from rocketland.trainer import train
    cfg, overrides = _config(args)
    st = train(cfg, overrides, resume=not args.no_resume, progress=_print_progress)
    print(f"finished at iteration {st.iteration}, {st.env_steps} env steps; run directory {cfg.out}")
    return 0


def _report_outputs(out: Path, report, traj) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_eval_csv(out / "eval.csv", report.rows)
    (out / "report.json").write_text(json.dumps(report.summary(), indent=2))
    (out / "report.txt").write_text(report.table() + "\n")
    if traj:
        write_trajectories_csv(out / "trajectories.csv", traj)


def cmd_evaluate(args) -> int:
    cfg, _ = _config(args)
    policy = None
    if args.checkpoint is not None:
        if not args.checkpoint.exists():
            raise CliError(f"checkpoint not found: {args.checkpoint}")
        try:
            policy = load_policy(args.checkpoint, cfg)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
    n = args.episodes or cfg.eval.episodes
    t0 = time.perf_counter()
    report, traj = evaluate(cfg, policy, n, cfg.eval.seed if args.seed is None else args.seed,
                            cfg.eval.batch_envs, trajectory_episodes=args.trajectories)
    print(("PID guide" if policy is None else str(args.checkpoint)) + f"  ({time.perf_counter() - t0:.1f} s)")
    print(report.table())
    _report_outputs(Path(args.out or cfg.out) / "eval", report, traj)
    return 0


def cascade_overrides(parent: Path, smoothing: bool, smoothness: float) -> list[str]:
    extra = ["guide.kind=pid" if str(parent) == "pid" else f"guide.kind=checkpoint:{parent}"]
    if smoothing:
        extra += ["env.incremental=true", f"ppo.smoothness_coef={smoothness}"]
    return extra


def check_parent(parent: Path, incremental: bool) -> None:
    if str(parent) == "pid":
        return
    if not parent.exists():
        raise CliError(f"parent checkpoint not found: {parent}")
    groups, _ = load_checkpoint(parent)
    dim = groups["policy"]["W0"].shape[0]
    if dim == BASE_OBS_DIM or (incremental and dim == obs_dim(True)):
        return
    raise CliError(f"parent policy takes {dim}-dim observations; the guide can only be fed the "
                   f"{BASE_OBS_DIM}-dim base observation"
                   + (f" or the {obs_dim(True)}-dim incremental observation" if incremental else ""))


def cmd_cascade(args) -> int:
    from rocketland.trainer import train
    extra = cascade_overrides(args.parent, not args.no_smoothing, args.smoothness)
    cfg, overrides = _config(args, extra)
    check_parent(args.parent, cfg.env.incremental)
    if cfg.schedule.variant == "none":
        raise CliError("cascade needs a jump-start schedule; schedule.variant is 'none'")
    st = train(cfg, overrides, resume=False, progress=_print_progress)
    print(f"finished at iteration {st.iteration}, {st.env_steps} env steps; run directory {cfg.out}")
    return 0


def nominal_config(cfg: RunConfig) -> RunConfig:
    cfg.init.half_range = {k: 0.0 for k in cfg.init.half_range}
    cfg.init.wind_max = 0.0
    return cfg


def cmd_guide_test(args) -> int:
    cfg, _ = _config(args)
    if args.nominal:
        cfg = nominal_config(cfg)
    seed = cfg.eval.seed if args.seed is None else args.seed
    report, _ = evaluate(cfg, None, args.episodes, seed, cfg.eval.batch_envs)
    print(report.table())
    if args.trace:
        import numpy as np
        from rocketland.environment import LandingEnv
        from rocketland.guide import PidGuide
        env = LandingEnv(cfg)
        env.reset(np.random.default_rng([seed, 0]))
        pid = PidGuide(cfg.guide, cfg.plant, 1)
        idx = np.array([0])
        while not env.done:
            env.step(pid.act(env._vec.states, idx)[0], absolute=True)
        env.write_trace(args.trace)
    if args.out:
        _report_outputs(Path(args.out), report, [])
    return 0


def cmd_export_plots(args) -> int:
    run = args.run
    if not (run / "metrics.csv").exists():
        raise CliError(f"no metrics.csv in {run}")
    out = args.out or run / "plots"
    out.mkdir(parents=True, exist_ok=True)
    with open(run / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    keep = ("iteration", "env_steps", "success_rate", "beta", "f2")
    with open(out / "learning_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keep)
        for r in rows:
            w.writerow([r[k] for k in keep])
    ckpt = run / "checkpoints" / "latest.npz"
    if ckpt.exists() and args.episodes > 0:
        cfg = load_config(run / "config.yaml") if (run / "config.yaml").exists() else RunConfig()
        cfg.guide.kind = "pid"
        report, traj = evaluate(cfg, load_policy(ckpt, cfg), args.episodes, args.seed,
                                trajectory_episodes=args.episodes)
        write_trajectories_csv(out / "trajectories.csv", traj)
    print(f"wrote plot data to {out}")
    return 0


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "cascade": cmd_cascade,
            "guide-test": cmd_guide_test, "export-plots": cmd_export_plots}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
