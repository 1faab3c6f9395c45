"""Run the desk-scale comparison and freeze the numbers the acceptance suite reads.

Trains PPO-RAJS, vanilla PPO and PPO-JSRL for each seed, cascades a smoothed
PPO-RAJS-S run from every PPO-RAJS checkpoint, evaluates each final policy on
the true initial distribution, and writes one JSON per run to ``results/runs``
plus the merged ``results/experiments.json``.  Finished runs are skipped, so
the script can be interrupted and restarted.

Usage: python experiments/run_suite.py [--seeds 0 1 2] [--eval-episodes 1000]
"""
from __future__ import annotations

import argparse
import csv
import json
import time
from pathlib import Path

from rocketland.cli import cascade_overrides
from rocketland.config import load_config
from rocketland.evaluation import evaluate, load_policy
from rocketland.trainer import train

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
VARIANTS = ("ppo-rajs", "ppo", "ppo-jsrl")


def _metrics(run: Path) -> list[dict]:
    with open(run / "metrics.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def _summarize(name: str, cfg, run: Path, eval_episodes: int, eval_seed: int, extra: dict | None = None) -> dict:
    rows = _metrics(run)
    t0 = time.perf_counter()
    report, _ = evaluate(cfg, load_policy(run / "checkpoints" / "latest.npz", cfg), eval_episodes, eval_seed,
                         cfg.eval.batch_envs)
    beta = [float(r["beta"]) for r in rows]
    zero_at = next((int(r["env_steps"]) for r in rows if float(r["beta"]) == 0.0), None)
    return {
        "name": name, "seed": cfg.seed, "variant": cfg.schedule.variant, "run_dir": str(run.relative_to(ROOT)),
        "iterations": len(rows), "env_steps": int(rows[-1]["env_steps"]) if rows else 0,
        "decisions": int(rows[-1]["decisions"]) if rows else 0, "budget": cfg.total_steps,
        "budget_unit": cfg.budget_unit,
        "train_success_first": float(rows[0]["success_rate"]) if rows else None,
        "train_batch_success_first": float(rows[0]["batch_success"]) if rows else None,
        "train_success_final": float(rows[-1]["success_rate"]) if rows else None,
        "train_success_max": max((float(r["success_rate"]) for r in rows), default=None),
        "beta_final": beta[-1] if beta else None, "beta_zero_at_env_steps": zero_at,
        "guided_after_anneal": sum(int(r["guided_after_anneal"]) for r in rows),
        "eval_seconds": time.perf_counter() - t0, "eval": report.summary(), **(extra or {}),
    }


def _run(name: str, cfg, overrides: list[str], args) -> dict:
    out = args.results / "runs" / f"{name}.json"
    if out.exists():
        return json.loads(out.read_text())
    t0 = time.perf_counter()
    train(cfg, overrides, resume=True,
          progress=lambda r: print(f"{name} iter {r['iteration']} steps {r['env_steps']} "
                                   f"success {r['success_rate']:.3f} beta {r['beta']:.3f}", flush=True))
    summary = _summarize(name, cfg, ROOT / cfg.out, args.eval_episodes, cfg.eval.seed,
                         {"train_seconds": time.perf_counter() - t0, "overrides": overrides})
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(summary, indent=2))
    return summary


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--eval-episodes", type=int, default=1000)
    ap.add_argument("--results", type=Path, default=ROOT / "results")
    args = ap.parse_args()

    done = []
    for seed in args.seeds:
        for variant in VARIANTS:
            name = f"{variant}-s{seed}"
            ov = [f"seed={seed}", f"out=runs/{name}"]
            cfg = load_config(CONFIGS / f"{variant}.yaml", ov)
            cfg.out = str(ROOT / cfg.out)
            done.append(_run(name, cfg, ov, args))
    for seed in args.seeds:
        parent = ROOT / "runs" / f"ppo-rajs-s{seed}" / "checkpoints" / "latest.npz"
        name = f"ppo-rajs-s-s{seed}"
        ov = [f"seed={seed}", f"out=runs/{name}"] + cascade_overrides(parent, True, 0.01)
        cfg = load_config(CONFIGS / "ppo-rajs-s.yaml", ov)
        cfg.out = str(ROOT / cfg.out)
        done.append(_run(name, cfg, ov, args))
    (args.results / "experiments.json").write_text(json.dumps({r["name"]: r for r in done}, indent=2))


if __name__ == "__main__":
    main()
