"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 backend error, 4 library
error.  Every numeric default stated by a module is overridable through the
YAML config (``--config``) or the common flags below.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .backends import BackendUnavailable
from .environment import SyntheticTask, scripted_expert
from .kernels import mix_seed
from .pipeline import (
    EXIT_BACKEND,
    EXIT_CONFIG,
    EXIT_LIBRARY,
    EXIT_OK,
    ConfigInvalid,
    LibraryEmpty,
    RunConfig,
)
from .policy import TabularSoftmaxPolicy, rollout_episode
from .records import TrajectoryWriter
from .rewards import attach_rewards
from .skills import SkillError, compose_constraints, validate_library
from .verification import probe, run_committee


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillsynth",
        description="skill-composition problem synthesis engine",
    )
    parser.add_argument("--config", type=Path, default=None, help="YAML run configuration")
    parser.add_argument("--library", type=Path, default=None, help="skill library directory")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--output", type=Path, default=None, help="output directory override")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("skills-validate", help="parse the library and report violations")

    p_sample = sub.add_parser("sample", help="draw categories and skill compositions")
    p_sample.add_argument("--n", type=int, default=3, help="number of compositions to draw")

    p_rollout = sub.add_parser("rollout", help="run episodes and write trajectory records")
    p_rollout.add_argument("--episodes", type=int, default=8)
    p_rollout.add_argument(
        "--policy",
        default="expert",
        help="'expert', 'uniform', or a path to a saved policy .npz",
    )

    sub.add_parser("train-bc", help="behavioral cloning on scripted-expert data")

    p_mgpo = sub.add_parser("train-mgpo", help="run the stage-3 optimization loop")
    p_mgpo.add_argument("--iterations", type=int, default=None)
    p_mgpo.add_argument("--ref", type=Path, default=None, help="reference policy .npz")
    p_mgpo.add_argument(
        "--objective", choices=pipeline.OBJECTIVES, default=None, help="optimization rule"
    )

    p_ablate = sub.add_parser("ablate", help="run the gate/tau/omega ablation grid")
    p_ablate.add_argument("--iterations", type=int, default=None)

    p_report = sub.add_parser("report", help="summarize a metrics file")
    p_report.add_argument("metrics", type=Path)
    p_report.add_argument("--json", action="store_true", help="emit machine-readable series")
    return parser


def _load_config(args) -> RunConfig:
    overrides: dict = {}
    if args.library is not None:
        overrides.setdefault("library", {})["path"] = str(args.library)
    if args.seed is not None:
        overrides.setdefault("run", {})["master_seed"] = args.seed
    if args.output is not None:
        overrides.setdefault("run", {})["output_dir"] = str(args.output)
    if getattr(args, "iterations", None) is not None:
        if args.command == "ablate":
            overrides.setdefault("ablation", {})["iterations"] = args.iterations
        else:
            overrides.setdefault("run", {})["iterations"] = args.iterations
    if getattr(args, "objective", None) is not None:
        overrides.setdefault("run", {})["objective"] = args.objective
    return pipeline.load_config(args.config, overrides)


def _cmd_skills_validate(cfg: RunConfig, args) -> int:
    if cfg.library.path is None:
        print("no library path given; nothing to validate", file=sys.stderr)
        return EXIT_CONFIG
    violations = validate_library(cfg.library.path)
    for violation in violations:
        print(violation)
    print(f"{len(violations)} violations")
    return EXIT_OK if not violations else EXIT_LIBRARY


def _cmd_sample(cfg: RunConfig, args) -> int:
    library = pipeline.build_library(cfg)
    state = pipeline.init_state(cfg, library, TabularSoftmaxPolicy.uniform()).proficiency
    rng = np.random.default_rng(mix_seed(cfg.run.master_seed, 41))
    for i in range(args.n):
        category = pipeline.curriculum_mod.sample_category(state, rng)
        skills = pipeline.sample_composition(
            library, category, cfg.environment.target_skill_count, rng
        )
        print(f"=== draw {i} (category: {category}) ===")
        print(compose_constraints(skills))
    return EXIT_OK


def _cmd_rollout(cfg: RunConfig, args) -> int:
    library = pipeline.build_library(cfg)
    out_dir = Path(cfg.run.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.policy not in ("expert", "uniform"):
        policy = TabularSoftmaxPolicy.load(args.policy)
    elif args.policy == "uniform":
        policy = TabularSoftmaxPolicy.uniform()
    else:
        policy = None
    rng = np.random.default_rng(mix_seed(cfg.run.master_seed, 42))
    personas = pipeline.build_personas(cfg)
    pool = pipeline.build_prober_pool(cfg)
    categories = pipeline.usable_categories(library)
    written = 0
    with TrajectoryWriter(out_dir / "trajectories.jsonl") as writer:
        for e in range(args.episodes):
            category = categories[int(rng.integers(len(categories)))]
            skills = pipeline.sample_composition(
                library, category, cfg.environment.target_skill_count, rng
            )
            task = SyntheticTask(
                modulus_pool=cfg.environment.modulus_pool,
                target_skill_count=cfg.environment.target_skill_count,
                rng_seed=mix_seed(cfg.run.master_seed, 43, e),
            )
            if policy is None:
                traj = scripted_expert(
                    task,
                    skills,
                    reward_cfg=cfg.reward,
                    max_steps=cfg.environment.horizon,
                    episode_id=f"rollout-{e:04d}",
                    category=category,
                )
            else:
                from .environment import SynthesisEnv

                env = SynthesisEnv(
                    task, skills, reward_cfg=cfg.reward, max_steps=cfg.environment.horizon
                )
                traj = rollout_episode(env, policy, rng, f"rollout-{e:04d}", category)
            if traj.terminal is not None:
                verdict = run_committee(traj.terminal.problem, personas, rng)
                result = None
                if verdict.valid:
                    result = probe(
                        traj.terminal.problem,
                        pool,
                        k=cfg.prober.k,
                        seed=mix_seed(cfg.run.master_seed, 44, e),
                    )
                traj = attach_rewards(traj, verdict, result, cfg.reward)
            if writer.append(traj):
                written += 1
    print(f"wrote {written} episodes to {out_dir / 'trajectories.jsonl'}")
    return EXIT_OK


def _cmd_train_bc(cfg: RunConfig, args) -> int:
    library = pipeline.build_library(cfg)
    policy, rows = pipeline.train_bc(cfg, library)
    out_dir = Path(cfg.run.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    policy.save(out_dir / "ref_policy.npz")
    (out_dir / "bc_metrics.jsonl").write_text(
        "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in rows),
        encoding="utf-8",
    )
    print(f"reference policy saved to {out_dir / 'ref_policy.npz'}")
    print(f"final cloning loss: {rows[-1]['sft_loss']:.4f}" if rows else "no steps run")
    return EXIT_OK


def _cmd_train_mgpo(cfg: RunConfig, args) -> int:
    library = pipeline.build_library(cfg)
    ref = TabularSoftmaxPolicy.load(args.ref) if args.ref is not None else None
    rows = pipeline.run_training(cfg, library=library, ref=ref)
    accuracy = float(np.mean([r["proposing_accuracy"] for r in rows])) if rows else float("nan")
    print(f"ran {len(rows)} iterations (objective: {cfg.run.objective})")
    print(f"mean proposing accuracy: {accuracy:.4f}" if rows else "empty series")
    print(f"outputs in {cfg.run.output_dir}")
    return EXIT_OK


def _cmd_ablate(cfg: RunConfig, args) -> int:
    results = pipeline.run_ablation(cfg)
    out_dir = Path(cfg.run.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "ablation.jsonl"
    path.write_text(
        "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in results),
        encoding="utf-8",
    )
    print(f"{'gate':<12} {'tau+':>6} {'tau-':>6} {'omega':>6} {'accuracy':>9}")
    for row in results:
        print(
            f"{row['gate_mode']:<12} {row['tau_pos']:>6.2f} {row['tau_neg']:>6.2f} "
            f"{row['omega']:>6.2f} {row['mean_proposing_accuracy']:>9.4f}"
        )
    print(f"{len(results)} configurations; rows in {path}")
    return EXIT_OK


def _cmd_report(cfg: RunConfig, args) -> int:
    report = pipeline.report_from_metrics(args.metrics)
    if args.json:
        print(json.dumps({k: v for k, v in report.items() if k != "rows"}, sort_keys=True))
    else:
        print(pipeline.render_report_table(report))
    return EXIT_OK


_COMMANDS = {
    "skills-validate": _cmd_skills_validate,
    "sample": _cmd_sample,
    "rollout": _cmd_rollout,
    "train-bc": _cmd_train_bc,
    "train-mgpo": _cmd_train_mgpo,
    "ablate": _cmd_ablate,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        return _COMMANDS[args.command](cfg, args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendUnavailable as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (LibraryEmpty, SkillError) as exc:
        print(f"library error: {exc}", file=sys.stderr)
        return EXIT_LIBRARY


if __name__ == "__main__":
    sys.exit(main())
