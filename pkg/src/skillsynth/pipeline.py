"""End-to-end orchestration: configuration, the three training stages, reports.

Stage order inside one optimization iteration is fixed: curriculum draw,
rollout groups, committee verdicts for every episode, difficulty probes for
the valid ones, reward attachment, the policy update, then the proficiency
update.  Prober mastery moves only at full probe-batch boundaries.  A single
master seed drives every stream (category draws, skill draws, action
sampling, probe attempts, audit selection), so equal seeds give
byte-identical trajectory and metrics files.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import curriculum as curriculum_mod
from . import mgpo as mgpo_mod
from .environment import (
    ExpertFailure,
    SynthesisEnv,
    SyntheticTask,
    Trajectory,
    make_synthetic_library,
    scripted_expert,
)
from .kernels import mix_seed
from .policy import (
    AdamState,
    TabularSoftmaxPolicy,
    accumulate_policy_gradient,
    adam_step,
    evaluate_trajectories,
    rollout_episode,
    step_coeffs_from_tokens,
)
from .records import JsonlWriter, TrajectoryWriter, read_jsonl
from .rewards import RewardConfig, attach_rewards
from .skills import SkillLibrary, build_filtered_distribution, load_library
from .verification import (
    Persona,
    ProberPool,
    SyntheticProber,
    probe,
    run_committee,
    update_mastery,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_LIBRARY = 4

OBJECTIVE_MGPO = "mgpo"
OBJECTIVE_MGPO_NO_STAGE = "mgpo-no-stage"
OBJECTIVE_GRPO = "grpo"
OBJECTIVES = (OBJECTIVE_MGPO, OBJECTIVE_MGPO_NO_STAGE, OBJECTIVE_GRPO)

ENV_MASTER_SEED = "SKILLSYNTH_MASTER_SEED"
ENV_BACKEND_URL = "SKILLSYNTH_BACKEND_URL"


class ConfigInvalid(Exception):
    pass


class LibraryEmpty(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LibrarySettings:
    path: str | None = None
    threshold: float = 0.5
    synthetic_categories: tuple[str, ...] = (
        "residue-basics",
        "coprime-composition",
        "shared-factor-traps",
    )
    synthetic_per_category: int = 6
    synthetic_seed: int = 0
    synthetic_core_size: int = 3


@dataclass(frozen=True)
class EnvSettings:
    modulus_pool: tuple[int, ...] = (3, 4, 5, 7, 8, 9, 11, 13)
    target_skill_count: int = 3
    horizon: int = 32


@dataclass(frozen=True)
class CommitteeSettings:
    personas: tuple[str, ...] = ("sound", "sound", "sound")
    p_flip: float = 0.0
    backend_url: str | None = None
    backend_models: tuple[str, ...] = ()


@dataclass(frozen=True)
class ProberSettings:
    k: int = 16
    batch_size: int = 500
    switch_threshold: float = 0.30
    alpha: float = 0.2
    m0: float = 0.5
    budgets: tuple[int, ...] = (4, 16, 64)
    temperature: float = 1.4


@dataclass(frozen=True)
class CurriculumSettings:
    alpha: float = 0.2
    epsilon: float = 0.05
    m0: float = 0.5


@dataclass(frozen=True)
class MGPOSettings:
    beta: float = 0.05
    omega: float = 0.5
    tau_pos: float = 1.0
    tau_neg: float = 1.05
    sigma_floor: float = 1e-6
    gate_mode: str = "asymmetric"
    lr: float = 0.2
    inner_steps: int = 4
    clip_epsilon: float = 0.2
    kl_beta: float = 0.05


@dataclass(frozen=True)
class RunSettings:
    iterations: int = 50
    groups_per_iteration: int = 8
    group_size: int = 8
    master_seed: int = 0
    output_dir: str = "runs/default"
    objective: str = OBJECTIVE_MGPO
    workers: int = 1
    bc_episodes: int = 32
    bc_steps: int = 40
    bc_lr: float = 0.25


@dataclass(frozen=True)
class AblationSettings:
    gate_modes: tuple[str, ...] = ("asymmetric", "symmetric", "none")
    tau_pairs: tuple[tuple[float, float], ...] = (
        (0.4, 0.6),
        (0.6, 0.8),
        (0.8, 0.9),
        (1.0, 1.05),
        (1.2, 1.4),
        (1.6, 1.9),
    )
    omegas: tuple[float, ...] = (0.0, 0.2, 0.5, 1.0, 1.5)
    iterations: int = 5


@dataclass(frozen=True)
class RunConfig:
    library: LibrarySettings = field(default_factory=LibrarySettings)
    environment: EnvSettings = field(default_factory=EnvSettings)
    committee: CommitteeSettings = field(default_factory=CommitteeSettings)
    prober: ProberSettings = field(default_factory=ProberSettings)
    curriculum: CurriculumSettings = field(default_factory=CurriculumSettings)
    reward: RewardConfig = field(default_factory=RewardConfig)
    mgpo: MGPOSettings = field(default_factory=MGPOSettings)
    run: RunSettings = field(default_factory=RunSettings)
    ablation: AblationSettings = field(default_factory=AblationSettings)

    def validate(self) -> "RunConfig":
        if self.run.objective not in OBJECTIVES:
            raise ConfigInvalid(f"objective must be one of {OBJECTIVES}")
        if self.run.iterations < 0 or self.run.group_size < 2:
            raise ConfigInvalid("iterations must be >= 0 and group_size >= 2")
        if self.prober.k < 1 or self.prober.batch_size < 1:
            raise ConfigInvalid("prober k and batch_size must be >= 1")
        if not 0 < self.prober.switch_threshold < 1:
            raise ConfigInvalid("switch threshold must lie in (0, 1)")
        if self.library.path is not None and not Path(self.library.path).is_dir():
            raise ConfigInvalid(f"library path {self.library.path} does not exist")
        if len(self.committee.personas) != 3:
            raise ConfigInvalid("the committee needs exactly three personas")
        try:
            self.mgpo_config()
            SyntheticTask(
                modulus_pool=self.environment.modulus_pool,
                target_skill_count=self.environment.target_skill_count,
            )
        except Exception as exc:
            raise ConfigInvalid(str(exc)) from exc
        return self

    def mgpo_config(self, objective: str | None = None) -> mgpo_mod.MGPOConfig:
        omega = self.mgpo.omega
        if (objective or self.run.objective) == OBJECTIVE_MGPO_NO_STAGE:
            omega = 0.0
        return mgpo_mod.MGPOConfig(
            beta=self.mgpo.beta,
            omega=omega,
            tau_pos=self.mgpo.tau_pos,
            tau_neg=self.mgpo.tau_neg,
            group_size=self.run.group_size,
            sigma_floor=self.mgpo.sigma_floor,
            gate_mode=self.mgpo.gate_mode,
        )


def _coerce(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigInvalid(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigInvalid(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except Exception as exc:
        raise ConfigInvalid(f"{cls.__name__}: {exc}") from exc


_SECTIONS = {
    "library": LibrarySettings,
    "environment": EnvSettings,
    "committee": CommitteeSettings,
    "prober": ProberSettings,
    "curriculum": CurriculumSettings,
    "reward": RewardConfig,
    "mgpo": MGPOSettings,
    "run": RunSettings,
    "ablation": AblationSettings,
}


def config_from_dict(data: dict | None) -> RunConfig:
    data = dict(data or {})
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigInvalid(f"unknown config sections: {sorted(unknown)}")
    kwargs = {name: _coerce(cls, data[name]) for name, cls in _SECTIONS.items() if name in data}
    cfg = RunConfig(**kwargs)
    return _apply_env_overrides(cfg).validate()


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a config from an optional YAML file plus nested-dict overrides."""
    data: dict = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigInvalid(f"config root must be a mapping, got {type(loaded).__name__}")
            data = loaded
    for section, values in (overrides or {}).items():
        data.setdefault(section, {})
        if values:
            data[section] = {**data[section], **values}
    return config_from_dict(data)


def _apply_env_overrides(cfg: RunConfig) -> RunConfig:
    seed = os.environ.get(ENV_MASTER_SEED)
    if seed is not None:
        try:
            cfg = dataclasses.replace(
                cfg, run=dataclasses.replace(cfg.run, master_seed=int(seed))
            )
        except ValueError as exc:
            raise ConfigInvalid(f"{ENV_MASTER_SEED} must be an integer, got {seed!r}") from exc
    url = os.environ.get(ENV_BACKEND_URL)
    if url:
        cfg = dataclasses.replace(
            cfg, committee=dataclasses.replace(cfg.committee, backend_url=url)
        )
    return cfg


# ---------------------------------------------------------------------------
# assembly helpers
# ---------------------------------------------------------------------------


def build_library(cfg: RunConfig) -> SkillLibrary:
    if cfg.library.path is not None:
        library = load_library(cfg.library.path, threshold=cfg.library.threshold)
    else:
        library = make_synthetic_library(
            categories=cfg.library.synthetic_categories,
            skills_per_category=cfg.library.synthetic_per_category,
            seed=cfg.library.synthetic_seed,
            threshold=cfg.library.threshold,
            core_size=cfg.library.synthetic_core_size,
        )
    if len(library) == 0:
        raise LibraryEmpty(f"library at {cfg.library.path!r} holds no skills")
    return library


def usable_categories(library: SkillLibrary) -> tuple[str, ...]:
    """Categories holding at least one skill that clears the quality threshold."""
    usable = tuple(
        sorted(
            c
            for c in library.categories
            if any(s.quality_score >= library.threshold for s in library.by_category(c))
        )
    )
    if not usable:
        raise LibraryEmpty("no category has a skill above the quality threshold")
    return usable


def build_personas(cfg: RunConfig) -> tuple[Persona, ...]:
    return tuple(
        Persona(kind=kind, verifier_id=f"v{i}", p_flip=cfg.committee.p_flip)
        for i, kind in enumerate(cfg.committee.personas)
    )


def build_prober_pool(cfg: RunConfig) -> ProberPool:
    probers = tuple(
        SyntheticProber(prober_id=f"p{i}-b{b}", budget=b, temperature=cfg.prober.temperature)
        for i, b in enumerate(cfg.prober.budgets)
    )
    return ProberPool(
        probers=probers,
        mastery=cfg.prober.m0,
        alpha=cfg.prober.alpha,
        switch_threshold=cfg.prober.switch_threshold,
        batch_size=cfg.prober.batch_size,
    )


def sample_composition(
    library: SkillLibrary, category: str, count: int, rng: np.random.Generator
) -> list:
    """Draw up to ``count`` distinct skills of one category from the filtered distribution."""
    members = library.by_category(category)
    sub = SkillLibrary.from_skills(members, categories={category}, threshold=library.threshold)
    dist = build_filtered_distribution(sub)
    probs = np.asarray(dist.probabilities)
    nonzero = int((probs > 0).sum())
    size = min(count, nonzero)
    idx = rng.choice(len(dist.support), size=size, replace=False, p=probs)
    return [sub.skills[dist.support[int(i)]] for i in idx]


# ---------------------------------------------------------------------------
# stage 2: behavioral cloning
# ---------------------------------------------------------------------------


def generate_expert_dataset(
    cfg: RunConfig, library: SkillLibrary, rng: np.random.Generator
) -> list[Trajectory]:
    """Verifier-filtered scripted-expert demonstrations."""
    personas = build_personas(cfg)
    categories = usable_categories(library)
    dataset: list[Trajectory] = []
    dropped = 0
    for e in range(cfg.run.bc_episodes):
        category = categories[int(rng.integers(len(categories)))]
        skills = sample_composition(library, category, cfg.environment.target_skill_count, rng)
        task = SyntheticTask(
            modulus_pool=cfg.environment.modulus_pool,
            target_skill_count=cfg.environment.target_skill_count,
            rng_seed=mix_seed(cfg.run.master_seed, 101, e),
        )
        try:
            traj = scripted_expert(
                task,
                skills,
                reward_cfg=cfg.reward,
                max_steps=cfg.environment.horizon,
                episode_id=f"expert-{e:04d}",
                category=category,
            )
        except ExpertFailure:
            dropped += 1
            continue
        verdict = run_committee(traj.terminal.problem, personas, rng)
        if not verdict.valid:
            dropped += 1
            continue
        probe_result = probe(
            traj.terminal.problem,
            build_prober_pool(cfg),
            k=cfg.prober.k,
            seed=mix_seed(cfg.run.master_seed, 103, e),
        )
        dataset.append(attach_rewards(traj, verdict, probe_result, cfg.reward))
    if not dataset:
        raise LibraryEmpty("the expert produced no valid demonstrations")
    return dataset


def train_bc(
    cfg: RunConfig, library: SkillLibrary
) -> tuple[TabularSoftmaxPolicy, list[dict]]:
    """Behavioral cloning on expert demonstrations; returns the reference policy."""
    rng = np.random.default_rng(mix_seed(cfg.run.master_seed, 11))
    dataset = generate_expert_dataset(cfg, library, rng)
    policy = TabularSoftmaxPolicy.uniform()
    adam = AdamState.like(policy.theta)
    rows: list[dict] = []
    for step in range(cfg.run.bc_steps):
        eval_ = evaluate_trajectories(policy, policy, policy, dataset)
        loss = mgpo_mod.sft_loss(dataset, eval_)
        coeffs = mgpo_mod.sft_token_coeffs(dataset, eval_)
        step_coeffs = step_coeffs_from_tokens(eval_, coeffs)
        grad = accumulate_policy_gradient(
            policy, eval_.contexts.tolist(), eval_.moves.tolist(), step_coeffs.tolist()
        )
        policy.theta = adam_step(policy.theta, grad, adam, lr=cfg.run.bc_lr)
        rows.append({"step": step, "sft_loss": float(loss), "episodes": len(dataset)})
    return policy, rows


# ---------------------------------------------------------------------------
# stage 3: policy optimization
# ---------------------------------------------------------------------------


@dataclass
class PipelineState:
    policy: TabularSoftmaxPolicy
    ref: TabularSoftmaxPolicy
    proficiency: curriculum_mod.ProficiencyState
    prober_pool: ProberPool
    adam: AdamState
    probe_buffer: list[float] = field(default_factory=list)
    prober_switches: int = 0
    episode_count: int = 0


def init_state(cfg: RunConfig, library: SkillLibrary, ref: TabularSoftmaxPolicy) -> PipelineState:
    categories = usable_categories(library)
    return PipelineState(
        policy=ref.copy(),
        ref=ref.copy(),
        proficiency=curriculum_mod.initial_state(
            categories,
            m0=cfg.curriculum.m0,
            alpha=cfg.curriculum.alpha,
            epsilon=cfg.curriculum.epsilon,
        ),
        prober_pool=build_prober_pool(cfg),
        adam=AdamState.like(ref.theta),
    )


def _rollout_one(args) -> Trajectory:
    env, policy, seed, episode_id, category, horizon = args
    rng = np.random.default_rng(seed)
    return rollout_episode(env, policy, rng, episode_id, category, max_steps=horizon)


def stage3_iteration(
    state: PipelineState,
    cfg: RunConfig,
    library: SkillLibrary,
    iteration: int,
    trajectory_writer: TrajectoryWriter | None = None,
) -> tuple[PipelineState, dict]:
    """One optimization iteration: sample, roll out, judge, probe, reward, update."""
    master = cfg.run.master_seed
    curriculum_rng = np.random.default_rng(mix_seed(master, 21, iteration))
    skills_rng = np.random.default_rng(mix_seed(master, 22, iteration))
    committee_rng = np.random.default_rng(mix_seed(master, 23, iteration))

    old_policy = state.policy.copy()
    plans = []
    group_index: list[int] = []
    categories: list[str] = []
    for g in range(cfg.run.groups_per_iteration):
        category = curriculum_mod.sample_category(state.proficiency, curriculum_rng)
        skills = sample_composition(
            library, category, cfg.environment.target_skill_count, skills_rng
        )
        task = SyntheticTask(
            modulus_pool=cfg.environment.modulus_pool,
            target_skill_count=cfg.environment.target_skill_count,
            rng_seed=mix_seed(master, 31, iteration, g),
        )
        for e in range(cfg.run.group_size):
            env = SynthesisEnv(
                task, skills, reward_cfg=cfg.reward, max_steps=cfg.environment.horizon
            )
            episode_id = f"it{iteration:04d}-g{g}-e{e}"
            seed = mix_seed(master, 32, iteration, g, e)
            plans.append((env, old_policy, seed, episode_id, category, cfg.environment.horizon))
            group_index.append(g)
            categories.append(category)

    if cfg.run.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.run.workers) as pool:
            rollouts = list(pool.map(_rollout_one, plans))
    else:
        rollouts = [_rollout_one(p) for p in plans]

    # every episode is judged before any optimization step
    personas = build_personas(cfg)
    attached: list[Trajectory] = []
    probe_rates: list[float] = []
    for traj in rollouts:
        state.episode_count += 1
        if traj.terminal is None:
            attached.append(traj)
            continue
        verdict = run_committee(traj.terminal.problem, personas, committee_rng)
        probe_result = None
        if verdict.valid:
            probe_result = probe(
                traj.terminal.problem,
                state.prober_pool,
                k=cfg.prober.k,
                seed=mix_seed(master, 33, state.episode_count),
            )
            probe_rates.append(probe_result.pass_rate)
        attached.append(attach_rewards(traj, verdict, probe_result, cfg.reward))

    metrics = _optimize(state, cfg, attached, old_policy, np.asarray(group_index))

    rates = curriculum_mod.success_rates_from_batch(attached)
    state.proficiency = curriculum_mod.update_proficiency(state.proficiency, rates)

    state.probe_buffer.extend(probe_rates)
    while len(state.probe_buffer) >= cfg.prober.batch_size:
        batch = state.probe_buffer[: cfg.prober.batch_size]
        state.probe_buffer = state.probe_buffer[cfg.prober.batch_size :]
        before = state.prober_pool.active_index
        state.prober_pool = update_mastery(state.prober_pool, float(np.mean(batch)))
        if state.prober_pool.active_index != before:
            state.prober_switches += 1

    if trajectory_writer is not None:
        for traj in attached:
            trajectory_writer.append(traj)

    n_valid = sum(
        1
        for t in attached
        if t.terminal is not None and t.terminal.verdict is not None and t.terminal.verdict.valid
    )
    terminal_rewards = [
        t.terminal.terminal_reward if t.terminal is not None else 0.0 for t in attached
    ]
    row = {
        "iteration": iteration,
        "objective": cfg.run.objective,
        "proposing_accuracy": n_valid / len(attached),
        "mean_terminal_reward": float(np.mean(terminal_rewards)),
        "episodes": len(attached),
        "submitted": sum(1 for t in attached if t.terminal is not None),
        "proficiency": {c: round(m, 12) for c, m in state.proficiency.proficiency},
        "prober": {
            "active_index": state.prober_pool.active_index,
            "mastery": round(state.prober_pool.mastery, 12),
            "switches": state.prober_switches,
        },
        "categories": sorted(set(categories)),
    }
    row.update(metrics)
    return state, row


def _optimize(
    state: PipelineState,
    cfg: RunConfig,
    attached: Sequence[Trajectory],
    old_policy: TabularSoftmaxPolicy,
    group_index: np.ndarray,
) -> dict:
    """Inner optimization epochs on one iteration's batch."""
    objective = cfg.run.objective
    mgpo_cfg = cfg.mgpo_config()
    loss = 0.0
    mean_abs_weight = 0.0
    attenuation_hist = [0] * 5
    group_weight_sums: dict[int, float] = {}
    for _ in range(cfg.mgpo.inner_steps):
        eval_ = evaluate_trajectories(state.policy, state.ref, old_policy, attached)
        batch = mgpo_mod.build_batch(attached, eval_, group_index)
        if objective == OBJECTIVE_GRPO:
            loss = mgpo_mod.grpo_loss(batch, cfg.mgpo.clip_epsilon, cfg.mgpo.kl_beta)
            coeffs = mgpo_mod.grpo_token_coeffs(batch, cfg.mgpo.clip_epsilon, cfg.mgpo.kl_beta)
            records = None
        else:
            loss, token_weights = mgpo_mod.mgpo_loss(batch, mgpo_cfg)
            coeffs = -token_weights
            _, _, fused = mgpo_mod.batch_advantages(batch, mgpo_cfg)
            records = mgpo_mod.mgpo_weights(fused, eval_, mgpo_cfg)
        step_coeffs = step_coeffs_from_tokens(eval_, coeffs)
        grad = accumulate_policy_gradient(
            state.policy,
            eval_.contexts.tolist(),
            eval_.moves.tolist(),
            step_coeffs.tolist(),
        )
        state.policy.theta = adam_step(state.policy.theta, grad, state.adam, lr=cfg.mgpo.lr)
        if records is not None:
            mean_abs_weight = float(np.mean([abs(r.gated_weight) for r in records]))
            attenuation_hist = [0] * 5
            for r in records:
                if r.weight != 0.0:
                    frac = min(abs(r.gated_weight) / abs(r.weight), 1.0)
                    attenuation_hist[min(int(frac * 5), 4)] += 1
            group_weight_sums = {}
            for r in records:
                group_weight_sums[r.stage_id] = group_weight_sums.get(r.stage_id, 0.0) + r.weight
    out = {
        "loss": float(loss),
        "mean_abs_gated_weight": mean_abs_weight,
        "gate_attenuation_hist": attenuation_hist,
        "stage_weight_sums": {str(k): round(v, 15) for k, v in sorted(group_weight_sums.items())},
    }
    return out


def run_training(
    cfg: RunConfig,
    library: SkillLibrary | None = None,
    ref: TabularSoftmaxPolicy | None = None,
    write_outputs: bool = True,
) -> list[dict]:
    """Stage-3 loop end to end; returns the per-iteration metrics rows."""
    library = library if library is not None else build_library(cfg)
    bc_rows: list[dict] = []
    if ref is None:
        ref, bc_rows = train_bc(cfg, library)
    state = init_state(cfg, library, ref)

    out_dir = Path(cfg.run.output_dir)
    trajectory_writer = None
    metrics_writer = None
    if write_outputs:
        out_dir.mkdir(parents=True, exist_ok=True)
        ref.save(out_dir / "ref_policy.npz")
        trajectory_writer = TrajectoryWriter(out_dir / "trajectories.jsonl")
        metrics_writer = JsonlWriter(out_dir / "metrics.jsonl")

    rows: list[dict] = []
    try:
        for iteration in range(cfg.run.iterations):
            state, row = stage3_iteration(state, cfg, library, iteration, trajectory_writer)
            rows.append(row)
            if metrics_writer is not None:
                metrics_writer.write(row)
    finally:
        if trajectory_writer is not None:
            trajectory_writer.close()
        if metrics_writer is not None:
            metrics_writer.close()
    if write_outputs:
        state.policy.save(out_dir / "policy.npz")
        _write_report(out_dir / "report.json", cfg, bc_rows, rows)
    return rows


def _write_report(path: Path, cfg: RunConfig, bc_rows: list[dict], rows: list[dict]) -> None:
    import json

    report = {
        "objective": cfg.run.objective,
        "iterations": len(rows),
        "mean_proposing_accuracy": (
            float(np.mean([r["proposing_accuracy"] for r in rows])) if rows else None
        ),
        "final_proposing_accuracy": rows[-1]["proposing_accuracy"] if rows else None,
        "bc_steps": len(bc_rows),
        "series": {
            "proposing_accuracy": [r["proposing_accuracy"] for r in rows],
            "mean_terminal_reward": [r["mean_terminal_reward"] for r in rows],
            "loss": [r["loss"] for r in rows],
        },
    }
    path.write_text(
        json.dumps(report, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


# ---------------------------------------------------------------------------
# ablation + comparison
# ---------------------------------------------------------------------------


def ablation_grid(cfg: RunConfig) -> list[dict]:
    """One row per configuration: the gate variants, the tau sweep, the omega sweep."""
    rows: list[dict] = []
    base = cfg.mgpo
    for gate_mode in cfg.ablation.gate_modes:
        rows.append({"gate_mode": gate_mode, "tau_pos": base.tau_pos, "tau_neg": base.tau_neg, "omega": base.omega})
    for tau_pos, tau_neg in cfg.ablation.tau_pairs:
        rows.append({"gate_mode": base.gate_mode, "tau_pos": tau_pos, "tau_neg": tau_neg, "omega": base.omega})
    for omega in cfg.ablation.omegas:
        rows.append({"gate_mode": base.gate_mode, "tau_pos": base.tau_pos, "tau_neg": base.tau_neg, "omega": omega})
    return rows


def run_ablation(cfg: RunConfig, library: SkillLibrary | None = None) -> list[dict]:
    """Short training runs over the ablation grid, sharing one BC reference."""
    library = library if library is not None else build_library(cfg)
    ref, _ = train_bc(cfg, library)
    results: list[dict] = []
    for cell in ablation_grid(cfg):
        gate_mode = cell["gate_mode"]
        tau_pos, tau_neg = cell["tau_pos"], cell["tau_neg"]
        if gate_mode == "asymmetric" and not tau_neg > tau_pos:
            tau_neg = tau_pos * 1.05
        mgpo_settings = dataclasses.replace(
            cfg.mgpo, gate_mode=gate_mode, tau_pos=tau_pos, tau_neg=tau_neg, omega=cell["omega"]
        )
        run_settings = dataclasses.replace(
            cfg.run, iterations=cfg.ablation.iterations, objective=OBJECTIVE_MGPO
        )
        sub = dataclasses.replace(cfg, mgpo=mgpo_settings, run=run_settings)
        rows = run_training(sub, library=library, ref=ref.copy(), write_outputs=False)
        accuracy = float(np.mean([r["proposing_accuracy"] for r in rows])) if rows else None
        results.append({**cell, "mean_proposing_accuracy": accuracy})
    return results


def benchmark_config(iterations: int = 50) -> RunConfig:
    """The synthetic head-to-head benchmark configuration.

    A high-conflict library (four mutually clashing core skills out of eight
    per category), five-skill compositions, a lightly trained reference
    policy, and a conservative learning rate: the regime where groups often
    fail outright and step-level credit has to carry the early learning.
    """
    return config_from_dict(
        {
            "environment": {"target_skill_count": 5},
            "library": {"synthetic_per_category": 8, "synthetic_core_size": 4},
            "run": {
                "iterations": iterations,
                "bc_steps": 4,
                "bc_lr": 0.05,
                "output_dir": "runs/benchmark",
            },
            "mgpo": {"lr": 0.1},
        }
    )


def compare_objectives(
    cfg: RunConfig,
    seeds: Sequence[int],
    objectives: Sequence[str] = OBJECTIVES,
    library: SkillLibrary | None = None,
) -> dict[str, float]:
    """Mean proposing accuracy per objective over seeded runs.

    Each seed trains one BC reference that every objective starts from, so
    the comparison isolates the optimization rule.
    """
    library = library if library is not None else build_library(cfg)
    totals = {obj: [] for obj in objectives}
    for seed in seeds:
        seeded = dataclasses.replace(
            cfg, run=dataclasses.replace(cfg.run, master_seed=seed)
        )
        ref, _ = train_bc(seeded, library)
        for objective in objectives:
            sub = dataclasses.replace(
                seeded, run=dataclasses.replace(seeded.run, objective=objective)
            )
            rows = run_training(sub, library=library, ref=ref.copy(), write_outputs=False)
            totals[objective].append(float(np.mean([r["proposing_accuracy"] for r in rows])))
    return {obj: float(np.mean(vals)) for obj, vals in totals.items()}


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------


def report_from_metrics(path: str | Path) -> dict:
    rows = list(read_jsonl(path))
    series = {
        "proposing_accuracy": [r["proposing_accuracy"] for r in rows],
        "mean_terminal_reward": [r["mean_terminal_reward"] for r in rows],
        "loss": [r.get("loss") for r in rows],
        "prober_switches": [r["prober"]["switches"] for r in rows],
    }
    return {
        "iterations": len(rows),
        "mean_proposing_accuracy": (
            float(np.mean(series["proposing_accuracy"])) if rows else None
        ),
        "series": series,
        "rows": rows,
    }


def render_report_table(report: dict) -> str:
    lines = [
        f"{'iter':>5}  {'accuracy':>9}  {'reward':>8}  {'loss':>10}  {'switches':>8}",
    ]
    for row in report["rows"]:
        lines.append(
            f"{row['iteration']:>5}  {row['proposing_accuracy']:>9.3f}  "
            f"{row['mean_terminal_reward']:>8.3f}  {row.get('loss', float('nan')):>10.4f}  "
            f"{row['prober']['switches']:>8}"
        )
    if report["mean_proposing_accuracy"] is not None:
        lines.append(f"mean proposing accuracy: {report['mean_proposing_accuracy']:.4f}")
    return "\n".join(lines)
