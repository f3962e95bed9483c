"""The synthesis loop: observations, actions, stages, and a synthetic task family.

An episode composes the sampled skills into a system of modular-arithmetic
congruences.  Each skill contributes one or more ``x = r (mod m)`` templates
(read from an explicit line in its method text when present, otherwise
derived deterministically from the skill name and task seed, with higher
difficulty pulling larger moduli and more congruences).  A composition is a
good problem exactly when its congruence system is solvable, which the rule
verifier decides exactly, so every quality signal downstream is computable.

The agent is not forced through a state machine, but this synthetic
instantiation uses a deterministic stage policy so tests can assert
transitions: drafting until the first tool run, a tool run always lands in
the checking stage, a failed check falls back to refining, a passed check
opens finalizing, a skill edit re-opens drafting, and submission is legal
from anywhere.
"""

from __future__ import annotations

import enum
import hashlib
import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from . import kernels
from .rewards import RewardConfig
from .skills import Skill, SkillLibrary

DEFAULT_MODULUS_POOL = (3, 4, 5, 7, 8, 9, 11, 13)
DEFAULT_MAX_STEPS = 32
MAX_SYSTEM_PERIOD = 2**31  # keeps congruence arithmetic inside int64

#: POMDP discount; present in the tuple, unused by the finite-horizon loop.
DISCOUNT_GAMMA = 1.0

_TEMPLATE_RE = re.compile(r"x\s*(?:=|==|≡)\s*(\d+)\s*\(\s*mod\s+(\d+)\s*\)")


class SynthesisError(Exception):
    pass


class EmptySkillSet(SynthesisError):
    pass


class IllegalAction(SynthesisError):
    pass


class EmptyDraft(SynthesisError):
    pass


class ExpertFailure(SynthesisError):
    pass


class CognitiveStage(enum.Enum):
    DRAFT = "draft"
    CHECK = "check"
    REFINE = "refine"
    FINALIZE = "finalize"

    @classmethod
    def from_str(cls, value: str) -> "CognitiveStage":
        return cls(value)


@dataclass(frozen=True)
class HistoryEntry:
    kind: str  # "action" or "tool"
    text: str


@dataclass(frozen=True)
class Observation:
    active_skills: frozenset[str]
    history: tuple[HistoryEntry, ...]
    stage: CognitiveStage


@dataclass(frozen=True)
class Congruence:
    residue: int
    modulus: int

    def __post_init__(self):
        if self.modulus < 2:
            raise SynthesisError(f"modulus must be >= 2, got {self.modulus}")
        if not 0 <= self.residue < self.modulus:
            raise SynthesisError(f"residue {self.residue} out of range for modulus {self.modulus}")

    def render(self) -> str:
        return f"x = {self.residue} (mod {self.modulus})"


@dataclass(frozen=True)
class ConstraintSystem:
    congruences: tuple[Congruence, ...]
    window: int

    def residues(self) -> list[int]:
        return [c.residue for c in self.congruences]

    def moduli(self) -> list[int]:
        return [c.modulus for c in self.congruences]

    def solve(self) -> tuple[bool, int, int]:
        return kernels.solve_congruences(self.residues(), self.moduli())

    @property
    def solvable(self) -> bool:
        return self.solve()[0]

    def least_solution(self) -> int | None:
        solvable, least, _ = self.solve()
        return least if solvable else None


@dataclass(frozen=True)
class ProblemStatement:
    text: str
    skill_names: tuple[str, ...]
    payload: ConstraintSystem

    def __post_init__(self):
        if not self.skill_names:
            raise SynthesisError("a problem must name at least one contributing skill")


@dataclass(frozen=True)
class Action:
    kind: str  # reflect | tool_exec | skill_edit | respond | submit
    text: str = ""
    remove: str | None = None
    problem: ProblemStatement | None = None

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self.serialize().split())

    def serialize(self) -> str:
        if self.kind == "skill_edit":
            return f"skill_edit remove {self.remove}"
        if self.kind == "submit":
            return f"submit {self.problem.text if self.problem else ''}".strip()
        return f"{self.kind} {self.text}".strip()

    @staticmethod
    def reflect(text: str) -> "Action":
        return Action(kind="reflect", text=text)

    @staticmethod
    def tool_exec(program: str) -> "Action":
        return Action(kind="tool_exec", text=program)

    @staticmethod
    def skill_edit(remove: str) -> "Action":
        return Action(kind="skill_edit", remove=remove)

    @staticmethod
    def respond(text: str) -> "Action":
        return Action(kind="respond", text=text)

    @staticmethod
    def submit(problem: ProblemStatement) -> "Action":
        return Action(kind="submit", problem=problem)


@dataclass(frozen=True)
class TrajectoryStep:
    observation: Observation
    action: Action
    process_reward: float


@dataclass(frozen=True)
class TerminalInfo:
    problem: ProblemStatement
    verdict: object | None = None  # VerifierVerdict once judged
    probe: object | None = None  # ProbeResult once probed
    terminal_reward: float = 0.0


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[TrajectoryStep, ...]
    terminal: TerminalInfo | None
    episode_id: str
    category: str

    def __post_init__(self):
        for i, step in enumerate(self.steps):
            if step.process_reward < 0:
                raise SynthesisError("process rewards must be non-negative")
            if step.action.kind == "submit" and i != len(self.steps) - 1:
                raise SynthesisError("submit must be the final step of a trajectory")

    @property
    def submitted(self) -> bool:
        return self.terminal is not None


@dataclass(frozen=True)
class SyntheticTask:
    modulus_pool: tuple[int, ...] = DEFAULT_MODULUS_POOL
    target_skill_count: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        if self.target_skill_count < 1:
            raise SynthesisError("target_skill_count must be >= 1")
        if not self.modulus_pool or any(m < 2 for m in self.modulus_pool):
            raise SynthesisError("modulus pool entries must be >= 2")
        period = math.lcm(*self.modulus_pool)
        if period > MAX_SYSTEM_PERIOD:
            raise SynthesisError(
                f"modulus pool period {period} exceeds {MAX_SYSTEM_PERIOD}; use smaller moduli"
            )


DIFFICULTY_SPAN = (1.0, 10.0)


def _stable_hash(*parts: object) -> int:
    digest = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(digest.digest(), "big")


def skill_constraints(skill: Skill, task: SyntheticTask) -> tuple[Congruence, ...]:
    """Instantiate a skill's congruence templates for one task.

    An explicit ``x = r (mod m)`` line in the method text wins; otherwise the
    templates are derived from a stable hash of the skill name and task seed.
    Difficulty raises both the congruence count (1..3) and the modulus tier.
    """
    explicit = _TEMPLATE_RE.findall(skill.method)
    if explicit:
        out = []
        for r, m in explicit:
            modulus = int(m)
            out.append(Congruence(residue=int(r) % modulus, modulus=modulus))
        return tuple(out)

    pool = sorted(task.modulus_pool)
    tier = (skill.difficulty_effect - DIFFICULTY_SPAN[0]) / (DIFFICULTY_SPAN[1] - DIFFICULTY_SPAN[0])
    count = 1 + int(tier * 2.999)
    base = int(tier * (len(pool) - 1))
    out = []
    for j in range(count):
        h = _stable_hash(skill.name, task.rng_seed, j)
        modulus = pool[base + h % (len(pool) - base)]
        out.append(Congruence(residue=_stable_hash(skill.name, task.rng_seed, j, "r") % modulus, modulus=modulus))
    return tuple(out)


class SynthesisEnv:
    """One episode's environment: owns the task, the sampled skills, and nothing else.

    ``step`` is a pure transition on observations; all mutation lives in the
    returned values, so instances can run in parallel across episodes.
    """

    def __init__(
        self,
        task: SyntheticTask,
        sampled_skills: Sequence[Skill],
        reward_cfg: RewardConfig | None = None,
        max_steps: int = DEFAULT_MAX_STEPS,
    ):
        if not sampled_skills:
            raise EmptySkillSet("an episode needs at least one sampled skill")
        self.task = task
        self.reward_cfg = reward_cfg or RewardConfig()
        self.max_steps = max_steps
        self.skills: dict[str, Skill] = {s.name: s for s in sampled_skills}
        self._order = tuple(s.name for s in sampled_skills)
        self.constraints: dict[str, tuple[Congruence, ...]] = {
            s.name: skill_constraints(s, task) for s in sampled_skills
        }

    # -- observation plumbing -------------------------------------------------

    def reset(self) -> Observation:
        return Observation(
            active_skills=frozenset(self._order),
            history=(),
            stage=CognitiveStage.DRAFT,
        )

    def active_constraints(self, obs: Observation) -> tuple[Congruence, ...]:
        draft: list[Congruence] = []
        for name in self._order:
            if name in obs.active_skills:
                draft.extend(self.constraints[name])
        return tuple(draft)

    def owner_of(self, congruence: Congruence) -> str | None:
        for name in self._order:
            if congruence in self.constraints[name]:
                return name
        return None

    def check_program(self, obs: Observation) -> str:
        clauses = "; ".join(c.render() for c in self.active_constraints(obs))
        return f"check {clauses}"

    # -- transition ------------------------------------------------------------

    def step(self, obs: Observation, action: Action) -> tuple[Observation, float, bool]:
        """Apply one action: returns (next observation, process reward, done)."""
        entries = [HistoryEntry(kind="action", text=action.serialize())]
        reward = 0.0
        active = obs.active_skills
        tool_ran = False
        tool_passed = False

        # repeating an identical action yields no new information, hence no reward
        novel = all(
            e.text != entries[0].text for e in obs.history if e.kind == "action"
        )

        if action.kind == "skill_edit":
            if action.remove not in active:
                raise IllegalAction(f"cannot prune inactive skill {action.remove!r}")
            active = active - {action.remove}
        elif action.kind == "tool_exec":
            output, tool_passed = self._run_tool(action.text)
            entries.append(HistoryEntry(kind="tool", text=output))
            tool_ran = True
            if tool_passed and novel:
                reward = self.reward_cfg.r_exec
        elif action.kind == "reflect":
            if novel and self._coherent(obs, action.text):
                reward = self.reward_cfg.r_think
        elif action.kind == "submit":
            if action.problem is None:
                raise IllegalAction("submit carries no problem")
        elif action.kind != "respond":
            raise IllegalAction(f"unknown action kind {action.kind!r}")

        stage = self._next_stage(obs, action, tool_ran, tool_passed)
        next_obs = Observation(
            active_skills=active,
            history=obs.history + tuple(entries),
            stage=stage,
        )
        return next_obs, reward, action.kind == "submit"

    def _next_stage(
        self, obs: Observation, action: Action, tool_ran: bool, tool_passed: bool
    ) -> CognitiveStage:
        if tool_ran:
            return CognitiveStage.CHECK
        if obs.stage is CognitiveStage.CHECK:
            if not last_check_passed(obs):
                return CognitiveStage.REFINE
            # a passing check opens finalizing, unless the agent edits the
            # active set, which stales the check and re-opens drafting
            return (
                CognitiveStage.DRAFT
                if action.kind == "skill_edit"
                else CognitiveStage.FINALIZE
            )
        if action.kind == "skill_edit":
            return CognitiveStage.DRAFT
        return obs.stage

    def _coherent(self, obs: Observation, text: str) -> bool:
        # a reflection is coherent when it names an active skill or cites a tool run
        if any(name in text for name in obs.active_skills):
            return True
        n_tools = sum(1 for e in obs.history if e.kind == "tool")
        return bool(re.search(r"tool\s*#\d+", text)) and n_tools > 0

    def _run_tool(self, program: str) -> tuple[str, bool]:
        program = program.strip()
        if not program.startswith("check"):
            return f"tool: error unknown-program {program.split()[0] if program else ''}".strip(), False
        clauses = program[len("check"):].strip()
        matches = _TEMPLATE_RE.findall(clauses)
        if not matches:
            return "tool: error no-congruences", False
        try:
            congruences = [Congruence(residue=int(r) % int(m), modulus=int(m)) for r, m in matches]
        except SynthesisError as exc:
            return f"tool: error {exc}", False
        residues = [c.residue for c in congruences]
        moduli = [c.modulus for c in congruences]
        conflict = kernels.first_conflict_index(residues, moduli)
        if conflict >= 0:
            culprit = self.owner_of(congruences[conflict])
            who = culprit if culprit is not None else "unknown"
            return f"tool: fail culprit={who} clause={conflict}", False
        _, least, period = kernels.solve_congruences(residues, moduli)
        return f"tool: pass least={least} period={period}", True

    # -- rendering ---------------------------------------------------------------

    def render(self, obs: Observation, draft: Sequence[Congruence]) -> ProblemStatement:
        """Turn a draft congruence list into the submitted problem statement."""
        return synthetic_render(obs, draft)


def last_check_passed(obs: Observation) -> bool:
    for entry in reversed(obs.history):
        if entry.kind == "tool":
            return entry.text.startswith("tool: pass")
    return False


def last_check_culprit(obs: Observation) -> str | None:
    for entry in reversed(obs.history):
        if entry.kind == "tool":
            m = re.search(r"culprit=(\S+)", entry.text)
            return m.group(1) if m else None
    return None


def synthetic_render(obs: Observation, draft: Sequence[Congruence]) -> ProblemStatement:
    """Deterministic problem text for a draft constraint system.

    The search window is one full period of the system, so the rule verifier
    decides solvability by inspecting ``[0, window)``.
    """
    if not draft:
        raise EmptyDraft("cannot render an empty draft")
    window = math.lcm(*[c.modulus for c in draft])
    clauses = "; ".join(c.render() for c in draft)
    text = (
        f"Find a non-negative integer x with x < {window} satisfying all of: {clauses}."
    )
    names = tuple(sorted(obs.active_skills))
    return ProblemStatement(
        text=text,
        skill_names=names,
        payload=ConstraintSystem(congruences=tuple(draft), window=window),
    )


def scripted_expert(
    task: SyntheticTask,
    skills: Sequence[Skill],
    reward_cfg: RewardConfig | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
    episode_id: str = "expert",
    category: str = "",
) -> Trajectory:
    """Demonstration rollout: reflect, check, prune conflicting skills, submit.

    The expert always ends with a solvable submission; when that is impossible
    within the horizon it raises :class:`ExpertFailure` and the episode is
    dropped.
    """
    env = SynthesisEnv(task, skills, reward_cfg=reward_cfg, max_steps=max_steps)
    obs = env.reset()
    steps: list[TrajectoryStep] = []
    if not category:
        category = skills[0].category

    def take(action: Action) -> bool:
        nonlocal obs
        if len(steps) >= max_steps:
            raise ExpertFailure(
                f"no valid problem reached within {max_steps} steps for skills {sorted(env.skills)}"
            )
        next_obs, reward, done = env.step(obs, action)
        steps.append(TrajectoryStep(observation=obs, action=action, process_reward=reward))
        obs = next_obs
        return done

    first = min(obs.active_skills)
    take(Action.reflect(f"considering {first} as the composition anchor"))
    while True:
        take(Action.tool_exec(env.check_program(obs)))
        if last_check_passed(obs):
            break
        culprit = last_check_culprit(obs)
        if culprit is None or culprit not in obs.active_skills or len(obs.active_skills) == 1:
            raise ExpertFailure(f"cannot resolve conflicts for skills {sorted(env.skills)}")
        n_tools = sum(1 for e in obs.history if e.kind == "tool")
        take(Action.reflect(f"conflict traced to {culprit} via tool #{n_tools}"))
        take(Action.skill_edit(culprit))
    take(Action.respond("constraints consistent; finalizing the statement"))
    problem = env.render(obs, env.active_constraints(obs))
    take(Action.submit(problem))
    return Trajectory(
        steps=tuple(steps),
        terminal=TerminalInfo(problem=problem),
        episode_id=episode_id,
        category=category,
    )


# ---------------------------------------------------------------------------
# synthetic skill banks
# ---------------------------------------------------------------------------

_SYNTH_INTENTS = (
    "pin the unknown to a fixed residue class",
    "interleave a coprime residue condition",
    "overlay a shared-factor residue condition",
    "tighten the search window with a composite modulus",
)


def make_synthetic_skill(
    name: str,
    category: str,
    congruence: Congruence,
    difficulty: float,
    quality: float = 1.0,
) -> Skill:
    """One synthetic skill whose method text carries an explicit template."""
    intent = _SYNTH_INTENTS[_stable_hash(name) % len(_SYNTH_INTENTS)]
    method = (
        f"Constrain the unknown with {congruence.render()} and keep the clause "
        f"order stable when composing."
    )
    return Skill(
        name=name,
        category=category,
        intent=intent,
        method=method,
        difficulty_effect=difficulty,
        tool_hint="use the congruence checker before submitting",
        quality_score=quality,
    )


def make_synthetic_library(
    categories: Sequence[str] = ("residue-basics", "coprime-composition", "shared-factor-traps"),
    skills_per_category: int = 6,
    seed: int = 0,
    threshold: float = 0.5,
    core_size: int = 3,
) -> SkillLibrary:
    """A library of congruence-template skills with deliberate conflict structure.

    Per category, ``core_size`` skills (at most 4) pin distinct odd residues
    modulo 8, so every core pair clashes and a composition is solvable only
    after pruning down to a single core member; the remaining skills use
    coprime prime moduli and never conflict.  Raising ``core_size`` relative
    to ``skills_per_category`` sharpens the pruning pressure.
    """
    if not 0 <= core_size <= 4:
        raise SynthesisError("core_size must lie in [0, 4] (odd residues mod 8)")
    primes = (3, 5, 7, 11, 13)
    core = tuple(Congruence(residue=2 * i + 1, modulus=8) for i in range(core_size))
    skills: list[Skill] = []
    for ci, category in enumerate(categories):
        for j in range(skills_per_category):
            name = f"{category}-s{j}"
            h = _stable_hash(seed, category, j)
            if j < core_size:
                cong = core[j]
            else:
                modulus = primes[(j - core_size + ci) % len(primes)]
                cong = Congruence(residue=h % modulus, modulus=modulus)
            difficulty = 1.0 + (h % 90) / 10.0
            skills.append(make_synthetic_skill(name, category, cong, difficulty))
    return SkillLibrary.from_skills(skills, categories=categories, threshold=threshold)
