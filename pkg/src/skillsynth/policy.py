"""Toy tabular softmax proposer policy and its rollout driver.

The policy is deliberately small: it observes a coarse context (stage plus
the last tool outcome) and picks one of five abstract moves.  The driver
materializes moves into concrete environment actions, so the same policy
class serves rollouts, behavioral cloning on expert demonstrations, and the
policy-optimization losses.  Per-token log-probabilities use the
first-token-carries-the-action factorization: the opening token of an
action's serialization holds the whole move log-probability and the
remaining tokens are deterministic continuations with log-probability zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .environment import (
    Action,
    CognitiveStage,
    Observation,
    SynthesisEnv,
    TerminalInfo,
    Trajectory,
    TrajectoryStep,
    last_check_culprit,
    last_check_passed,
)
from .mgpo import PolicyEval

MOVES = ("reflect", "check", "prune", "respond", "submit")
CONTEXTS = ("draft", "check_failed", "check_passed", "refine", "finalize")

_MOVE_INDEX = {m: i for i, m in enumerate(MOVES)}
_CONTEXT_INDEX = {c: i for i, c in enumerate(CONTEXTS)}

_ACTION_KIND_TO_MOVE = {
    "reflect": "reflect",
    "tool_exec": "check",
    "skill_edit": "prune",
    "respond": "respond",
    "submit": "submit",
}


def featurize(obs: Observation) -> int:
    """Coarse context id: the stage, split by the last tool outcome when checking."""
    if obs.stage is CognitiveStage.CHECK:
        name = "check_passed" if last_check_passed(obs) else "check_failed"
    else:
        name = obs.stage.value
    return _CONTEXT_INDEX[name]


def action_move(action: Action) -> int:
    return _MOVE_INDEX[_ACTION_KIND_TO_MOVE[action.kind]]


@dataclass
class TabularSoftmaxPolicy:
    theta: np.ndarray  # [n_contexts, n_moves] logits

    @classmethod
    def uniform(cls) -> "TabularSoftmaxPolicy":
        return cls(theta=np.zeros((len(CONTEXTS), len(MOVES))))

    def copy(self) -> "TabularSoftmaxPolicy":
        return TabularSoftmaxPolicy(theta=self.theta.copy())

    def log_probs(self, ctx: int) -> np.ndarray:
        row = self.theta[ctx]
        shifted = row - row.max()
        return shifted - np.log(np.exp(shifted).sum())

    def probs(self, ctx: int) -> np.ndarray:
        return np.exp(self.log_probs(ctx))

    def log_prob(self, ctx: int, move: int) -> float:
        return float(self.log_probs(ctx)[move])

    def sample(self, ctx: int, rng: np.random.Generator) -> int:
        return int(rng.choice(len(MOVES), p=self.probs(ctx)))

    def save(self, path: str | Path) -> None:
        np.savez(path, theta=self.theta)

    @classmethod
    def load(cls, path: str | Path) -> "TabularSoftmaxPolicy":
        with np.load(path) as data:
            return cls(theta=np.array(data["theta"]))

    def grad_log_prob(self, ctx: int, move: int) -> np.ndarray:
        """d log pi(move | ctx) / d theta, same shape as theta."""
        grad = np.zeros_like(self.theta)
        grad[ctx] = -self.probs(ctx)
        grad[ctx, move] += 1.0
        return grad


def accumulate_policy_gradient(
    policy: TabularSoftmaxPolicy,
    contexts: Sequence[int],
    moves: Sequence[int],
    step_coeffs: Sequence[float],
) -> np.ndarray:
    """Sum of ``coeff * d log pi(move|ctx) / d theta`` across steps."""
    grad = np.zeros_like(policy.theta)
    for ctx, move, coeff in zip(contexts, moves, step_coeffs):
        if coeff == 0.0:
            continue
        p = policy.probs(ctx)
        grad[ctx] -= coeff * p
        grad[ctx, move] += coeff
    return grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, theta: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(theta), v=np.zeros_like(theta))


def adam_step(
    theta: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.95,
    eps: float = 1e-8,
) -> np.ndarray:
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------


def materialize(move: int, obs: Observation, env: SynthesisEnv, rng: np.random.Generator) -> Action:
    """Turn an abstract move into a concrete action for the current observation.

    Pruning removes the skill flagged by the last failed check when one
    exists, otherwise a uniformly drawn active skill; submitting renders the
    currently active constraint draft.
    """
    name = MOVES[move]
    if name == "reflect":
        # a fixed phrase: the toy policy's reflections never earn the coherence
        # reward, which keeps stage subgroups dense in checker rewards only
        return Action.reflect("reviewing the draft before the next move")
    if name == "check":
        return Action.tool_exec(env.check_program(obs))
    if name == "prune":
        flagged = last_check_culprit(obs)
        if flagged is None or flagged not in obs.active_skills:
            flagged = sorted(obs.active_skills)[int(rng.integers(len(obs.active_skills)))]
        return Action.skill_edit(flagged)
    if name == "respond":
        return Action.respond("noting the current draft")
    return Action.submit(env.render(obs, env.active_constraints(obs)))


def rollout_episode(
    env: SynthesisEnv,
    policy: TabularSoftmaxPolicy,
    rng: np.random.Generator,
    episode_id: str,
    category: str,
    max_steps: int | None = None,
) -> Trajectory:
    """Sample one episode; truncation past the horizon leaves no terminal."""
    horizon = max_steps if max_steps is not None else env.max_steps
    obs = env.reset()
    steps: list[TrajectoryStep] = []
    terminal: TerminalInfo | None = None
    for _ in range(horizon):
        ctx = featurize(obs)
        move = policy.sample(ctx, rng)
        if MOVES[move] == "prune" and len(obs.active_skills) <= 1:
            move = _MOVE_INDEX["respond"]  # pruning the last skill is never legal
        action = materialize(move, obs, env, rng)
        next_obs, reward, done = env.step(obs, action)
        steps.append(TrajectoryStep(observation=obs, action=action, process_reward=reward))
        obs = next_obs
        if done:
            terminal = TerminalInfo(problem=action.problem)
            break
    return Trajectory(
        steps=tuple(steps), terminal=terminal, episode_id=episode_id, category=category
    )


def evaluate_trajectories(
    policy_theta: TabularSoftmaxPolicy,
    policy_ref: TabularSoftmaxPolicy,
    policy_old: TabularSoftmaxPolicy,
    trajectories: Sequence[Trajectory],
) -> PolicyEval:
    """Score every trajectory token under the current, reference, and rollout policies."""
    token_ptr = [0]
    episode_index: list[int] = []
    stage_ids: list[int] = []
    contexts: list[int] = []
    moves: list[int] = []
    lp_theta: list[float] = []
    lp_ref: list[float] = []
    lp_old: list[float] = []
    for ei, traj in enumerate(trajectories):
        for step in traj.steps:
            ctx = featurize(step.observation)
            move = action_move(step.action)
            n_tokens = len(step.action.tokens)
            lp_theta.append(policy_theta.log_prob(ctx, move))
            lp_ref.append(policy_ref.log_prob(ctx, move))
            lp_old.append(policy_old.log_prob(ctx, move))
            zeros = [0.0] * (n_tokens - 1)
            lp_theta.extend(zeros)
            lp_ref.extend(zeros)
            lp_old.extend(zeros)
            token_ptr.append(token_ptr[-1] + n_tokens)
            episode_index.append(ei)
            stage_ids.append(_stage_group(step.observation))
            contexts.append(ctx)
            moves.append(move)
    return PolicyEval(
        token_ptr=np.asarray(token_ptr, dtype=np.int64),
        logp_theta=np.asarray(lp_theta, dtype=np.float64),
        logp_ref=np.asarray(lp_ref, dtype=np.float64),
        logp_old=np.asarray(lp_old, dtype=np.float64),
        episode_index=np.asarray(episode_index, dtype=np.int64),
        stage_ids=np.asarray(stage_ids, dtype=np.int64),
        n_episodes=len(trajectories),
        contexts=np.asarray(contexts, dtype=np.int64),
        moves=np.asarray(moves, dtype=np.int64),
    )


_STAGE_GROUPS = tuple(CognitiveStage)


def _stage_group(obs: Observation) -> int:
    return _STAGE_GROUPS.index(obs.stage)


def stage_group_names() -> tuple[str, ...]:
    return tuple(stage.value for stage in _STAGE_GROUPS)


def step_coeffs_from_tokens(eval_: PolicyEval, token_coeffs: np.ndarray) -> np.ndarray:
    """Collapse per-token loss coefficients onto the action-bearing first tokens."""
    return token_coeffs[eval_.token_ptr[:-1]]
