"""Multi-granularity policy optimization, the SFT loss, and a GRPO baseline.

Credit flows at two granularities: episode-level standardized terminal
rewards and stage-level standardized process rewards, fused linearly.  The
fused advantage and an implicit reward (the scaled log-ratio of the current
policy to its reference) are both centered within stage groups, which makes
every group's weights sum to zero and cancels the intractable partition
function of the closed-form optimal policy.  A sech-squared gate on the
importance ratio attenuates off-policy updates, harder on the negative side.

Weights are coefficients, not differentiated: the token-normalized loss
treats the gated weight as data, so its gradient is the weighted sum of
token score functions.  The finite-difference checks in the test suite
freeze the weights for exactly this reason.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels


class MGPOError(Exception):
    pass


class GroupTooSmall(MGPOError):
    pass


class NonFiniteLogProb(MGPOError):
    pass


class NonPositiveRatio(MGPOError):
    pass


class EmptyBatch(MGPOError):
    pass


class InvalidExpertTrajectory(MGPOError):
    pass


GATE_ASYMMETRIC = "asymmetric"
GATE_SYMMETRIC = "symmetric"
GATE_NONE = "none"
GATE_MODES = (GATE_ASYMMETRIC, GATE_SYMMETRIC, GATE_NONE)


@dataclass(frozen=True)
class MGPOConfig:
    beta: float = 0.05
    omega: float = 0.5
    tau_pos: float = 1.0
    tau_neg: float = 1.05
    group_size: int = 8
    sigma_floor: float = 1e-6
    gate_mode: str = GATE_ASYMMETRIC

    def __post_init__(self):
        if self.beta <= 0 or self.omega < 0 or self.tau_pos <= 0 or self.tau_neg <= 0:
            raise MGPOError("beta, tau_pos, tau_neg must be positive and omega non-negative")
        if self.sigma_floor <= 0:
            raise MGPOError("sigma_floor must be positive")
        if self.gate_mode not in GATE_MODES:
            raise MGPOError(f"gate_mode must be one of {GATE_MODES}")
        if self.gate_mode == GATE_ASYMMETRIC and not self.tau_neg > self.tau_pos:
            raise MGPOError("the asymmetric gate requires tau_neg > tau_pos")

    def gate_taus(self) -> tuple[float, float]:
        if self.gate_mode == GATE_SYMMETRIC:
            return self.tau_pos, self.tau_pos
        return self.tau_pos, self.tau_neg


@dataclass(frozen=True)
class PolicyEval:
    """Per-token log-probabilities under the current, reference, and rollout policies.

    Tokens are stored flat; ``token_ptr`` gives CSR offsets per step, and
    ``episode_index`` / ``stage_ids`` tag each step.  Every trajectory token
    is covered exactly once.
    """

    token_ptr: np.ndarray
    logp_theta: np.ndarray
    logp_ref: np.ndarray
    logp_old: np.ndarray
    episode_index: np.ndarray
    stage_ids: np.ndarray
    n_episodes: int
    contexts: np.ndarray | None = None
    moves: np.ndarray | None = None

    def __post_init__(self):
        n_tokens = int(self.token_ptr[-1]) if len(self.token_ptr) else 0
        for name in ("logp_theta", "logp_ref", "logp_old"):
            arr = getattr(self, name)
            if arr.shape != (n_tokens,):
                raise MGPOError(f"{name} misaligned: {arr.shape} vs {n_tokens} tokens")
            if not np.all(np.isfinite(arr)):
                raise NonFiniteLogProb(f"{name} contains non-finite values")
            if np.any(arr > 0.0):
                raise NonFiniteLogProb(f"{name} contains positive log-probabilities")
        if np.any(np.diff(self.token_ptr) <= 0):
            raise MGPOError("every step must own at least one token")

    @property
    def n_steps(self) -> int:
        return len(self.token_ptr) - 1

    @property
    def n_tokens(self) -> int:
        return int(self.token_ptr[-1])

    def step_sums(self, token_values: np.ndarray) -> np.ndarray:
        """Sum token-level values within each step."""
        cums = np.concatenate(([0.0], np.cumsum(token_values)))
        return cums[self.token_ptr[1:]] - cums[self.token_ptr[:-1]]


@dataclass(frozen=True)
class AdvantageRecord:
    episode_advantage: float
    step_advantage: float
    fused: float
    stage_id: int


@dataclass(frozen=True)
class WeightRecord:
    implicit_reward: float
    centered_advantage: float
    centered_implicit: float
    weight: float
    ratio: float
    gated_weight: float
    stage_id: int


@dataclass(frozen=True)
class MGPOBatch:
    """One optimization batch: scored steps plus episode-level reward structure."""

    eval: PolicyEval
    terminal_rewards: np.ndarray
    process_rewards: np.ndarray
    group_index: np.ndarray  # per episode, which standardization group it belongs to

    def __post_init__(self):
        if self.eval.n_tokens == 0:
            raise EmptyBatch("batch contains no tokens")
        if len(self.terminal_rewards) != self.eval.n_episodes:
            raise MGPOError("terminal rewards misaligned with episodes")
        if len(self.process_rewards) != self.eval.n_steps:
            raise MGPOError("process rewards misaligned with steps")
        if len(self.group_index) != self.eval.n_episodes:
            raise MGPOError("group index misaligned with episodes")


def build_batch(
    trajectories: Sequence,
    eval_: PolicyEval,
    group_index: Sequence[int] | None = None,
) -> MGPOBatch:
    """Assemble a batch from completed trajectories and their policy scores."""
    terminal = np.array(
        [t.terminal.terminal_reward if t.terminal is not None else 0.0 for t in trajectories]
    )
    process = np.array([s.process_reward for t in trajectories for s in t.steps])
    groups = (
        np.zeros(len(trajectories), dtype=np.int64)
        if group_index is None
        else np.asarray(group_index, dtype=np.int64)
    )
    return MGPOBatch(
        eval=eval_, terminal_rewards=terminal, process_rewards=process, group_index=groups
    )


# ---------------------------------------------------------------------------
# advantages
# ---------------------------------------------------------------------------


def trajectory_advantages(
    terminal_rewards: Sequence[float], cfg: MGPOConfig
) -> np.ndarray:
    """Standardize terminal rewards within one episode group (population std)."""
    rewards = np.asarray(terminal_rewards, dtype=np.float64)
    if len(rewards) < 2:
        raise GroupTooSmall(f"advantage group needs >= 2 episodes, got {len(rewards)}")
    gids = np.zeros(len(rewards), dtype=np.int64)
    return kernels.group_standardize(rewards, gids, 1, cfg.sigma_floor)


def stage_advantages(
    process_rewards: Sequence[tuple[int, float]], cfg: MGPOConfig
) -> np.ndarray:
    """Standardize process rewards independently inside each stage subgroup."""
    if not len(process_rewards):
        return np.zeros(0)
    stages = np.asarray([s for s, _ in process_rewards], dtype=np.int64)
    values = np.asarray([v for _, v in process_rewards], dtype=np.float64)
    uniq, gids = np.unique(stages, return_inverse=True)
    return kernels.group_standardize(values, gids.astype(np.int64), len(uniq), cfg.sigma_floor)


def fuse_advantages(
    episode_advantages: Sequence[float],
    step_advantages: Sequence[float],
    episode_index: Sequence[int],
    cfg: MGPOConfig,
) -> np.ndarray:
    """Per-step fused credit: the episode's advantage plus omega times the step's."""
    a_e = np.asarray(episode_advantages, dtype=np.float64)
    a_s = np.asarray(step_advantages, dtype=np.float64)
    idx = np.asarray(episode_index, dtype=np.int64)
    if len(a_s) != len(idx):
        raise MGPOError("step advantages and episode index differ in length")
    return a_e[idx] + cfg.omega * a_s


def batch_advantages(batch: MGPOBatch, cfg: MGPOConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(episode, step, fused) advantages for a whole batch, group by group."""
    a_e = np.empty(batch.eval.n_episodes)
    for g in np.unique(batch.group_index):
        mask = batch.group_index == g
        a_e[mask] = trajectory_advantages(batch.terminal_rewards[mask], cfg)
    pairs = list(zip(batch.eval.stage_ids.tolist(), batch.process_rewards.tolist()))
    a_s = stage_advantages(pairs, cfg)
    fused = fuse_advantages(a_e, a_s, batch.eval.episode_index, cfg)
    return a_e, a_s, fused


# ---------------------------------------------------------------------------
# weights and the gate
# ---------------------------------------------------------------------------


def sech2_gate(weight: float, ratio: float, cfg: MGPOConfig) -> float:
    """Gate one weight by sech^2(tau/2 * (ratio - 1)); the negative side uses tau_neg.

    The gate is 1 exactly at ratio 1 and decays toward 0 as the ratio drifts,
    so gated weights never exceed the raw weight in magnitude.  Disabling the
    gate entirely is an ablation handled at the weight-computation level, not
    here.
    """
    if not ratio > 0.0:
        raise NonPositiveRatio(f"importance ratio must be positive, got {ratio}")
    tau_pos, tau_neg = cfg.gate_taus()
    out = kernels.sech2_gate_many(
        np.array([weight]), np.array([ratio]), tau_pos, tau_neg
    )
    return float(out[0])


def mgpo_weights(
    fused: Sequence[float], eval_: PolicyEval, cfg: MGPOConfig
) -> list[WeightRecord]:
    """Zero-sum step weights: stage-centered fused advantage minus stage-centered
    implicit reward, gated by the importance ratio.

    The implicit reward is ``beta * (log pi_theta - log pi_ref)`` summed over
    the step's tokens; the ratio is ``exp`` of the summed log-ratio against
    the rollout policy.
    """
    fused = np.asarray(fused, dtype=np.float64)
    if len(fused) != eval_.n_steps:
        raise MGPOError("fused advantages misaligned with steps")
    theta_sum = eval_.step_sums(eval_.logp_theta)
    ref_sum = eval_.step_sums(eval_.logp_ref)
    old_sum = eval_.step_sums(eval_.logp_old)
    implicit = cfg.beta * (theta_sum - ref_sum)
    ratios = np.exp(theta_sum - old_sum)
    if np.any(~np.isfinite(ratios)) or np.any(ratios <= 0.0):
        raise NonPositiveRatio("importance ratios must be positive and finite")

    uniq, gids = np.unique(eval_.stage_ids, return_inverse=True)
    centered_adv = kernels.group_center(fused, gids.astype(np.int64), len(uniq))
    centered_imp = kernels.group_center(implicit, gids.astype(np.int64), len(uniq))
    weights = centered_adv - centered_imp
    if cfg.gate_mode == GATE_NONE:
        gated = weights.copy()
    else:
        tau_pos, tau_neg = cfg.gate_taus()
        gated = kernels.sech2_gate_many(weights, ratios, tau_pos, tau_neg)

    return [
        WeightRecord(
            implicit_reward=float(implicit[i]),
            centered_advantage=float(centered_adv[i]),
            centered_implicit=float(centered_imp[i]),
            weight=float(weights[i]),
            ratio=float(ratios[i]),
            gated_weight=float(gated[i]),
            stage_id=int(eval_.stage_ids[i]),
        )
        for i in range(eval_.n_steps)
    ]


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def weighted_token_mle(
    eval_: PolicyEval, step_weights: Sequence[float]
) -> tuple[float, np.ndarray]:
    """Token-normalized weighted MLE for fixed step weights.

    Returns the loss and the per-token gradient weights ``w / N``; the loss
    is ``-(1/N) * sum_j w_step(j) * logp_theta_j``.
    """
    weights = np.asarray(step_weights, dtype=np.float64)
    n_tokens = eval_.n_tokens
    if n_tokens == 0:
        raise EmptyBatch("no tokens to normalize over")
    token_weights = np.repeat(weights, np.diff(eval_.token_ptr)) / n_tokens
    loss = -float(np.dot(token_weights, eval_.logp_theta))
    return loss, token_weights


def mgpo_loss(batch: MGPOBatch, cfg: MGPOConfig) -> tuple[float, np.ndarray]:
    """Full objective on one batch: advantages, weights, gate, weighted MLE.

    The returned per-token gradient weights are the gated step weights over
    the total token count; they are data with respect to the policy
    parameters (no gradient flows through the weights or the gate).
    """
    _, _, fused = batch_advantages(batch, cfg)
    records = mgpo_weights(fused, batch.eval, cfg)
    gated = [r.gated_weight for r in records]
    return weighted_token_mle(batch.eval, gated)


def sft_loss(expert: Sequence, eval_: PolicyEval) -> float:
    """Behavioral-cloning cross-entropy over verifier-valid expert trajectories."""
    if not expert:
        raise EmptyBatch("no expert trajectories")
    for traj in expert:
        verdict = traj.terminal.verdict if traj.terminal is not None else None
        if verdict is None or not verdict.valid:
            raise InvalidExpertTrajectory(
                f"episode {traj.episode_id} is not verifier-valid; it cannot train the reference"
            )
    theta_sum = eval_.step_sums(eval_.logp_theta)
    return -float(theta_sum.sum()) / len(expert)


def sft_token_coeffs(expert: Sequence, eval_: PolicyEval) -> np.ndarray:
    """d(sft_loss)/d(logp_theta) per token: a constant -1/|D|."""
    return np.full(eval_.n_tokens, -1.0 / len(expert))


def grpo_loss(
    batch: MGPOBatch, clip_epsilon: float = 0.2, kl_beta: float = 0.05
) -> float:
    """Trajectory-level clipped-surrogate baseline with a reference KL penalty.

    Advantages are group-standardized terminal rewards broadcast to every
    token of the episode; process rewards are ignored.  The KL penalty uses
    the non-negative ``exp(d) - d - 1`` estimator with
    ``d = logp_ref - logp_theta``, token-normalized like the surrogate.
    """
    loss, _ = _grpo_loss_and_coeffs(batch, clip_epsilon, kl_beta)
    return loss


def grpo_token_coeffs(
    batch: MGPOBatch, clip_epsilon: float = 0.2, kl_beta: float = 0.05
) -> np.ndarray:
    """d(grpo_loss)/d(logp_theta) per token."""
    _, coeffs = _grpo_loss_and_coeffs(batch, clip_epsilon, kl_beta)
    return coeffs


def _grpo_loss_and_coeffs(
    batch: MGPOBatch, clip_epsilon: float, kl_beta: float
) -> tuple[float, np.ndarray]:
    eval_ = batch.eval
    a_e = np.empty(eval_.n_episodes)
    for g in np.unique(batch.group_index):
        mask = batch.group_index == g
        if mask.sum() < 2:
            raise GroupTooSmall("every group needs >= 2 episodes")
        a_e[mask] = kernels.group_standardize(
            batch.terminal_rewards[mask], np.zeros(int(mask.sum()), dtype=np.int64), 1, 1e-6
        )
    step_adv = a_e[eval_.episode_index]
    adv_tok = np.repeat(step_adv, np.diff(eval_.token_ptr))

    log_ratio = eval_.logp_theta - eval_.logp_old
    ratio = np.exp(log_ratio)
    unclipped = ratio * adv_tok
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv_tok
    surrogate = -np.minimum(unclipped, clipped)
    # gradient flows only where the unclipped branch is active
    active = unclipped <= clipped
    surr_coeff = np.where(active, -adv_tok * ratio, 0.0)

    d = eval_.logp_ref - eval_.logp_theta
    kl = np.exp(d) - d - 1.0
    kl_coeff = 1.0 - np.exp(d)

    n = eval_.n_tokens
    loss = float((surrogate + kl_beta * kl).sum() / n)
    coeffs = (surr_coeff + kl_beta * kl_coeff) / n
    return loss, coeffs


def mgpo_token_coeffs(batch: MGPOBatch, cfg: MGPOConfig) -> np.ndarray:
    """d(mgpo_loss)/d(logp_theta) per token, weights held fixed."""
    _, token_weights = mgpo_loss(batch, cfg)
    return -token_weights


# ---------------------------------------------------------------------------
# closed-form bandit oracle
# ---------------------------------------------------------------------------


def tabular_optimal_policy(
    ref: Sequence[float], rewards: Sequence[float], beta: float
) -> np.ndarray:
    """Closed-form optimum of KL-regularized reward maximization on one context."""
    ref = np.asarray(ref, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    if beta <= 0:
        raise MGPOError("beta must be positive")
    if np.any(ref <= 0):
        raise MGPOError("reference distribution must be strictly positive")
    logits = np.log(ref) + rewards / beta
    logits -= logits.max()
    weights = np.exp(logits)
    return weights / weights.sum()


def exponentiated_gradient_ascent(
    ref: Sequence[float],
    rewards: Sequence[float],
    beta: float,
    step_scale: float = 0.5,
    max_iters: int = 10_000,
    tol: float = 1e-12,
) -> np.ndarray:
    """Mirror ascent on the KL-regularized objective over the simplex.

    Uses step size ``step_scale / beta`` so each update contracts toward the
    closed-form optimum geometrically; used as the independent convergence
    oracle for the closed form.
    """
    ref = np.asarray(ref, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    pi = ref / ref.sum()
    eta = step_scale / beta
    for _ in range(max_iters):
        grad = rewards - beta * (np.log(pi) - np.log(ref))
        nxt = pi * np.exp(eta * (grad - grad.max()))
        nxt = nxt / nxt.sum()
        if 0.5 * np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    return pi


def kl_regularized_objective(
    pi: Sequence[float], ref: Sequence[float], rewards: Sequence[float], beta: float
) -> float:
    pi = np.asarray(pi, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    kl = float(np.sum(pi * (np.log(pi) - np.log(ref))))
    return float(np.dot(pi, rewards)) - beta * kl
