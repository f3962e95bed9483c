import numpy as np
import pytest

from skillsynth.environment import Action, CognitiveStage, SynthesisEnv, scripted_expert
from skillsynth.mgpo import (
    MGPOConfig,
    build_batch,
    grpo_loss,
    grpo_token_coeffs,
    mgpo_loss,
    mgpo_weights,
    batch_advantages,
    sft_loss,
    sft_token_coeffs,
    weighted_token_mle,
)
from skillsynth.policy import (
    CONTEXTS,
    MOVES,
    AdamState,
    TabularSoftmaxPolicy,
    accumulate_policy_gradient,
    action_move,
    adam_step,
    evaluate_trajectories,
    featurize,
    rollout_episode,
    step_coeffs_from_tokens,
)
from skillsynth.records import trajectory_record
from skillsynth.rewards import RewardConfig, attach_rewards
from skillsynth.verification import Persona, run_committee


class TestFeaturize:
    def test_draft(self, task, abc_skills):
        env = SynthesisEnv(task, abc_skills)
        assert CONTEXTS[featurize(env.reset())] == "draft"

    def test_check_split_by_result(self, task, abc_skills, conflict_skill):
        good = SynthesisEnv(task, abc_skills)
        obs = good.reset()
        obs, _, _ = good.step(obs, Action.tool_exec(good.check_program(obs)))
        assert CONTEXTS[featurize(obs)] == "check_passed"
        bad = SynthesisEnv(task, abc_skills + [conflict_skill])
        obs = bad.reset()
        obs, _, _ = bad.step(obs, Action.tool_exec(bad.check_program(obs)))
        assert CONTEXTS[featurize(obs)] == "check_failed"

    def test_action_move_mapping(self):
        assert MOVES[action_move(Action.reflect("x"))] == "reflect"
        assert MOVES[action_move(Action.tool_exec("check"))] == "check"
        assert MOVES[action_move(Action.skill_edit("s"))] == "prune"
        assert MOVES[action_move(Action.respond("x"))] == "respond"


class TestPolicy:
    def test_uniform_probs(self):
        policy = TabularSoftmaxPolicy.uniform()
        for ctx in range(len(CONTEXTS)):
            assert np.allclose(policy.probs(ctx), 1 / len(MOVES))

    def test_sampling_deterministic(self):
        policy = TabularSoftmaxPolicy.uniform()
        a = [policy.sample(0, np.random.default_rng(5)) for _ in range(10)]
        b = [policy.sample(0, np.random.default_rng(5)) for _ in range(10)]
        assert a == b

    def test_save_load_roundtrip(self, tmp_path):
        policy = TabularSoftmaxPolicy.uniform()
        policy.theta[1, 2] = 3.5
        policy.save(tmp_path / "p.npz")
        assert np.array_equal(TabularSoftmaxPolicy.load(tmp_path / "p.npz").theta, policy.theta)

    def test_grad_log_prob_matches_fd(self, rng):
        policy = TabularSoftmaxPolicy(theta=rng.normal(size=(len(CONTEXTS), len(MOVES))))
        h = 1e-6
        for _ in range(10):
            ctx = int(rng.integers(len(CONTEXTS)))
            move = int(rng.integers(len(MOVES)))
            analytic = policy.grad_log_prob(ctx, move)
            for i in range(len(MOVES)):
                theta_p = policy.theta.copy()
                theta_p[ctx, i] += h
                theta_m = policy.theta.copy()
                theta_m[ctx, i] -= h
                fd = (
                    TabularSoftmaxPolicy(theta_p).log_prob(ctx, move)
                    - TabularSoftmaxPolicy(theta_m).log_prob(ctx, move)
                ) / (2 * h)
                assert analytic[ctx, i] == pytest.approx(fd, abs=1e-6)


class TestRollout:
    def test_rollout_deterministic(self, task, abc_skills):
        env = SynthesisEnv(task, abc_skills)
        policy = TabularSoftmaxPolicy.uniform()
        a = rollout_episode(env, policy, np.random.default_rng(3), "e", "c")
        b = rollout_episode(env, policy, np.random.default_rng(3), "e", "c")
        assert trajectory_record(a) == trajectory_record(b)

    def test_rollout_truncates_at_horizon(self, task, abc_skills):
        env = SynthesisEnv(task, abc_skills)
        never_submit = TabularSoftmaxPolicy.uniform()
        never_submit.theta[:, MOVES.index("submit")] = -100.0
        traj = rollout_episode(env, never_submit, np.random.default_rng(0), "e", "c", max_steps=7)
        assert traj.terminal is None and len(traj.steps) == 7

    def test_rollout_never_prunes_last_skill(self, task, abc_skills):
        env = SynthesisEnv(task, abc_skills[:1])
        pruner = TabularSoftmaxPolicy.uniform()
        pruner.theta[:, MOVES.index("prune")] = 50.0
        traj = rollout_episode(env, pruner, np.random.default_rng(0), "e", "c", max_steps=5)
        assert all(s.action.kind != "skill_edit" for s in traj.steps)


class TestEvaluation:
    def test_alignment_covers_every_token(self, task, abc_skills, conflict_skill):
        traj = scripted_expert(task, abc_skills + [conflict_skill])
        policy = TabularSoftmaxPolicy.uniform()
        eval_ = evaluate_trajectories(policy, policy, policy, [traj])
        assert eval_.n_steps == len(traj.steps)
        assert eval_.n_tokens == sum(len(s.action.tokens) for s in traj.steps)
        # only the first token of each step carries probability mass
        for s, (start, end) in enumerate(zip(eval_.token_ptr[:-1], eval_.token_ptr[1:])):
            assert eval_.logp_theta[start] < 0
            assert not eval_.logp_theta[start + 1 : end].any()

    def test_stage_ids_match_observations(self, task, abc_skills, conflict_skill):
        traj = scripted_expert(task, abc_skills + [conflict_skill])
        policy = TabularSoftmaxPolicy.uniform()
        eval_ = evaluate_trajectories(policy, policy, policy, [traj])
        stages = [tuple(CognitiveStage).index(s.observation.stage) for s in traj.steps]
        assert eval_.stage_ids.tolist() == stages


class TestAdam:
    def test_adam_descends_quadratic(self):
        # converges into an lr-sized band around the optimum
        theta = np.array([[4.0, -3.0]])
        state = AdamState.like(theta)
        for _ in range(300):
            theta = adam_step(theta, 2 * theta, state, lr=0.05)
        assert np.abs(theta).max() < 0.15


def _attached_batch(task, abc_skills, conflict_skill, rng, n_episodes=6):
    personas = tuple(Persona(kind="sound", verifier_id=f"v{i}") for i in range(3))
    policy = TabularSoftmaxPolicy(theta=rng.normal(scale=0.5, size=(len(CONTEXTS), len(MOVES))))
    trajs = []
    for e in range(n_episodes):
        env = SynthesisEnv(task, abc_skills + ([conflict_skill] if e % 2 else []))
        traj = rollout_episode(env, policy, rng, f"e{e}", "residues", max_steps=10)
        if traj.terminal is not None:
            verdict = run_committee(traj.terminal.problem, personas, rng)
            traj = attach_rewards(traj, verdict, None, RewardConfig())
        trajs.append(traj)
    return policy, trajs


class TestGradientChecks:
    """Analytic gradients against central finite differences on the toy policy."""

    def _fd_gradient(self, loss_fn, theta0, h=1e-6):
        grad = np.zeros_like(theta0)
        for i in range(theta0.shape[0]):
            for j in range(theta0.shape[1]):
                tp = theta0.copy()
                tp[i, j] += h
                tm = theta0.copy()
                tm[i, j] -= h
                grad[i, j] = (loss_fn(tp) - loss_fn(tm)) / (2 * h)
        return grad

    def _relative_error(self, a, b):
        denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
        return np.linalg.norm(a - b) / denom

    def test_sft_gradient(self, task, abc_skills, conflict_skill, rng):
        personas = tuple(Persona(kind="sound", verifier_id=f"v{i}") for i in range(3))
        trajs = []
        for i, skills in enumerate((abc_skills, abc_skills + [conflict_skill])):
            traj = scripted_expert(task, skills, episode_id=f"x{i}")
            verdict = run_committee(traj.terminal.problem, personas, rng)
            trajs.append(attach_rewards(traj, verdict, None, RewardConfig()))

        ref = TabularSoftmaxPolicy.uniform()

        def loss_at(theta):
            policy = TabularSoftmaxPolicy(theta)
            return sft_loss(trajs, evaluate_trajectories(policy, ref, ref, trajs))

        for _ in range(12):
            theta0 = rng.normal(scale=0.8, size=ref.theta.shape)
            policy = TabularSoftmaxPolicy(theta0.copy())
            eval_ = evaluate_trajectories(policy, ref, ref, trajs)
            coeffs = step_coeffs_from_tokens(eval_, sft_token_coeffs(trajs, eval_))
            analytic = accumulate_policy_gradient(
                policy, eval_.contexts.tolist(), eval_.moves.tolist(), coeffs.tolist()
            )
            assert self._relative_error(analytic, self._fd_gradient(loss_at, theta0)) < 1e-4

    def test_mgpo_gradient_weights_frozen(self, task, abc_skills, conflict_skill, rng):
        policy0, trajs = _attached_batch(task, abc_skills, conflict_skill, rng)
        ref = TabularSoftmaxPolicy.uniform()
        cfg = MGPOConfig()
        for _ in range(12):
            theta0 = rng.normal(scale=0.8, size=ref.theta.shape)
            base = TabularSoftmaxPolicy(theta0.copy())
            eval0 = evaluate_trajectories(base, ref, policy0, trajs)
            batch0 = build_batch(trajs, eval0)
            _, _, fused = batch_advantages(batch0, cfg)
            frozen = [r.gated_weight for r in mgpo_weights(fused, eval0, cfg)]

            def loss_at(theta):
                policy = TabularSoftmaxPolicy(theta)
                eval_ = evaluate_trajectories(policy, ref, policy0, trajs)
                return weighted_token_mle(eval_, frozen)[0]

            _, token_weights = weighted_token_mle(eval0, frozen)
            coeffs = step_coeffs_from_tokens(eval0, -token_weights)
            analytic = accumulate_policy_gradient(
                base, eval0.contexts.tolist(), eval0.moves.tolist(), coeffs.tolist()
            )
            assert self._relative_error(analytic, self._fd_gradient(loss_at, theta0)) < 1e-4

    def test_grpo_gradient(self, task, abc_skills, conflict_skill, rng):
        policy0, trajs = _attached_batch(task, abc_skills, conflict_skill, rng)
        ref = TabularSoftmaxPolicy.uniform()

        def loss_at(theta):
            policy = TabularSoftmaxPolicy(theta)
            eval_ = evaluate_trajectories(policy, ref, policy0, trajs)
            return grpo_loss(build_batch(trajs, eval_))

        for _ in range(12):
            theta0 = rng.normal(scale=0.5, size=ref.theta.shape)
            base = TabularSoftmaxPolicy(theta0.copy())
            eval_ = evaluate_trajectories(base, ref, policy0, trajs)
            batch = build_batch(trajs, eval_)
            coeffs = step_coeffs_from_tokens(eval_, grpo_token_coeffs(batch))
            analytic = accumulate_policy_gradient(
                base, eval_.contexts.tolist(), eval_.moves.tolist(), coeffs.tolist()
            )
            assert self._relative_error(analytic, self._fd_gradient(loss_at, theta0)) < 1e-4
