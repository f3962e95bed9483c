"""Random synthetic batches for the optimization-layer tests."""

import numpy as np

from skillsynth.mgpo import MGPOBatch, PolicyEval


def random_eval(
    rng: np.random.Generator,
    n_episodes: int,
    max_steps: int = 6,
    max_tokens: int = 4,
    n_stages: int = 4,
) -> PolicyEval:
    token_ptr = [0]
    episode_index, stage_ids = [], []
    lp_t, lp_r, lp_o = [], [], []
    for e in range(n_episodes):
        for _ in range(int(rng.integers(1, max_steps + 1))):
            n_tok = int(rng.integers(1, max_tokens + 1))
            for _ in range(n_tok):
                lp_t.append(float(-rng.exponential(1.0)))
                lp_r.append(float(-rng.exponential(1.0)))
                lp_o.append(float(-rng.exponential(1.0)))
            token_ptr.append(token_ptr[-1] + n_tok)
            episode_index.append(e)
            stage_ids.append(int(rng.integers(n_stages)))
    return PolicyEval(
        token_ptr=np.array(token_ptr, dtype=np.int64),
        logp_theta=np.array(lp_t),
        logp_ref=np.array(lp_r),
        logp_old=np.array(lp_o),
        episode_index=np.array(episode_index, dtype=np.int64),
        stage_ids=np.array(stage_ids, dtype=np.int64),
        n_episodes=n_episodes,
    )


def random_batch(
    rng: np.random.Generator,
    group_sizes: list[int] | None = None,
    max_steps: int = 6,
) -> MGPOBatch:
    if group_sizes is None:
        group_sizes = [int(rng.integers(2, 17)) for _ in range(int(rng.integers(1, 4)))]
    n_episodes = sum(group_sizes)
    eval_ = random_eval(rng, n_episodes, max_steps=max_steps)
    group_index = np.repeat(np.arange(len(group_sizes)), group_sizes)
    return MGPOBatch(
        eval=eval_,
        terminal_rewards=rng.uniform(0, 3, size=n_episodes),
        process_rewards=rng.choice([0.0, 0.05, 0.1], size=eval_.n_steps),
        group_index=group_index,
    )
