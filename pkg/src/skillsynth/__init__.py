"""Skill-composition problem synthesis engine.

Compose atomic construction skills into verifiable problems through a
sequential synthesis loop, judge them with a three-member committee, price
their difficulty with a prober pool, schedule categories with an
inverse-proficiency curriculum, and optimize the proposer with
multi-granularity policy optimization.
"""

from .environment import (
    Action,
    CognitiveStage,
    Observation,
    ProblemStatement,
    SynthesisEnv,
    SyntheticTask,
    Trajectory,
    make_synthetic_library,
    scripted_expert,
)
from .kernels import NUMBA_ENABLED
from .mgpo import MGPOConfig, PolicyEval, grpo_loss, mgpo_loss, sft_loss
from .rewards import RewardConfig, attach_rewards, terminal_reward
from .skills import (
    Skill,
    SkillLibrary,
    build_filtered_distribution,
    compose_constraints,
    load_library,
    parse_skill_package,
    serialize_skill_package,
)
from .verification import (
    ProberPool,
    ProbeResult,
    SyntheticProber,
    VerifierVerdict,
    VerifierVote,
    aggregate_votes,
    probe,
    update_mastery,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "CognitiveStage",
    "MGPOConfig",
    "NUMBA_ENABLED",
    "Observation",
    "PolicyEval",
    "ProberPool",
    "ProbeResult",
    "ProblemStatement",
    "RewardConfig",
    "Skill",
    "SkillLibrary",
    "SynthesisEnv",
    "SyntheticProber",
    "SyntheticTask",
    "Trajectory",
    "VerifierVerdict",
    "VerifierVote",
    "aggregate_votes",
    "attach_rewards",
    "build_filtered_distribution",
    "compose_constraints",
    "grpo_loss",
    "load_library",
    "make_synthetic_library",
    "mgpo_loss",
    "parse_skill_package",
    "probe",
    "scripted_expert",
    "serialize_skill_package",
    "sft_loss",
    "terminal_reward",
    "update_mastery",
]
