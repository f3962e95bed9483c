"""Terminal and process rewards for synthesis trajectories.

The terminal reward gates everything on committee validity and adds a
difficulty bonus scaled by how rarely the prober solves the problem; the
bonus is awarded only when the probe pass rate is strictly positive, so an
unprobeable-but-valid problem earns exactly the base reward.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

if TYPE_CHECKING:  # pragma: no cover
    from .environment import Trajectory
    from .verification import ProbeResult, VerifierVerdict


class RewardError(Exception):
    pass


class MissingTerminal(RewardError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    """Reward knobs: validity base, difficulty scale, per-step process rewards."""

    base: float = 1.0
    lam: float = 1.0
    r_exec: float = 0.1
    r_think: float = 0.05

    def __post_init__(self):
        if self.base <= 0:
            raise RewardError(f"base reward must be positive, got {self.base}")
        if self.lam <= 0:
            raise RewardError(f"difficulty scale must be positive, got {self.lam}")
        if self.r_exec < 0 or self.r_think < 0:
            raise RewardError("process rewards must be non-negative")


@dataclass(frozen=True)
class RewardBreakdown:
    terminal: float
    process: tuple[float, ...]
    total: float


def terminal_reward(verdict: "VerifierVerdict", probe: "ProbeResult | None", cfg: RewardConfig) -> float:
    """Validity-gated base reward plus a pass-rate-gated difficulty bonus."""
    if not verdict.valid:
        return 0.0
    rho = probe.pass_rate if probe is not None else 0.0
    if not 0.0 <= rho <= 1.0 or math.isnan(rho):
        raise RewardError(f"pass rate must lie in [0, 1], got {rho}")
    bonus = cfg.lam * (1.0 - rho) if rho > 0.0 else 0.0
    return cfg.base + bonus


def attach_rewards(
    traj: "Trajectory",
    verdict: "VerifierVerdict",
    probe: "ProbeResult | None",
    cfg: RewardConfig,
) -> "Trajectory":
    """Complete a rolled-out trajectory with its verdict, probe, and terminal reward.

    Per-step process rewards are preserved exactly as the environment
    assigned them.
    """
    if traj.terminal is None:
        raise MissingTerminal(f"episode {traj.episode_id} was truncated before any submission")
    terminal = dataclasses.replace(
        traj.terminal,
        verdict=verdict,
        probe=probe,
        terminal_reward=terminal_reward(verdict, probe, cfg),
    )
    return dataclasses.replace(traj, terminal=terminal)


def breakdown(traj: "Trajectory") -> RewardBreakdown:
    process = tuple(step.process_reward for step in traj.steps)
    terminal = traj.terminal.terminal_reward if traj.terminal is not None else 0.0
    return RewardBreakdown(terminal=terminal, process=process, total=terminal + math.fsum(process))
