"""Per-category proficiency tracking and inverse-proficiency sampling.

Proficiency is a smoothed success rate per skill category; categories the
policy handles poorly are sampled more often, with probability proportional
to ``1 / (proficiency + epsilon)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .environment import Trajectory


class CurriculumError(Exception):
    pass


class UnknownCategory(CurriculumError):
    pass


class EmptyCurriculum(CurriculumError):
    pass


@dataclass(frozen=True)
class ProficiencyState:
    proficiency: tuple[tuple[str, float], ...]
    alpha: float = 0.2
    epsilon: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise CurriculumError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.epsilon <= 0.0:
            raise CurriculumError(f"epsilon must be positive, got {self.epsilon}")
        for category, m in self.proficiency:
            if not 0.0 <= m <= 1.0:
                raise CurriculumError(f"proficiency for {category!r} out of [0, 1]: {m}")

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.proficiency)

    def as_dict(self) -> dict[str, float]:
        return dict(self.proficiency)

    def value(self, category: str) -> float:
        for c, m in self.proficiency:
            if c == category:
                return m
        raise UnknownCategory(category)


def initial_state(
    categories: Iterable[str],
    m0: float = 0.5,
    alpha: float = 0.2,
    epsilon: float = 0.05,
) -> ProficiencyState:
    cats = tuple(sorted(set(categories)))
    return ProficiencyState(
        proficiency=tuple((c, m0) for c in cats), alpha=alpha, epsilon=epsilon
    )


def update_proficiency(
    state: ProficiencyState, success_rates: Mapping[str, float]
) -> ProficiencyState:
    """Blend fresh success rates into the proficiency vector.

    Categories absent from ``success_rates`` keep their current value.
    """
    known = set(state.categories)
    for category, rate in success_rates.items():
        if category not in known:
            raise UnknownCategory(category)
        if not 0.0 <= rate <= 1.0:
            raise CurriculumError(f"success rate for {category!r} out of [0, 1]: {rate}")
    alpha = state.alpha
    updated = tuple(
        (c, (1.0 - alpha) * m + alpha * success_rates[c]) if c in success_rates else (c, m)
        for c, m in state.proficiency
    )
    return replace(state, proficiency=updated)


def sampling_distribution(state: ProficiencyState) -> tuple[tuple[str, ...], np.ndarray]:
    """Categories and their normalized inverse-proficiency sampling weights."""
    if not state.proficiency:
        raise EmptyCurriculum("no categories to sample from")
    cats = state.categories
    weights = np.array([1.0 / (m + state.epsilon) for _, m in state.proficiency])
    return cats, weights / weights.sum()


def sample_category(state: ProficiencyState, seed: int | np.random.Generator) -> str:
    """Draw one category, seeded and reproducible."""
    cats, probs = sampling_distribution(state)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return cats[int(rng.choice(len(cats), p=probs))]


def success_rates_from_batch(trajectories: Sequence["Trajectory"]) -> dict[str, float]:
    """Verifier-validated pass rate per category over one batch.

    Episodes without a submitted problem count as failures; episodes whose
    verdict records a backend error are excluded entirely so infrastructure
    noise never reaches the curriculum.
    """
    totals: dict[str, int] = {}
    valids: dict[str, int] = {}
    for traj in trajectories:
        verdict = traj.terminal.verdict if traj.terminal is not None else None
        if verdict is not None and verdict.reason == "backend-error":
            continue
        totals[traj.category] = totals.get(traj.category, 0) + 1
        if verdict is not None and verdict.valid:
            valids[traj.category] = valids.get(traj.category, 0) + 1
    return {c: valids.get(c, 0) / n for c, n in totals.items()}
