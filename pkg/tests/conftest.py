import numpy as np
import pytest

from skillsynth.environment import Congruence, SyntheticTask, make_synthetic_skill
from skillsynth.skills import Skill, SkillLibrary

EXAMPLE_DOC = """---
name: math-complex-generalized-cauchy
category: complex-analysis
difficulty: 7.0
description: Evaluate complex contour integrals involving high-order poles.
Trigger when the integrand is of the form f(z)/(z-a)^n where n > 1 and
the singularity 'a' is enclosed by the contour.
---

#### Level 2: Procedural Instructions

Identify the pole order, differentiate the numerator, and scale the result.

#### Level 3: External Utility

print("placeholder")
"""


@pytest.fixture
def example_doc() -> str:
    return EXAMPLE_DOC


def constraint_skill(
    name: str,
    residue: int,
    modulus: int,
    category: str = "residues",
    difficulty: float = 3.0,
    quality: float = 1.0,
) -> Skill:
    return make_synthetic_skill(
        name, category, Congruence(residue, modulus), difficulty, quality=quality
    )


@pytest.fixture
def abc_skills() -> list[Skill]:
    """Three pairwise-compatible congruence skills (x = 7 mod 105 solves all)."""
    return [
        constraint_skill("alpha-mod", 1, 3),
        constraint_skill("bravo-mod", 2, 5),
        constraint_skill("charlie-mod", 0, 7),
    ]


@pytest.fixture
def conflict_skill() -> Skill:
    # clashes with alpha-mod: 1 vs 0 modulo 3
    return constraint_skill("delta-clash", 0, 3)


@pytest.fixture
def tiny_library(abc_skills) -> SkillLibrary:
    return SkillLibrary.from_skills(abc_skills)


@pytest.fixture
def task() -> SyntheticTask:
    return SyntheticTask(rng_seed=7)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
