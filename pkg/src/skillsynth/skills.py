"""Atomic construction skills: package parsing, library storage, filtering.

A skill is a file package: a ``SKILL.md`` with a ``---``-delimited metadata
block followed by a free-form body (construction logic, optional utility
script section), plus optional ``scripts/`` files stored as opaque text.
Everything here is immutable after construction and safe for concurrent
reads.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml


class SkillError(Exception):
    """Base class for skill-package and library failures."""


class MissingField(SkillError):
    pass


class MalformedFrontmatter(SkillError):
    pass


class DifficultyOutOfRange(SkillError):
    pass


class EmptySupport(SkillError):
    pass


class ZeroModelProbabilityOnSupport(SkillError):
    pass


class EmptyComposition(SkillError):
    pass


_NAME_RE = re.compile(r"^[a-z0-9]+(?:-[a-z0-9]+)*$")
_KEY_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_-]*):\s?(.*)$")
_LEVEL_RE = re.compile(r"^#{1,6}.*\blevel\s*([23])\b", re.IGNORECASE)

DIFFICULTY_MIN = 1.0
DIFFICULTY_MAX = 10.0

#: canonical metadata keys, in serialization order
_CANONICAL_KEYS = ("name", "category", "intent", "difficulty_effect", "tool_hint", "quality_score")
_DIFFICULTY_ALIASES = ("difficulty_effect", "difficulty")
_SCORE_ALIASES = ("quality_score", "score")


@dataclass(frozen=True)
class SkillBody:
    """Three-level package content below the metadata block.

    ``raw`` is the body exactly as it appeared in the document;
    ``construction`` and ``script`` are the level-2 / level-3 sections
    (the whole body when no level headings are present).
    """

    raw: str = ""
    construction: str = ""
    script: str = ""

    @staticmethod
    def from_raw(raw: str) -> "SkillBody":
        construction, script = _split_levels(raw)
        return SkillBody(raw=raw, construction=construction, script=script)


@dataclass(frozen=True)
class Skill:
    name: str
    category: str
    intent: str
    method: str
    difficulty_effect: float
    tool_hint: str = ""
    quality_score: float = 1.0
    body: SkillBody = field(default_factory=SkillBody)
    extra: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise SkillError(f"skill name must be lowercase-hyphenated, got {self.name!r}")
        if not (DIFFICULTY_MIN <= self.difficulty_effect <= DIFFICULTY_MAX):
            raise DifficultyOutOfRange(
                f"difficulty_effect must be in [{DIFFICULTY_MIN:g}, {DIFFICULTY_MAX:g}], "
                f"got {self.difficulty_effect}"
            )


def _split_levels(raw: str) -> tuple[str, str]:
    lines = raw.split("\n")
    marks: list[tuple[int, str]] = []
    for i, line in enumerate(lines):
        m = _LEVEL_RE.match(line.strip())
        if m:
            marks.append((i, m.group(1)))
    if not marks:
        return raw.strip(), ""
    construction, script = "", ""
    for j, (start, level) in enumerate(marks):
        end = marks[j + 1][0] if j + 1 < len(marks) else len(lines)
        section = "\n".join(lines[start + 1 : end]).strip()
        if level == "2" and not construction:
            construction = section
        elif level == "3" and not script:
            script = section
    if not construction:
        construction = raw.strip()
    return construction, script


def _parse_frontmatter(text: str) -> tuple[dict[str, str], str]:
    lines = text.split("\n")
    i = 0
    while i < len(lines) and lines[i].strip() == "":
        i += 1
    if i >= len(lines) or lines[i].strip() != "---":
        raise MalformedFrontmatter("document must start with a '---' metadata delimiter")
    close = None
    for j in range(i + 1, len(lines)):
        if lines[j].strip() == "---":
            close = j
            break
    if close is None:
        raise MalformedFrontmatter("unterminated metadata block: closing '---' not found")

    meta: dict[str, str] = {}
    current: str | None = None
    for line in lines[i + 1 : close]:
        if not line.strip():
            current = None
            continue
        if line[0] in " \t":
            stripped = line.strip()
            if _KEY_RE.match(stripped) or stripped.startswith("- "):
                raise MalformedFrontmatter(f"nested structures are not supported: {stripped!r}")
            if current is None:
                raise MalformedFrontmatter(f"stray continuation line: {stripped!r}")
            meta[current] = meta[current] + " " + stripped
            continue
        m = _KEY_RE.match(line)
        if m:
            key, value = m.group(1), m.group(2).strip()
            if key in meta:
                raise MalformedFrontmatter(f"duplicate metadata key {key!r}")
            meta[key] = value
            current = key
        else:
            # bare continuation of the previous scalar (description spanning lines)
            if current is None:
                raise MalformedFrontmatter(f"unparseable metadata line: {line!r}")
            meta[current] = meta[current] + " " + line.strip()
    body = "\n".join(lines[close + 1 :])
    if body.startswith("\n"):
        body = body[1:]
    return meta, body


def _pick(meta: dict[str, str], aliases: Sequence[str]) -> tuple[str, str] | None:
    for key in aliases:
        if key in meta:
            return key, meta[key]
    return None


def parse_skill_package(text: str) -> Skill:
    """Parse one skill-package document into a :class:`Skill`.

    The metadata block must supply ``name``, ``category``, an intent
    (``intent`` or ``description``) and a difficulty (``difficulty_effect``
    or ``difficulty``).  The construction method may be given as a ``method``
    key or as the level-2 body section.  ``tool_hint`` defaults to empty and
    ``quality_score`` to 1.0.  The body is preserved verbatim.
    """
    meta, raw_body = _parse_frontmatter(text)

    for required in ("name", "category"):
        if required not in meta or not meta[required]:
            raise MissingField(f"required metadata key {required!r} is absent")

    intent_kv = _pick(meta, ("intent", "description"))
    if intent_kv is None or not intent_kv[1]:
        raise MissingField("required metadata key 'intent' is absent")

    difficulty_kv = _pick(meta, _DIFFICULTY_ALIASES)
    if difficulty_kv is None:
        raise MissingField("required metadata key 'difficulty_effect' is absent")
    try:
        difficulty = float(difficulty_kv[1])
    except ValueError as exc:
        raise MalformedFrontmatter(f"difficulty is not numeric: {difficulty_kv[1]!r}") from exc

    body = SkillBody.from_raw(raw_body)
    method = meta.get("method", "") or body.construction
    if not method:
        raise MissingField("no 'method' key and no construction logic in the body")

    score_kv = _pick(meta, _SCORE_ALIASES)
    if score_kv is not None:
        try:
            quality = float(score_kv[1])
        except ValueError as exc:
            raise MalformedFrontmatter(f"quality score is not numeric: {score_kv[1]!r}") from exc
    else:
        quality = 1.0

    consumed = {"name", "category", "method", intent_kv[0], difficulty_kv[0]}
    consumed.add("tool_hint")
    if score_kv is not None:
        consumed.add(score_kv[0])
    # keep description visible even when it doubled as the intent
    if intent_kv[0] == "description":
        consumed.discard("description")
    extra = tuple((k, v) for k, v in meta.items() if k not in consumed)

    return Skill(
        name=meta["name"],
        category=meta["category"],
        intent=intent_kv[1],
        method=method,
        difficulty_effect=difficulty,
        tool_hint=meta.get("tool_hint", ""),
        quality_score=quality,
        body=body,
        extra=extra,
    )


def serialize_skill_package(skill: Skill) -> str:
    """Render a skill back to its package document form.

    ``parse_skill_package(serialize_skill_package(s))`` returns a skill equal
    to ``s``.
    """
    lines = ["---"]
    lines.append(f"name: {skill.name}")
    lines.append(f"category: {skill.category}")
    extra_keys = {k for k, _ in skill.extra}
    if "description" not in extra_keys or skill.intent != dict(skill.extra).get("description"):
        lines.append(f"intent: {skill.intent}")
    lines.append(f"difficulty_effect: {skill.difficulty_effect:g}")
    if skill.method != skill.body.construction:
        if "\n" in skill.method:
            raise SkillError("explicit method metadata must be a single-line scalar")
        lines.append(f"method: {skill.method}")
    if skill.tool_hint:
        lines.append(f"tool_hint: {skill.tool_hint}")
    lines.append(f"quality_score: {skill.quality_score:g}")
    for key, value in skill.extra:
        lines.append(f"{key}: {value}")
    lines.append("---")
    doc = "\n".join(lines)
    if skill.body.raw:
        doc += "\n" + skill.body.raw
    return doc


@dataclass(frozen=True)
class SkillLibrary:
    """Named skills, the category set, and the quality threshold."""

    skills: Mapping[str, Skill]
    categories: frozenset[str]
    threshold: float = 0.5

    def __post_init__(self):
        for skill in self.skills.values():
            if skill.category not in self.categories:
                raise SkillError(
                    f"skill {skill.name!r} has category {skill.category!r} "
                    f"outside the configured set {sorted(self.categories)}"
                )

    @classmethod
    def from_skills(
        cls,
        skills: Iterable[Skill],
        categories: Iterable[str] | None = None,
        threshold: float = 0.5,
    ) -> "SkillLibrary":
        by_name: dict[str, Skill] = {}
        for skill in skills:
            if skill.name in by_name:
                raise SkillError(f"duplicate skill name {skill.name!r}")
            by_name[skill.name] = skill
        cats = frozenset(categories) if categories is not None else frozenset(
            s.category for s in by_name.values()
        )
        return cls(skills=by_name, categories=cats, threshold=threshold)

    def __len__(self) -> int:
        return len(self.skills)

    def __iter__(self):
        return iter(self.skills.values())

    def names(self) -> tuple[str, ...]:
        return tuple(self.skills)

    def by_category(self, category: str) -> tuple[Skill, ...]:
        return tuple(s for s in self.skills.values() if s.category == category)


def load_library(
    root: str | Path,
    threshold: float = 0.5,
    categories: Iterable[str] | None = None,
) -> SkillLibrary:
    """Scan a directory of skill packages into a library.

    Each immediate subdirectory holding a ``SKILL.md`` is one package;
    packages are loaded in sorted name order.  An optional ``scores.json`` or
    ``scores.yaml`` at the root maps skill names to quality scores and
    overrides per-package values.
    """
    root = Path(root)
    if not root.is_dir():
        raise SkillError(f"library path {root} is not a directory")

    scores: dict[str, float] = {}
    for candidate in ("scores.json", "scores.yaml", "scores.yml"):
        path = root / candidate
        if path.is_file():
            raw = path.read_text(encoding="utf-8")
            data = json.loads(raw) if candidate.endswith(".json") else yaml.safe_load(raw)
            if not isinstance(data, dict):
                raise SkillError(f"{path} must map skill names to scores")
            scores = {str(k): float(v) for k, v in data.items()}
            break

    skills: list[Skill] = []
    for entry in sorted(root.iterdir()):
        doc = entry / "SKILL.md"
        if not entry.is_dir() or not doc.is_file():
            continue
        try:
            skill = parse_skill_package(doc.read_text(encoding="utf-8"))
        except SkillError as exc:
            raise type(exc)(f"{doc}: {exc}") from exc
        if skill.name in scores:
            skill = Skill(
                name=skill.name,
                category=skill.category,
                intent=skill.intent,
                method=skill.method,
                difficulty_effect=skill.difficulty_effect,
                tool_hint=skill.tool_hint,
                quality_score=scores[skill.name],
                body=skill.body,
                extra=skill.extra,
            )
        skills.append(skill)
    return SkillLibrary.from_skills(skills, categories=categories, threshold=threshold)


def validate_library(root: str | Path) -> list[str]:
    """Collect human-readable violations across a library directory."""
    root = Path(root)
    violations: list[str] = []
    if not root.is_dir():
        return [f"{root}: not a directory"]
    seen: set[str] = set()
    found = False
    for entry in sorted(root.iterdir()):
        doc = entry / "SKILL.md"
        if not entry.is_dir() or not doc.is_file():
            continue
        found = True
        try:
            skill = parse_skill_package(doc.read_text(encoding="utf-8"))
        except SkillError as exc:
            violations.append(f"{doc}: {exc}")
            continue
        if skill.name in seen:
            violations.append(f"{doc}: duplicate skill name {skill.name!r}")
        seen.add(skill.name)
    if not found:
        violations.append(f"{root}: no skill packages found")
    return violations


@dataclass(frozen=True)
class FilteredDistribution:
    """Quality-filtered, weight-normalized distribution over skill names."""

    support: tuple[str, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        if len(self.support) != len(self.probabilities):
            raise SkillError("support and probabilities differ in length")
        total = math.fsum(self.probabilities)
        if abs(total - 1.0) > 1e-12:
            raise SkillError(f"probabilities sum to {total!r}, not 1")

    def probability(self, name: str) -> float:
        return self.probabilities[self.support.index(name)]

    def sample(self, rng: np.random.Generator) -> str:
        idx = rng.choice(len(self.support), p=np.asarray(self.probabilities))
        return self.support[int(idx)]


def build_filtered_distribution(
    library: SkillLibrary,
    teacher_weights: Mapping[str, float] | None = None,
) -> FilteredDistribution:
    """Normalize teacher weights over skills whose quality clears the threshold.

    Skills below the threshold keep probability 0.  Uniform weights are the
    default when no teacher density is supplied.
    """
    names = library.names()
    weights = np.ones(len(names), dtype=np.float64)
    if teacher_weights is not None:
        for i, name in enumerate(names):
            weights[i] = float(teacher_weights.get(name, 0.0))
        if (weights < 0).any():
            raise SkillError("teacher weights must be non-negative")
    passing = np.array(
        [library.skills[n].quality_score >= library.threshold for n in names], dtype=bool
    )
    masked = np.where(passing, weights, 0.0)
    total = masked.sum()
    if total <= 0.0:
        raise EmptySupport(
            f"no skill passes the quality threshold {library.threshold} with positive weight"
        )
    probs = masked / total
    # exact renormalization so the simplex invariant holds to 1e-12
    probs = probs / math.fsum(probs)
    return FilteredDistribution(support=names, probabilities=tuple(float(p) for p in probs))


def skill_acquisition_loss(
    model: Mapping[str, float],
    target: FilteredDistribution,
) -> float:
    """Cross-entropy of a candidate categorical model against the filtered target.

    Equals the target entropy exactly when the model matches the target on
    its support, and is strictly larger otherwise.
    """
    loss = 0.0
    for name, p in zip(target.support, target.probabilities):
        if p == 0.0:
            continue
        q = float(model.get(name, 0.0))
        if q <= 0.0:
            raise ZeroModelProbabilityOnSupport(
                f"model assigns non-positive probability to supported skill {name!r}"
            )
        loss -= p * math.log(q)
    return loss


def compose_constraints(skills: Sequence[Skill]) -> str:
    """Render an ordered skill composition into deterministic constraint text.

    One section per input skill, in order; equal inputs produce byte-identical
    output.
    """
    if not skills:
        raise EmptyComposition("cannot compose an empty skill list")
    parts = ["Problem construction constraints (apply in order):", ""]
    for i, skill in enumerate(skills, start=1):
        parts.append(f"[{i}] {skill.name}")
        parts.append(f"    Intent: {skill.intent}")
        parts.append(f"    Method: {skill.method.splitlines()[0] if skill.method else ''}")
        parts.append(f"    Difficulty effect: {skill.difficulty_effect:g}/10")
        parts.append(f"    Tool hint: {skill.tool_hint or 'none'}")
        parts.append("")
    return "\n".join(parts)
