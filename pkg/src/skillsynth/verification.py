"""Committee validity decisions and solver-based difficulty probing.

Acceptance is semi-rule-based over exactly three votes: a problem passes
only when (i) a majority votes valid, (ii) every accepting vote is clean
(no ambiguity, underspecification, or incompleteness flag) and carries an
answer, and (iii) the accepting answers agree canonically or the randomly
chosen second-audit verifier signs off on the discrepancy.  The audit can
rescue an answer mismatch but never a failed majority or a flagged vote.

Difficulty is the pass rate of a never-trained prober over k independent
attempts.  Probers form a weak-to-strong pool; an accuracy moving average
("mastery") is kept per prober and falling below the switch threshold
promotes the next one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Protocol, Sequence

import numpy as np

from . import kernels

if TYPE_CHECKING:  # pragma: no cover
    from .environment import ProblemStatement


class VerificationError(Exception):
    pass


class WrongCommitteeSize(VerificationError):
    pass


class ProberBackendUnavailable(VerificationError):
    pass


COMMITTEE_SIZE = 3

FLAG_AMBIGUOUS = "ambiguous"
FLAG_UNDERSPECIFIED = "underspecified"
FLAG_INCOMPLETE = "incomplete-solution"
KNOWN_FLAGS = frozenset({FLAG_AMBIGUOUS, FLAG_UNDERSPECIFIED, FLAG_INCOMPLETE})

REASON_MAJORITY = "majority-failed"
REASON_FLAGGED = "quality-flagged"
REASON_MISSING_ANSWER = "missing-answer"
REASON_INCONSISTENT = "inconsistent-answers"
REASON_BACKEND = "backend-error"


@dataclass(frozen=True)
class VerifierVote:
    verifier_id: str
    validity: int
    answer: str = ""
    rationale: str = ""
    flags: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.validity not in (0, 1):
            raise VerificationError(f"validity must be 0 or 1, got {self.validity}")
        unknown = set(self.flags) - KNOWN_FLAGS
        if unknown:
            raise VerificationError(f"unknown vote flags: {sorted(unknown)}")


@dataclass(frozen=True)
class VerifierVerdict:
    valid: int
    votes: tuple[VerifierVote, ...]
    audit_verifier: str
    audit_passed: bool
    reason: str | None = None


def canonical_answer(text: str) -> str:
    """Fold an answer to its comparison form: numeric when possible, else text."""
    s = text.strip()
    try:
        value = float(s)
    except ValueError:
        return re.sub(r"\s+", " ", s).casefold()
    if value == int(value):
        return str(int(value))
    return repr(value)


def aggregate_votes(
    votes: Sequence[VerifierVote], audit: tuple[str, bool]
) -> VerifierVerdict:
    """Apply the three-clause acceptance rule to one committee round."""
    if len(votes) != COMMITTEE_SIZE:
        raise WrongCommitteeSize(f"expected {COMMITTEE_SIZE} votes, got {len(votes)}")
    audit_id, audit_passed = audit
    if audit_id not in {v.verifier_id for v in votes}:
        raise VerificationError(f"audit verifier {audit_id!r} is not on the committee")

    def reject(reason: str) -> VerifierVerdict:
        return VerifierVerdict(
            valid=0,
            votes=tuple(votes),
            audit_verifier=audit_id,
            audit_passed=audit_passed,
            reason=reason,
        )

    accepting = [v for v in votes if v.validity == 1]
    if len(accepting) < 2:
        return reject(REASON_MAJORITY)
    if any(v.flags for v in accepting):
        return reject(REASON_FLAGGED)
    if any(not v.answer.strip() for v in accepting):
        return reject(REASON_MISSING_ANSWER)
    answers = {canonical_answer(v.answer) for v in accepting}
    if len(answers) > 1 and not audit_passed:
        return reject(REASON_INCONSISTENT)
    return VerifierVerdict(
        valid=1,
        votes=tuple(votes),
        audit_verifier=audit_id,
        audit_passed=audit_passed,
        reason=None,
    )


@dataclass(frozen=True)
class ProbeResult:
    pass_rate: float
    attempts: int
    successes: int
    prober_id: str

    def __post_init__(self):
        if not 0 <= self.successes <= self.attempts:
            raise VerificationError(
                f"successes {self.successes} out of range for {self.attempts} attempts"
            )
        if self.pass_rate != self.successes / self.attempts:
            raise VerificationError("pass_rate must equal successes / attempts exactly")


class Prober(Protocol):
    prober_id: str

    def solve_attempts(self, problem: "ProblemStatement", k: int, seed: int) -> int:
        """Number of graded-correct attempts among k independent tries."""


@dataclass(frozen=True)
class SyntheticProber:
    """Budget-limited randomized search over the problem's stated window.

    Each attempt samples ``budget * temperature`` candidates (counter-based,
    so results depend only on the seed) and succeeds when any candidate
    satisfies every congruence; the graded answer is the satisfying value
    itself.  Temperature widens the search breadth, making it the strength
    knob shared with sampling-based backends.
    """

    prober_id: str
    budget: int
    temperature: float = 1.4

    @property
    def draws(self) -> int:
        return max(1, int(round(self.budget * self.temperature)))

    def solve_attempts(self, problem: "ProblemStatement", k: int, seed: int) -> int:
        payload = problem.payload
        return kernels.probe_attempts(
            payload.residues(), payload.moduli(), payload.window, self.draws, k, seed
        )


@dataclass(frozen=True)
class ProberPool:
    """Weak-to-strong prober lineup with an accuracy moving average per stage."""

    probers: tuple[Prober, ...]
    active_index: int = 0
    mastery: float = 0.5
    alpha: float = 0.2
    switch_threshold: float = 0.30
    batch_size: int = 500
    reinit_pending: bool = False
    exhausted: bool = False

    def __post_init__(self):
        if not self.probers:
            raise ProberBackendUnavailable("prober pool is empty")
        if not 0 <= self.active_index < len(self.probers):
            raise VerificationError(f"active prober index {self.active_index} out of range")
        if not 0.0 <= self.mastery <= 1.0:
            raise VerificationError(f"mastery must lie in [0, 1], got {self.mastery}")
        if not 0.0 < self.alpha < 1.0:
            raise VerificationError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def active(self) -> Prober:
        return self.probers[self.active_index]


def probe(
    problem: "ProblemStatement", pool: ProberPool, k: int = 16, seed: int = 0
) -> ProbeResult:
    """Estimate difficulty as the active prober's pass rate over k attempts."""
    if k < 1:
        raise VerificationError(f"attempt count must be >= 1, got {k}")
    prober = pool.active
    successes = prober.solve_attempts(problem, k, seed)
    return ProbeResult(
        pass_rate=successes / k,
        attempts=k,
        successes=successes,
        prober_id=prober.prober_id,
    )


def update_mastery(pool: ProberPool, batch_accuracy: float) -> ProberPool:
    """Fold one full batch's accuracy into the mastery state.

    After a switch, the next observed batch accuracy seeds the new prober's
    mastery directly instead of being blended into the old value.  When
    mastery sinks below the switch threshold and a stronger prober exists,
    the pool advances; the last prober only raises the ``exhausted`` flag.
    """
    if not 0.0 <= batch_accuracy <= 1.0:
        raise VerificationError(f"batch accuracy must lie in [0, 1], got {batch_accuracy}")
    if pool.reinit_pending:
        mastery = batch_accuracy
    else:
        mastery = (1.0 - pool.alpha) * pool.mastery + pool.alpha * batch_accuracy
    if mastery < pool.switch_threshold:
        if pool.active_index + 1 < len(pool.probers):
            return replace(
                pool,
                active_index=pool.active_index + 1,
                mastery=mastery,
                reinit_pending=True,
                exhausted=False,
            )
        return replace(pool, mastery=mastery, reinit_pending=False, exhausted=True)
    return replace(pool, mastery=mastery, reinit_pending=False, exhausted=False)


# ---------------------------------------------------------------------------
# synthetic committee members
# ---------------------------------------------------------------------------

PERSONA_SOUND = "sound"
PERSONA_NOISY = "noisy"
PERSONA_ABSTAINING = "abstaining"


@dataclass(frozen=True)
class Persona:
    kind: str
    verifier_id: str
    p_flip: float = 0.0

    def __post_init__(self):
        if self.kind not in (PERSONA_SOUND, PERSONA_NOISY, PERSONA_ABSTAINING):
            raise VerificationError(f"unknown persona kind {self.kind!r}")
        if not 0.0 <= self.p_flip <= 1.0:
            raise VerificationError(f"p_flip must lie in [0, 1], got {self.p_flip}")


def synthetic_verifier_vote(
    problem: "ProblemStatement",
    persona: Persona,
    rng: np.random.Generator | None = None,
) -> VerifierVote:
    """One committee member's vote on a synthetic problem.

    The sound persona reports ground-truth solvability with the least
    non-negative solution as its answer; the noisy persona flips that
    validity with probability ``p_flip``; the abstaining persona declines
    with an underspecification flag.
    """
    if persona.kind == PERSONA_ABSTAINING:
        return VerifierVote(
            verifier_id=persona.verifier_id,
            validity=0,
            answer="",
            rationale="cannot certify well-posedness",
            flags=frozenset({FLAG_UNDERSPECIFIED}),
        )
    solvable, least, _ = problem.payload.solve()
    validity = 1 if solvable else 0
    answer = str(least) if solvable else ""
    rationale = (
        f"system admits least solution {least}" if solvable else "congruences are inconsistent"
    )
    if persona.kind == PERSONA_NOISY and persona.p_flip > 0.0:
        if rng is None:
            raise VerificationError("noisy persona needs a random generator")
        if rng.random() < persona.p_flip:
            validity = 1 - validity
            answer = str(least) if validity and solvable else ("0" if validity else "")
            rationale = "judgement flipped under noise"
    return VerifierVote(
        verifier_id=persona.verifier_id,
        validity=validity,
        answer=answer,
        rationale=rationale,
    )


def run_committee(
    problem: "ProblemStatement",
    personas: Sequence[Persona],
    rng: np.random.Generator,
) -> VerifierVerdict:
    """Collect three votes, draw the second-audit verifier, and aggregate.

    The synthetic audit confirms a discrepancy exactly when the audited
    verifier's own answer matches the ground-truth least solution.
    """
    if len(personas) != COMMITTEE_SIZE:
        raise WrongCommitteeSize(f"expected {COMMITTEE_SIZE} personas, got {len(personas)}")
    votes = [synthetic_verifier_vote(problem, p, rng) for p in personas]
    audit_idx = int(rng.integers(COMMITTEE_SIZE))
    audit_vote = votes[audit_idx]
    solvable, least, _ = problem.payload.solve()
    audit_passed = bool(
        solvable and audit_vote.answer and canonical_answer(audit_vote.answer) == str(least)
    )
    return aggregate_votes(votes, (audit_vote.verifier_id, audit_passed))
