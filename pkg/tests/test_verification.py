import itertools
import math

import numpy as np
import pytest

from skillsynth.environment import Congruence, ConstraintSystem, ProblemStatement
from skillsynth.verification import (
    FLAG_AMBIGUOUS,
    FLAG_INCOMPLETE,
    FLAG_UNDERSPECIFIED,
    Persona,
    ProbeResult,
    ProberPool,
    SyntheticProber,
    VerificationError,
    VerifierVote,
    WrongCommitteeSize,
    aggregate_votes,
    canonical_answer,
    probe,
    run_committee,
    synthetic_verifier_vote,
    update_mastery,
)


def make_problem(congruences, names=("s0",)):
    window = 1
    for c in congruences:
        window = math.lcm(window, c.modulus)
    return ProblemStatement(
        text="find x",
        skill_names=tuple(names),
        payload=ConstraintSystem(congruences=tuple(congruences), window=window),
    )


def vote(vid, validity, answer="7", flags=frozenset()):
    return VerifierVote(verifier_id=vid, validity=validity, answer=answer, flags=flags)


def committee(bits, answers):
    return [vote(f"v{i}", b, a) for i, (b, a) in enumerate(zip(bits, answers))]


class TestAcceptanceRule:
    def test_majority_with_matching_answers(self):
        verdict = aggregate_votes(committee((1, 1, 0), ("7", "7", "")), ("v0", True))
        assert verdict.valid == 1 and verdict.reason is None

    def test_minority_rejected(self):
        verdict = aggregate_votes(committee((1, 0, 0), ("7", "", "")), ("v1", True))
        assert verdict.valid == 0 and verdict.reason == "majority-failed"

    def test_inconsistent_answers_without_audit(self):
        verdict = aggregate_votes(committee((1, 1, 1), ("a", "b", "b")), ("v2", False))
        assert verdict.valid == 0 and verdict.reason == "inconsistent-answers"

    def test_audit_rescues_inconsistent_answers(self):
        verdict = aggregate_votes(committee((1, 1, 1), ("a", "b", "b")), ("v2", True))
        assert verdict.valid == 1

    def test_flagged_accepting_vote_rejects(self):
        for flag in (FLAG_AMBIGUOUS, FLAG_UNDERSPECIFIED, FLAG_INCOMPLETE):
            votes = [vote("v0", 1), vote("v1", 1, flags=frozenset({flag})), vote("v2", 0, "")]
            verdict = aggregate_votes(votes, ("v0", True))
            assert verdict.valid == 0 and verdict.reason == "quality-flagged"

    def test_missing_answer_rejects(self):
        votes = [vote("v0", 1), vote("v1", 1, answer="  "), vote("v2", 0, "")]
        verdict = aggregate_votes(votes, ("v0", True))
        assert verdict.valid == 0 and verdict.reason == "missing-answer"

    def test_flag_on_rejecting_vote_is_harmless(self):
        votes = [vote("v0", 1), vote("v1", 1), vote("v2", 0, "", frozenset({FLAG_AMBIGUOUS}))]
        assert aggregate_votes(votes, ("v2", False)).valid == 1

    def test_wrong_committee_size(self):
        with pytest.raises(WrongCommitteeSize):
            aggregate_votes([vote("v0", 1)], ("v0", True))

    def test_audit_must_be_committee_member(self):
        with pytest.raises(VerificationError):
            aggregate_votes(committee((1, 1, 1), ("7", "7", "7")), ("v9", True))

    def test_exhaustive_truth_table(self):
        """All 2^3 vote patterns x {match, differ} x {audit pass, fail} against
        an independently hand-derived three-clause rule (flags clean, answers
        present on accepting votes)."""

        def oracle(bits, match, audit_passed):
            if sum(bits) < 2:
                return 0
            if not match and not audit_passed:
                return 0
            return 1

        for bits in itertools.product((0, 1), repeat=3):
            for match in (True, False):
                for audit_passed in (True, False):
                    answers = ["7" if match else f"ans{i}" for i in range(3)]
                    answers = [a if b else "" for a, b in zip(answers, bits)]
                    verdict = aggregate_votes(
                        committee(bits, answers), ("v0", audit_passed)
                    )
                    assert verdict.valid == oracle(bits, match, audit_passed), (
                        bits,
                        match,
                        audit_passed,
                    )

    def test_audit_never_rescues_majority_failure(self):
        for bits in ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)):
            answers = ["7" if b else "" for b in bits]
            verdict = aggregate_votes(committee(bits, answers), ("v0", True))
            assert verdict.valid == 0


class TestCanonicalAnswers:
    def test_numeric_normalization(self):
        assert canonical_answer(" 7 ") == canonical_answer("7.0") == "7"

    def test_text_folding(self):
        assert canonical_answer("The  Answer") == canonical_answer("the answer")

    def test_distinct_numbers_differ(self):
        assert canonical_answer("7") != canonical_answer("8")


class TestSyntheticPersonas:
    def test_sound_on_solvable(self, rng):
        problem = make_problem([Congruence(1, 3), Congruence(2, 5)])
        # brute force over one period: the least solution
        least = min(
            x for x in range(15) if x % 3 == 1 and x % 5 == 2
        )
        v = synthetic_verifier_vote(problem, Persona(kind="sound", verifier_id="s"))
        assert (v.validity, v.answer) == (1, str(least)) and least == 7

    def test_sound_on_unsolvable(self):
        problem = make_problem([Congruence(0, 2), Congruence(1, 2)])
        v = synthetic_verifier_vote(problem, Persona(kind="sound", verifier_id="s"))
        assert v.validity == 0 and v.answer == ""

    def test_noisy_zero_flip_equals_sound(self, rng):
        problem = make_problem([Congruence(1, 3)])
        sound = synthetic_verifier_vote(problem, Persona(kind="sound", verifier_id="x"))
        noisy = synthetic_verifier_vote(
            problem, Persona(kind="noisy", verifier_id="x", p_flip=0.0), rng
        )
        assert (noisy.validity, noisy.answer) == (sound.validity, sound.answer)

    def test_noisy_flip_rate(self):
        problem = make_problem([Congruence(1, 3)])
        rng = np.random.default_rng(3)
        flips = sum(
            synthetic_verifier_vote(
                problem, Persona(kind="noisy", verifier_id="x", p_flip=0.3), rng
            ).validity
            == 0
            for _ in range(2000)
        )
        assert abs(flips / 2000 - 0.3) < 0.03

    def test_abstaining(self):
        problem = make_problem([Congruence(1, 3)])
        v = synthetic_verifier_vote(problem, Persona(kind="abstaining", verifier_id="a"))
        assert v.validity == 0 and FLAG_UNDERSPECIFIED in v.flags

    def test_sound_committee_matches_ground_truth_exhaustively(self, rng):
        personas = tuple(Persona(kind="sound", verifier_id=f"v{i}") for i in range(3))
        for m1, m2 in itertools.product((2, 3, 4), repeat=2):
            for r1 in range(m1):
                for r2 in range(m2):
                    congs = [Congruence(r1, m1), Congruence(r2, m2)]
                    window = math.lcm(m1, m2)
                    truth = any(
                        x % m1 == r1 and x % m2 == r2 for x in range(window)
                    )
                    verdict = run_committee(make_problem(congs), personas, rng)
                    assert verdict.valid == int(truth), (congs, truth)


class TestProbe:
    def test_ceiling(self):
        problem = make_problem([Congruence(0, 2)])
        strong = ProberPool(probers=(SyntheticProber("p", budget=64),))
        result = probe(problem, strong, k=16, seed=0)
        assert result.pass_rate == 1.0

    def test_floor_on_unsolvable(self):
        problem = make_problem([Congruence(0, 2), Congruence(1, 2)])
        pool = ProberPool(probers=(SyntheticProber("p", budget=64),))
        assert probe(problem, pool, k=16, seed=0).pass_rate == 0.0

    def test_reproducible_and_integral(self):
        problem = make_problem([Congruence(1, 3), Congruence(2, 5)])
        pool = ProberPool(probers=(SyntheticProber("p", budget=4),))
        a = probe(problem, pool, k=16, seed=99)
        b = probe(problem, pool, k=16, seed=99)
        assert a == b
        assert a.pass_rate * a.attempts == a.successes

    def test_bad_attempt_count(self):
        problem = make_problem([Congruence(0, 2)])
        pool = ProberPool(probers=(SyntheticProber("p", budget=1),))
        with pytest.raises(VerificationError):
            probe(problem, pool, k=0)

    def test_binomial_distribution_at_half_density(self):
        """Budget-limited random prober, one draw per attempt, density 1/2:
        successes over k=16 attempts follow Binomial(16, p) with p derived by
        brute-forcing the prober's search space."""
        problem = make_problem([Congruence(0, 2)])
        window = problem.payload.window
        hits = sum(
            1
            for x in range(window)
            if all(x % c.modulus == c.residue for c in problem.payload.congruences)
        )
        p = hits / window
        assert p == 0.5
        pool = ProberPool(probers=(SyntheticProber("p", budget=1, temperature=1.0),))
        n_runs = 4000
        counts = np.array(
            [probe(problem, pool, k=16, seed=s).successes for s in range(n_runs)]
        )
        mean, var = counts.mean(), counts.var()
        # Binomial(16, 1/2): mean 8, variance 4
        assert abs(mean - 16 * p) < 4 * math.sqrt(16 * p * (1 - p) / n_runs) + 0.05
        assert abs(var - 4.0) < 0.4
        for k in (6, 7, 8, 9, 10):
            expected = math.comb(16, k) * p**16
            freq = float((counts == k).mean())
            se = math.sqrt(expected * (1 - expected) / n_runs)
            assert abs(freq - expected) < 5 * se + 1e-3, k

    def test_temperature_widens_search(self):
        problem = make_problem([Congruence(3, 8)])
        cold = SyntheticProber("c", budget=4, temperature=1.0)
        hot = SyntheticProber("h", budget=4, temperature=2.0)
        assert hot.draws > cold.draws


class TestMastery:
    def test_ema_substitution(self):
        pool = ProberPool(probers=(SyntheticProber("a", 1), SyntheticProber("b", 4)),
                          mastery=0.5, alpha=0.2)
        assert update_mastery(pool, 1.0).mastery == pytest.approx(0.6, abs=1e-15)

    def test_switch_fires_below_threshold(self):
        pool = ProberPool(probers=(SyntheticProber("a", 1), SyntheticProber("b", 4)),
                          mastery=0.31, alpha=0.5)
        nxt = update_mastery(pool, 0.1)
        assert nxt.mastery == pytest.approx(0.205, abs=1e-15)
        assert nxt.active_index == 1 and nxt.reinit_pending

    def test_last_prober_no_switch_flag(self):
        pool = ProberPool(probers=(SyntheticProber("a", 1),), mastery=0.31, alpha=0.5)
        nxt = update_mastery(pool, 0.1)
        assert nxt.active_index == 0 and nxt.exhausted

    def test_reinit_seeds_from_first_batch(self):
        pool = ProberPool(probers=(SyntheticProber("a", 1), SyntheticProber("b", 4)),
                          mastery=0.31, alpha=0.5)
        switched = update_mastery(pool, 0.1)
        seeded = update_mastery(switched, 0.9)
        assert seeded.mastery == 0.9 and not seeded.reinit_pending

    def test_geometric_convergence(self):
        pool = ProberPool(probers=(SyntheticProber("a", 1),), mastery=0.5, alpha=0.2)
        target = 0.8
        gap0 = abs(pool.mastery - target)
        for t in range(1, 120):
            pool = update_mastery(pool, target)
            assert abs(abs(pool.mastery - target) - (1 - pool.alpha) ** t * gap0) < 1e-9

    def test_accuracy_bounds(self):
        pool = ProberPool(probers=(SyntheticProber("a", 1),))
        with pytest.raises(VerificationError):
            update_mastery(pool, 1.5)


class TestProbeResultInvariants:
    def test_pass_rate_must_be_exact(self):
        with pytest.raises(VerificationError):
            ProbeResult(pass_rate=0.49, attempts=16, successes=8, prober_id="p")

    def test_successes_bounded(self):
        with pytest.raises(VerificationError):
            ProbeResult(pass_rate=2.0, attempts=4, successes=8, prober_id="p")
