import json

from skillsynth.environment import scripted_expert
from skillsynth.records import TrajectoryWriter, read_jsonl, trajectory_record
from skillsynth.rewards import RewardConfig, attach_rewards
from skillsynth.verification import Persona, run_committee


def _episode(task, abc_skills, rng, episode_id="e0"):
    personas = tuple(Persona(kind="sound", verifier_id=f"v{i}") for i in range(3))
    traj = scripted_expert(task, abc_skills, episode_id=episode_id, category="residues")
    verdict = run_committee(traj.terminal.problem, personas, rng)
    return attach_rewards(traj, verdict, None, RewardConfig())


class TestTrajectoryRecords:
    def test_schema_fields(self, task, abc_skills, rng):
        record = trajectory_record(_episode(task, abc_skills, rng))
        assert set(record) == {"episode_id", "category", "steps", "terminal"}
        assert set(record["terminal"]) == {
            "problem_text",
            "skill_names",
            "valid",
            "reason",
            "pass_rate",
            "terminal_reward",
        }
        assert all(set(s) == {"stage", "action", "process_reward"} for s in record["steps"])

    def test_truncated_terminal_is_null(self, task, abc_skills):
        from skillsynth.environment import Trajectory

        record = trajectory_record(
            Trajectory(steps=(), terminal=None, episode_id="t", category="c")
        )
        assert record["terminal"] is None

    def test_append_and_read_back(self, task, abc_skills, rng, tmp_path):
        path = tmp_path / "trajectories.jsonl"
        episode = _episode(task, abc_skills, rng)
        with TrajectoryWriter(path) as writer:
            assert writer.append(episode)
        rows = list(read_jsonl(path))
        assert rows == [trajectory_record(episode)]

    def test_resume_never_duplicates(self, task, abc_skills, rng, tmp_path):
        path = tmp_path / "trajectories.jsonl"
        first = _episode(task, abc_skills, rng, "e0")
        second = _episode(task, abc_skills, rng, "e1")
        with TrajectoryWriter(path) as writer:
            writer.append(first)
        # a resumed writer sees the existing id and skips it
        with TrajectoryWriter(path) as writer:
            assert not writer.append(first)
            assert writer.append(second)
        ids = [r["episode_id"] for r in read_jsonl(path)]
        assert ids == ["e0", "e1"]

    def test_stable_bytes(self, task, abc_skills, rng, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        episode = _episode(task, abc_skills, rng)
        for path in (a, b):
            with TrajectoryWriter(path) as writer:
                writer.append(episode)
        assert a.read_bytes() == b.read_bytes()

    def test_records_are_plain_json(self, task, abc_skills, rng):
        record = trajectory_record(_episode(task, abc_skills, rng))
        json.dumps(record)  # no numpy scalars or exotic types
