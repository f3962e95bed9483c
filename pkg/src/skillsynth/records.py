"""Line-delimited persistence for trajectories and run metrics.

One episode per line; field names are stable and documented in the README.
Appends are atomic per episode (single write + flush) and a writer opened on
an existing file refuses episode ids it has already seen, so resumed runs
never duplicate work.  All JSON is emitted with sorted keys and fixed
separators so equal runs produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import IO, Iterator

from .environment import Trajectory


class DuplicateEpisode(Exception):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def trajectory_record(traj: Trajectory) -> dict:
    """Flatten one episode into its wire form."""
    steps = [
        {
            "stage": step.observation.stage.value,
            "action": step.action.serialize(),
            "process_reward": step.process_reward,
        }
        for step in traj.steps
    ]
    record = {
        "episode_id": traj.episode_id,
        "category": traj.category,
        "steps": steps,
        "terminal": None,
    }
    if traj.terminal is not None:
        verdict = traj.terminal.verdict
        probe = traj.terminal.probe
        record["terminal"] = {
            "problem_text": traj.terminal.problem.text,
            "skill_names": list(traj.terminal.problem.skill_names),
            "valid": int(verdict.valid) if verdict is not None else None,
            "reason": verdict.reason if verdict is not None else None,
            "pass_rate": probe.pass_rate if probe is not None else None,
            "terminal_reward": traj.terminal.terminal_reward,
        }
    return record


class JsonlWriter:
    """Single-writer append-only jsonl file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh: IO[str] = open(self.path, "a", encoding="utf-8")

    def write(self, record: dict) -> None:
        self._fh.write(_dumps(record) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TrajectoryWriter(JsonlWriter):
    """Trajectory sink that deduplicates episode ids across resumes."""

    def __init__(self, path: str | Path):
        path = Path(path)
        self.seen: set[str] = set()
        if path.exists():
            for record in read_jsonl(path):
                self.seen.add(record["episode_id"])
        super().__init__(path)

    def append(self, traj: Trajectory) -> bool:
        """Write one episode; returns False when the id was already present."""
        if traj.episode_id in self.seen:
            return False
        self.seen.add(traj.episode_id)
        self.write(trajectory_record(traj))
        return True


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)
