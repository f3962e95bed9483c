"""Chat-completion adapter for external verifier and prober services.

Verifier requests carry the proposer's full generation trace together with
the final problem statement; prober requests carry only the final statement.
Responses are expected as a single JSON object in the completion text; the
token budget per verification defaults to 36k and is configurable.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import httpx

from .environment import ProblemStatement
from .verification import KNOWN_FLAGS, VerifierVote


class BackendUnavailable(Exception):
    pass


VERIFIER_SYSTEM_PROMPT = (
    "You audit proposed problems. Attempt to solve the problem, then reply with "
    'one JSON object: {"validity": 0 or 1, "answer": "<final answer>", '
    '"rationale": "<brief justification>", "flags": [subset of '
    '"ambiguous", "underspecified", "incomplete-solution"]}.'
)

PROBER_SYSTEM_PROMPT = (
    "Solve the problem. Think step by step, then state the final integer answer "
    "on the last line as: ANSWER: <value>"
)


@dataclass
class ChatCompletionClient:
    """Minimal JSON chat-completion client."""

    base_url: str
    model: str
    token_budget: int = 36_000
    temperature: float = 0.0
    timeout: float = 60.0
    transport: httpx.BaseTransport | None = field(default=None, repr=False)

    def complete(self, messages: list[dict], temperature: float | None = None, seed: int | None = None) -> str:
        payload = {
            "model": self.model,
            "messages": messages,
            "max_tokens": self.token_budget,
            "temperature": self.temperature if temperature is None else temperature,
        }
        if seed is not None:
            payload["seed"] = seed
        try:
            with httpx.Client(
                base_url=self.base_url, timeout=self.timeout, transport=self.transport
            ) as client:
                response = client.post("/chat/completions", json=payload)
                response.raise_for_status()
                body = response.json()
            return body["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise BackendUnavailable(f"chat backend failed: {exc}") from exc


def _extract_json(text: str) -> dict:
    start = text.find("{")
    if start < 0:
        raise BackendUnavailable(f"no JSON object in backend reply: {text[:80]!r}")
    depth = 0
    for i in range(start, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                try:
                    return json.loads(text[start : i + 1])
                except json.JSONDecodeError as exc:
                    raise BackendUnavailable(f"malformed JSON in backend reply: {exc}") from exc
    raise BackendUnavailable("unterminated JSON object in backend reply")


@dataclass
class BackendVerifier:
    """Committee member backed by a chat-completion service."""

    verifier_id: str
    client: ChatCompletionClient

    def vote(self, problem: ProblemStatement, trace: str) -> VerifierVote:
        content = self.client.complete(
            [
                {"role": "system", "content": VERIFIER_SYSTEM_PROMPT},
                {
                    "role": "user",
                    "content": (
                        "Full generation trace:\n"
                        f"{trace}\n\n"
                        "Final problem statement:\n"
                        f"{problem.text}"
                    ),
                },
            ]
        )
        data = _extract_json(content)
        flags = frozenset(f for f in data.get("flags", []) if f in KNOWN_FLAGS)
        return VerifierVote(
            verifier_id=self.verifier_id,
            validity=1 if data.get("validity") else 0,
            answer=str(data.get("answer", "")),
            rationale=str(data.get("rationale", "")),
            flags=flags,
        )


_ANSWER_RE = re.compile(r"ANSWER:\s*(-?\d+)")


@dataclass
class BackendProber:
    """Difficulty prober backed by a chat-completion service.

    Attempts are graded with the same rule the synthetic grader uses: the
    returned integer must satisfy every congruence of the payload and fall
    inside the stated window.
    """

    prober_id: str
    client: ChatCompletionClient
    temperature: float = 1.4

    def solve_attempts(self, problem: ProblemStatement, k: int, seed: int) -> int:
        successes = 0
        for attempt in range(k):
            content = self.client.complete(
                [
                    {"role": "system", "content": PROBER_SYSTEM_PROMPT},
                    {"role": "user", "content": problem.text},
                ],
                temperature=self.temperature,
                seed=seed + attempt,
            )
            match = _ANSWER_RE.search(content)
            if match and grade_answer(problem, int(match.group(1))):
                successes += 1
        return successes


def grade_answer(problem: ProblemStatement, value: int) -> bool:
    """Rule-based grading: any in-window value satisfying all congruences."""
    payload = problem.payload
    if not 0 <= value < payload.window:
        return False
    return all(value % c.modulus == c.residue for c in payload.congruences)
