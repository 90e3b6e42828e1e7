"""ReAct loop: the policy picks a tool call or answers, the tool result becomes the next observation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Protocol, Union

from .client import McpError, ToolClient

log = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 10

FINAL_ANSWER = "final_answer"
STEP_LIMIT = "step_limit"
PROVIDER_ERROR = "provider_error"


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict
    call_id: str | None = None


@dataclass(frozen=True)
class FinalAnswer:
    text: str


Action = Union[ToolCall, FinalAnswer]


class ProviderError(RuntimeError):
    """The policy's backing model could not be reached or answered garbage."""


@dataclass(frozen=True)
class Step:
    tool_name: str
    arguments: dict
    result_text: str
    is_error: bool = False
    call_id: str | None = None


@dataclass
class Transcript:
    initial_prompt: str
    steps: list[Step] = field(default_factory=list)
    final_response: str | None = None
    terminated_by: str = FINAL_ANSWER
    error: str | None = None

    @property
    def step_count(self) -> int:
        return len(self.steps)

    def to_json(self) -> dict:
        out = asdict(self)
        out["step_count"] = self.step_count
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Transcript":
        return cls(
            initial_prompt=data["initial_prompt"],
            steps=[Step(**s) for s in data.get("steps", [])],
            final_response=data.get("final_response"),
            terminated_by=data.get("terminated_by", FINAL_ANSWER),
            error=data.get("error"),
        )


class Policy(Protocol):
    def decide(self, prompt: str, steps: list[Step], tools: list[dict]) -> Action: ...


def run_react(
    prompt: str, tools: ToolClient, policy: Policy, max_steps: int = DEFAULT_MAX_STEPS
) -> Transcript:
    """Alternate policy decisions and tool executions until an answer or a limit."""
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    transcript = Transcript(prompt)
    descriptors = tools.list_tools()
    while True:
        try:
            action = policy.decide(prompt, list(transcript.steps), descriptors)
        except ProviderError as exc:
            log.warning("provider error after %d steps: %s", transcript.step_count, exc)
            transcript.terminated_by = PROVIDER_ERROR
            transcript.error = str(exc)
            return transcript
        if isinstance(action, FinalAnswer):
            transcript.final_response = action.text
            transcript.terminated_by = FINAL_ANSWER
            return transcript
        if transcript.step_count >= max_steps:
            transcript.terminated_by = STEP_LIMIT
            return transcript
        transcript.steps.append(_execute(tools, action))


def _execute(tools: ToolClient, call: ToolCall) -> Step:
    try:
        result = tools.call_tool(call.name, call.arguments)
    except McpError as exc:
        return Step(call.name, call.arguments, f"Error: {exc.message}", True, call.call_id)
    return Step(call.name, call.arguments, result.text, result.is_error, call.call_id)


def answer_text(value: Any) -> str:
    """Serialize a structured answer the way the prompts ask for it."""
    return json.dumps(value, ensure_ascii=False)
