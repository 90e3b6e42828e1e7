"""OpenAI-compatible chat-completions driver and the live-LLM policy built on it."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import httpx

from .agent import Action, FinalAnswer, ProviderError, Step, ToolCall

log = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str
    model: str
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 1.0
    max_steps: int = 10
    timeout: float = 120.0
    retries: int = 3
    backoff: float = 1.0

    @classmethod
    def from_file(cls, path: str | Path) -> "ProviderConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        missing = {"base_url", "model"} - set(known)
        if missing:
            raise ValueError(f"provider config missing: {', '.join(sorted(missing))}")
        return cls(**known)


def openai_tools(descriptors: list[dict]) -> list[dict]:
    """Translate MCP tool descriptors into chat-completions function definitions."""
    return [
        {
            "type": "function",
            "function": {
                "name": d["name"],
                "description": d.get("description", ""),
                "parameters": d.get("inputSchema", {"type": "object"}),
            },
        }
        for d in descriptors
    ]


def build_messages(prompt: str, steps: list[Step]) -> list[dict]:
    """Rebuild the chat history from the prompt and the tool steps so far."""
    messages: list[dict] = [{"role": "user", "content": prompt}]
    for i, s in enumerate(steps):
        call_id = s.call_id or f"call_{i}"
        messages.append(
            {
                "role": "assistant",
                "content": None,
                "tool_calls": [
                    {
                        "id": call_id,
                        "type": "function",
                        "function": {
                            "name": s.tool_name,
                            "arguments": json.dumps(s.arguments, ensure_ascii=False),
                        },
                    }
                ],
            }
        )
        messages.append({"role": "tool", "tool_call_id": call_id, "content": s.result_text})
    return messages


class ChatProvider:
    def __init__(self, config: ProviderConfig, client: httpx.Client | None = None):
        self.config = config
        self._http = client or httpx.Client(timeout=config.timeout)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, messages: list[dict], tools: list[dict]) -> dict:
        """POST one chat completion, retrying transient failures with backoff."""
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        body = {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        }
        if tools:
            body["tools"] = tools
            body["parallel_tool_calls"] = False
        last = "no attempt made"
        for attempt in range(self.config.retries + 1):
            if attempt:
                time.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                resp = self._http.post(url, json=body, headers=self._headers())
            except httpx.TransportError as exc:
                last = f"transport error: {exc}"
                log.warning("chat completion attempt %d failed: %s", attempt + 1, last)
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last = f"HTTP {resp.status_code}"
                log.warning("chat completion attempt %d failed: %s", attempt + 1, last)
                continue
            if resp.status_code >= 400:
                raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError:
                raise ProviderError("provider returned a non-JSON body") from None
        raise ProviderError(f"giving up after {self.config.retries + 1} attempts: {last}")

    def close(self) -> None:
        self._http.close()


def parse_completion(data: dict) -> Action:
    try:
        message = data["choices"][0]["message"]
    except (KeyError, IndexError, TypeError):
        raise ProviderError("completion has no message") from None
    calls = message.get("tool_calls") or []
    if calls:
        call = calls[0]
        fn = call.get("function", {})
        try:
            args = json.loads(fn.get("arguments") or "{}")
        except ValueError:
            args = {"_raw": fn.get("arguments")}
        if not isinstance(args, dict):
            args = {"_raw": args}
        return ToolCall(fn.get("name", ""), args, call.get("id"))
    return FinalAnswer(message.get("content") or "")


class LiveLLMPolicy:
    """Lets a chat model drive the loop; the harness adds no system prompt."""

    def __init__(self, provider: ChatProvider):
        self.provider = provider

    def decide(self, prompt: str, steps: list[Step], tools: list[dict]) -> Action:
        data = self.provider.complete(build_messages(prompt, steps), openai_tools(tools))
        return parse_completion(data)
