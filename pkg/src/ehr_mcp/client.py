"""MCP client handles used by the agent: in-process, stdio subprocess and HTTP."""

from __future__ import annotations

import itertools
import json
import subprocess
import sys
import threading
from dataclasses import dataclass
from typing import Any, Protocol, Sequence

import httpx

from .server import McpServer, encode


@dataclass(frozen=True)
class ToolResult:
    text: str
    is_error: bool = False
    error_code: str | None = None


class McpError(Exception):
    """A JSON-RPC level error returned by the server."""

    def __init__(self, code: int, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code
        self.message = message


class ToolClient(Protocol):
    def list_tools(self) -> list[dict]: ...

    def call_tool(self, name: str, arguments: dict) -> ToolResult: ...


class _JsonRpcClient:
    """Shared request/response bookkeeping; subclasses provide ``_roundtrip``."""

    def __init__(self) -> None:
        self._ids = itertools.count(1)
        self._tools: list[dict] | None = None
        self._ready = False
        self._lock = threading.Lock()

    def _roundtrip(self, line: str, expect_reply: bool = True) -> str | None:
        raise NotImplementedError

    def request(self, method: str, params: dict | None = None) -> Any:
        with self._lock:
            if not self._ready and method != "initialize":
                self._initialize()
            return self._request(method, params)

    def _request(self, method: str, params: dict | None) -> Any:
        msg_id = next(self._ids)
        msg: dict[str, Any] = {"jsonrpc": "2.0", "id": msg_id, "method": method}
        if params is not None:
            msg["params"] = params
        reply = json.loads(self._roundtrip(encode(msg)) or "null")
        if not isinstance(reply, dict) or reply.get("id") != msg_id:
            raise McpError(-32603, f"mismatched reply for request {msg_id}: {reply!r}")
        if "error" in reply:
            raise McpError(reply["error"]["code"], reply["error"]["message"])
        return reply["result"]

    def _initialize(self) -> None:
        self._request(
            "initialize",
            {
                "protocolVersion": "2024-11-05",
                "capabilities": {},
                "clientInfo": {"name": "ehr-mcp-agent", "version": "0.1.0"},
            },
        )
        self._roundtrip(
            encode({"jsonrpc": "2.0", "method": "notifications/initialized"}), expect_reply=False
        )
        self._ready = True

    def list_tools(self) -> list[dict]:
        if self._tools is None:
            self._tools = self.request("tools/list")["tools"]
        return self._tools

    def call_tool(self, name: str, arguments: dict) -> ToolResult:
        result = self.request("tools/call", {"name": name, "arguments": arguments})
        text = "".join(c.get("text", "") for c in result.get("content", []) if c.get("type") == "text")
        meta = result.get("_meta") or {}
        return ToolResult(text, bool(result.get("isError")), meta.get("errorCode"))


class LocalClient(_JsonRpcClient):
    """Talks to an in-process server through the same serialized messages."""

    def __init__(self, server: McpServer):
        super().__init__()
        self._session = server.session()

    def _roundtrip(self, line: str, expect_reply: bool = True) -> str | None:
        return self._session.handle_line(line)


class StdioClient(_JsonRpcClient):
    """Spawns ``ehr-mcp serve --transport stdio`` and speaks to it over pipes."""

    def __init__(self, argv: Sequence[str] | None = None, *, warehouse: str | None = None):
        super().__init__()
        if argv is None:
            argv = [sys.executable, "-m", "ehr_mcp", "--warehouse", str(warehouse), "serve"]
        self._proc = subprocess.Popen(
            list(argv),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            encoding="utf-8",
        )

    def _roundtrip(self, line: str, expect_reply: bool = True) -> str | None:
        assert self._proc.stdin and self._proc.stdout
        self._proc.stdin.write(line + "\n")
        self._proc.stdin.flush()
        if not expect_reply:
            return None
        reply = self._proc.stdout.readline()
        if not reply:
            raise McpError(-32603, "server closed the stream")
        return reply

    def close(self) -> None:
        if self._proc.stdin:
            self._proc.stdin.close()
        self._proc.wait(timeout=10)
        if self._proc.stdout:
            self._proc.stdout.close()

    def __enter__(self) -> "StdioClient":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


class HttpClient(_JsonRpcClient):
    def __init__(self, url: str, timeout: float = 30.0):
        super().__init__()
        self._url = url
        self._http = httpx.Client(timeout=timeout)

    def _roundtrip(self, line: str, expect_reply: bool = True) -> str | None:
        resp = self._http.post(
            self._url, content=line.encode("utf-8"), headers={"Content-Type": "application/json"}
        )
        if resp.status_code == 202:
            return None
        return resp.text

    def close(self) -> None:
        self._http.close()
