"""Minimal MCP server: initialize, tools/list and tools/call over JSON-RPC 2.0.

Two transports share one dispatcher. ``serve_stdio`` reads newline-delimited
JSON-RPC messages; ``make_http_server`` accepts a single JSON-RPC message per
``POST /rpc``. Tool failures come back in-band (``isError: true``) so the
agent reads the error text like any other observation.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import IO, Any

import jsonschema

from .tools import TOOL_SPECS, ClinicalTools, InvalidParams, ToolError, UnknownTool, render_payload

log = logging.getLogger(__name__)

PROTOCOL_VERSION = "2024-11-05"
SERVER_INFO = {"name": "ehr-mcp", "version": "0.1.0"}
MAX_HTTP_BODY = 1 << 20

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
INTERNAL_ERROR = -32603
NOT_INITIALIZED = -32002


def encode(message: Any) -> str:
    return json.dumps(message, ensure_ascii=False, separators=(",", ":"))


def error_response(msg_id: Any, code: int, message: str) -> dict:
    return {"jsonrpc": "2.0", "id": msg_id, "error": {"code": code, "message": message}}


def tool_descriptors() -> list[dict]:
    return [
        {"name": name, "description": desc, "inputSchema": schema}
        for name, (desc, schema) in TOOL_SPECS.items()
    ]


_VALIDATORS = {
    name: jsonschema.Draft202012Validator(schema) for name, (_, schema) in TOOL_SPECS.items()
}


def _schema_error(name: str, args: dict) -> InvalidParams | None:
    err = jsonschema.exceptions.best_match(_VALIDATORS[name].iter_errors(args))
    if err is None:
        return None
    if err.validator == "required":
        missing = next(f for f in err.validator_value if f not in args)
        return InvalidParams(missing, "required argument is missing")
    if err.validator == "additionalProperties":
        extra = sorted(set(args) - set(err.schema.get("properties", {})))
        return InvalidParams(extra[0] if extra else "arguments", "unexpected argument")
    field_name = err.path[0] if err.path else "arguments"
    return InvalidParams(str(field_name), err.message)


class McpServer:
    """Dispatches JSON-RPC messages to the clinical tools."""

    def __init__(self, tools: ClinicalTools):
        self.tools = tools

    def session(self, *, initialized: bool = False) -> "Session":
        return Session(self, initialized=initialized)

    def call_tool(self, name: str, args: Any) -> dict:
        started = time.perf_counter()
        try:
            if name not in TOOL_SPECS:
                raise UnknownTool(name)
            bad = _schema_error(name, args)
            if bad is not None:
                raise bad
            text = render_payload(self.tools.call(name, args))
            result = {"content": [{"type": "text", "text": text}], "isError": False}
            outcome = "ok"
        except ToolError as exc:
            result = {
                "content": [{"type": "text", "text": str(exc)}],
                "isError": True,
                "_meta": {"errorCode": exc.code},
            }
            outcome = exc.code
        log.info(
            "tool=%s args=%s duration_ms=%.1f outcome=%s",
            name,
            encode(args),
            (time.perf_counter() - started) * 1000,
            outcome,
        )
        return result


@dataclass
class Session:
    server: McpServer
    initialized: bool = False
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def handle_line(self, line: str) -> str | None:
        """Handle one serialized message; returns the serialized reply, if any."""
        try:
            message = json.loads(line)
        except ValueError:
            return encode(error_response(None, PARSE_ERROR, "Parse error"))
        reply = self.handle(message)
        return None if reply is None else encode(reply)

    def handle(self, message: Any) -> Any:
        if isinstance(message, list):
            if not message:
                return error_response(None, INVALID_REQUEST, "Invalid Request")
            replies = [r for r in (self._handle_one(m) for m in message) if r is not None]
            return replies or None
        return self._handle_one(message)

    def _handle_one(self, msg: Any) -> dict | None:
        if (
            not isinstance(msg, dict)
            or msg.get("jsonrpc") != "2.0"
            or not isinstance(msg.get("method"), str)
        ):
            msg_id = msg.get("id") if isinstance(msg, dict) else None
            return error_response(msg_id, INVALID_REQUEST, "Invalid Request")
        is_notification = "id" not in msg
        msg_id = msg.get("id")
        if not is_notification and (
            isinstance(msg_id, bool) or not isinstance(msg_id, (int, str)) and msg_id is not None
        ):
            return error_response(None, INVALID_REQUEST, "Invalid Request")
        with self._lock:
            try:
                result = self._dispatch(msg["method"], msg.get("params"))
            except _RpcError as exc:
                return None if is_notification else error_response(msg_id, exc.code, exc.message)
            except Exception:  # noqa: BLE001
                log.exception("internal error handling %s", msg["method"])
                if is_notification:
                    return None
                return error_response(msg_id, INTERNAL_ERROR, "Internal error")
        if is_notification:
            return None
        return {"jsonrpc": "2.0", "id": msg_id, "result": result}

    def _dispatch(self, method: str, params: Any) -> Any:
        if method == "initialize":
            self.initialized = True
            return {
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": {"tools": {"listChanged": False}},
                "serverInfo": SERVER_INFO,
            }
        if method.startswith("notifications/"):
            return None
        if not self.initialized:
            raise _RpcError(NOT_INITIALIZED, f"Server not initialized: {method} before initialize")
        if method == "ping":
            return {}
        if method == "tools/list":
            return {"tools": tool_descriptors()}
        if method == "tools/call":
            if not isinstance(params, dict) or not isinstance(params.get("name"), str):
                raise _RpcError(INVALID_PARAMS, "tools/call requires a tool name")
            args = params.get("arguments", {})
            if args is None:
                args = {}
            if not isinstance(args, dict):
                raise _RpcError(INVALID_PARAMS, "tool arguments must be an object")
            return self.server.call_tool(params["name"], args)
        raise _RpcError(METHOD_NOT_FOUND, f"Method not found: {method}")


class _RpcError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def serve_stdio(server: McpServer, stdin: IO[str], stdout: IO[str]) -> None:
    """Serve one session over newline-delimited JSON until ``stdin`` closes."""
    session = server.session()
    for line in stdin:
        if not line.strip():
            continue
        reply = session.handle_line(line)
        if reply is not None:
            stdout.write(reply + "\n")
            stdout.flush()


class _RpcHandler(BaseHTTPRequestHandler):
    server: "_HttpServer"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt: str, *args: Any) -> None:
        log.debug("%s - " + fmt, self.address_string(), *args)

    def _send(self, status: int, body: str | None, extra: dict | None = None) -> None:
        data = b"" if body is None else body.encode("utf-8")
        self.send_response(status)
        if body is not None:
            self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        for k, v in (extra or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(data)

    def _not_allowed(self) -> None:
        # any request body is left unread, so the connection cannot be reused
        self.close_connection = True
        self._send(
            HTTPStatus.METHOD_NOT_ALLOWED,
            encode(error_response(None, INVALID_REQUEST, "Method not allowed")),
            {"Allow": "POST"},
        )

    do_GET = do_PUT = do_DELETE = do_PATCH = do_HEAD = _not_allowed

    def do_POST(self) -> None:
        try:
            length = int(self.headers.get("Content-Length", ""))
        except ValueError:
            self.close_connection = True
            self._send(
                HTTPStatus.LENGTH_REQUIRED,
                encode(error_response(None, INVALID_REQUEST, "Content-Length required")),
            )
            return
        if length > self.server.max_body:
            self.close_connection = True
            self._send(
                HTTPStatus.REQUEST_ENTITY_TOO_LARGE,
                encode(error_response(None, INVALID_REQUEST, "Request body too large")),
            )
            return
        raw = self.rfile.read(length)
        if self.path.split("?", 1)[0] != "/rpc":
            self._send(HTTPStatus.NOT_FOUND, encode(error_response(None, INVALID_REQUEST, "Not found")))
            return
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError:
            self._send(HTTPStatus.OK, encode(error_response(None, PARSE_ERROR, "Parse error")))
            return
        # Stateless: every request gets its own already-initialized session.
        reply = self.server.mcp.session(initialized=True).handle_line(text)
        if reply is None:
            self._send(HTTPStatus.ACCEPTED, None)
        else:
            self._send(HTTPStatus.OK, reply)


class _HttpServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], mcp: McpServer, max_body: int):
        super().__init__(address, _RpcHandler)
        self.mcp = mcp
        self.max_body = max_body


def make_http_server(
    server: McpServer, host: str = "127.0.0.1", port: int = 8765, max_body: int = MAX_HTTP_BODY
) -> ThreadingHTTPServer:
    """Bind the HTTP transport; call ``serve_forever()`` on the result to run it."""
    return _HttpServer((host, port), server, max_body)


def serve_http(server: McpServer, host: str = "127.0.0.1", port: int = 8765) -> None:
    httpd = make_http_server(server, host, port)
    log.info("serving MCP over HTTP on http://%s:%d/rpc", *httpd.server_address[:2])
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
