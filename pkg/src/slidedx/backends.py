"""Wire-protocol clients for the four model roles plus a scripted mock.

All model calls go through ``POST {base}/v1/{role}`` with a JSON body
``{role, mode, prompt, images, references, metadata}`` and come back as
``{text, usage}``. Image payloads are ids resolved by the serving side;
no pixels ever cross this interface.

``Script`` provides the deterministic test double: responses are consumed
strictly in script order per role, and every received request is recorded
for assertions. It can be used in-process (``ScriptedBackend``) or served
over real HTTP (``MockModelServer``).
"""
from __future__ import annotations

import json
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx

from .errors import BackendRejected, BackendUnavailable, ConfigError

ROLES = ("interpreter", "reasoner", "judge", "exam_oracle")
MODE_GENERAL = "general"
MODE_ICL = "icl"


@dataclass(frozen=True)
class BackendEndpoint:
    role: str
    base_url: str
    token: str = ""
    timeout: float = 120.0
    retries: int = 2
    backoff: float = 0.25

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"unknown backend role {self.role!r}")
        if self.timeout <= 0:
            raise ConfigError("timeout must be > 0")
        if self.retries < 0:
            raise ConfigError("retry budget must be >= 0")


@dataclass
class BackendRequest:
    role: str
    prompt: str
    mode: str | None = None
    images: tuple[str, ...] = ()
    references: tuple[str, ...] = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = tuple(self.images)
        self.references = tuple(self.references)
        if self.mode == MODE_ICL and not self.references:
            raise ConfigError("icl requests require reference image ids")
        if self.mode == MODE_GENERAL and self.references:
            raise ConfigError("general requests must not carry references")

    def to_json(self) -> dict:
        return {
            "role": self.role,
            "mode": self.mode,
            "prompt": self.prompt,
            "images": list(self.images),
            "references": list(self.references),
            "metadata": self.metadata,
        }


class HttpBackend:
    """Blocking client for one endpoint; safe for concurrent use."""

    def __init__(self, endpoint: BackendEndpoint, sleep: Callable[[float], None] = time.sleep):
        self.endpoint = endpoint
        self._sleep = sleep

    def complete(self, request: BackendRequest) -> str:
        url = f"{self.endpoint.base_url.rstrip('/')}/v1/{request.role}"
        headers = {}
        if self.endpoint.token:
            headers["Authorization"] = f"Bearer {self.endpoint.token}"
        failures = 0
        while True:
            try:
                response = httpx.post(url, json=request.to_json(), headers=headers,
                                      timeout=self.endpoint.timeout)
            except httpx.HTTPError as exc:
                failures += 1
                if failures > self.endpoint.retries:
                    raise BackendUnavailable(
                        f"{request.role} backend unreachable after {failures} attempts: {exc}"
                    ) from exc
                self._sleep(self.endpoint.backoff * (2 ** (failures - 1)))
                continue
            if response.status_code // 100 != 2:
                raise BackendRejected(response.status_code, response.text)
            return response.json()["text"]


# ---------------------------------------------------------------------------
# scripted fixtures


class ScriptExhausted(Exception):
    def __init__(self, role: str, consumed: int):
        super().__init__(f"script for role {role!r} exhausted after {consumed} responses")
        self.role = role
        self.consumed = consumed


class Script:
    """Ordered fixture: a JSON array of ``{role, response}`` entries
    (``exam_oracle`` entries may instead carry a ``table`` of exam-name
    keyed results). Responses are consumed strictly in order per role."""

    def __init__(self, entries: Sequence[Mapping]):
        self._queues: dict[str, deque] = {role: deque() for role in ROLES}
        for entry in entries:
            role = entry["role"]
            if role not in self._queues:
                raise ConfigError(f"script entry with unknown role {role!r}")
            self._queues[role].append(dict(entry))
        self._lock = threading.Lock()
        self.requests: dict[str, list[dict]] = {role: [] for role in ROLES}
        self.consumed: dict[str, int] = {role: 0 for role in ROLES}

    @classmethod
    def from_file(cls, path: str | Path) -> "Script":
        return cls(json.loads(Path(path).read_text()))

    @staticmethod
    def render_table(table: Mapping[str, str], exams: Sequence[str]) -> str:
        lines = []
        for exam in exams:
            result = table.get(exam)
            if result is None:
                lowered = exam.casefold()
                result = next((v for k, v in table.items() if k.casefold() in lowered),
                              "no result available")
            lines.append(f"{exam}: {result}")
        return "\n".join(lines)

    def pop(self, role: str, request: Mapping) -> str:
        with self._lock:
            self.requests[role].append(dict(request))
            queue = self._queues[role]
            if not queue:
                raise ScriptExhausted(role, self.consumed[role])
            entry = queue.popleft()
            self.consumed[role] += 1
        if "table" in entry:
            exams = list(request.get("metadata", {}).get("exams", []))
            return self.render_table(entry["table"], exams)
        return entry["response"]


class ScriptedBackend:
    """In-process backend over a shared Script (one per role)."""

    def __init__(self, role: str, script: Script):
        self.role = role
        self.script = script

    def complete(self, request: BackendRequest) -> str:
        try:
            return self.script.pop(self.role, request.to_json())
        except ScriptExhausted as exc:
            raise BackendRejected(409, str(exc)) from exc


def scripted_backends(script: Script) -> dict[str, ScriptedBackend]:
    return {role: ScriptedBackend(role, script) for role in ROLES}


class MockModelServer:
    """Threaded HTTP server answering the wire protocol from a Script."""

    def __init__(self, script: Script, host: str = "127.0.0.1", port: int = 0):
        self.script = script
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # silence test output
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    self._reply(400, {"error": "invalid JSON body"})
                    return
                parts = self.path.strip("/").split("/")
                if len(parts) != 2 or parts[0] != "v1" or parts[1] not in ROLES:
                    self._reply(404, {"error": f"unknown path {self.path}"})
                    return
                try:
                    text = server.script.pop(parts[1], body)
                except ScriptExhausted as exc:
                    self._reply(409, {"error": str(exc), "role": exc.role,
                                      "consumed": exc.consumed})
                    return
                self._reply(200, {"text": text, "usage": {}})

            def _reply(self, status, doc):
                payload = json.dumps(doc).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self._httpd = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def requests(self) -> dict[str, list[dict]]:
        return self.script.requests

    def start(self) -> "MockModelServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self) -> "MockModelServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def http_backends(base_url: str, timeout: float = 120.0, retries: int = 2,
                  token: str = "", backoff: float = 0.25) -> dict[str, HttpBackend]:
    """One HttpBackend per role against a single serving base URL."""
    return {
        role: HttpBackend(BackendEndpoint(role, base_url, token, timeout, retries, backoff))
        for role in ROLES
    }
