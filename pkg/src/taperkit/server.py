"""HTTP/JSON front end for interactive tapering sessions.

Routes:
    POST  /sessions                      create a session
    POST  /sessions/{id}/measurements    commit a measurement, get the dose
    POST  /sessions/{id}/what-if         hypothetical dose (no state change)
    PATCH /sessions/{id}/constraint      change y_min and/or delta mid-course
    POST  /sessions/{id}/complete        confirm completion after a zero dose
    GET   /sessions/{id}                 full history view

All requests after creation carry the per-session secret in the
X-Session-Secret header.  Errors are JSON problem documents with stable
codes.  Built on the standard-library threading HTTP server: the API is
five small JSON endpoints and the per-session locking lives in the manager.
"""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .policies import gains_from_g0_range
from .session import SessionConfig, SessionError, SessionManager

_SESSION_ROUTE = re.compile(r"^/sessions/([0-9a-f]+)(/(measurements|what-if|constraint|complete))?$")


def config_from_request(doc: dict) -> SessionConfig:
    """Build a session config from explicit gains, a g(0) range, or the
    smallest-noticeable-change rule of thumb."""
    if "rule_of_thumb" in doc:
        rot = doc["rule_of_thumb"]
        dose_step = float(rot["dose_step"])
        dy_lo = float(rot["dy_lo"])
        dy_hi = float(rot["dy_hi"])
        if dose_step <= 0 or dy_lo <= 0 or dy_hi <= 0:
            raise SessionError("invalid_gains", "rule-of-thumb inputs must be positive")
        if dy_lo > dy_hi:
            raise SessionError("invalid_gains", "dy_lo must be <= dy_hi")
        k_plus, k_minus = gains_from_g0_range(dy_lo / dose_step, dy_hi / dose_step)
    elif "g0_range" in doc:
        rng = doc["g0_range"]
        k_plus, k_minus = gains_from_g0_range(float(rng["lo"]), float(rng["hi"]))
    else:
        k_plus = float(doc.get("k_plus", 0.0))
        k_minus = float(doc.get("k_minus", 0.0))
    return SessionConfig(
        k_plus=k_plus,
        k_minus=k_minus,
        y_min=float(doc["y_min"]),
        delta=float(doc.get("delta", 0.0)),
        u_init=float(doc.get("u_init", 0.0)),
        dose_cap=None if doc.get("dose_cap") is None else float(doc["dose_cap"]),
        expected_interval_seconds=doc.get("expected_interval_seconds"),
    )


class SessionHandler(BaseHTTPRequestHandler):
    manager: SessionManager
    ui_dir: Path | None = None
    protocol_version = "HTTP/1.1"

    # -- plumbing ---------------------------------------------------------------

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _problem(self, status: int, code: str, detail: str) -> None:
        self._send_json(status, {
            "type": "about:blank", "title": code.replace("_", " "),
            "status": status, "code": code, "detail": detail,
        })

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        if length == 0:
            return {}
        raw = self.rfile.read(length)
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as e:
            raise SessionError("malformed_json", f"body is not valid JSON: {e.msg}")
        if not isinstance(doc, dict):
            raise SessionError("malformed_json", "body must be a JSON object")
        return doc

    def _dispatch(self, method: str) -> None:
        try:
            self._route(method)
        except SessionError as e:
            self._problem(e.status, e.code, str(e))
        except (KeyError, TypeError, ValueError) as e:
            self._problem(400, "bad_request", str(e))
        except Exception as e:  # pragma: no cover - defensive
            self._problem(500, "internal_error", str(e))

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")

    def do_PATCH(self) -> None:
        self._dispatch("PATCH")

    # -- routing ----------------------------------------------------------------

    def _route(self, method: str) -> None:
        if self.ui_dir is not None and method == "GET" and not self.path.startswith("/sessions"):
            self._serve_ui()
            return
        if self.path == "/sessions" and method == "POST":
            doc = self._read_body()
            created = self.manager.create_session(config_from_request(doc))
            self._send_json(201, created)
            return

        m = _SESSION_ROUTE.match(self.path)
        if not m:
            self._problem(404, "not_found", f"no route {method} {self.path}")
            return
        session_id, action = m.group(1), m.group(3)
        self.manager.authorize(session_id, self.headers.get("X-Session-Secret"))

        if action is None and method == "GET":
            self._send_json(200, self.manager.get_history(session_id))
        elif action == "measurements" and method == "POST":
            doc = self._read_body()
            if "y" not in doc:
                raise SessionError("invalid_measurement", "field 'y' is required")
            if "token" not in doc:
                raise SessionError("invalid_token", "field 'token' is required")
            result = self.manager.submit_measurement(session_id, doc["y"], doc["token"])
            self._send_json(200, result)
        elif action == "what-if" and method == "POST":
            doc = self._read_body()
            result = self.manager.what_if(
                session_id,
                y=doc.get("y"), delta=doc.get("delta"), y_min=doc.get("y_min"),
            )
            self._send_json(200, result)
        elif action == "constraint" and method == "PATCH":
            doc = self._read_body()
            result = self.manager.update_constraint(
                session_id, y_min=doc.get("y_min"), delta=doc.get("delta")
            )
            self._send_json(200, result)
        elif action == "complete" and method == "POST":
            self._send_json(200, self.manager.confirm_completion(session_id))
        else:
            self._problem(405, "method_not_allowed", f"{method} not allowed on {self.path}")

    def _serve_ui(self) -> None:
        rel = self.path.lstrip("/") or "index.html"
        target = (self.ui_dir / rel).resolve()
        if not str(target).startswith(str(self.ui_dir.resolve())) or not target.is_file():
            self._problem(404, "not_found", f"no static file {self.path}")
            return
        content_types = {
            ".html": "text/html", ".js": "text/javascript",
            ".css": "text/css", ".json": "application/json", ".map": "application/json",
        }
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", content_types.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def make_server(
    storage_dir: str | Path,
    host: str = "127.0.0.1",
    port: int = 0,
    ui_dir: str | Path | None = None,
) -> ThreadingHTTPServer:
    manager = SessionManager(storage_dir)
    handler = type("BoundSessionHandler", (SessionHandler,), {
        "manager": manager,
        "ui_dir": None if ui_dir is None else Path(ui_dir),
    })
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(
    storage_dir: str | Path,
    host: str = "127.0.0.1",
    port: int = 8787,
    ui_dir: str | Path | None = None,
) -> None:
    server = make_server(storage_dir, host, port, ui_dir)
    addr = server.server_address
    print(f"session service listening on http://{addr[0]}:{addr[1]} (storage: {storage_dir})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


class BackgroundServer:
    """Run the service on an ephemeral port inside the current process."""

    def __init__(self, storage_dir: str | Path, ui_dir: str | Path | None = None):
        self.server = make_server(storage_dir, port=0, ui_dir=ui_dir)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "BackgroundServer":
        self.thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.server.shutdown()
        self.server.server_close()
