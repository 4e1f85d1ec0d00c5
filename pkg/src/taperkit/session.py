"""Interactive tapering sessions backed by an append-only event log.

A session holds an integral-control configuration and a committed history of
well-being measurements; every commit computes the next dose recommendation
from the previous dose and the current setpoint, persists the event (fsynced
before the response is returned), and is idempotent under a client-supplied
token.  What-if queries evaluate the same update rule against hypothetical
inputs without touching state.  Recommendations are a pure function of the
committed history, so replaying a log reproduces them exactly.
"""

from __future__ import annotations

import json
import math
import os
import secrets as _secrets
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .policies import integral_dose
from .verify import theorem2_margins

SNAPSHOT_EVERY = 50


class SessionError(Exception):
    """Domain error with a stable machine-readable code."""

    def __init__(self, code: str, message: str, status: int = 400):
        super().__init__(message)
        self.code = code
        self.status = status


@dataclass(frozen=True)
class SessionConfig:
    k_plus: float
    k_minus: float
    y_min: float
    delta: float = 0.0
    u_init: float = 0.0
    dose_cap: float | None = None
    expected_interval_seconds: float | None = None

    def __post_init__(self) -> None:
        if self.k_plus <= 0 or self.k_minus <= 0:
            raise SessionError("invalid_gains", "gains must be positive")
        if self.k_minus < self.k_plus:
            raise SessionError(
                "invalid_gains",
                f"k_minus ({self.k_minus}) must be >= k_plus ({self.k_plus}): "
                "corrections below the setpoint may not be weaker than those above",
            )
        if self.u_init < 0:
            raise SessionError("invalid_config", "u_init must be >= 0")
        if not math.isfinite(self.y_min):
            raise SessionError("invalid_config", "y_min must be finite")
        if self.dose_cap is not None and self.dose_cap <= 0:
            raise SessionError("invalid_config", "dose_cap must be positive")

    def to_dict(self) -> dict:
        return {
            "k_plus": self.k_plus, "k_minus": self.k_minus, "y_min": self.y_min,
            "delta": self.delta, "u_init": self.u_init, "dose_cap": self.dose_cap,
            "expected_interval_seconds": self.expected_interval_seconds,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SessionConfig":
        return cls(
            k_plus=float(doc["k_plus"]), k_minus=float(doc["k_minus"]),
            y_min=float(doc["y_min"]), delta=float(doc.get("delta", 0.0)),
            u_init=float(doc.get("u_init", 0.0)),
            dose_cap=None if doc.get("dose_cap") is None else float(doc["dose_cap"]),
            expected_interval_seconds=doc.get("expected_interval_seconds"),
        )


@dataclass
class SessionState:
    """Materialized view of one session's event log."""

    session_id: str
    secret: str
    config: SessionConfig
    status: str = "active"  # active | completed | aborted
    y_min: float = 0.0
    delta: float = 0.0
    u_prev: float = 0.0
    measurements: list[dict] = field(default_factory=list)
    recommendations: list[dict] = field(default_factory=list)
    constraint_changes: list[dict] = field(default_factory=list)
    tokens: dict = field(default_factory=dict)  # token -> response dict
    n_events: int = 0

    @classmethod
    def initial(cls, event: dict) -> "SessionState":
        config = SessionConfig.from_dict(event["config"])
        return cls(
            session_id=event["session_id"], secret=event["secret"], config=config,
            y_min=config.y_min, delta=config.delta, u_prev=config.u_init, n_events=1,
        )

    def setpoint(self) -> float:
        return self.y_min + self.delta

    def apply(self, event: dict) -> None:
        kind = event["type"]
        if kind == "measurement":
            self.measurements.append({
                "step": event["step"], "y": event["y"],
                "timestamp": event["timestamp"], "token": event["token"],
                "gap_flagged": event.get("gap_flagged", False),
            })
            self.recommendations.append({"step": event["step"], "dose": event["dose"]})
            self.u_prev = event["dose"]
            self.tokens[event["token"]] = event["response"]
        elif kind == "constraint_updated":
            if event.get("y_min") is not None:
                self.y_min = event["y_min"]
            if event.get("delta") is not None:
                self.delta = event["delta"]
            self.constraint_changes.append({
                "effective_step": event["effective_step"],
                "y_min": self.y_min, "delta": self.delta,
                "timestamp": event["timestamp"],
            })
        elif kind == "completed":
            self.status = "completed"
        elif kind == "aborted":
            self.status = "aborted"
        elif kind == "created":
            raise ValueError("created event must be first")
        else:
            raise ValueError(f"unknown event type {kind!r}")
        self.n_events += 1

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id, "secret": self.secret,
            "config": self.config.to_dict(), "status": self.status,
            "y_min": self.y_min, "delta": self.delta, "u_prev": self.u_prev,
            "measurements": self.measurements,
            "recommendations": self.recommendations,
            "constraint_changes": self.constraint_changes,
            "tokens": self.tokens, "n_events": self.n_events,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SessionState":
        state = cls(
            session_id=doc["session_id"], secret=doc["secret"],
            config=SessionConfig.from_dict(doc["config"]), status=doc["status"],
            y_min=doc["y_min"], delta=doc["delta"], u_prev=doc["u_prev"],
            measurements=list(doc["measurements"]),
            recommendations=list(doc["recommendations"]),
            constraint_changes=list(doc["constraint_changes"]),
            tokens=dict(doc["tokens"]), n_events=doc["n_events"],
        )
        return state


class SessionStore:
    """One JSON-lines event log per session, with periodic snapshots.

    Appends are flushed and fsynced before the caller proceeds, so a commit
    acknowledged to the client survives a crash.  Snapshots only accelerate
    recovery; the log remains the source of truth.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _log_path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.jsonl"

    def _snap_path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.snapshot.json"

    def append(self, session_id: str, event: dict) -> None:
        line = json.dumps(event, sort_keys=True)
        with open(self._log_path(session_id), "a") as f:
            f.write(line + "\n")
            f.flush()
            os.fsync(f.fileno())

    def write_snapshot(self, state: SessionState) -> None:
        path = self._snap_path(state.session_id)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(state.to_dict(), sort_keys=True))
        tmp.replace(path)

    def events(self, session_id: str) -> list[dict]:
        path = self._log_path(session_id)
        if not path.exists():
            return []
        lines = [line for line in path.read_text().splitlines() if line.strip()]
        out = []
        for i, line in enumerate(lines):
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    # torn tail from a crash mid-append: the write was never
                    # acknowledged, so dropping it is the correct recovery
                    break
                raise
        return out

    def load(self, session_id: str) -> SessionState | None:
        events = self.events(session_id)
        if not events:
            return None
        snap = self._snap_path(session_id)
        state: SessionState | None = None
        if snap.exists():
            try:
                state = SessionState.from_dict(json.loads(snap.read_text()))
            except (json.JSONDecodeError, KeyError):
                state = None
        if state is None or state.n_events > len(events):
            state = SessionState.initial(events[0])
            remaining = events[1:]
        else:
            remaining = events[state.n_events:]
        for event in remaining:
            state.apply(event)
        return state

    def session_ids(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.jsonl"))


class SessionManager:
    """Serialized per-session commits over a shared store."""

    def __init__(self, storage_dir: str | Path):
        self.store = SessionStore(storage_dir)
        self._lock = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}
        self._states: dict[str, SessionState] = {}
        for sid in self.store.session_ids():
            state = self.store.load(sid)
            if state is not None:
                self._states[sid] = state
                self._locks[sid] = threading.Lock()

    def _session_lock(self, session_id: str) -> threading.Lock:
        with self._lock:
            if session_id not in self._locks:
                raise SessionError("unknown_session", f"no session {session_id}", status=404)
            return self._locks[session_id]

    def _get(self, session_id: str) -> SessionState:
        with self._lock:
            state = self._states.get(session_id)
        if state is None:
            raise SessionError("unknown_session", f"no session {session_id}", status=404)
        return state

    def authorize(self, session_id: str, secret: str | None) -> None:
        state = self._get(session_id)
        if secret != state.secret:
            raise SessionError("forbidden", "bad or missing session secret", status=403)

    # -- operations ------------------------------------------------------------

    def create_session(self, config: SessionConfig) -> dict:
        session_id = uuid.uuid4().hex[:12]
        secret = _secrets.token_hex(16)
        event = {
            "type": "created", "session_id": session_id, "secret": secret,
            "config": config.to_dict(), "timestamp": time.time(),
        }
        with self._lock:
            self.store.append(session_id, event)
            self._states[session_id] = SessionState.initial(event)
            self._locks[session_id] = threading.Lock()
        return {"id": session_id, "secret": secret, "config": config.to_dict()}

    def submit_measurement(
        self, session_id: str, y: float, token: str, timestamp: float | None = None
    ) -> dict:
        if not isinstance(token, str) or not token:
            raise SessionError("invalid_token", "a non-empty entry token is required")
        if not isinstance(y, (int, float)) or not math.isfinite(y):
            raise SessionError("invalid_measurement", "y must be a finite number")
        with self._session_lock(session_id):
            state = self._get(session_id)
            if token in state.tokens:
                return dict(state.tokens[token], idempotent_replay=True)
            if state.status != "active":
                raise SessionError(
                    "session_not_active", f"session is {state.status}", status=409
                )
            ts = time.time() if timestamp is None else timestamp
            gap_flagged = False
            interval = state.config.expected_interval_seconds
            if interval and state.measurements:
                gap_flagged = ts - state.measurements[-1]["timestamp"] > 1.5 * interval

            dose = integral_dose(
                state.u_prev, float(y), state.y_min,
                state.config.k_plus, state.config.k_minus, state.delta,
            )
            capped = False
            if state.config.dose_cap is not None and dose > state.config.dose_cap:
                dose = state.config.dose_cap
                capped = True
            step = len(state.measurements)
            response = {
                "step": step, "dose": dose, "capped": capped,
                "increase": dose > state.u_prev, "gap_flagged": gap_flagged,
                "completion_eligible": dose == 0.0,
            }
            event = {
                "type": "measurement", "step": step, "y": float(y), "dose": dose,
                "token": token, "timestamp": ts, "gap_flagged": gap_flagged,
                "response": response,
            }
            self.store.append(session_id, event)
            state.apply(event)
            if state.n_events % SNAPSHOT_EVERY == 0:
                self.store.write_snapshot(state)
            return dict(response)

    def what_if(
        self,
        session_id: str,
        y: float | None = None,
        delta: float | None = None,
        y_min: float | None = None,
    ) -> dict:
        """Re-evaluate the latest decision point under hypothetical inputs.

        The hypothesized dose uses the previous dose as it stood before the
        most recent recommendation (or u_init before any commit), so querying
        with the committed inputs reproduces the committed dose exactly.
        Never mutates state.
        """
        with self._session_lock(session_id):
            return self._what_if_locked(session_id, y, delta, y_min)

    def _what_if_locked(self, session_id, y, delta, y_min) -> dict:
        state = self._get(session_id)
        if state.measurements:
            if y is None:
                y = state.measurements[-1]["y"]
            u_prev = state.recommendations[-2]["dose"] if len(state.recommendations) > 1 \
                else state.config.u_init
        else:
            if y is None:
                raise SessionError(
                    "no_measurements", "provide a hypothetical y before any commits"
                )
            u_prev = state.config.u_init
        eff_delta = state.delta if delta is None else float(delta)
        eff_y_min = state.y_min if y_min is None else float(y_min)
        dose = integral_dose(
            u_prev, float(y), eff_y_min,
            state.config.k_plus, state.config.k_minus, eff_delta,
        )
        capped = False
        if state.config.dose_cap is not None and dose > state.config.dose_cap:
            dose = state.config.dose_cap
            capped = True
        return {
            "dose": dose, "capped": capped, "y": y,
            "y_min": eff_y_min, "delta": eff_delta, "hypothetical": True,
        }

    def update_constraint(
        self, session_id: str, y_min: float | None = None, delta: float | None = None
    ) -> dict:
        if y_min is None and delta is None:
            raise SessionError("invalid_update", "provide y_min and/or delta")
        with self._session_lock(session_id):
            state = self._get(session_id)
            if state.status != "active":
                raise SessionError(
                    "session_not_active", f"session is {state.status}", status=409
                )
            event = {
                "type": "constraint_updated",
                "y_min": None if y_min is None else float(y_min),
                "delta": None if delta is None else float(delta),
                "effective_step": len(state.measurements),
                "timestamp": time.time(),
            }
            self.store.append(session_id, event)
            state.apply(event)
            return {
                "ok": True, "y_min": state.y_min, "delta": state.delta,
                "effective_step": event["effective_step"],
            }

    def confirm_completion(self, session_id: str) -> dict:
        with self._session_lock(session_id):
            state = self._get(session_id)
            if state.status != "active":
                raise SessionError(
                    "session_not_active", f"session is {state.status}", status=409
                )
            if not state.recommendations or state.recommendations[-1]["dose"] != 0.0:
                raise SessionError(
                    "not_tapered", "latest recommendation is not zero", status=409
                )
            event = {"type": "completed", "timestamp": time.time()}
            self.store.append(session_id, event)
            state.apply(event)
            return {"status": state.status}

    def get_history(self, session_id: str) -> dict:
        with self._session_lock(session_id):
            return self._history_locked(session_id)

    def _history_locked(self, session_id: str) -> dict:
        state = self._get(session_id)
        y_series = [m["y"] for m in state.measurements]
        margins = self._margins(state, y_series)
        return {
            "id": state.session_id,
            "status": state.status,
            "config": state.config.to_dict(),
            "y_min": state.y_min,
            "delta": state.delta,
            "u_prev": state.u_prev,
            "measurements": [
                {k: m[k] for k in ("step", "y", "timestamp", "gap_flagged")}
                for m in state.measurements
            ],
            "recommendations": list(state.recommendations),
            "constraint_changes": list(state.constraint_changes),
            "long_term_margin": margins,
        }

    def _margins(self, state: SessionState, y_series: list[float]) -> list[float]:
        """Running long-term bound margins over the committed measurements.

        The first committed measurement plays the role of the starting value;
        the setpoint path reflects mid-session constraint changes, with the
        current setpoint standing in for the step after each prefix.
        """
        if len(y_series) < 2:
            return []
        setpoints = self._setpoint_path(state, len(y_series))
        margins = theorem2_margins(y_series, setpoints)
        return [float(v) for v in margins]

    @staticmethod
    def _setpoint_path(state: SessionState, n: int) -> list[float]:
        """Setpoint in force at each committed step 0..n-1."""
        changes = sorted(state.constraint_changes, key=lambda c: c["effective_step"])
        out = []
        y_min, delta = state.config.y_min, state.config.delta
        idx = 0
        for step in range(n):
            while idx < len(changes) and changes[idx]["effective_step"] <= step:
                y_min = changes[idx]["y_min"]
                delta = changes[idx]["delta"]
                idx += 1
            out.append(y_min + delta)
        return out

    def replay_recommendations(self, session_id: str) -> list[float]:
        """Recompute every recommendation from the raw event log.

        Pure function of the log: used to audit that persisted doses match
        the update rule exactly.
        """
        events = self.store.events(session_id)
        if not events:
            raise SessionError("unknown_session", f"no session {session_id}", status=404)
        config = SessionConfig.from_dict(events[0]["config"])
        u_prev = config.u_init
        y_min, delta = config.y_min, config.delta
        out: list[float] = []
        for event in events[1:]:
            if event["type"] == "constraint_updated":
                if event.get("y_min") is not None:
                    y_min = event["y_min"]
                if event.get("delta") is not None:
                    delta = event["delta"]
            elif event["type"] == "measurement":
                dose = integral_dose(
                    u_prev, event["y"], y_min, config.k_plus, config.k_minus, delta
                )
                if config.dose_cap is not None and dose > config.dose_cap:
                    dose = config.dose_cap
                out.append(dose)
                u_prev = dose
        return out
