"""JSON spec-file formats shared by the CLI, experiments, and session service.

System spec: {"modes": [{"c": r, "lambda": r}, ...], "tail_tol": r}
         or  {"kernel": [r, ...]}
Policy spec: tagged object, e.g. {"type": "integral", "k_plus": r,
"k_minus": r, "delta": r}.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .kernels import (
    ImpulseResponse,
    LpopCertificate,
    Mode,
    OpponentCertificate,
    Violation,
    build_impulse_response,
)
from .policies import (
    ExponentialPolicy,
    FixedPolicy,
    IntegralPolicy,
    LinearPolicy,
    MedPolicy,
    TaperPolicy,
)


class SpecError(ValueError):
    """Malformed spec document; message carries the offending field."""


def _require(obj: dict, key: str, context: str) -> Any:
    if key not in obj:
        raise SpecError(f"{context}: missing field {key!r}")
    return obj[key]


def load_json(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise SpecError(f"cannot read {path}: {e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e


def system_from_dict(doc: dict) -> ImpulseResponse:
    if "kernel" in doc:
        values = doc["kernel"]
        if not isinstance(values, list) or not values:
            raise SpecError("system spec: 'kernel' must be a non-empty list of numbers")
        return ImpulseResponse(
            values=tuple(float(v) for v in values),
            tail_tol=float(doc.get("tail_tol", 0.0)),
        )
    if "modes" in doc:
        raw = doc["modes"]
        if not isinstance(raw, list) or not raw:
            raise SpecError("system spec: 'modes' must be a non-empty list")
        modes = []
        for i, m in enumerate(raw):
            modes.append(Mode(
                coefficient=float(_require(m, "c", f"modes[{i}]")),
                decay=float(_require(m, "lambda", f"modes[{i}]")),
            ))
        return build_impulse_response(modes, tail_tol=float(doc.get("tail_tol", 1e-9)))
    raise SpecError("system spec: expected 'modes' or 'kernel'")


def load_system(path: str | Path) -> ImpulseResponse:
    return system_from_dict(load_json(path))


def policy_from_dict(doc: dict) -> TaperPolicy:
    kind = _require(doc, "type", "policy spec")
    try:
        if kind == "integral":
            return IntegralPolicy(
                k_plus=float(_require(doc, "k_plus", "integral policy")),
                k_minus=float(_require(doc, "k_minus", "integral policy")),
                delta=float(doc.get("delta", 0.0)),
                u_init=None if doc.get("u_init") is None else float(doc["u_init"]),
                dose_cap=None if doc.get("dose_cap") is None else float(doc["dose_cap"]),
            )
        if kind == "med":
            return MedPolicy(
                y_nat_lb_mode=doc.get("y_nat_lb_mode", "monotone"),
                l_nat=float(doc.get("l_nat", 0.0)),
            )
        if kind == "linear":
            return LinearPolicy(
                u0=float(_require(doc, "u0", "linear policy")),
                rate=float(_require(doc, "rate", "linear policy")),
            )
        if kind == "exponential":
            return ExponentialPolicy(
                u0=float(_require(doc, "u0", "exponential policy")),
                rate=float(_require(doc, "rate", "exponential policy")),
            )
        if kind == "fixed":
            return FixedPolicy(u=float(_require(doc, "u", "fixed policy")))
    except ValueError as e:
        if isinstance(e, SpecError):
            raise
        raise SpecError(f"policy spec: {e}") from e
    raise SpecError(f"policy spec: unknown type {kind!r}")


def load_policy(path: str | Path) -> TaperPolicy:
    return policy_from_dict(load_json(path))


def policy_to_dict(policy: TaperPolicy) -> dict:
    if isinstance(policy, IntegralPolicy):
        return {
            "type": "integral", "k_plus": policy.k_plus, "k_minus": policy.k_minus,
            "delta": policy.delta, "u_init": policy.u_init, "dose_cap": policy.dose_cap,
        }
    if isinstance(policy, MedPolicy):
        return {"type": "med", "y_nat_lb_mode": policy.y_nat_lb_mode, "l_nat": policy.l_nat}
    if isinstance(policy, LinearPolicy):
        return {"type": "linear", "u0": policy.u0, "rate": policy.rate}
    if isinstance(policy, ExponentialPolicy):
        return {"type": "exponential", "u0": policy.u0, "rate": policy.rate}
    if isinstance(policy, FixedPolicy):
        return {"type": "fixed", "u": policy.u}
    raise TypeError(f"unknown policy {policy!r}")


def certificate_to_dict(result: OpponentCertificate | LpopCertificate | Violation) -> dict:
    if isinstance(result, Violation):
        return {"status": "violation", "index": result.index, "reason": result.reason}
    if isinstance(result, LpopCertificate):
        return {
            "status": "certified", "tau0": result.tau0,
            "alpha_lo": result.alpha_lo, "alpha_hi": result.alpha_hi,
            "skipped_indices": list(result.skipped_indices),
        }
    return {"status": "certified", "tau0": result.tau0}
