"""Closed-loop well-being simulation and trace metrics.

Well-being evolves as the convolution of the dose history with the response
kernel plus a natural progression that absorbs drift, disturbances, noise,
and pre-protocol dose effects:

    y[t+1] = sum_k g(k) * u[t-k] + y_nat[t+1],   y[0] = y_nat[0]

Noise draws are folded into the natural progression before each policy
decision, so policies always observe the perturbed measurement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernels import ImpulseResponse
from . import policies as _policies


class ProtocolError(RuntimeError):
    """A policy produced an unusable dose; carries the partial trace."""

    def __init__(self, message: str, trace: "SimulationTrace | None" = None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class NaturalProgression:
    """Dose-independent well-being path.

    kinds: constant level, explicit custom sequence, linear monotone drift
    (slope >= 0), or linear drift bounded below by -L_nat per step.
    """

    kind: str
    base: float = 0.0
    drift: float = 0.0
    l_nat: float = 0.0
    sequence: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "custom_sequence", "monotone_drift", "lipschitz_drift"):
            raise ValueError(f"unknown natural-progression kind {self.kind!r}")
        if self.kind == "monotone_drift" and self.drift < 0:
            raise ValueError("monotone drift must be non-negative")
        if self.kind == "lipschitz_drift":
            if self.l_nat < 0:
                raise ValueError("L_nat must be >= 0")
            if self.drift < -self.l_nat:
                raise ValueError("drift breaches the per-step lower bound -L_nat")

    @classmethod
    def constant(cls, base: float = 0.0) -> "NaturalProgression":
        return cls(kind="constant", base=base)

    @classmethod
    def monotone(cls, base: float, drift: float) -> "NaturalProgression":
        return cls(kind="monotone_drift", base=base, drift=drift)

    @classmethod
    def lipschitz(cls, base: float, drift: float, l_nat: float) -> "NaturalProgression":
        return cls(kind="lipschitz_drift", base=base, drift=drift, l_nat=l_nat)

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "NaturalProgression":
        return cls(kind="custom_sequence", sequence=tuple(float(v) for v in values))

    def values(self, length: int) -> np.ndarray:
        """The first ``length`` values y_nat[0..length-1]."""
        if self.kind == "custom_sequence":
            if len(self.sequence) < length:
                raise ValueError(
                    f"custom sequence has {len(self.sequence)} values, {length} needed"
                )
            return np.asarray(self.sequence[:length], dtype=float)
        if self.kind == "constant":
            return np.full(length, self.base, dtype=float)
        return self.base + self.drift * np.arange(length, dtype=float)


@dataclass(frozen=True)
class NoiseSpec:
    """Per-step uniform perturbation of the natural progression."""

    kind: str = "none"
    half_width: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("none", "uniform"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.half_width < 0:
            raise ValueError("half_width must be >= 0")

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls(kind="none")

    @classmethod
    def uniform(cls, half_width: float, seed: int) -> "NoiseSpec":
        return cls(kind="uniform", half_width=half_width, seed=seed)

    def draws(self, n: int) -> np.ndarray:
        if self.kind == "none" or self.half_width == 0.0:
            return np.zeros(n)
        rng = np.random.default_rng(self.seed)
        return rng.uniform(-self.half_width, self.half_width, n)


@dataclass(frozen=True)
class SimulationTrace:
    """Aligned dose/well-being record: |wellbeing| = |doses| + 1, y[0] = y_nat[0]."""

    doses: tuple[float, ...]
    wellbeing: tuple[float, ...]
    nat: tuple[float, ...]
    y_min_path: tuple[float, ...]
    warmup_len: int
    cap_hit_steps: tuple[int, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.wellbeing) != len(self.doses) + 1:
            raise ValueError("wellbeing must have one more entry than doses")
        if len(self.nat) != len(self.wellbeing):
            raise ValueError("nat must align with wellbeing")
        if len(self.y_min_path) != len(self.wellbeing):
            raise ValueError("y_min_path must align with wellbeing")
        if self.wellbeing[0] != self.nat[0]:
            raise ValueError("y[0] must equal y_nat[0]")
        if any(u < 0 for u in self.doses):
            raise ValueError("doses must be non-negative")

    @property
    def horizon(self) -> int:
        return len(self.doses)

    def taper_slice(self) -> "SimulationTrace":
        """The trace restarted at the end of warmup.

        Pre-window dose effects are folded into the natural progression of
        the shifted trace, so it again satisfies y[0] = y_nat[0].
        """
        s = self.warmup_len
        if s == 0:
            return self
        doses = self.doses[s:]
        wellbeing = self.wellbeing[s:]
        g_meta = self.meta.get("kernel_values")
        if g_meta is None:
            raise ValueError("trace does not carry kernel values; cannot re-slice nat")
        nat = recover_natural_progression_values(
            np.asarray(wellbeing), np.asarray(doses), np.asarray(g_meta)
        )
        return SimulationTrace(
            doses=doses,
            wellbeing=wellbeing,
            nat=tuple(float(v) for v in nat),
            y_min_path=self.y_min_path[s:],
            warmup_len=0,
            cap_hit_steps=tuple(t - s for t in self.cap_hit_steps if t >= s),
            meta=dict(self.meta, sliced_from_warmup=s),
        )


@dataclass(frozen=True)
class TraceMetrics:
    """Per-unit performance over the taper window."""

    avg_cum_dose: float
    avg_cum_violation: float
    long_term_violation: tuple[float, ...]
    fully_tapered: bool
    taper_time: int | None


def simulate_step(
    g: ImpulseResponse, dose_history: Sequence[float], y_nat_next: float
) -> float:
    """Next well-being value from the dose history and next natural value."""
    n = len(dose_history)
    if n == 0:
        return float(y_nat_next)
    m = min(n, g.horizon)
    hist = np.asarray(dose_history[n - m:], dtype=float)
    kern = g.as_array()[:m]
    # g(k) pairs with the dose taken k steps before the new measurement
    return float(np.dot(kern, hist[::-1]) + y_nat_next)


def recover_natural_progression_values(
    wellbeing: np.ndarray, doses: np.ndarray, kernel: np.ndarray
) -> np.ndarray:
    """Invert the dynamics: y_nat[t] = y[t] - sum_k g(k) u[t-k-1]."""
    T = len(doses)
    if len(wellbeing) != T + 1:
        raise ValueError("length mismatch between wellbeing and doses")
    nat = np.array(wellbeing, dtype=float)
    if T > 0:
        conv = np.convolve(doses, kernel)[:T]
        nat[1:] -= conv
    return nat


def recover_natural_progression(trace: SimulationTrace, g: ImpulseResponse) -> np.ndarray:
    return recover_natural_progression_values(
        np.asarray(trace.wellbeing), np.asarray(trace.doses), g.as_array()
    )


def run_closed_loop(
    g: ImpulseResponse,
    policy: "_policies.TaperPolicy",
    nat: NaturalProgression,
    noise: NoiseSpec,
    warmup: tuple[float, int],
    t_taper: int,
    constraint: "_policies.ConstraintPath",
) -> SimulationTrace:
    """Simulate warmup at a fixed dose, then ``t_taper`` policy-driven steps.

    Noise draws perturb the natural progression at every simulated step,
    warmup included; each draw lands in y_nat[t+1] before the policy sees
    y[t+1].  The clairvoyant dose rule receives the true (perturbed)
    y_nat[t+1]; everything else observes only past measurements.
    """
    warmup_dose, warmup_steps = warmup
    if warmup_dose < 0 or warmup_steps < 0:
        raise ValueError("warmup dose and steps must be non-negative")
    if t_taper < 0:
        raise ValueError("t_taper must be >= 0")

    T = warmup_steps + t_taper
    y_nat = nat.values(T + 1)
    y_nat = y_nat.copy()
    y_nat[1:] += noise.draws(T)
    y_min_taper = constraint.values(t_taper)
    first_ymin = y_min_taper[0] if t_taper > 0 else constraint.first()
    y_min_full = np.concatenate([np.full(warmup_steps + 1, first_ymin), y_min_taper])

    kern = g.as_array()
    doses = np.zeros(T)
    y = np.zeros(T + 1)
    y[0] = y_nat[0]
    cap_hits: list[int] = []

    state = _policies.init_state(policy, warmup_dose if warmup_steps > 0 else None)

    for t in range(T):
        if t < warmup_steps:
            u = warmup_dose
        else:
            i = t - warmup_steps
            obs = _policies.Observation(
                step=i,
                y_current=y[t],
                y_min_next=float(y_min_taper[i]),
                dose_history=doses[:t],
                kernel=g,
                y_nat_true_next=float(y_nat[t + 1]),
            )
            u, state, capped = _policies.next_dose(policy, state, obs)
            if not math.isfinite(u) or u < 0:
                partial = _finish_trace(
                    doses[:t], y[: t + 1], y_nat[: t + 1], y_min_full[: t + 1],
                    warmup_steps, cap_hits, g, nat, noise, warmup,
                )
                raise ProtocolError(f"policy produced invalid dose {u} at step {t}", partial)
            if capped:
                cap_hits.append(t)
        doses[t] = u
        m = min(t + 1, len(kern))
        y[t + 1] = float(np.dot(kern[:m], doses[t + 1 - m: t + 1][::-1]) + y_nat[t + 1])

    return _finish_trace(doses, y, y_nat, y_min_full, warmup_steps, cap_hits, g, nat, noise, warmup)


def _finish_trace(doses, y, y_nat, y_min_full, warmup_steps, cap_hits, g, nat, noise, warmup):
    return SimulationTrace(
        doses=tuple(float(v) for v in doses),
        wellbeing=tuple(float(v) for v in y),
        nat=tuple(float(v) for v in y_nat),
        y_min_path=tuple(float(v) for v in y_min_full),
        warmup_len=warmup_steps,
        cap_hit_steps=tuple(cap_hits),
        meta={
            "kernel_values": tuple(float(v) for v in g.values),
            "noise_kind": noise.kind,
            "noise_half_width": noise.half_width,
            "noise_seed": noise.seed,
            "noise_in_warmup": True,
            "warmup_dose": warmup[0],
            "warmup_steps": warmup[1],
        },
    )


def compute_metrics(
    trace: SimulationTrace,
    y_min_path: Sequence[float] | None = None,
    t_taper: int | None = None,
) -> TraceMetrics:
    """Metrics over the taper window; warmup steps are excluded.

    avg_cum_dose and avg_cum_violation are per-step averages of the dose and
    of the positive parts (y_min - y)_+; long_term_violation[T-1] compares
    the running mean of y against the running mean of the constraint.
    """
    s = trace.warmup_len
    if t_taper is None:
        t_taper = trace.horizon - s
    if t_taper < 0 or s + t_taper > trace.horizon:
        raise ValueError("t_taper exceeds the trace")

    doses = np.asarray(trace.doses[s: s + t_taper])
    y = np.asarray(trace.wellbeing[s + 1: s + 1 + t_taper])
    if y_min_path is None:
        ymin = np.asarray(trace.y_min_path[s + 1: s + 1 + t_taper])
    else:
        ymin = np.asarray(y_min_path, dtype=float)
        if ymin.size == 1:
            ymin = np.full(t_taper, float(ymin))
        if len(ymin) < t_taper:
            raise ValueError("y_min_path shorter than the taper window")
        ymin = ymin[:t_taper]

    if t_taper == 0:
        return TraceMetrics(0.0, 0.0, (), True, 0)

    violations = np.maximum(ymin - y, 0.0)
    prefix = np.arange(1, t_taper + 1)
    ltv = np.cumsum(y) / prefix - np.cumsum(ymin) / prefix

    taper_time: int | None = None
    if doses[-1] == 0.0:
        nz = np.nonzero(doses)[0]
        taper_time = int(nz[-1] + 1) if nz.size else 0

    return TraceMetrics(
        avg_cum_dose=float(np.sum(doses) / t_taper),
        avg_cum_violation=float(np.sum(violations) / t_taper),
        long_term_violation=tuple(float(v) for v in ltv),
        fully_tapered=taper_time is not None,
        taper_time=taper_time,
    )
