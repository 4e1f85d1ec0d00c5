"""Dosing policies: greedy minimum-effective-dose, integral control, baselines.

The greedy rule doses so the very next measurement exactly meets its
constraint given a lower bound on the next natural-progression value; it is
the optimal protocol when the kernel certifies.  The integral rule needs no
model beyond a rough range for g(0): it corrects the previous dose by the
signed deviation from the setpoint with separate gains above and below, and
clips at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .kernels import GeneralizedResponse, ImpulseResponse

DEFAULT_BISECT_EPS = 1e-8


@dataclass(frozen=True)
class MedPolicy:
    """Minimum-effective-dose rule; needs the kernel and a progression bound.

    y_nat_lb_mode: 'monotone' trusts the progression not to decrease,
    'lipschitz' allows a per-step drop of at most l_nat, 'clairvoyant' is
    handed the true next natural value by the simulator.
    """

    y_nat_lb_mode: str = "monotone"
    l_nat: float = 0.0

    def __post_init__(self) -> None:
        if self.y_nat_lb_mode not in ("monotone", "lipschitz", "clairvoyant"):
            raise ValueError(f"unknown bound mode {self.y_nat_lb_mode!r}")
        if self.l_nat < 0:
            raise ValueError("l_nat must be >= 0")


@dataclass(frozen=True)
class IntegralPolicy:
    """Clipped dual-gain integral control on the setpoint error.

    k_minus >= k_plus is required: corrections are conservative on the way
    down and aggressive on the way back up, matching the gain condition
    k_plus <= 1/g(0) <= k_minus under which the long-term guarantee holds.
    delta shifts the setpoint (negative trades violation for taper speed).
    u_init defaults to the warmup dose when a warmup phase exists.
    """

    k_plus: float
    k_minus: float
    delta: float = 0.0
    u_init: float | None = None
    dose_cap: float | None = None

    def __post_init__(self) -> None:
        if self.k_plus <= 0 or self.k_minus <= 0:
            raise ValueError("gains must be positive")
        if self.k_minus < self.k_plus:
            raise ValueError("k_minus must be >= k_plus")
        if self.u_init is not None and self.u_init < 0:
            raise ValueError("u_init must be >= 0")
        if self.dose_cap is not None and self.dose_cap <= 0:
            raise ValueError("dose_cap must be positive")


@dataclass(frozen=True)
class LinearPolicy:
    """Non-adaptive linear decay u0 - rate*t, clipped at zero."""

    u0: float
    rate: float

    def __post_init__(self) -> None:
        if self.u0 < 0:
            raise ValueError("u0 must be >= 0")
        if self.rate <= 0:
            raise ValueError("rate must be positive")


@dataclass(frozen=True)
class ExponentialPolicy:
    """Non-adaptive exponential decay rate**t * u0."""

    u0: float
    rate: float

    def __post_init__(self) -> None:
        if self.u0 < 0:
            raise ValueError("u0 must be >= 0")
        if not (0.0 < self.rate < 1.0):
            raise ValueError("rate must lie in (0, 1)")


@dataclass(frozen=True)
class FixedPolicy:
    """Constant dose."""

    u: float

    def __post_init__(self) -> None:
        if self.u < 0:
            raise ValueError("dose must be >= 0")


TaperPolicy = Union[MedPolicy, IntegralPolicy, LinearPolicy, ExponentialPolicy, FixedPolicy]


@dataclass(frozen=True)
class ConstraintPath:
    """Constant or per-step well-being floor over the taper window."""

    constant: float | None = None
    sequence: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if (self.constant is None) == (len(self.sequence) == 0):
            raise ValueError("provide exactly one of constant or sequence")
        if self.constant is not None and not math.isfinite(self.constant):
            raise ValueError("constraint must be finite")
        if self.sequence and not all(math.isfinite(v) for v in self.sequence):
            raise ValueError("constraint values must be finite")

    @classmethod
    def of(cls, value: "float | Sequence[float] | ConstraintPath") -> "ConstraintPath":
        if isinstance(value, ConstraintPath):
            return value
        if isinstance(value, (int, float)):
            return cls(constant=float(value))
        return cls(sequence=tuple(float(v) for v in value))

    def values(self, length: int) -> np.ndarray:
        if self.constant is not None:
            return np.full(length, self.constant, dtype=float)
        if len(self.sequence) < length:
            raise ValueError(f"constraint path has {len(self.sequence)} values, {length} needed")
        return np.asarray(self.sequence[:length], dtype=float)

    def first(self) -> float:
        return self.constant if self.constant is not None else self.sequence[0]


def med_dose(
    g: ImpulseResponse,
    dose_history: Sequence[float],
    y_min_next: float,
    y_nat_lb_next: float,
) -> float:
    """Smallest dose whose next measurement meets the constraint, or zero.

    Solves g(0)*u + (past-dose contributions) + y_nat_lb = y_min for u and
    clips at zero; a positive result simulated against the bound progression
    lands exactly on the constraint.
    """
    g0 = g.values[0]
    if g0 <= 0:
        raise ValueError(f"g(0) = {g0} is not positive; not an opponent-process head")
    n = len(dose_history)
    m = min(n, g.horizon - 1)
    carried = 0.0
    if m > 0:
        kern = g.as_array()[1: m + 1]
        hist = np.asarray(dose_history[n - m:], dtype=float)
        carried = float(np.dot(kern, hist[::-1]))
    return max(0.0, (y_min_next - y_nat_lb_next - carried) / g0)


def nat_lower_bound(mode: str, y_nat_current: float, l_nat: float = 0.0) -> float:
    """Lower bound for the next natural value under the declared drift model."""
    if l_nat < 0:
        raise ValueError("l_nat must be >= 0")
    if mode == "monotone":
        return y_nat_current
    if mode == "lipschitz":
        return y_nat_current - l_nat
    raise ValueError(f"no closed-form bound for mode {mode!r}")


def integral_dose(
    u_prev: float,
    y_t: float,
    y_min_t: float,
    k_plus: float,
    k_minus: float,
    delta: float = 0.0,
) -> float:
    """One clipped integral-control update against the padded setpoint."""
    if u_prev < 0:
        raise ValueError("u_prev must be >= 0")
    err = y_t - (y_min_t + delta)
    pos = max(err, 0.0)
    neg = min(err, 0.0)
    return max(0.0, u_prev - k_plus * pos - k_minus * neg)


def gains_from_g0_range(g0_lo: float, g0_hi: float) -> tuple[float, float]:
    """Gains from a coarse range for the instantaneous response.

    Returns (1/g0_hi, 1/g0_lo), so k_plus <= 1/g(0) <= k_minus holds whenever
    the true g(0) lies in the range.
    """
    if not (0.0 < g0_lo <= g0_hi):
        raise ValueError(f"need 0 < g0_lo <= g0_hi, got ({g0_lo}, {g0_hi})")
    return 1.0 / g0_hi, 1.0 / g0_lo


def baseline_dose(policy: LinearPolicy | ExponentialPolicy, t: int) -> float:
    """Non-adaptive dose at taper step t."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if isinstance(policy, LinearPolicy):
        return max(0.0, policy.u0 - policy.rate * t)
    return policy.rate ** t * policy.u0


@dataclass(frozen=True)
class BisectionResult:
    dose: float
    achieved: float
    iterations: int


class InfeasibleDoseError(ValueError):
    """The target exceeds what the capped dose can produce."""

    def __init__(self, target: float, reachable: float, dose_cap: float):
        super().__init__(
            f"target {target} exceeds g(0, {dose_cap}) = {reachable}; raise the cap or relax the constraint"
        )
        self.target = target
        self.reachable = reachable
        self.dose_cap = dose_cap


def generalized_med_dose(
    gr: GeneralizedResponse,
    dose_history: Sequence[float],
    y_min_next: float,
    y_nat_lb_next: float,
    eps: float = DEFAULT_BISECT_EPS,
    full_result: bool = False,
) -> float | BisectionResult:
    """Greedy dose for a nonlinear response, solved by bisection on g(0, .).

    The carried effect of past doses is summed through the per-lag responses;
    when the residual target is positive, monotonicity of g(0, .) lets
    bisection find u with |g(0, u) - target| <= eps.  The interval shrinks by
    half each iteration, so the count is at most
    ceil(log2(dose_cap * slope_hi(0) / eps)) plus the two endpoint probes.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = len(dose_history)
    m = min(n, gr.horizon - 1)
    carried = 0.0
    for k in range(1, m + 1):
        carried += gr.eval(k, float(dose_history[n - k]))
    target = y_min_next - y_nat_lb_next - carried

    if target <= 0.0:
        result = BisectionResult(dose=0.0, achieved=0.0, iterations=0)
        return result if full_result else result.dose

    lo, hi = 0.0, gr.dose_cap
    f_hi = gr.eval(0, hi)
    if f_hi < target - eps:
        raise InfeasibleDoseError(target, f_hi, gr.dose_cap)
    if f_hi <= target:
        result = BisectionResult(dose=hi, achieved=f_hi, iterations=0)
        return result if full_result else result.dose

    # after n halvings the evaluated midpoint sits within dose_cap/2**n of the
    # root, so slope_hi * dose_cap / 2**n <= eps guarantees the value tolerance
    slope_hi = max(gr.du_hi[0], 0.0)
    if slope_hi > 0:
        max_iter = max(1, math.ceil(math.log2(gr.dose_cap * slope_hi / eps)))
    else:
        max_iter = 60

    iterations = 0
    mid = 0.5 * (lo + hi)
    f_mid = gr.eval(0, mid)
    iterations = 1
    while abs(f_mid - target) > eps and iterations < max_iter:
        if f_mid < target:
            lo = mid
        else:
            hi = mid
        mid = 0.5 * (lo + hi)
        f_mid = gr.eval(0, mid)
        iterations += 1

    result = BisectionResult(dose=mid, achieved=f_mid, iterations=iterations)
    return result if full_result else result.dose


# --- simulator-facing dispatch ------------------------------------------------
#
# Policies are immutable values; the only evolving state is the previous dose,
# which the simulator threads through explicitly.


@dataclass(frozen=True)
class Observation:
    """What a policy may see when dosing taper step ``step``."""

    step: int
    y_current: float
    y_min_next: float
    dose_history: np.ndarray
    kernel: ImpulseResponse
    y_nat_true_next: float


def init_state(policy: TaperPolicy, warmup_dose: float | None) -> float:
    """Initial previous-dose state for the taper window."""
    if isinstance(policy, IntegralPolicy):
        if policy.u_init is not None:
            return policy.u_init
        return warmup_dose if warmup_dose is not None else 0.0
    return 0.0


def next_dose(
    policy: TaperPolicy, u_prev: float, obs: Observation
) -> tuple[float, float, bool]:
    """Dose for this step, new previous-dose state, and a cap-hit flag."""
    if isinstance(policy, FixedPolicy):
        return policy.u, policy.u, False
    if isinstance(policy, (LinearPolicy, ExponentialPolicy)):
        u = baseline_dose(policy, obs.step)
        return u, u, False
    if isinstance(policy, IntegralPolicy):
        u = integral_dose(
            u_prev, obs.y_current, obs.y_min_next,
            policy.k_plus, policy.k_minus, policy.delta,
        )
        capped = False
        if policy.dose_cap is not None and u > policy.dose_cap:
            u = policy.dose_cap
            capped = True
        return u, u, capped
    if isinstance(policy, MedPolicy):
        hist = obs.dose_history
        if policy.y_nat_lb_mode == "clairvoyant":
            lb = obs.y_nat_true_next
        else:
            n = len(hist)
            m = min(n, obs.kernel.horizon)
            conv = 0.0
            if m > 0:
                kern = obs.kernel.as_array()[:m]
                conv = float(np.dot(kern, hist[n - m:][::-1]))
            y_nat_now = obs.y_current - conv
            lb = nat_lower_bound(policy.y_nat_lb_mode, y_nat_now, policy.l_nat)
        u = med_dose(obs.kernel, hist, obs.y_min_next, lb)
        return u, u, False
    raise TypeError(f"unknown policy {policy!r}")
