"""Dose-response kernels and their certification.

A kernel g(0..H-1) is the discrete impulse response of well-being to a unit
dose.  The functions here build kernels from geometric modes, certify the
opponent-process sign pattern (positive head, non-positive tail), certify the
geometric-progression property that makes greedy dosing optimal, coarsen a
kernel so its sign crossover lands on the first step, and extend the
certification to nonlinear per-lag responses described by slope bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

SIGN_TOL = 1e-12
DEFAULT_TAIL_TOL = 1e-9
MAX_HORIZON = 4096

# Largest representable alpha strictly below 1; used when a ratio range is
# empty and the feasible interval is open at 1.
ALPHA_SUP = math.nextafter(1.0, 0.0)


class KernelError(ValueError):
    """Invalid kernel construction input."""


@dataclass(frozen=True)
class Mode:
    """One geometric component of a response kernel: coefficient * decay**t."""

    coefficient: float
    decay: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.coefficient) or self.coefficient == 0.0:
            raise KernelError(f"mode coefficient must be finite and nonzero, got {self.coefficient}")
        if not (0.0 <= self.decay < 1.0):
            raise KernelError(f"mode decay must lie in [0, 1), got {self.decay}")


@dataclass(frozen=True)
class ImpulseResponse:
    """Finite dose-response kernel g(0..H-1).

    Values beyond the horizon are treated as zero by every consumer; when the
    kernel was built from modes, ``tail_tol`` bounds the magnitude of each
    truncated entry.
    """

    values: tuple[float, ...]
    tail_tol: float = 0.0

    def __post_init__(self) -> None:
        if len(self.values) < 1:
            raise KernelError("kernel needs at least one value")
        if not all(math.isfinite(v) for v in self.values):
            raise KernelError("kernel values must be finite")
        if self.tail_tol < 0:
            raise KernelError("tail_tol must be >= 0")

    @property
    def horizon(self) -> int:
        return len(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, t: int) -> float:
        return self.values[t]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def dc_gain(self) -> float:
        """Long-run well-being change per unit of sustained dose."""
        return float(np.sum(self.values))

    def step_response(self) -> np.ndarray:
        """Cumulative response to a sustained unit dose."""
        return np.cumsum(self.values)


@dataclass(frozen=True)
class OpponentCertificate:
    """Witness of the sign pattern: g > 0 before tau0, g <= 0 from tau0 on."""

    tau0: int


@dataclass(frozen=True)
class LpopCertificate:
    """Feasible decay-separation interval [alpha_lo, alpha_hi].

    Every alpha in the interval satisfies both geometric-progression
    inequalities over the truncated horizon: g(t+1) <= alpha*g(t) on the
    positive head (t < tau0-1) and |g(t+1)| >= alpha*|g(t)| on the
    non-positive tail (t >= tau0).  The crossover index t = tau0-1 is
    unconstrained.
    """

    tau0: int
    alpha_lo: float
    alpha_hi: float
    skipped_indices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha_lo <= self.alpha_hi < 1.0):
            raise KernelError(
                f"infeasible alpha interval [{self.alpha_lo}, {self.alpha_hi}]"
            )


@dataclass(frozen=True)
class Violation:
    """First index at which a certification condition fails."""

    index: int
    reason: str


@dataclass(frozen=True)
class GeneralizedResponse:
    """Nonlinear per-lag response g(k, u) with explicit slope bounds.

    ``eval(k, u)`` gives the well-being contribution at lag k of dose u;
    ``du_lo[k]`` and ``du_hi[k]`` bound its slope in u over [0, dose_cap].
    Slope bounds are supplied by the model owner rather than estimated
    numerically, so certification has no differentiation error.
    """

    eval: Callable[[int, float], float]
    du_lo: tuple[float, ...]
    du_hi: tuple[float, ...]
    dose_cap: float

    def __post_init__(self) -> None:
        if len(self.du_lo) != len(self.du_hi):
            raise KernelError("du_lo and du_hi must cover the same lags")
        if len(self.du_lo) < 1:
            raise KernelError("slope bounds required for at least lag 0")
        if self.dose_cap <= 0:
            raise KernelError("dose_cap must be positive")
        for k, (lo, hi) in enumerate(zip(self.du_lo, self.du_hi)):
            if lo > hi:
                raise KernelError(f"du_lo > du_hi at lag {k}")

    @property
    def horizon(self) -> int:
        return len(self.du_lo)

    @classmethod
    def from_kernel(cls, g: ImpulseResponse, dose_cap: float) -> "GeneralizedResponse":
        """Linear special case g(k, u) = g(k) * u."""
        vals = g.values
        return cls(
            eval=lambda k, u: vals[k] * u,
            du_lo=vals,
            du_hi=vals,
            dose_cap=dose_cap,
        )


def build_impulse_response(
    modes: Sequence[Mode],
    tail_tol: float = DEFAULT_TAIL_TOL,
    max_horizon: int = MAX_HORIZON,
) -> ImpulseResponse:
    """Evaluate g(t) = sum_i c_i * decay_i**t out to a tail-bounded horizon.

    The horizon is the smallest H such that the last included value already
    satisfies |g(H-1)| <= tail_tol, using the bound
    sum|c| * max(decay)**(H-1); everything truncated afterwards is at least
    as small.
    """
    if not modes:
        raise KernelError("mode list is empty")
    if tail_tol <= 0:
        raise KernelError("tail_tol must be positive")

    coeffs = np.array([m.coefficient for m in modes])
    decays = np.array([m.decay for m in modes])
    mass = float(np.sum(np.abs(coeffs)))
    decay_max = float(np.max(decays))

    if mass <= tail_tol:
        needed = 2
    elif decay_max == 0.0:
        needed = 2
    else:
        # smallest h >= 1 with mass * decay_max**h <= tail_tol, then one more
        # entry so the last included value is itself below the tolerance
        h = math.ceil(math.log(tail_tol / mass) / math.log(decay_max))
        needed = max(2, h + 1)
    if needed > max_horizon:
        raise KernelError(
            f"tail tolerance {tail_tol} needs horizon {needed} > cap {max_horizon}"
        )

    t = np.arange(needed)
    values = (coeffs[None, :] * decays[None, :] ** t[:, None]).sum(axis=1)
    return ImpulseResponse(values=tuple(float(v) for v in values), tail_tol=tail_tol)


def certify_opponent(g: ImpulseResponse, sign_tol: float = SIGN_TOL) -> OpponentCertificate | Violation:
    """Locate tau0 such that g > 0 strictly before it and g <= 0 from it on.

    Signs are read with ``sign_tol``: values in [-sign_tol, sign_tol] count as
    zero, hence non-positive.  A positive value after the crossover is a
    Violation at its index, as is a non-positive g(0) or a kernel that never
    crosses.
    """
    vals = g.values
    if vals[0] <= sign_tol:
        return Violation(index=0, reason="g(0) is not positive")
    tau0 = None
    for t, v in enumerate(vals):
        if v <= sign_tol:
            tau0 = t
            break
    if tau0 is None:
        return Violation(index=len(vals) - 1, reason="no tau0 found: kernel never becomes non-positive")
    for t in range(tau0 + 1, len(vals)):
        if vals[t] > sign_tol:
            return Violation(index=t, reason=f"sign pattern broken: g({t}) > 0 after crossover at {tau0}")
    return OpponentCertificate(tau0=tau0)


def certify_lpop(g: ImpulseResponse, sign_tol: float = SIGN_TOL) -> LpopCertificate | Violation:
    """Certify the geometric-progression property and return the alpha interval.

    alpha_lo is the largest head ratio g(t+1)/g(t) over t < tau0-1 (0 when
    that range is empty); alpha_hi is the smallest tail ratio
    |g(t+1)|/|g(t)| over tau0 <= t < H-1, clamped below 1.  Indices whose
    denominator sits within ``sign_tol`` of zero are skipped and recorded.
    """
    opp = certify_opponent(g, sign_tol=sign_tol)
    if isinstance(opp, Violation):
        return opp
    tau0 = opp.tau0
    vals = g.values

    alpha_lo = 0.0
    for t in range(tau0 - 1):
        alpha_lo = max(alpha_lo, vals[t + 1] / vals[t])

    skipped: list[int] = []
    alpha_hi = ALPHA_SUP
    for t in range(tau0, len(vals) - 1):
        denom = abs(vals[t])
        if denom <= sign_tol:
            skipped.append(t)
            continue
        alpha_hi = min(alpha_hi, abs(vals[t + 1]) / denom)

    alpha_hi = min(alpha_hi, ALPHA_SUP)
    if alpha_lo >= 1.0:
        return Violation(index=tau0 - 1, reason=f"head ratio {alpha_lo} >= 1")
    if alpha_lo > alpha_hi:
        return Violation(
            index=tau0,
            reason=f"no feasible alpha: head needs >= {alpha_lo}, tail allows <= {alpha_hi}",
        )
    return LpopCertificate(
        tau0=tau0, alpha_lo=alpha_lo, alpha_hi=alpha_hi, skipped_indices=tuple(skipped)
    )


def coarsen(g: ImpulseResponse, block: int) -> ImpulseResponse:
    """Average the kernel over consecutive blocks of the given length.

    With block = tau0, the coarse kernel has all positive entries inside its
    first block and so certifies with tau0' = 1.  A ragged final block is
    zero-padded, consistent with the beyond-horizon convention.
    """
    if block <= 0:
        raise KernelError(f"block must be positive, got {block}")
    if block >= g.horizon:
        raise KernelError(f"block {block} must be smaller than horizon {g.horizon}")
    if block == 1:
        return g
    vals = g.as_array()
    n_blocks = math.ceil(len(vals) / block)
    padded = np.zeros(n_blocks * block)
    padded[: len(vals)] = vals
    means = padded.reshape(n_blocks, block).mean(axis=1)
    return ImpulseResponse(values=tuple(float(v) for v in means), tail_tol=g.tail_tol)


def certify_g_lpop(
    gr: GeneralizedResponse,
    horizon: int | None = None,
    sign_tol: float = SIGN_TOL,
    check_points: int = 5,
) -> LpopCertificate | Violation:
    """Certify a nonlinear response from its per-lag slope bounds.

    First the sign/slope phase split: slopes (and hence the responses, which
    vanish at u = 0) must be non-negative before the crossover lag and
    non-positive from it on.  Then the separation ratios on the slope bounds:
    the head needs alpha >= du_hi(t+1)/du_lo(t), the tail allows
    alpha <= |du_hi(t+1)|/|du_lo(t)|, mirroring the linear certificate, to
    which this reduces exactly when du_lo = du_hi = g.

    The response values themselves are spot-checked on a small dose grid for
    consistency with the declared phase of each lag.
    """
    H = gr.horizon if horizon is None else min(horizon, gr.horizon)
    if horizon is not None and horizon > gr.horizon:
        raise KernelError(f"slope bounds cover {gr.horizon} lags, horizon {horizon} requested")
    lo = gr.du_lo[:H]
    hi = gr.du_hi[:H]

    if hi[0] <= sign_tol:
        return Violation(index=0, reason="lag-0 slope is not positive")
    tau0 = None
    for k in range(H):
        if hi[k] <= sign_tol:
            tau0 = k
            break
        if lo[k] < -sign_tol:
            return Violation(index=k, reason=f"lag {k} slope lower bound negative before crossover")
    if tau0 is None:
        return Violation(index=H - 1, reason="no tau0 found: slope bounds never become non-positive")
    for k in range(tau0, H):
        if hi[k] > sign_tol:
            return Violation(index=k, reason=f"slope sign pattern broken at lag {k}")

    # spot-check the declared evaluation against the phase signs
    for k in range(H):
        if abs(gr.eval(k, 0.0)) > 1e-9:
            return Violation(index=k, reason=f"g({k}, 0) != 0")
        for u in np.linspace(0.0, gr.dose_cap, check_points + 1)[1:]:
            v = gr.eval(k, float(u))
            if k < tau0 and v < -1e-9:
                return Violation(index=k, reason=f"g({k}, {u}) negative before crossover")
            if k >= tau0 and v > 1e-9:
                return Violation(index=k, reason=f"g({k}, {u}) positive after crossover")

    alpha_lo = 0.0
    skipped: list[int] = []
    for t in range(tau0 - 1):
        if lo[t] <= sign_tol:
            if hi[t + 1] > sign_tol:
                return Violation(
                    index=t, reason=f"head ratio unbounded: du_lo({t}) ~ 0 with du_hi({t + 1}) > 0"
                )
            skipped.append(t)
            continue
        alpha_lo = max(alpha_lo, hi[t + 1] / lo[t])

    alpha_hi = ALPHA_SUP
    for t in range(tau0, H - 1):
        denom = abs(lo[t])
        if denom <= sign_tol:
            skipped.append(t)
            continue
        alpha_hi = min(alpha_hi, abs(hi[t + 1]) / denom)

    alpha_hi = min(alpha_hi, ALPHA_SUP)
    if alpha_lo >= 1.0:
        return Violation(index=tau0 - 1, reason=f"head slope ratio {alpha_lo} >= 1")
    if alpha_lo > alpha_hi:
        return Violation(
            index=tau0,
            reason=f"no feasible alpha: head needs >= {alpha_lo}, tail allows <= {alpha_hi}",
        )
    return LpopCertificate(
        tau0=tau0, alpha_lo=alpha_lo, alpha_hi=alpha_hi, skipped_indices=tuple(skipped)
    )
