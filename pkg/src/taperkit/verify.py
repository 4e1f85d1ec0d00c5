"""Independent oracles for the protocol guarantees.

Each checker takes finished traces (or raw sequences) and verifies one
guarantee directly from its defining inequality, with no shared code path
with the policies it audits: exhaustive grid search for greedy-dose
optimality, prefix sums for the long-term violation bound, a per-step
inequality for its supporting lemma, and the monotone finite-time-zero
conclusions for coarse discretizations.  Suite runners sample randomized
instances and aggregate structured reports for CI.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernels import (
    ImpulseResponse,
    LpopCertificate,
    Mode,
    Violation,
    build_impulse_response,
    certify_lpop,
    certify_opponent,
    coarsen,
)
from .policies import ConstraintPath, IntegralPolicy, MedPolicy, med_dose
from .simulate import NaturalProgression, NoiseSpec, run_closed_loop

FEAS_TOL = 1e-9


class OracleBudgetError(ValueError):
    """Requested enumeration exceeds the configured search budget."""


class NoFeasibleScheduleError(RuntimeError):
    """No grid schedule satisfies the constraints."""


@dataclass(frozen=True)
class DoseGrid:
    """Uniform dose grid {0, resolution, ..., max_dose}."""

    max_dose: float = 2.0
    resolution: float = 0.05

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.max_dose < 0:
            raise ValueError("max_dose must be >= 0")

    @property
    def n_points(self) -> int:
        return int(math.floor(self.max_dose / self.resolution + 1e-9)) + 1


def brute_force_min_dose(
    g: ImpulseResponse,
    y_nat: Sequence[float],
    y_min_path: float | Sequence[float],
    T: int,
    grid: DoseGrid,
    max_states: int = 10_000_000,
    feas_tol: float = FEAS_TOL,
) -> tuple[tuple[float, ...], float]:
    """Exhaustively find the cheapest feasible schedule on the grid.

    Enumerates every grid^T schedule, simulates it against the given natural
    progression, and returns the feasible schedule of minimal cumulative
    dose.  Ties break to the lexicographically smallest schedule.  Dose sums
    are compared as integer grid indices so ties are exact.
    """
    if T < 1 or T > 6:
        raise OracleBudgetError(f"T = {T} outside the exhaustive budget (1..6)")
    n = grid.n_points
    n_states = n ** T
    if n_states > max_states:
        raise OracleBudgetError(f"{n}^{T} = {n_states} schedules exceed the cap {max_states}")
    y_nat = np.asarray(y_nat, dtype=float)
    if len(y_nat) < T + 1:
        raise ValueError("y_nat must cover 0..T")
    ymin = ConstraintPath.of(y_min_path).values(T)

    # schedules as integer grid indices, lexicographic order by construction
    mesh = np.meshgrid(*([np.arange(n, dtype=np.int32)] * T), indexing="ij")
    idx = np.stack([m.reshape(-1) for m in mesh], axis=1)
    doses = idx.astype(float) * grid.resolution

    # L[i, j] = g(i - j): response of y[i+1] to u[j]
    kern = g.as_array()
    L = np.zeros((T, T))
    for i in range(T):
        for j in range(i + 1):
            k = i - j
            if k < len(kern):
                L[i, j] = kern[k]
    Y = doses @ L.T + y_nat[1: T + 1][None, :]

    feasible = np.all(Y >= ymin[None, :] - feas_tol, axis=1)
    if not np.any(feasible):
        raise NoFeasibleScheduleError(
            f"no feasible schedule on a {n}-point grid over {T} steps"
        )
    cum = idx.sum(axis=1, dtype=np.int64)
    cum_feasible = np.where(feasible, cum, np.iinfo(np.int64).max)
    best = int(np.argmin(cum_feasible))  # first minimum = lexicographically smallest
    schedule = tuple(float(v) for v in doses[best])
    return schedule, float(cum[best]) * grid.resolution


@dataclass(frozen=True)
class CheckReport:
    """Outcome of one inequality check over a trace."""

    name: str
    passed: bool
    hypothesis_ok: bool = True
    first_violation: int | None = None
    min_margin: float = math.inf
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "hypothesis_ok": self.hypothesis_ok,
            "first_violation": self.first_violation,
            "min_margin": None if math.isinf(self.min_margin) else self.min_margin,
            "detail": self.detail,
        }


def theorem2_margins(wellbeing: Sequence[float], setpoint: float | Sequence[float]) -> np.ndarray:
    """Prefix margins of the long-term violation bound; >= 0 means satisfied.

    For a constant setpoint s, margin at prefix T is
    mean(y[1..T]) - (s - (y[0] - s)/T).  For a time-varying setpoint the
    bound that survives the telescoping argument needs the setpoint of the
    step after the prefix, so a sequence must supply T+1 values s[0..T],
    where s[t] is the setpoint targeted when dosing step t:
    mean(y[1..T]) - (mean(s[0..T-1]) - (y[0] - s[T])/T).
    """
    y = np.asarray(wellbeing, dtype=float)
    T = len(y) - 1
    if T < 1:
        return np.empty(0)
    prefix = np.arange(1, T + 1, dtype=float)
    mean_y = np.cumsum(y[1:]) / prefix
    if isinstance(setpoint, ConstraintPath) and setpoint.constant is None:
        setpoint = setpoint.sequence
    if isinstance(setpoint, ConstraintPath):
        setpoint = setpoint.constant
    if isinstance(setpoint, (int, float)):
        s = float(setpoint)
        return mean_y - (s - (y[0] - s) / prefix)
    s = np.asarray(setpoint, dtype=float)
    if len(s) < T + 1:
        raise ValueError(
            f"time-varying setpoint needs {T + 1} values (one past the window), got {len(s)}"
        )
    mean_s = np.cumsum(s[:T]) / prefix
    return mean_y - (mean_s - (y[0] - s[1: T + 1]) / prefix)


def check_theorem2(
    wellbeing: Sequence[float],
    setpoint: float | Sequence[float],
    k_plus: float | None = None,
    k_minus: float | None = None,
    g0: float | None = None,
    tol: float = 1e-8,
) -> CheckReport:
    """Long-term violation bound at every prefix of the trace.

    When the gains and g(0) are supplied and the gain condition
    k_plus <= 1/g(0) <= k_minus fails, the report is informational
    (hypothesis_ok = False) but margins are still computed.
    """
    hypothesis_ok = True
    if k_plus is not None and g0 is not None and k_minus is not None:
        hypothesis_ok = k_plus <= 1.0 / g0 + 1e-12 and k_minus >= 1.0 / g0 - 1e-12
    margins = theorem2_margins(wellbeing, setpoint)
    if margins.size == 0:
        return CheckReport(name="theorem2", passed=True, hypothesis_ok=hypothesis_ok,
                           detail="empty window")
    bad = np.nonzero(margins < -tol)[0]
    return CheckReport(
        name="theorem2",
        passed=bad.size == 0,
        hypothesis_ok=hypothesis_ok,
        first_violation=int(bad[0] + 1) if bad.size else None,
        min_margin=float(np.min(margins)),
    )


def theorem2_window_margins(
    wellbeing: Sequence[float],
    doses: Sequence[float],
    setpoint: float | Sequence[float],
    g0: float,
) -> np.ndarray:
    """Prefix margins of the boundary-complete long-term bound.

    Summing the per-step floor over exactly the window (no step beyond it)
    telescopes to

        sum(y[1..T]) >= sum(s[0..T-1]) - y[0] + y[T] - g(0)*u[T-1]

    which uses only in-window quantities and so holds for every prefix of
    every run.  The boundary term g(0)*u[T-1] - (y[T] - s) vanishes once
    dosing has stopped and the last measurement rests on the setpoint; the
    form without it additionally assumes the window-end dose is negligible
    relative to T.
    """
    y = np.asarray(wellbeing, dtype=float)
    u = np.asarray(doses, dtype=float)
    T = len(y) - 1
    if T < 1:
        return np.empty(0)
    if len(u) < T:
        raise ValueError("doses must cover the window")
    s = ConstraintPath.of(setpoint).values(T)
    prefix = np.arange(1, T + 1, dtype=float)
    return (np.cumsum(y[1:]) - np.cumsum(s) + y[0] - y[1: T + 1] + g0 * u[:T]) / prefix


def prefix_scales(
    wellbeing: Sequence[float], doses: Sequence[float], g0: float
) -> np.ndarray:
    """Running magnitude of the quantities entering the prefix sums.

    Used to turn an absolute tolerance into a float-sound one: when a run's
    doses grow without bound (the controller fighting an unsatisfiable
    constraint), cancellation noise scales with these magnitudes even though
    the underlying inequalities are exact in real arithmetic.
    """
    y = np.asarray(wellbeing, dtype=float)
    u = np.asarray(doses, dtype=float)
    scale = np.maximum.accumulate(np.abs(y[1:]))
    dose_scale = np.maximum.accumulate(np.abs(g0 * u[: len(y) - 1]))
    return np.maximum(1.0, np.maximum(scale, dose_scale))


def lemma1_margins(
    wellbeing: Sequence[float],
    doses: Sequence[float],
    nat: Sequence[float],
    setpoint: float | Sequence[float],
    g: ImpulseResponse,
) -> np.ndarray:
    """Per-step floor margins: y[t+1] - (s + (nat[t+1]-nat[t]) - sum_k g(k)(u[t-k-1]-u[t-k])).

    Uses the convention u[-1] = 0, so the k = t term contributes +g(t)*u[0].
    """
    y = np.asarray(wellbeing, dtype=float)
    u = np.asarray(doses, dtype=float)
    nat = np.asarray(nat, dtype=float)
    T = len(u)
    if len(y) != T + 1 or len(nat) != T + 1:
        raise ValueError("length mismatch")
    if T == 0:
        return np.empty(0)
    s = ConstraintPath.of(setpoint).values(T)

    # w[j] = u[j-1] - u[j] with u[-1] = 0; the lemma sum at step t is
    # sum_{k=1..t} g(k) w[t-k], a convolution of w with the kernel tail
    w = np.empty(T)
    w[0] = -u[0]
    w[1:] = u[:-1] - u[1:]
    tail = g.as_array()[1:]
    conv = np.convolve(w, tail)[: max(T - 1, 0)] if len(tail) else np.zeros(max(T - 1, 0))

    dnat = nat[1:] - nat[:-1]
    rhs = s + dnat
    rhs[1:] -= conv[: T - 1]
    return y[1:] - rhs


def check_lemma1(
    wellbeing: Sequence[float],
    doses: Sequence[float],
    nat: Sequence[float],
    setpoint: float | Sequence[float],
    g: ImpulseResponse,
    tol: float = 1e-8,
) -> CheckReport:
    margins = lemma1_margins(wellbeing, doses, nat, setpoint, g)
    if margins.size == 0:
        return CheckReport(name="lemma1", passed=True, detail="empty window")
    bad = np.nonzero(margins < -tol)[0]
    return CheckReport(
        name="lemma1",
        passed=bad.size == 0,
        first_violation=int(bad[0]) if bad.size else None,
        min_margin=float(np.min(margins)),
    )


@dataclass(frozen=True)
class Prop2Report:
    """Monotone finite-time-zero conclusions for a coarse (tau0 = 1) run."""

    precondition_ok: bool
    precondition_detail: str
    monotone_ok: bool
    safety_ok: bool
    zero_ok: bool
    zero_bound: int
    passed: bool

    def to_dict(self) -> dict:
        return {
            "precondition_ok": self.precondition_ok,
            "precondition_detail": self.precondition_detail,
            "monotone_ok": self.monotone_ok,
            "safety_ok": self.safety_ok,
            "zero_ok": self.zero_ok,
            "zero_bound": self.zero_bound,
            "passed": self.passed,
        }


def check_prop2(
    wellbeing: Sequence[float],
    doses: Sequence[float],
    nat: Sequence[float],
    y_min: float,
    g: ImpulseResponse,
    u0: float,
    k_plus: float,
    delta: float,
    tol: float = 1e-8,
) -> Prop2Report:
    """Verify the three conclusions, after checking the drift precondition.

    Preconditions: the kernel certifies with tau0 = 1, the first dose equals
    u0 and achieves y[1] >= y_min, and the natural progression satisfies
    nat[t+1] >= nat[t] - g(t)*u0 + delta/t for t >= 1.  Conclusions: doses
    non-increasing, y >= y_min throughout, and doses identically zero from
    ceil(exp(u0 / (k_plus * delta))) on.
    """
    y = np.asarray(wellbeing, dtype=float)
    u = np.asarray(doses, dtype=float)
    nat = np.asarray(nat, dtype=float)
    T = len(u)
    kern = g.as_array()

    pre_msgs = []
    cert = certify_opponent(g)
    if isinstance(cert, Violation) or cert.tau0 != 1:
        pre_msgs.append("kernel does not certify with tau0 = 1")
    if abs(u[0] - u0) > 1e-12:
        pre_msgs.append(f"first dose {u[0]} differs from declared u0 {u0}")
    if y[1] < y_min - tol:
        pre_msgs.append("initial dose fails y[1] >= y_min")
    if delta <= 0:
        pre_msgs.append("delta must be positive")
    for t in range(1, T):
        gt = kern[t] if t < len(kern) else 0.0
        if nat[t + 1] < nat[t] - gt * u0 + delta / t - 1e-12:
            pre_msgs.append(f"drift condition fails at t = {t}")
            break
    precondition_ok = not pre_msgs

    monotone_ok = bool(np.all(np.diff(u) <= 1e-12))
    safety_ok = bool(np.all(y[1:] >= y_min - tol))
    zero_bound = math.ceil(math.exp(u0 / (k_plus * delta))) if delta > 0 else T + 1
    zero_ok = bool(np.all(u[min(zero_bound, T):] == 0.0)) and zero_bound <= T
    return Prop2Report(
        precondition_ok=precondition_ok,
        precondition_detail="; ".join(pre_msgs),
        monotone_ok=monotone_ok,
        safety_ok=safety_ok,
        zero_ok=zero_ok,
        zero_bound=zero_bound,
        passed=precondition_ok and monotone_ok and safety_ok and zero_ok,
    )


# --- randomized instance generators -------------------------------------------


def sample_separated_modes(
    rng: np.random.Generator,
    n_pos: int = 1,
    n_neg: int = 1,
    max_decay: float = 0.985,
    crossover_cap: int = 300,
    max_tries: int = 200,
) -> list[Mode]:
    """Mode sets meeting the decay-separation closure conditions.

    Positive coefficients carry the fastest decays, the coefficient sum is
    positive, and the kernel provably turns non-positive within
    ``crossover_cap`` steps (checked on the dominant ratio).
    """
    for _ in range(max_tries):
        split = rng.uniform(0.15, 0.9)
        pos_dec = rng.uniform(0.0, split, n_pos)
        neg_dec = rng.uniform(split, max_decay, n_neg)
        pos_c = rng.uniform(0.2, 2.0, n_pos)
        total_pos = pos_c.sum()
        neg_c = -rng.uniform(0.05, 0.95, n_neg) * total_pos / n_neg
        if total_pos + neg_c.sum() <= 1e-3:
            continue
        lam_p = pos_dec.max()
        lam_m = neg_dec.min()
        if lam_m <= lam_p + 1e-6:
            continue
        t_cross = math.log(total_pos / -neg_c.sum()) / math.log(lam_m / max(lam_p, 1e-12)) \
            if lam_p > 0 else 1.0
        if not math.isfinite(t_cross) or t_cross > crossover_cap:
            continue
        modes = [Mode(float(c), float(d)) for c, d in zip(pos_c, pos_dec)]
        modes += [Mode(float(c), float(d)) for c, d in zip(neg_c, neg_dec)]
        return modes
    raise RuntimeError("failed to sample a separated mode set")


def sample_lpop_kernel(
    rng: np.random.Generator,
    tail_tol: float = 1e-8,
    max_decay: float = 0.985,
    n_pos: int = 1,
    n_neg: int = 1,
) -> tuple[ImpulseResponse, LpopCertificate]:
    """A random kernel together with its certificate; resamples on violation."""
    for _ in range(50):
        modes = sample_separated_modes(rng, n_pos=n_pos, n_neg=n_neg, max_decay=max_decay)
        g = build_impulse_response(modes, tail_tol=tail_tol)
        cert = certify_lpop(g)
        if isinstance(cert, LpopCertificate):
            return g, cert
    raise RuntimeError("failed to sample a certifiable kernel")


def sample_wild_progression(rng: np.random.Generator, length: int) -> np.ndarray:
    """Arbitrary natural progressions, biased toward adversarial declines."""
    kind = rng.integers(0, 4)
    base = rng.uniform(-1.0, 1.0)
    if kind == 0:
        steps = rng.uniform(-0.5, 0.3, length - 1)
    elif kind == 1:
        steps = np.full(length - 1, -rng.uniform(0.0, 0.15))
    elif kind == 2:
        steps = rng.normal(0.0, 0.2, length - 1)
        drops = rng.random(length - 1) < 0.05
        steps[drops] -= rng.uniform(0.5, 2.0, int(drops.sum()))
    else:
        t = np.arange(length - 1)
        steps = 0.3 * np.sin(t / rng.uniform(2, 8)) - rng.uniform(0, 0.1)
    return base + np.concatenate([[0.0], np.cumsum(steps)])


def sample_admissible_progression(
    rng: np.random.Generator, length: int, mode: str, l_nat: float
) -> np.ndarray:
    """Progressions satisfying the declared per-step lower-bound model."""
    base = rng.uniform(-1.0, 1.0)
    if mode == "monotone":
        steps = rng.uniform(0.0, 0.3, length - 1)
    else:
        steps = rng.uniform(-l_nat, 0.3, length - 1)
    return base + np.concatenate([[0.0], np.cumsum(steps)])


# --- suite runners -------------------------------------------------------------


@dataclass
class SuiteReport:
    """Aggregate of one randomized verification suite."""

    name: str
    n_runs: int = 0
    n_passed: int = 0
    failures: list[dict] = field(default_factory=list)
    elapsed_seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.n_runs > 0 and self.n_passed == self.n_runs

    def record(self, ok: bool, detail: dict | None = None) -> None:
        self.n_runs += 1
        if ok:
            self.n_passed += 1
        elif len(self.failures) < 10 and detail is not None:
            self.failures.append(detail)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "n_runs": self.n_runs,
            "n_passed": self.n_passed,
            "failures": self.failures,
            "elapsed_seconds": round(self.elapsed_seconds, 3),
        }


@dataclass
class LongTermSuites:
    """All report views of the randomized integral-control runs.

    as_stated: the published prefix bound without its boundary term, at
    absolute tolerance.  It provably fails on runs where an unsatisfiable
    constraint forces unbounded dosing (the omitted boundary term
    g(0)*u[T]/T grows without bound there), and is reported for the record.
    window: the boundary-complete bound, float-sound tolerance, all runs.
    lemma_sane: the per-step floor at absolute tolerance over runs whose
    magnitudes stay small enough for 1e-8 to be meaningful in float64.
    lemma_all: the per-step floor at magnitude-scaled tolerance, all runs.
    """

    as_stated: SuiteReport
    window: SuiteReport
    lemma_sane: SuiteReport
    lemma_all: SuiteReport

    def reports(self) -> list[SuiteReport]:
        return [self.as_stated, self.window, self.lemma_sane, self.lemma_all]


SANE_MAGNITUDE = 1e4


def run_theorem2_lemma1_suite(
    n_runs: int = 1000, seed: int = 0, tol: float = 1e-8, min_sane_runs: int | None = None
) -> LongTermSuites:
    """Randomized integral-control runs checked against the long-term bounds.

    Kernels, gains (always satisfying the gain condition), paddings, initial
    doses, constraints, horizons, and natural progressions (including
    adversarial declines, constraint levels no dosing can sustain, and
    time-varying constraints) are all randomized.  Sampling continues past
    ``n_runs`` if needed until ``min_sane_runs`` magnitude-sane runs have
    been collected (default: n_runs).
    """
    rng = np.random.default_rng(seed)
    if min_sane_runs is None:
        min_sane_runs = n_runs
    reps = LongTermSuites(
        as_stated=SuiteReport(name="theorem2_as_stated"),
        window=SuiteReport(name="theorem2_window"),
        lemma_sane=SuiteReport(name="lemma1_sane_runs"),
        lemma_all=SuiteReport(name="lemma1_all_runs"),
    )
    t0 = time.perf_counter()
    attempts = 0
    while attempts < n_runs or reps.lemma_sane.n_runs < min_sane_runs:
        if attempts >= 8 * n_runs:
            break
        attempts += 1
        g, _cert = sample_lpop_kernel(rng, n_pos=int(rng.integers(1, 3)), n_neg=1)
        g0 = g.values[0]
        k_plus = rng.uniform(0.25, 1.0) / g0
        k_minus = rng.uniform(1.0, 3.0) / g0
        if rng.random() < 0.1:
            k_plus = k_minus = 1.0 / g0
        delta = 0.0 if rng.random() < 0.5 else float(rng.uniform(-0.3, 0.5))
        T = int(rng.integers(20, 81))
        nat = sample_wild_progression(rng, T + 1)
        if rng.random() < 0.1:
            # time-varying constraint: one value past the window for the
            # as-stated checker, which needs the next step's setpoint
            ymin_seq = rng.uniform(-3.0, 1.0, T + 1)
            ymin_path = ConstraintPath.of(ymin_seq)
            setpoint_check: float | np.ndarray = ymin_seq + delta
        else:
            ymin = float(rng.uniform(-3.0, 1.0))
            ymin_path = ConstraintPath.of(ymin)
            setpoint_check = ymin + delta
        policy = IntegralPolicy(
            k_plus=k_plus, k_minus=k_minus, delta=delta,
            u_init=float(rng.uniform(0.0, 2.0)),
        )
        trace = run_closed_loop(
            g, policy, NaturalProgression.from_sequence(nat), NoiseSpec.none(),
            warmup=(0.0, 0), t_taper=T, constraint=ymin_path,
        )
        setpoint_steps = ymin_path.values(T) + delta
        scales = prefix_scales(trace.wellbeing, trace.doses, g0)
        sane = bool(scales[-1] <= SANE_MAGNITUDE)
        info = {"g0": g0, "T": T, "max_scale": float(scales[-1])}

        r_stated = check_theorem2(trace.wellbeing, setpoint_check, k_plus, k_minus, g0, tol=tol)
        reps.as_stated.record(r_stated.passed, r_stated.to_dict() | info)

        w_margins = theorem2_window_margins(trace.wellbeing, trace.doses, setpoint_steps, g0)
        w_ok = bool(np.all(w_margins >= -tol * scales))
        reps.window.record(w_ok, {"min_margin": float(np.min(w_margins))} | info)

        l_margins = lemma1_margins(trace.wellbeing, trace.doses, trace.nat, setpoint_steps, g)
        l_ok_scaled = bool(np.all(l_margins >= -tol * scales))
        reps.lemma_all.record(l_ok_scaled, {"min_margin": float(np.min(l_margins))} | info)
        if sane:
            l_ok_abs = bool(np.all(l_margins >= -tol))
            reps.lemma_sane.record(l_ok_abs, {"min_margin": float(np.min(l_margins))} | info)
    elapsed = time.perf_counter() - t0
    for r in reps.reports():
        r.elapsed_seconds = elapsed
    return reps


def run_med_oracle_suite(
    n_instances: int = 200,
    seed: int = 0,
    t_max: int = 4,
    grid: DoseGrid = DoseGrid(max_dose=2.0, resolution=0.05),
    tol: float = 1e-8,
) -> SuiteReport:
    """Greedy dosing versus exhaustive search on small instances.

    Asserts the clairvoyant greedy schedule stays feasible and its cumulative
    dose is within the grid-discretization slack T*resolution*max(1, 1/g(0))
    of the exhaustive optimum.
    """
    rng = np.random.default_rng(seed)
    rep = SuiteReport(name="med_oracle")
    t0 = time.perf_counter()
    attempts = 0
    while rep.n_runs < n_instances and attempts < n_instances * 20:
        attempts += 1
        g, _ = sample_lpop_kernel(rng, tail_tol=1e-6, max_decay=0.9)
        g0 = g.values[0]
        T = int(rng.integers(1, t_max + 1))
        nat = sample_wild_progression(rng, T + 1)
        headroom = rng.uniform(-0.4, 0.85) * g0 * grid.max_dose
        ymin = float(np.min(nat[1:]) + headroom)
        try:
            _sched, opt_cum = brute_force_min_dose(g, nat, ymin, T, grid)
        except NoFeasibleScheduleError:
            continue

        trace = run_closed_loop(
            g, MedPolicy(y_nat_lb_mode="clairvoyant"),
            NaturalProgression.from_sequence(nat), NoiseSpec.none(),
            warmup=(0.0, 0), t_taper=T, constraint=ConstraintPath.of(ymin),
        )
        med_cum = float(np.sum(trace.doses))
        slack = T * grid.resolution * max(1.0, 1.0 / g0)
        safe = bool(np.all(np.asarray(trace.wellbeing[1:]) >= ymin - tol))
        near_opt = med_cum <= opt_cum + slack + 1e-9
        rep.record(
            safe and near_opt,
            {"med_cum": med_cum, "oracle_cum": opt_cum, "slack": slack,
             "safe": safe, "T": T, "g0": g0},
        )
    rep.elapsed_seconds = time.perf_counter() - t0
    return rep


def run_prop2_suite(
    n_systems: int = 100, seed: int = 0, tol: float = 1e-8,
    include_canonical: bool = True,
) -> SuiteReport:
    """Coarsened systems under compliant drift: all three conclusions hold."""
    rng = np.random.default_rng(seed)
    rep = SuiteReport(name="prop2")
    t0 = time.perf_counter()

    kernels: list[ImpulseResponse] = []
    if include_canonical:
        from .experiments import canonical_systems

        for system in canonical_systems():
            g = system.kernel()
            cert = certify_lpop(g)
            assert isinstance(cert, LpopCertificate)
            kernels.append(coarsen(g, cert.tau0) if cert.tau0 > 1 else g)
    while len(kernels) < n_systems:
        g, cert = sample_lpop_kernel(rng, max_decay=0.97)
        kernels.append(coarsen(g, cert.tau0) if cert.tau0 > 1 else g)

    for g in kernels[:n_systems]:
        gc = certify_opponent(g)
        if isinstance(gc, Violation) or gc.tau0 != 1:
            rep.record(False, {"detail": "coarsened kernel lost tau0 = 1"})
            continue
        g0 = g.values[0]
        for _ in range(50):
            u0 = float(rng.uniform(0.3, 1.5))
            k_plus = float(rng.uniform(0.3, 1.0)) / g0
            delta = float(rng.uniform(0.3, 1.2))
            zero_bound = math.ceil(math.exp(u0 / (k_plus * delta)))
            if zero_bound <= 60:
                break
        k_minus = float(rng.uniform(1.0, 2.5)) / g0
        T = zero_bound + 20

        kern = g.as_array()
        nat = np.empty(T + 1)
        nat[0] = rng.uniform(-1.0, 1.0)
        nat[1] = nat[0] + rng.uniform(0.0, 0.5)
        for t in range(1, T):
            gt = kern[t] if t < len(kern) else 0.0
            nat[t + 1] = nat[t] + max(0.0, -gt * u0 + delta / t) + rng.uniform(0.0, 0.2)
        ymin = float(nat[1] + g0 * u0 * (1.0 - rng.uniform(0.05, 0.95)))

        policy = IntegralPolicy(k_plus=k_plus, k_minus=k_minus, delta=0.0, u_init=u0)
        trace = run_closed_loop(
            g, policy, NaturalProgression.from_sequence(nat), NoiseSpec.none(),
            warmup=(u0, 1), t_taper=T - 1, constraint=ConstraintPath.of(ymin),
        )
        report = check_prop2(
            trace.wellbeing, trace.doses, trace.nat, ymin, g,
            u0=u0, k_plus=k_plus, delta=delta, tol=tol,
        )
        rep.record(report.passed, report.to_dict() | {"g0": g0, "T": T})
    rep.elapsed_seconds = time.perf_counter() - t0
    return rep
