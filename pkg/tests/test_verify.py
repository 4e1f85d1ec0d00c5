import itertools
import math

import numpy as np
import pytest

from taperkit.kernels import ImpulseResponse, LpopCertificate, Mode, build_impulse_response, certify_lpop
from taperkit.policies import ConstraintPath, IntegralPolicy, MedPolicy
from taperkit.simulate import NaturalProgression, NoiseSpec, run_closed_loop
from taperkit.verify import (
    DoseGrid,
    NoFeasibleScheduleError,
    OracleBudgetError,
    brute_force_min_dose,
    check_lemma1,
    check_prop2,
    check_theorem2,
    lemma1_margins,
    run_med_oracle_suite,
    run_prop2_suite,
    run_theorem2_lemma1_suite,
    sample_lpop_kernel,
    theorem2_margins,
    theorem2_window_margins,
)

G = ImpulseResponse(values=(0.5, 0.05, -0.155, -0.2395))


def brute_force_reference(g, y_nat, ymin, T, grid):
    """Plain itertools enumeration, independent of the vectorized search."""
    values = [i * grid.resolution for i in range(grid.n_points)]
    best = None
    for sched in itertools.product(values, repeat=T):
        y = []
        feasible = True
        for t in range(T):
            acc = y_nat[t + 1]
            for k in range(min(t + 1, g.horizon)):
                acc += g.values[k] * sched[t - k]
            if acc < ymin - 1e-9:
                feasible = False
                break
            y.append(acc)
        if not feasible:
            continue
        cum = sum(sched)
        if best is None or cum < best[1] - 1e-12:
            best = (sched, cum)
    return best


class TestBruteForce:
    def test_single_step_example(self):
        g = ImpulseResponse(values=(0.5, 0.0))
        sched, cum = brute_force_min_dose(g, [0.0, 0.0], 0.25, 1, DoseGrid(2.0, 0.1))
        assert sched == (0.5,)
        assert cum == pytest.approx(0.5)

    def test_zero_schedule_when_feasible(self):
        sched, cum = brute_force_min_dose(G, [0.0, 0.5, 0.5], -1.0, 2, DoseGrid(1.0, 0.25))
        assert sched == (0.0, 0.0)
        assert cum == 0.0

    def test_matches_itertools_reference(self):
        rng = np.random.default_rng(17)
        grid = DoseGrid(max_dose=1.0, resolution=0.2)
        for _ in range(10):
            g, _ = sample_lpop_kernel(rng, tail_tol=1e-6, max_decay=0.9)
            T = int(rng.integers(1, 4))
            y_nat = rng.normal(0, 0.5, T + 1)
            ymin = float(np.min(y_nat[1:]) + rng.uniform(-0.2, 0.3))
            ref = brute_force_reference(g, y_nat, ymin, T, grid)
            if ref is None:
                with pytest.raises(NoFeasibleScheduleError):
                    brute_force_min_dose(g, y_nat, ymin, T, grid)
                continue
            sched, cum = brute_force_min_dose(g, y_nat, ymin, T, grid)
            assert cum == pytest.approx(ref[1], abs=1e-9)

    def test_lexicographic_tie_break(self):
        # pure impulse: y[t+1] = 0.5 * u[t]; constraint only on step 2
        g = ImpulseResponse(values=(0.5, 0.0))
        sched, cum = brute_force_min_dose(
            g, [0.0, 0.0, 0.0], [-10.0, 0.25], 2, DoseGrid(1.0, 0.25)
        )
        assert sched == (0.0, 0.5)

    def test_budget_guards(self):
        with pytest.raises(OracleBudgetError):
            brute_force_min_dose(G, [0.0] * 8, 0.0, 7, DoseGrid(1.0, 0.5))
        with pytest.raises(OracleBudgetError):
            brute_force_min_dose(G, [0.0] * 7, 0.0, 6, DoseGrid(2.0, 0.001))

    def test_infeasible_reported(self):
        g = ImpulseResponse(values=(0.5, 0.0))
        with pytest.raises(NoFeasibleScheduleError):
            brute_force_min_dose(g, [0.0, 0.0], 5.0, 1, DoseGrid(1.0, 0.5))


class TestTheorem2Checker:
    def test_prefix_one_reduction(self):
        # T = 1 reduces to y1 >= 2*ymin - y0
        y0, ymin = 0.6, -0.4
        edge = 2 * ymin - y0
        assert check_theorem2([y0, edge + 1e-12], ymin).passed
        assert not check_theorem2([y0, edge - 1e-3], ymin).passed

    def test_margins_formula(self):
        y = [1.0, 0.0, -0.5]
        m = theorem2_margins(y, 0.0)
        assert m[0] == pytest.approx(0.0 - (0.0 - 1.0 / 1))
        assert m[1] == pytest.approx(-0.25 - (0.0 - 1.0 / 2))

    def test_inverted_gains_informational(self):
        rep = check_theorem2([0.0, -5.0], 0.0, k_plus=10.0, k_minus=20.0, g0=1.0)
        assert rep.hypothesis_ok is False

    def test_time_varying_needs_one_extra_setpoint(self):
        with pytest.raises(ValueError):
            theorem2_margins([0.0, 1.0, 2.0], [0.0, 0.0])
        theorem2_margins([0.0, 1.0, 2.0], [0.0, 0.0, 0.0])

    def test_window_form_holds_where_stated_form_fails(self):
        # a crash in the progression with no dose in flight violates the
        # boundary-term-free bound at T = 1 but not the window form
        g = ImpulseResponse(values=(1.0, 0.0))
        nat = [1.0, -5.0]
        trace = run_closed_loop(
            g, IntegralPolicy(k_plus=1.0, k_minus=1.0, u_init=0.0),
            NaturalProgression.from_sequence(nat), NoiseSpec.none(),
            warmup=(0.0, 0), t_taper=1, constraint=ConstraintPath.of(0.0),
        )
        stated = theorem2_margins(trace.wellbeing, 0.0)
        window = theorem2_window_margins(trace.wellbeing, trace.doses, 0.0, 1.0)
        assert stated.min() < -1.0
        assert window.min() >= -1e-12


class TestLemma1Checker:
    def test_constant_everything_reduces_to_floor(self):
        # constant progression and constant doses: the sum telescopes away
        # except the u[-1] = 0 convention term at k = t
        g = G
        u = [0.7] * 5
        nat = [0.0] * 6
        y = [nat[0]]
        for t in range(5):
            acc = nat[t + 1]
            for k in range(min(t + 1, g.horizon)):
                acc += g.values[k] * u[t - k]
            y.append(acc)
        margins = lemma1_margins(y, u, nat, -1.0, g)
        expected = []
        for t in range(5):
            conv = sum(
                g.values[k] * ((u[t - k - 1] if t - k - 1 >= 0 else 0.0) - u[t - k])
                for k in range(1, min(t + 1, g.horizon))
            )
            expected.append(y[t + 1] - (-1.0 + 0.0 - conv))
        assert list(margins) == pytest.approx(expected, abs=1e-12)

    def test_t0_uses_convention(self):
        # empty sum at t = 0: y1 >= s + nat1 - nat0
        g = G
        margins = lemma1_margins([0.0, 0.4], [0.5], [0.0, 0.15], 0.1, g)
        assert margins[0] == pytest.approx(0.4 - (0.1 + 0.15))

    def test_integral_run_satisfies(self):
        g = build_impulse_response([Mode(1.0, 0.5), Mode(-0.4, 0.9)], tail_tol=1e-8)
        trace = run_closed_loop(
            g, IntegralPolicy(k_plus=0.5 / g.values[0], k_minus=1.5 / g.values[0], u_init=1.0),
            NaturalProgression.monotone(0.0, 0.01), NoiseSpec.uniform(0.2, 4),
            warmup=(0.0, 0), t_taper=40, constraint=ConstraintPath.of(-0.5),
        )
        rep = check_lemma1(trace.wellbeing, trace.doses, trace.nat, -0.5, g)
        assert rep.passed


class TestProp2Checker:
    def test_zero_time_bound_small_example(self):
        # u0 = 1, k_plus = 1, delta = 1: ceil(e) = 3
        assert math.ceil(math.exp(1.0 / (1.0 * 1.0))) == 3

    def test_bound_approaches_one_for_large_delta(self):
        assert math.ceil(math.exp(1.0 / (1.0 * 50.0))) == 2

    def test_compliant_run_passes(self):
        g = ImpulseResponse(values=(1.0, -0.3, -0.1))
        u0, k_plus, delta = 1.0, 1.0, 1.0
        T = 10
        nat = [0.0, 0.2]
        for t in range(1, T):
            gt = g.values[t] if t < g.horizon else 0.0
            nat.append(nat[-1] + max(0.0, -gt * u0 + delta / t) + 0.05)
        ymin = nat[1] + g.values[0] * u0 - 0.5
        trace = run_closed_loop(
            g, IntegralPolicy(k_plus=k_plus, k_minus=1.2, u_init=u0),
            NaturalProgression.from_sequence(nat), NoiseSpec.none(),
            warmup=(u0, 1), t_taper=T - 1, constraint=ConstraintPath.of(ymin),
        )
        rep = check_prop2(trace.wellbeing, trace.doses, trace.nat, ymin, g,
                          u0=u0, k_plus=k_plus, delta=delta)
        assert rep.precondition_ok, rep.precondition_detail
        assert rep.passed
        # zero by step ceil(e^(1/1)) = 3
        assert all(u == 0.0 for u in trace.doses[3:])

    def test_violated_drift_reported_as_precondition(self):
        g = ImpulseResponse(values=(1.0, -0.3, -0.1))
        nat = [0.0] * 12  # flat progression cannot satisfy the drift condition
        trace = run_closed_loop(
            g, IntegralPolicy(k_plus=1.0, k_minus=1.2, u_init=1.0),
            NaturalProgression.from_sequence(nat), NoiseSpec.none(),
            warmup=(1.0, 1), t_taper=10, constraint=ConstraintPath.of(-5.0),
        )
        rep = check_prop2(trace.wellbeing, trace.doses, trace.nat, -5.0, g,
                          u0=1.0, k_plus=1.0, delta=1.0)
        assert not rep.precondition_ok
        assert "drift" in rep.precondition_detail


class TestModificationArgument:
    def test_perturbation_never_lowers_later_wellbeing(self):
        # shifting eps of dose one step later, scaled by any feasible alpha,
        # can only raise later measurements
        rng = np.random.default_rng(123)
        for _ in range(40):
            g, cert = sample_lpop_kernel(rng, tail_tol=1e-7, max_decay=0.95)
            assert isinstance(cert, LpopCertificate)
            alpha = float(rng.uniform(cert.alpha_lo, cert.alpha_hi))
            T = int(rng.integers(3, 12))
            u = rng.uniform(0.2, 1.5, T)
            t0 = int(rng.integers(0, T - 1))
            eps = float(rng.uniform(0.0, u[t0]))
            u2 = u.copy()
            u2[t0] -= eps
            u2[t0 + 1] += alpha * eps
            kern = g.as_array()

            def response(doses, t):
                m = min(t + 1, len(kern))
                return float(np.dot(kern[:m], doses[t + 1 - m: t + 1][::-1]))

            for t in range(t0 + 1, T):
                y_base = response(u, t)
                y_mod = response(u2, t)
                assert y_mod >= y_base - 1e-10


class TestSuites:
    def test_long_term_suite_small(self):
        suites = run_theorem2_lemma1_suite(n_runs=60, seed=5)
        assert suites.window.passed
        assert suites.lemma_all.passed
        assert suites.lemma_sane.passed
        assert suites.as_stated.n_runs >= 60

    def test_med_suite_small(self):
        rep = run_med_oracle_suite(n_instances=15, seed=6)
        assert rep.passed
        assert rep.n_runs == 15

    def test_prop2_suite_small(self):
        rep = run_prop2_suite(n_systems=12, seed=7)
        assert rep.passed
        assert rep.n_runs == 12
