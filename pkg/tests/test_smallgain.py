import json
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nugain.errors import ConfigurationError, DomainError, EvaluationError
from nugain.gains import ContractionEnvelope, ScalarFn, WanderingBound, identity
from nugain.smallgain import (
    GeneralScheduleSpec,
    ScheduleParams,
    build_schedule,
    check_small_gain_existence,
    check_theorem_conditions,
    check_trapping_separable,
    compute_B1_B2,
    condition_report,
    default_schedule_spec,
    identifier_gain_bound,
    optimize_G,
    small_gain_G,
    trapping_x0_bound,
)

# Frozen oracle values, from a standalone evaluation of the closed forms
# (dense-grid minimization for G*; no package code involved).
G_STAR_ORACLE = 15.688620077817307
GAMMA_MAX_EX1 = 0.06011229337037347
TRAP_RHS_UNIT = 0.05152482288889155
X0_MAX_CASCADE = 3.0067376022224086

EXP1 = ContractionEnvelope.exponential(1.0)
REF = ScheduleParams(0.5, 2.0)


class TestScheduleParams:
    @pytest.mark.parametrize("d,k", [(0.0, 2.0), (1.0, 2.0), (0.5, 1.0), (0.5, 0.9), (-0.1, 3.0)])
    def test_invalid(self, d, k):
        with pytest.raises(DomainError):
            ScheduleParams(d, k)


class TestBuildSchedule:
    def test_reference_values(self):
        s = build_schedule(EXP1, REF)
        assert s.xi_star == 0.25
        assert math.isclose(s.tau_star, math.log(4), rel_tol=1e-15)
        assert math.isclose(s.delta0, 0.5 / math.log(4), rel_tol=1e-15)
        assert abs(s.delta0 - 0.36067) < 1e-5

    def test_rate_two(self):
        s = build_schedule(ContractionEnvelope.exponential(2.0), REF)
        assert math.isclose(s.tau_star, math.log(4) / 2)
        assert abs(s.delta0 - 0.72135) < 1e-5

    def test_small_beta_t0_rejected(self):
        env = ContractionEnvelope.separable(ScalarFn(lambda t: 0.2 * np.exp(-np.asarray(t)), "small"))
        with pytest.raises(DomainError):
            build_schedule(env, REF)

    def test_general_kind_rejected(self):
        env = ContractionEnvelope(identity(), ScalarFn(lambda t: np.exp(-np.asarray(t))), kind="general")
        with pytest.raises(ConfigurationError):
            build_schedule(env, REF)

    def test_partition(self):
        s = build_schedule(EXP1, REF)
        sig = s.sigmas(40)
        assert sig[0] == 1.0
        assert np.all(np.diff(sig) < 0)
        assert sig[-1] < 1e-11

    @given(st.floats(0.05, 0.95), st.floats(1.05, 20.0), st.floats(0.1, 5.0), st.floats(1.0, 3.0))
    @settings(max_examples=100, deadline=None)
    def test_dwell_time_reaches_contraction(self, d, k, rate, D):
        env = ContractionEnvelope.exponential(rate, D_beta=D)
        s = build_schedule(env, ScheduleParams(d, k))
        assert env.beta_t(s.tau_star) <= s.xi_star * env.beta_t0 + 1e-10

    @given(st.floats(0.05, 0.95), st.floats(1.05, 20.0), st.floats(0.1, 5.0))
    @settings(max_examples=50, deadline=None)
    def test_rate_condition_tight_for_default_schedule(self, d, k, rate):
        s = build_schedule(ContractionEnvelope.exponential(rate), ScheduleParams(d, k))
        for i in range(51):
            lhs = (s.sigma(i) - s.sigma(i + 1)) / (s.tau_star * s.sigma(i))
            assert abs(lhs - s.delta0) <= 1e-12 * max(1.0, s.delta0)


class TestB1B2:
    def test_unit(self):
        assert compute_B1_B2(EXP1, REF, 1.0, 1.0) == (1.0, 5.0)

    def test_zero(self):
        assert compute_B1_B2(EXP1, REF, 0.0, 0.0) == (0.0, 0.0)

    def test_scaled(self):
        env = ContractionEnvelope.exponential(1.0, D_beta=2.0, c=0.5)
        assert compute_B1_B2(env, REF, 0.0, 2.0)[1] == 10.0

    def test_negative_norm(self):
        with pytest.raises(DomainError):
            compute_B1_B2(EXP1, REF, -1.0, 1.0)


class TestTrappingSeparable:
    def test_example1_threshold(self):
        # x0 = 0 leaves the ratio h/(B2 + c h) = 1/6.
        wb = WanderingBound.lipschitz(0.05)
        r = check_trapping_separable(EXP1, wb, REF, 0.0, 1.0)
        assert abs(r.threshold - 0.0601) < 2e-4
        assert math.isclose(r.threshold, GAMMA_MAX_EX1, rel_tol=1e-12)

    def test_zero_gain_always_member(self):
        wb = WanderingBound.lipschitz(0.0)
        for h in (1e-6, 1.0, 1e6):
            assert check_trapping_separable(EXP1, wb, REF, 3.0, h).member

    def test_unit_point(self):
        r = check_trapping_separable(EXP1, WanderingBound.lipschitz(0.05), REF, 1.0, 1.0)
        assert r.member
        assert math.isclose(r.threshold, TRAP_RHS_UNIT, rel_tol=1e-12)
        assert math.isclose(r.margin, TRAP_RHS_UNIT - 0.05, rel_tol=1e-9)

    def test_nonpositive_output_flagged(self):
        r = check_trapping_separable(EXP1, WanderingBound.lipschitz(0.01), REF, 0.0, 0.0)
        assert not r.member and "positive" in r.reason

    def test_missing_lipschitz_constant(self):
        wb = WanderingBound(lambda z: z[0], identity(), identity(), identity(), identity())
        with pytest.raises(ConfigurationError):
            check_trapping_separable(EXP1, wb, REF, 0.0, 1.0)


class TestG:
    def test_reference(self):
        assert math.isclose(small_gain_G(EXP1, REF), math.log(4) * 12, rel_tol=1e-14)
        assert abs(small_gain_G(EXP1, REF) - 16.6355) < 1e-4

    def test_scales_inverse_in_rate(self):
        assert abs(small_gain_G(ContractionEnvelope.exponential(2.0), REF) - 8.3178) < 1e-4

    def test_blows_up_near_one(self):
        assert small_gain_G(EXP1, ScheduleParams(1 - 1e-9, 2.0)) > 1e9

    def test_general_formula_matches_exponential(self):
        env = ContractionEnvelope.separable(ScalarFn(lambda t: np.exp(-1.0 * np.asarray(t)), "e"))
        assert math.isclose(small_gain_G(env, REF), small_gain_G(EXP1, REF), rel_tol=1e-9)


class TestOptimizeG:
    def test_reference_minimum(self):
        t0 = time.perf_counter()
        opt = optimize_G(EXP1)
        assert time.perf_counter() - t0 < 5.0
        assert abs(opt.G_star - 15.6886) < 0.01
        assert abs(opt.G_star - G_STAR_ORACLE) < 1e-6
        assert opt.G_star < 16

    def test_rate_four(self):
        opt = optimize_G(ContractionEnvelope.exponential(4.0))
        assert abs(opt.G_star - G_STAR_ORACLE / 4) < 1e-6
        assert abs(opt.G_star - 3.92215) < 1e-4

    def test_never_above_grid(self):
        opt = optimize_G(EXP1, grid=32)
        for d in np.linspace(0.05, 0.95, 15):
            for k in np.geomspace(1.05, 50, 15):
                assert opt.G_star <= small_gain_G(EXP1, ScheduleParams(d, k)) + 1e-12

    def test_separable_numeric(self):
        env = ContractionEnvelope.separable(ScalarFn(lambda t: 1.0 / (1.0 + np.asarray(t)), "recip"))
        opt = optimize_G(env, grid=12)
        assert opt.G_star <= opt.grid_min


class TestExistence:
    def test_trivial(self):
        assert check_small_gain_existence(1, 1, 0.5)
        assert not check_small_gain_existence(1, 1, 1.0)

    def test_one_sixteenth_rule(self):
        for rate in (0.5, 1.0, 3.0):
            g = optimize_G(ContractionEnvelope.exponential(rate)).G_star
            assert check_small_gain_existence(rate / 16, 1.0, g)
            assert abs(rate / 16 * g - 0.9805) < 0.002

    def test_negative_rejected(self):
        with pytest.raises(DomainError):
            check_small_gain_existence(-1, 1, 1)


class TestX0Bound:
    def test_cascade_value(self):
        env = ContractionEnvelope.exponential(2.0, c=0.2 / 2.0)
        b = trapping_x0_bound(env, REF, 0.2, 0.1, 1.0)
        assert math.isclose(b.x0_max, X0_MAX_CASCADE, rel_tol=1e-12)
        assert not b.empty

    def test_huge_gain_empty(self):
        b = trapping_x0_bound(EXP1, REF, 1e6, 1.0, 1.0)
        assert b.empty and b.x0_max < 0

    def test_linear_in_h(self):
        a = trapping_x0_bound(EXP1, REF, 0.01, 1.0, 1.0).x0_max
        b = trapping_x0_bound(EXP1, REF, 0.01, 1.0, 2.0).x0_max
        assert math.isclose(b, 2 * a, rel_tol=1e-14)

    def test_consistent_with_membership(self):
        env = ContractionEnvelope.exponential(1.0, c=0.3)
        wb = WanderingBound.lipschitz(0.02)
        b = trapping_x0_bound(env, REF, 0.02, 0.3, 1.0).x0_max
        assert check_trapping_separable(env, wb, REF, b * (1 - 1e-9), 1.0).member
        assert not check_trapping_separable(env, wb, REF, b * (1 + 1e-6), 1.0).member


class TestIdentifierBound:
    def test_example1(self):
        g = identifier_gain_bound(EXP1, REF, 1.0)
        assert abs(g - 0.0601) < 2e-4
        assert math.isclose(g, GAMMA_MAX_EX1, rel_tol=1e-12)

    def test_halves(self):
        assert math.isclose(identifier_gain_bound(EXP1, REF, 2.0), GAMMA_MAX_EX1 / 2, rel_tol=1e-14)

    def test_hr_constants_admit_reference_gain(self):
        # D_lambda ~ 952 from the Example-2 bound evaluation (sup x1 about 2.33).
        g = identifier_gain_bound(ContractionEnvelope.exponential(10.0), REF, 952.26)
        assert g > 3e-4

    def test_requires_positive(self):
        with pytest.raises(DomainError):
            identifier_gain_bound(EXP1, REF, 0.0)


def random_case(rng):
    rate = rng.uniform(0.2, 5.0)
    c = rng.uniform(0.05, 2.0)
    d = rng.uniform(0.05, 0.95)
    k = rng.uniform(1.05, 10.0)
    x0 = rng.uniform(0.0, 3.0)
    h = rng.uniform(0.05, 3.0)
    env = ContractionEnvelope.exponential(rate, c=c)
    params = ScheduleParams(d, k)
    thr = check_trapping_separable(env, WanderingBound.lipschitz(0.0), params, x0, h).threshold
    D = thr * rng.uniform(0.5, 1.5)
    return env, params, WanderingBound.lipschitz(D), x0, h


class TestTheoremConditions:
    def test_default_schedule_matches_separable(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            env, params, wb, x0, h = random_case(rng)
            gen = check_theorem_conditions(default_schedule_spec(env, params), env, wb, x0, h, N_probe=40)
            sep = check_trapping_separable(env, wb, params, x0, h)
            assert gen.passed == sep.member

    def test_recursion_reproduces_B1_B2(self):
        rep = check_theorem_conditions(default_schedule_spec(EXP1, REF), EXP1, WanderingBound.lipschitz(0.05), 1.0, 1.0, N_probe=60)
        assert rep.conditions["B1_bound"].passed and abs(rep.conditions["B1_bound"].margin) < 1e-12
        assert rep.conditions["B2_bound"].passed
        assert rep.conditions["B2_bound"].margin < 1e-12

    def test_convergent_dwell_times_fail(self):
        base = default_schedule_spec(EXP1, REF)
        spec = GeneralScheduleSpec(**{**base.__dict__, "tau": lambda i: 2.0 ** (-np.asarray(i, dtype=float)),
                                      "tau_constant": False, "delta0": None})
        rep = check_theorem_conditions(spec, EXP1, WanderingBound.lipschitz(0.01), 0.5, 1.0, N_probe=20, n_max=10_000)
        assert not rep.conditions["dwell_divergence"].passed
        assert not rep.passed

    def test_constant_dwell_divergence_by_partial_sums(self):
        base = default_schedule_spec(EXP1, REF)
        spec = GeneralScheduleSpec(**{**base.__dict__, "tau_constant": False})
        rep = check_theorem_conditions(spec, EXP1, WanderingBound.lipschitz(0.01), 0.5, 1.0, N_probe=10)
        assert rep.conditions["dwell_divergence"].passed

    def test_degenerate_origin(self):
        with pytest.warns(RuntimeWarning):
            rep = check_theorem_conditions(default_schedule_spec(EXP1, REF), EXP1, WanderingBound.lipschitz(0.05), 0.0, 0.0,
                                           N_probe=5)
        assert rep.conditions["trapping_domain"].passed
        assert not rep.passed

    def test_non_finite_names_index(self):
        base = default_schedule_spec(EXP1, REF)
        spec = GeneralScheduleSpec(**{**base.__dict__, "xi": lambda i: 1e200})
        with pytest.raises(EvaluationError):
            check_theorem_conditions(spec, EXP1, WanderingBound.lipschitz(0.05), 1.0, 1.0, N_probe=10)

    def test_report_serializes(self):
        rep = check_theorem_conditions(default_schedule_spec(EXP1, REF), EXP1, WanderingBound.lipschitz(0.05), 1.0, 1.0, N_probe=5)
        doc = json.loads(json.dumps(rep.to_dict()))
        assert set(doc["conditions"]) == {"B1_bound", "B2_bound", "dwell_rate", "trapping_domain", "dwell_divergence"}
        assert doc["passed"] is True

    def test_condition_report(self):
        doc = condition_report(EXP1, REF)
        assert math.isclose(doc["G"], math.log(4) * 12)


class TestMonotoneInGain:
    @given(st.floats(0.0, 0.2), st.floats(0.0, 0.2), st.floats(0.0, 3.0), st.floats(0.05, 3.0))
    @settings(max_examples=100, deadline=None)
    def test_raising_gain_never_helps(self, D1, D2, x0, h):
        lo, hi = sorted((D1, D2))
        r_lo = check_trapping_separable(EXP1, WanderingBound.lipschitz(lo), REF, x0, h).member
        r_hi = check_trapping_separable(EXP1, WanderingBound.lipschitz(hi), REF, x0, h).member
        assert r_lo or not r_hi
        G = small_gain_G(EXP1, REF)
        assert check_small_gain_existence(lo, 1.0, G) or not check_small_gain_existence(hi, 1.0, G)
