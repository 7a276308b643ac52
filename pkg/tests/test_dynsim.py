import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nugain.errors import ConfigurationError, DomainError, IntegrationError, MonotonicityError
from nugain.gains import WanderingBound
from nugain.smallgain import ScheduleParams, build_schedule, trapping_x0_bound
from nugain.dynsim import (
    CONVERGED,
    ESCAPED,
    InterconnectionModel,
    InvariantSet,
    cascade,
    convergence_order,
    estimate_steady_state_characteristic,
    hitting_gaps,
    hitting_times,
    integrate,
    linear_first_order,
    saddle_node,
    set_distance,
    step_count,
    thresholded_distance,
    verify_wandering_bound,
)


class TestDistances:
    def test_origin(self):
        assert set_distance([3.0, 4.0], InvariantSet.origin()) == 5.0

    def test_ball_boundary(self):
        assert set_distance([3.0, 4.0], InvariantSet.ball([0, 0], 5.0)) == 0.0

    def test_ball_outside(self):
        assert set_distance([3.0, 4.0], InvariantSet.ball([0, 0], 2.0)) == 3.0

    def test_point(self):
        assert set_distance([4.0, 6.0], InvariantSet.point([1.0, 2.0])) == 5.0

    def test_rows(self):
        d = set_distance(np.array([[3.0, 4.0], [0.0, 0.0]]), InvariantSet.origin())
        assert np.array_equal(d, [5.0, 0.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            set_distance([1.0, 2.0, 3.0], InvariantSet.point([0.0, 0.0]))

    def test_bad_sets(self):
        with pytest.raises(DomainError):
            InvariantSet.ball([0.0], -1.0)
        with pytest.raises(DomainError):
            InvariantSet("cube")

    def test_threshold(self):
        A = InvariantSet.origin()
        assert thresholded_distance([2.0], A, 3.0) == 0.0
        assert thresholded_distance([5.0], A, 3.0) == 2.0
        with pytest.raises(DomainError):
            thresholded_distance([1.0], A, -0.1)

    def test_zero_threshold_random(self):
        pts = np.random.default_rng(3).normal(size=(100, 3))
        A = InvariantSet.ball([0.1, 0.2, 0.3], 0.5)
        assert np.array_equal(thresholded_distance(pts, A, 0.0), set_distance(pts, A))

    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=2), st.floats(0, 10), st.floats(0, 10))
    @settings(max_examples=100, deadline=None)
    def test_threshold_monotone_and_bounded(self, x, D1, D2):
        A = InvariantSet.origin()
        lo, hi = sorted((D1, D2))
        a, b = thresholded_distance(x, A, lo), thresholded_distance(x, A, hi)
        assert 0 <= b <= a <= set_distance(x, A)


class TestIntegrate:
    def test_exponential_decay(self):
        traj = integrate(linear_first_order(1.0), [1.0], [], 0.0, 1.0, 1e-3)
        assert traj.times[-1] == pytest.approx(1.0, abs=1e-12)
        assert abs(traj.x[-1, 0] - math.exp(-1)) < 1e-9

    def test_order(self):
        assert convergence_order() >= 3.9

    def test_saddle6_equilibrium_slice(self):
        traj = integrate(saddle_node(6), [1.0], [0.0], 0.0, 20.0, 1e-2)
        assert np.all(traj.z == 0.0)
        assert abs(traj.x[-1, 0] - math.exp(-20)) < 1e-9

    def test_cascade_inside_trapping_slice(self):
        m = cascade(2.0, 0.2, 0.2)
        p = ScheduleParams(0.5, 2.0)
        x0max = trapping_x0_bound(m.envelope, p, 0.2, 0.1, 1.0).x0_max
        traj = integrate(m, [0.9 * x0max], [1.0], 0.0, 500.0, 1e-2, record_every=10)
        assert traj.verdict() == CONVERGED
        assert np.abs(traj.x).max() <= 0.9 * x0max + 1e-12
        assert traj.h[-1] > 0

    def test_weak_attractor_witness(self):
        m = saddle_node(5)
        inside = integrate(m, [0.0], [-0.1], 0.0, 1000.0, 1e-2, record_every=10)
        outside = integrate(m, [0.0], [0.1], 0.0, 1000.0, 1e-2, record_every=10)
        assert inside.verdict(target=m.target) == CONVERGED
        assert outside.verdict(target=m.target) == ESCAPED
        assert 10.0 < outside.escape_time < 30.0

    def test_python_and_compiled_agree(self):
        m = cascade()
        a = integrate(m, [0.5], [1.0], 0.0, 5.0, 1e-2)
        b = integrate(m, [0.5], [1.0], 0.0, 5.0, 1e-2, use_compiled=False)
        assert np.allclose(a.x, b.x, rtol=1e-13, atol=1e-15)
        assert np.allclose(a.z, b.z, rtol=1e-13, atol=1e-15)

    def test_record_every(self):
        traj = integrate(linear_first_order(), [1.0], [], 0.0, 1.0, 1e-2, record_every=10)
        assert traj.times.size == 11
        assert traj.sample_dt == pytest.approx(0.1)

    def test_non_finite_raises(self):
        m = InterconnectionModel(lambda x, z, t: np.log(x - 1.0), lambda x, z, t: np.zeros(0),
                                 lambda z: 0.0, InvariantSet.origin(), (1, 0))
        with np.errstate(invalid="ignore"), pytest.raises(IntegrationError) as err:
            integrate(m, [0.5], [], 0.0, 1.0, 0.1)
        assert err.value.time == pytest.approx(0.0)

    def test_bad_step(self):
        for dt in (0.0, -1.0, math.nan):
            with pytest.raises(ConfigurationError):
                step_count(0.0, 1.0, dt)
        with pytest.raises(ConfigurationError):
            step_count(1.0, 1.0, 0.1)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            integrate(cascade(), [0.5], [], 0.0, 1.0, 0.1)

    def test_csv_deterministic(self, tmp_path):
        m = saddle_node(5)
        for name in ("a.csv", "b.csv"):
            integrate(m, [0.3], [-0.2], 0.0, 10.0, 1e-2, record_every=5).to_csv(tmp_path / name)
        a, b = (tmp_path / "a.csv").read_bytes(), (tmp_path / "b.csv").read_bytes()
        assert a == b
        assert a.splitlines()[0] == b"t,x1,z1,dist,h"

    def test_summary_json(self):
        traj = integrate(linear_first_order(), [1.0], [], 0.0, 10.0, 1e-2)
        assert '"verdict": "converged"' in traj.summary_json()


class TestSandwich:
    def test_cascade(self):
        m = cascade()
        traj = integrate(m, [0.5], [1.0], 0.0, 200.0, 1e-2, record_every=10)
        rep = verify_wandering_bound(traj, m.wandering)
        assert rep.passed
        assert rep.worst_upper <= rep.tol and rep.worst_lower <= rep.tol

    def test_zero_trajectory(self):
        m = cascade()
        traj = integrate(m, [0.0], [0.0], 0.0, 10.0, 1e-2)
        assert np.all(traj.h == 0.0)
        rep = verify_wandering_bound(traj, m.wandering)
        assert rep.passed and rep.worst_upper == 0.0 and rep.worst_lower == 0.0

    def test_wrong_gain_caught(self):
        m = cascade()
        traj = integrate(m, [0.5], [1.0], 0.0, 50.0, 1e-2, record_every=10)
        assert not verify_wandering_bound(traj, WanderingBound.lipschitz(0.1)).passed
        assert not verify_wandering_bound(traj, WanderingBound.lipschitz(0.4)).passed

    def test_saddle5_quadratic(self):
        m = saddle_node(5)
        traj = integrate(m, [0.4], [-0.2], 0.0, 30.0, 1e-3, record_every=10)
        assert verify_wandering_bound(traj, m.wandering).passed


class TestHittingTimes:
    def test_exponential(self):
        t = np.linspace(0.0, 10.0, 100_001)
        sched = build_schedule(linear_first_order().envelope, ScheduleParams(0.5, 2.0))
        hits = hitting_times(t, np.exp(-t), sched)
        assert len(hits) == 15
        for i, ti in hits:
            assert abs(ti - i * math.log(2)) < 1e-8
        assert np.allclose(hitting_gaps(hits), math.log(2), atol=1e-8)

    def test_constant(self):
        hits = hitting_times(np.linspace(0, 1, 11), np.ones(11), lambda i: 2.0 ** -i)
        assert hits == [(0, 0.0)]

    def test_rising_rejected(self):
        t = np.linspace(0, 1, 11)
        with pytest.raises(MonotonicityError):
            hitting_times(t, t, lambda i: 2.0 ** -i)

    def test_shape(self):
        with pytest.raises(DomainError):
            hitting_times([0.0, 1.0], [1.0], lambda i: 1.0)

    @given(st.floats(0.1, 3.0), st.floats(1.2, 5.0))
    @settings(max_examples=30, deadline=None)
    def test_levels_respected(self, rate, kappa):
        t = np.linspace(0.0, 8.0, 4001)
        h = np.exp(-rate * t)
        hits = hitting_times(t, h, lambda i: kappa ** -i)
        times = [ti for _, ti in hits]
        assert times == sorted(times)
        for i, ti in hits:
            assert abs(math.exp(-rate * ti) - kappa ** -i) < 1e-5


class TestSteadyState:
    def test_linear_characteristic(self):
        est = estimate_steady_state_characteristic(lambda u: linear_first_order(1.0, u), [-1.0, -0.5, 0.0, 0.5, 1.0],
                                                   T_settle=30.0, T_avg=5.0, dt=1e-2, x0=[0.3])
        assert est.zero_set == [0.0]
        for p in est.points:
            assert abs(p.limit - abs(p.u)) < 1e-9
        assert est.flagged() == []

    def test_example1_plant_zero_set(self):
        theta, k = 0.3, 1.0

        def factory(th):
            return InterconnectionModel(
                lambda x, z, t: -k * x + np.sin(x * theta + theta) - np.sin(x * th + th),
                lambda x, z, t: np.zeros(0), lambda z: 0.0, InvariantSet.origin(), (1, 0))

        est = estimate_steady_state_characteristic(factory, [0.1, 0.2, 0.3, 0.4, 0.5], T_settle=20.0, T_avg=2.0,
                                                   dt=1e-2, x0=[0.5])
        assert est.zero_set == [0.3]
        assert all(p.limit > 1e-3 for p in est.points if p.u != 0.3)
