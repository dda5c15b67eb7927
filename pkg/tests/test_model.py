import numpy as np
import pytest
from numpy.testing import assert_allclose

from raswe.errors import DegeneratePosition
from raswe.model import (
    MeasurementFrame,
    approximate_position,
    build_input,
    build_observation,
    build_transition,
    observability_rank,
    uwb_observation_row,
)


class TestBuildTransition:
    def test_zero_drag(self):
        A = build_transition(0.04, np.zeros((3, 3)))
        expected = np.eye(6)
        expected[:3, 3:] = 0.04 * np.eye(3)
        assert_allclose(A, expected)

    def test_table_drag(self):
        A = build_transition(0.04, np.diag([0.2, 0.2, 0.8]))
        assert_allclose(np.diag(A[3:, 3:]), [0.992, 0.992, 0.968])
        assert_allclose(A[:3, :3], np.eye(3))
        assert_allclose(A[:3, 3:], 0.04 * np.eye(3))
        assert_allclose(A[3:, :3], np.zeros((3, 3)))

    def test_unit_drag(self):
        A = build_transition(0.04, np.eye(3))
        assert_allclose(A[3:, 3:], 0.96 * np.eye(3))

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            build_transition(0.0, np.zeros((3, 3)))
        with pytest.raises(ValueError):
            build_transition(-0.1, np.zeros((3, 3)))

    def test_rejects_nonfinite_drag(self):
        mu = np.zeros((3, 3))
        mu[1, 1] = np.nan
        with pytest.raises(ValueError):
            build_transition(0.04, mu)

    def test_rejects_degenerate_drag(self):
        with pytest.raises(ValueError):
            build_transition(0.5, 2.0 * np.eye(3))

    def test_zero_drag_power_is_integrator_chain(self):
        dt = 0.03
        A = build_transition(dt, np.zeros((3, 3)))
        An = np.linalg.matrix_power(A, 7)
        assert_allclose(An[:3, 3:], 7 * dt * np.eye(3), atol=1e-12)


class TestBuildInput:
    def test_zero(self):
        assert_allclose(build_input(0.04, np.zeros(3)), np.zeros(6))

    def test_unit_x(self):
        assert_allclose(build_input(0.04, np.array([1.0, 0, 0])),
                        [0.0008, 0, 0, 0.04, 0, 0])

    def test_unit_dt(self):
        assert_allclose(build_input(1.0, np.array([2.0, -2.0, 4.0])),
                        [1, -1, 2, 2, -2, 4])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            build_input(0.04, np.array([1.0, np.inf, 0.0]))


class TestApproximatePosition:
    def test_stationary(self):
        A = build_transition(0.04, np.zeros((3, 3)))
        p = approximate_position(np.array([1.0, 0, 0, 0, 0, 0]), A, np.zeros(6))
        assert_allclose(p, [1, 0, 0])

    def test_moving(self):
        A = build_transition(0.04, np.zeros((3, 3)))
        p = approximate_position(np.array([1.0, 0, 0, 1.0, 0, 0]), A, np.zeros(6))
        assert_allclose(p, [1.04, 0, 0])

    def test_input_only(self):
        A = build_transition(0.04, np.zeros((3, 3)))
        u = build_input(0.04, np.array([1.0, 0, 0]))
        p = approximate_position(np.zeros(6), A, u)
        assert_allclose(p, [0.0008, 0, 0])


class TestUwbRow:
    def test_unit_axis(self):
        assert_allclose(uwb_observation_row(np.array([1.0, 0, 0])),
                        [1, 0, 0, 0, 0, 0])

    def test_345_triangle(self):
        assert_allclose(uwb_observation_row(np.array([3.0, 4.0, 0])),
                        [0.6, 0.8, 0, 0, 0, 0])

    def test_degenerate_raises(self):
        with pytest.raises(DegeneratePosition):
            uwb_observation_row(np.zeros(3))

    def test_unit_norm_property(self, rng):
        for _ in range(300):
            p = rng.normal(size=3) * rng.uniform(0.1, 50)
            row = uwb_observation_row(p)
            assert abs(np.linalg.norm(row) - 1.0) < 1e-12
            assert_allclose(row[3:], 0)


class TestBuildObservation:
    def test_unit_axis_rows(self):
        C = build_observation(np.array([1.0, 0, 0]))
        assert_allclose(C[0], [1, 0, 0, 0, 0, 0])
        assert_allclose(C[1], [0, 0, 0, 1, 0, 0])
        assert_allclose(C[2], [0, 0, 0, 0, 1, 0])
        assert_allclose(C[3], [0, 0, 0, 0, 0, 1])

    def test_345_row(self):
        C = build_observation(np.array([0.0, 3.0, 4.0]))
        assert_allclose(C[0], [0, 0.6, 0.8, 0, 0, 0])

    def test_velocity_block_structure(self, rng):
        for _ in range(20):
            C = build_observation(rng.normal(size=3) + 5.0)
            assert_allclose(C[1:, 3:], np.eye(3))
            assert_allclose(C[1:, :3], np.zeros((3, 3)))


class TestObservabilityRank:
    """The snapshot stack [C; CA; ...; CA^5] freezes the range direction, so
    the range rows only ever constrain the position component along that one
    direction: with velocity fully measured the rank is 4, never 6.  Full
    observability needs either the coherence augmentation or actual motion
    of the linearization point."""

    def test_fixed_direction_rank_is_four(self):
        A = build_transition(0.04, np.diag([0.2, 0.2, 0.8]))
        C = build_observation(np.array([1.0, 0, 0]))
        assert observability_rank(A, C) == 4

    def test_rank_four_over_random_draws(self, rng):
        ranks = set()
        for _ in range(1000):
            p = rng.normal(size=3)
            while np.linalg.norm(p) < 1e-3:
                p = rng.normal(size=3)
            mu = rng.normal(size=(3, 3))
            dt = rng.uniform(0.01, 0.1)
            ranks.add(observability_rank(build_transition(dt, mu),
                                         build_observation(p)))
        assert ranks == {4}

    def test_dead_range_row_leaves_velocity_only(self):
        A = build_transition(0.04, np.diag([0.2, 0.2, 0.8]))
        C = build_observation(np.array([1.0, 0, 0]))
        C[0] = 0.0
        assert observability_rank(A, C) == 3

    def test_augmented_rank_six_always(self, rng):
        for _ in range(300):
            mu = rng.normal(size=(3, 3))
            dt = rng.uniform(0.01, 0.1)
            A = build_transition(dt, mu)
            C = np.zeros((4, 6))
            C[1:, 3:] = np.eye(3)
            p = rng.normal(size=3)
            if np.linalg.norm(p) > 1e-6:
                C[0, :3] = p / np.linalg.norm(p)
            C_aug = np.vstack([C, np.eye(6)])
            assert observability_rank(A, C_aug) == 6


class TestMeasurementFrame:
    def test_absent_channels_force_flags(self):
        f = MeasurementFrame(t=0.04, dt=0.04, accel=np.zeros(3),
                             uwb_range=None, of_velocity=None,
                             uwb_ok=True, of_ok=True)
        f.validate()
        assert not f.uwb_ok and not f.of_ok

    def test_negative_range_rejected(self):
        f = MeasurementFrame(t=0.04, dt=0.04, accel=np.zeros(3), uwb_range=-1.0)
        with pytest.raises(ValueError):
            f.validate()

    def test_bad_dt_rejected(self):
        f = MeasurementFrame(t=0.04, dt=0.0, accel=np.zeros(3), uwb_range=1.0)
        with pytest.raises(ValueError):
            f.validate()
