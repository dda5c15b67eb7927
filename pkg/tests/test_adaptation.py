import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import rand_pd, random_init, random_window

from raswe.adaptation import (
    EstimatorConfig,
    GateWeights,
    NoiseBelief,
    SensorStatus,
    apply_sensor_status,
    baseline_config,
    discounted_sample_mass,
    drag_gradient,
    expected_covariances,
    gate_weights,
    iw_auxiliary,
    iw_update,
    step_length,
)
from raswe.errors import DegenerateDoF
from raswe.estimator import SlidingWindowEstimator
from raswe.model import MeasurementFrame
from raswe.window import ErrorPropagation, backward_smooth, forward_filter


def ep(avg_trace, reduced_det=0.0):
    return ErrorPropagation(np.eye(6), avg_trace, reduced_det)


class TestGateWeights:
    def test_bad_estimation_freezes(self):
        w = gate_weights(ep(0.5), EstimatorConfig())
        assert w.w1 == 1.0 and w.w2 == 0.0

    def test_threshold_inclusive(self):
        w = gate_weights(ep(1e-3), EstimatorConfig())
        assert w.w1 == 1.0 and w.w2 == 0.0

    def test_zero_trace(self):
        w = gate_weights(ep(0.0), EstimatorConfig())
        assert w.w1 == pytest.approx(1.0)
        assert w.w2 == pytest.approx(0.99)

    def test_zero_det_discount(self):
        w = gate_weights(ep(0.0, 0.0), EstimatorConfig())
        assert w.w3 == pytest.approx(0.1)

    def test_discount_clamped_at_one(self):
        w = gate_weights(ep(0.0, 0.5), EstimatorConfig())
        assert w.w3 == 1.0

    def test_ablation_forces_ones(self):
        w = gate_weights(ep(0.7, 0.0), EstimatorConfig(errprop_off=True))
        assert (w.w1, w.w2, w.w3) == (1.0, 1.0, 1.0)

    def test_weight_sum_constant_below_threshold(self, rng):
        cfg = EstimatorConfig()
        for _ in range(200):
            lam = rng.uniform(0, cfg.lambda0 * 0.999)
            w = gate_weights(ep(lam), cfg)
            assert w.w1 + w.w2 == pytest.approx(2.0 - cfg.f1)
            assert 0.0 <= w.w1 <= 1.0 and 0.0 <= w.w2 <= 1.0

    def test_monotone_gating(self):
        cfg = EstimatorConfig()
        lams = np.linspace(0, cfg.lambda0 * 0.99, 10)
        ws = [gate_weights(ep(l), cfg) for l in lams]
        w1s = [w.w1 for w in ws]
        w2s = [w.w2 for w in ws]
        assert all(a >= b for a, b in zip(w1s, w1s[1:]))
        assert all(a <= b for a, b in zip(w2s, w2s[1:]))

    def test_negative_trace_clamped(self):
        w = gate_weights(ep(-5.0), EstimatorConfig())
        assert w.w1 == pytest.approx(1.0)
        assert 0.0 <= w.w2 <= 1.0


class TestIwAuxiliary:
    def _window(self, rng, k_w=3):
        buf = random_window(k_w, rng)
        fp = forward_filter(buf, random_init(rng))
        sw = backward_smooth(fp, buf)
        return buf, sw

    def test_perfect_model_zero(self, rng):
        buf, sw = self._window(rng)
        # force exact model consistency and zero covariances
        for j in range(buf.k_w + 1):
            sw.covs[j] = np.zeros((6, 6))
        sw.means[0] = rng.normal(size=6)
        for j in range(1, buf.k_w + 1):
            sw.means[j] = buf.A[j - 1] @ sw.means[j - 1] + buf.inputs[j - 1]
            buf.measurements[j - 1] = buf.C[j - 1] @ sw.means[j]
        phis, psis = iw_auxiliary(sw, buf)
        for M in phis + psis:
            assert_allclose(M, 0, atol=1e-12)

    def test_pure_residual_outer_product(self, rng):
        buf, sw = self._window(rng)
        for j in range(buf.k_w + 1):
            sw.covs[j] = np.zeros((6, 6))
        e = np.array([1.0, 0, 0, 0, 0, 0])
        sw.means[0] = rng.normal(size=6)
        sw.means[1] = buf.A[0] @ sw.means[0] + buf.inputs[0] + e
        phis, _ = iw_auxiliary(sw, buf)
        expected = np.zeros((6, 6))
        expected[0, 0] = 1.0
        assert_allclose(phis[0], expected, atol=1e-12)

    def test_stationary_window_recovers_noise_scale(self, rng):
        # long static window with known observation noise: the mean of the
        # observation scatter matrices approximates the true R
        k_w = 400
        R_true = np.diag([0.04, 0.01, 0.02, 0.03])
        L = np.linalg.cholesky(R_true)
        x = np.array([3.0, -1.0, 2.0, 0.0, 0.0, 0.0])
        C = rng.normal(size=(4, 6))
        from raswe.window import StateBelief, WindowBuffer
        buf = WindowBuffer(
            k_w=k_w,
            prior_means=[x] * k_w,
            prior_covs=[np.eye(6)] * k_w,
            A=[np.eye(6)] * k_w,
            inputs=[np.zeros(6)] * k_w,
            measurements=[C @ x + L @ rng.standard_normal(4) for _ in range(k_w)],
            C=[C] * k_w,
            Q=1e-10 * np.eye(6),
            meas_covs=[R_true] * k_w,
            augmented=False,
        )
        fp = forward_filter(buf, StateBelief(x, 0.1 * np.eye(6)))
        sw = backward_smooth(fp, buf)
        _, psis = iw_auxiliary(sw, buf)
        mean_psi = np.mean(psis, axis=0)
        rel = np.linalg.norm(mean_psi - R_true) / np.linalg.norm(R_true)
        assert rel < 0.20


class TestIwUpdate:
    def _belief(self):
        return EstimatorConfig().initial_belief()

    def test_frozen_weights_are_identity(self, rng):
        belief = self._belief()
        phis = [rand_pd(6, rng) for _ in range(10)]
        psis = [rand_pd(4, rng) for _ in range(10)]
        out = iw_update(belief, phis, psis, GateWeights(1.0, 0.0, 0.3), 10)
        assert out.phi == pytest.approx(belief.phi)
        assert out.psi == pytest.approx(belief.psi)
        assert_allclose(out.Phi, belief.Phi)
        assert_allclose(out.Psi, belief.Psi)

    def test_dof_growth_with_unit_weights(self, rng):
        belief = self._belief()        # phi0 = 10
        phis = [np.zeros((6, 6))] * 10
        psis = [np.zeros((4, 4))] * 10
        out = iw_update(belief, phis, psis, GateWeights(1.0, 1.0, 1.0), 10)
        assert out.phi == pytest.approx(20.0)      # (10-7) + 7 + 10

    def test_discounted_accumulation_geometric(self):
        M = np.diag([1.0, 2.0, 3.0, 4.0])
        k_w = 10
        belief = NoiseBelief(10.0, np.zeros((6, 6)), 8.0, np.zeros((4, 4)))
        out = iw_update(belief, [np.zeros((6, 6))] * k_w, [M] * k_w,
                        GateWeights(0.0, 1.0, 0.5), k_w)
        assert_allclose(out.Psi, M * (1.0 - 0.5 ** k_w))

    def test_discounted_mass_matches_accumulation_weight(self):
        # the DoF increment equals the total weight the discounted sum
        # actually assigns, so the expectation stays calibrated
        for w3 in (0.1, 0.5, 0.9):
            k_w = 10
            mass = discounted_sample_mass(w3, k_w)
            weights = sum(w3 ** (k_w - j + 1) for j in range(1, k_w + 1))
            assert mass == pytest.approx(weights)
        assert discounted_sample_mass(1.0, 7) == 7.0

    def test_invariants_preserved_over_random_windows(self, rng):
        belief = self._belief()
        for _ in range(50):
            k_w = int(rng.choice([2, 3, 5]))
            buf = random_window(k_w, rng)
            fp = forward_filter(buf, random_init(rng))
            sw = backward_smooth(fp, buf)
            phis, psis = iw_auxiliary(sw, buf)
            lam = rng.uniform(-0.1, 2e-3)
            rho = rng.uniform(0, 0.2)
            w = gate_weights(ErrorPropagation(np.eye(6), lam, rho), EstimatorConfig())
            belief = iw_update(belief, phis, psis, w, k_w)
            assert belief.phi > 7.0 and belief.psi > 5.0
            assert np.min(np.linalg.eigvalsh(belief.Phi)) >= -1e-9
            assert np.min(np.linalg.eigvalsh(belief.Psi)) >= -1e-9 * max(np.trace(belief.Psi), 1.0)


class TestExpectedCovariances:
    def test_default_initial_values(self):
        Q, R = expected_covariances(EstimatorConfig().initial_belief())
        assert_allclose(Q, (17.0 / 3.0) * np.eye(6))
        assert_allclose(R, (13.0 / 3.0) * np.eye(4))

    def test_zero_scale(self):
        belief = NoiseBelief(10.0, np.zeros((6, 6)), 8.0, np.eye(4))
        Q, _ = expected_covariances(belief)
        assert_allclose(Q, 0)

    def test_degenerate_dof(self):
        with pytest.raises(DegenerateDoF):
            expected_covariances(NoiseBelief(7.0, np.eye(6), 8.0, np.eye(4)))
        with pytest.raises(DegenerateDoF):
            expected_covariances(NoiseBelief(10.0, np.eye(6), 5.0, np.eye(4)))


class TestApplySensorStatus:
    def test_all_ok_unchanged(self, rng):
        R = rand_pd(4, rng)
        assert_allclose(apply_sensor_status(R, SensorStatus(True, True)), R)

    def test_uwb_dead_scaling(self, rng):
        R = rand_pd(4, rng)
        out = apply_sensor_status(R, SensorStatus(False, True, epsilon=1e3))
        assert out[0, 0] == pytest.approx(R[0, 0] * 1e6)
        assert_allclose(out[0, 1:], R[0, 1:] * 1e3)
        assert_allclose(out[1:, 0], R[1:, 0] * 1e3)
        assert_allclose(out[1:, 1:], R[1:, 1:])

    def test_both_dead(self, rng):
        R = rand_pd(4, rng)
        out = apply_sensor_status(R, SensorStatus(False, False, epsilon=1e3))
        assert_allclose(out, R * 1e6)

    def test_congruence_preserves_psd(self, rng):
        for _ in range(50):
            R = rand_pd(4, rng)
            status = SensorStatus(bool(rng.integers(0, 2)), bool(rng.integers(0, 2)))
            out = apply_sensor_status(R, status)
            assert np.min(np.linalg.eigvalsh(out)) >= -1e-9 * np.trace(out)


class TestDragGradient:
    def test_exact_prediction_zero(self, rng):
        mu = rng.normal(size=(3, 3))
        dt = 0.04
        v_prev = rng.normal(size=3)
        accel = rng.normal(size=3)
        v_curr = (np.eye(3) - dt * mu) @ v_prev + dt * accel
        assert_allclose(drag_gradient(v_prev, v_curr, accel, mu, dt), 0, atol=1e-14)

    def test_zero_previous_velocity(self, rng):
        g = drag_gradient(np.zeros(3), rng.normal(size=3), rng.normal(size=3),
                          rng.normal(size=(3, 3)), 0.04)
        assert_allclose(g, 0)

    def test_matches_finite_differences(self, rng):
        def cost(v_prev, v_curr, accel, mu, dt):
            r = v_curr - (np.eye(3) - dt * mu) @ v_prev - dt * accel
            return float(r @ r)

        for _ in range(200):
            dt = rng.uniform(0.01, 0.2)
            v_prev = rng.normal(size=3)
            v_curr = rng.normal(size=3)
            accel = rng.normal(size=3)
            mu = rng.normal(size=(3, 3))
            g = drag_gradient(v_prev, v_curr, accel, mu, dt)
            h = 1e-4      # cost quadratic in mu: no truncation term
            for a in range(3):
                for b in range(3):
                    d = np.zeros((3, 3))
                    d[a, b] = h
                    fd = (cost(v_prev, v_curr, accel, mu + d, dt)
                          - cost(v_prev, v_curr, accel, mu - d, dt)) / (2 * h)
                    assert g[a, b] == pytest.approx(fd, rel=1e-6, abs=1e-8)

    def test_descent_property(self, rng):
        # one small step along the summed gradient never increases the cost
        dt = 0.04
        for _ in range(30):
            mu = rng.normal(size=(3, 3)) * 0.5
            steps = [(rng.normal(size=3), rng.normal(size=3), rng.normal(size=3))
                     for _ in range(10)]

            def total(m):
                c = 0.0
                for v_prev, v_curr, accel in steps:
                    r = v_curr - (np.eye(3) - dt * m) @ v_prev - dt * accel
                    c += float(r @ r)
                return c

            grad = sum(drag_gradient(vp, vc, a, mu, dt) for vp, vc, a in steps)
            assert total(mu - 1e-6 * grad) <= total(mu) + 1e-15


class TestStepLength:
    def test_sensors_dominate_dynamics(self, rng):
        cfg = EstimatorConfig()
        Q = 1e-6 * np.eye(6)
        R = np.eye(4)
        assert step_length(Q, R, cfg) == 0.0

    def test_perfect_sensors_give_upper_bound(self):
        cfg = EstimatorConfig()
        assert step_length(np.eye(6), np.zeros((4, 4)), cfg) == pytest.approx(cfg.b_u)

    def test_near_parity_gives_lower_bound(self):
        # det(q I6)^(1/6) = q and det(r I4)^(1/4) = r: r -> q from below
        cfg = EstimatorConfig()
        q = 2.0
        r = q * (1.0 - 1e-9)
        ell = step_length(q * np.eye(6), r * np.eye(4), cfg)
        assert ell == pytest.approx(cfg.b_l, rel=1e-6)

    def test_degenerate_determinant_disables(self):
        cfg = EstimatorConfig()
        assert step_length(np.zeros((6, 6)), np.eye(4), cfg) == 0.0
        with np.errstate(invalid="ignore"):
            Q = np.eye(6)
            Q[0, 0] = np.nan
            assert step_length(Q, np.eye(4), cfg) == 0.0


def _frames(truth_like, n, dt=0.04, dead=False):
    frames = []
    for k in range(1, n + 1):
        frames.append(MeasurementFrame(
            t=k * dt, dt=dt, accel=np.zeros(3),
            uwb_range=None if dead else 1.0,
            of_velocity=None if dead else np.zeros(3),
            uwb_ok=not dead, of_ok=not dead))
    return frames


class TestEstimatorBehaviors:
    def test_baseline_matches_frozen_flags(self, rng):
        # the baseline preset and the equivalent flag set produce identical output
        x0 = np.array([1.0, 0, 0.2, 0, 0, 0])
        frames = []
        for k in range(1, 60):
            frames.append(MeasurementFrame(
                t=k * 0.04, dt=0.04, accel=rng.normal(size=3) * 0.1,
                uwb_range=float(np.linalg.norm(x0[:3])) + rng.normal() * 0.01,
                of_velocity=rng.normal(size=3) * 0.05))
        a = SlidingWindowEstimator(baseline_config(), x0)
        b = SlidingWindowEstimator(
            EstimatorConfig(adapt_off=True, drag_off=True, errprop_off=True), x0)
        for f in frames:
            ra = a.step(MeasurementFrame(**vars(f)))
            rb = b.step(MeasurementFrame(**vars(f)))
            assert_allclose(ra.estimate, rb.estimate)

    def test_all_sensors_dead_follows_dynamics(self):
        cfg = EstimatorConfig(warmup=10, k_w=5, drag_off=True, adapt_off=True)
        x0 = np.array([5.0, 1.0, 2.0, 0.1, -0.2, 0.05])
        est = SlidingWindowEstimator(cfg, x0)
        live = _frames(None, 10)
        for f in live:
            f.uwb_range = float(np.linalg.norm(x0[:3]))
            est.step(f)
        before = est.x.copy()
        from raswe.model import build_transition
        A = build_transition(0.04, cfg.mu0)
        predicted = before.copy()
        res = None
        for f in _frames(None, 5, dead=True):
            f.t += 10 * 0.04
            res = est.step(f)
            predicted = A @ predicted
        drift = np.linalg.norm(res.estimate - predicted)
        assert drift <= 1e-3 * max(1.0, np.linalg.norm(predicted))

    def test_survives_short_outage(self):
        cfg = EstimatorConfig(warmup=10, k_w=5)
        x0 = np.array([5.0, 0.0, 1.0, 0, 0, 0])
        est = SlidingWindowEstimator(cfg, x0)
        k = 0
        for k in range(1, 40):
            dead = 20 <= k < 25
            f = MeasurementFrame(
                t=k * 0.04, dt=0.04, accel=np.zeros(3),
                uwb_range=None if dead else float(np.linalg.norm(x0[:3])),
                of_velocity=None if dead else np.zeros(3))
            r = est.step(f)
            assert np.all(np.isfinite(r.estimate))
        assert np.linalg.norm(r.estimate[:3] - x0[:3]) < 1.0
