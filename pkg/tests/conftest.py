"""Shared test helpers: random window construction and the batch MAP oracle."""

import numpy as np
import pytest

from raswe.window import StateBelief, WindowBuffer, augment_step


def rand_pd(n, rng, scale=1.0):
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T + n * np.eye(n))


def random_window(k_w, rng, augmented=True):
    """A generic window with random dynamics, observations and noise."""
    prior_means = [rng.normal(size=6) for _ in range(k_w)]
    prior_covs = [rand_pd(6, rng, 0.1) for _ in range(k_w)]
    A = [rng.normal(size=(6, 6)) * 0.4 + np.eye(6) for _ in range(k_w)]
    inputs = [rng.normal(size=6) for _ in range(k_w)]
    meas = [rng.normal(size=4) for _ in range(k_w)]
    C = [rng.normal(size=(4, 6)) for _ in range(k_w)]
    Q = rand_pd(6, rng, 0.3)
    Rs = [rand_pd(4, rng, 0.5) for _ in range(k_w)]
    return WindowBuffer(k_w, prior_means, prior_covs, A, inputs, meas, C, Q, Rs,
                        augmented=augmented)


def random_init(rng):
    return StateBelief(rng.normal(size=6), rand_pd(6, rng, 0.2))


def batch_map_solution(buffer, init):
    """Independent oracle: assemble and solve the window's full weighted
    least-squares normal equations directly."""
    k_w = buffer.k_w
    n = 6 * (k_w + 1)
    J = np.zeros((n, n))
    b = np.zeros(n)
    P0i = np.linalg.inv(init.cov)
    J[:6, :6] += P0i
    b[:6] += P0i @ init.mean
    for j in range(1, k_w + 1):
        A = buffer.A[j - 1]
        u = buffer.inputs[j - 1]
        Qi = np.linalg.inv(buffer.process_cov(j))
        s0, s1 = 6 * (j - 1), 6 * j
        J[s0:s0 + 6, s0:s0 + 6] += A.T @ Qi @ A
        J[s0:s0 + 6, s1:s1 + 6] -= A.T @ Qi
        J[s1:s1 + 6, s0:s0 + 6] -= Qi @ A
        J[s1:s1 + 6, s1:s1 + 6] += Qi
        b[s0:s0 + 6] -= A.T @ Qi @ u
        b[s1:s1 + 6] += Qi @ u

        y, C, R = buffer.measurements[j - 1], buffer.C[j - 1], buffer.meas_covs[j - 1]
        if buffer.augmented:
            y, C, R = augment_step(
                y, C, R,
                buffer.prior_means[j] if j < k_w else None,
                buffer.prior_covs[j] if j < k_w else None,
                j == k_w)
        Ri = np.linalg.inv(R)
        J[s1:s1 + 6, s1:s1 + 6] += C.T @ Ri @ C
        b[s1:s1 + 6] += C.T @ Ri @ y
    X = np.linalg.solve(J, b)
    P_full = np.linalg.inv(J)
    means = [X[6 * j:6 * j + 6] for j in range(k_w + 1)]
    covs = [P_full[6 * j:6 * j + 6, 6 * j:6 * j + 6] for j in range(k_w + 1)]
    return means, covs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
