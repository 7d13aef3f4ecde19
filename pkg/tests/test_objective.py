import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskprobe.dynamics import Trajectory
from riskprobe.objective import (
    ObjectiveWeights,
    mahalanobis,
    safety_gap,
    safety_penalty,
    softplus_barrier,
    utility,
)


def scalar_utility(states, inputs, ref, Q, R):
    """Term-by-term expansion of the quadratic forms."""
    total = 0.0
    for t in range(1, len(states)):
        e = [states[t][i] - ref[t][i] for i in range(4)]
        for i in range(4):
            for j in range(4):
                total += e[i] * Q[i][j] * e[j]
        u = inputs[t - 1]
        for i in range(2):
            for j in range(2):
                total += u[i] * R[i][j] * u[j]
    return -total


class TestUtility:
    def test_perfect_tracking(self):
        ref = Trajectory(np.tile([0.0, 1.0, 0.2, 5.0], (4, 1)))
        assert utility(ref, np.zeros((3, 2)), ref, np.eye(4), np.eye(2)) == 0.0

    def test_unit_deviation(self):
        ref = Trajectory(np.zeros((2, 4)))
        traj = Trajectory(np.array([[0, 0, 0, 0], [1.0, 0, 0, 0]]))
        assert utility(traj, np.zeros((1, 2)), ref, np.eye(4), np.eye(2)) == -1.0

    def test_random_three_step(self):
        rng = np.random.default_rng(7)
        states, ref = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        states[:, 2] = rng.uniform(-1, 1, 4)
        ref[:, 2] = rng.uniform(-1, 1, 4)
        inputs = rng.normal(size=(3, 2))
        a, b = rng.normal(size=(4, 4)), rng.normal(size=(2, 2))
        Q, R = a @ a.T + np.eye(4), b @ b.T + np.eye(2)
        got = utility(Trajectory(states), inputs, Trajectory(ref), Q, R)
        np.testing.assert_allclose(got, scalar_utility(states.tolist(), inputs.tolist(), ref.tolist(),
                                                       Q.tolist(), R.tolist()), rtol=1e-12)

    def test_heading_error_wraps(self):
        ref = Trajectory(np.array([[0, 0, 0, 0], [0, 0, np.pi - 0.1, 0]]))
        traj = Trajectory(np.array([[0, 0, 0, 0], [0, 0, -np.pi + 0.1, 0]]))
        np.testing.assert_allclose(utility(traj, np.zeros((1, 2)), ref, np.eye(4), np.eye(2)), -0.04, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            utility(Trajectory(np.zeros((3, 4))), np.zeros((1, 2)), Trajectory(np.zeros((3, 4))),
                    np.eye(4), np.eye(2))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_never_positive(self, seed):
        rng = np.random.default_rng(seed)
        T = int(rng.integers(1, 6))
        u = utility(Trajectory(rng.normal(size=(T + 1, 4))), rng.normal(size=(T, 2)),
                    Trajectory(rng.normal(size=(T + 1, 4))), np.diag([1, 1, 0.1, 0.5]), np.diag([0.1, 0.5]))
        assert u <= 0


class TestSafety:
    def test_gap_at_mean(self):
        assert safety_gap([1, 1], [1, 1], np.eye(2), 4.0, 0.7) == pytest.approx(-2.8)

    def test_gap_euclidean(self):
        assert safety_gap([3, 4], [0, 0], np.eye(2), 4.0, 0.5) == pytest.approx(3.0)

    def test_gap_mahalanobis(self):
        assert safety_gap([2, 0], [0, 0], np.diag([4.0, 1.0]), 4.0, 1.0) == pytest.approx(-3.0)

    def test_gap_singular(self):
        with pytest.raises(np.linalg.LinAlgError):
            safety_gap([0, 0], [1, 1], np.zeros((2, 2)), 4.0, 1.0)

    def test_mahalanobis_broadcast(self):
        off = np.array([[2.0, 0.0], [0.0, 3.0]])
        np.testing.assert_allclose(mahalanobis(off, np.diag([4.0, 9.0])), [1.0, 1.0])

    def test_penalty_at_zero(self):
        np.testing.assert_allclose(safety_penalty([0.0], 0.3), 0.6931471805599453, rtol=1e-15)

    def test_penalty_far(self):
        assert safety_penalty([1e6], 0.02) < 1e-300

    def test_penalty_published_barrier(self):
        # log(1 + e) to 40 digits
        np.testing.assert_allclose(safety_penalty([-50.0], 0.02), 1.3132616875182228, rtol=1e-14)

    def test_penalty_rejects_beta(self):
        with pytest.raises(ValueError):
            safety_penalty([0.0], 0.0)

    def test_extreme_arguments_stable(self):
        vals = softplus_barrier(np.array([-1e4, 1e4]), 1.0)
        assert np.all(np.isfinite(vals))
        np.testing.assert_allclose(vals, [1e4, 0.0], atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-1e3, 1e3), st.floats(1e-3, 10.0), st.floats(1e-2, 1.0))
    def test_penalty_decreasing(self, q, dq, beta):
        assert softplus_barrier(q + dq, beta) < softplus_barrier(q, beta) or softplus_barrier(q, beta) == 0.0


class TestWeights:
    def test_published_defaults(self):
        w = ObjectiveWeights()
        assert (w.alpha1, w.alpha2, w.alpha3, w.L, w.beta, w.tau) == (0.9, 0.9, 0.1, 4.0, 0.02, 5.0)

    @pytest.mark.parametrize("kw", [{"tau": -1.0}, {"beta": 0.0}, {"L": -2.0}, {"alpha3": -0.1},
                                    {"Q": np.eye(3)}, {"R": -np.eye(2)}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ObjectiveWeights(**kw)

    def test_replace(self):
        w = ObjectiveWeights().replace(alpha3=0.0)
        assert w.alpha3 == 0.0 and w.alpha1 == 0.9
