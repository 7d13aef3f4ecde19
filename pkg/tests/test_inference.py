import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from riskprobe.dynamics import DT, AgentState
from riskprobe.inference import (
    AGGRESSIVE,
    AgentModeFeatures,
    BehaviorParams,
    BeliefParticles,
    DegeneratePriorError,
    FeatureModel,
    FeatureTrace,
    ObservationModel,
    agent_reward,
    batched_info,
    belief_update_observed,
    boltzmann_likelihoods,
    feature_trace,
    hypothetical_posterior,
    info_gain,
    kl_divergence,
    particle_log_likelihoods,
    resample,
    stacked_info,
    total_info,
)
from riskprobe.lanes import straight_lane
from riskprobe.predictor import ModePrediction
from riskprobe.risk import RiskProfile


def tilted_kl_particles(mu, var, lam, m, seed):
    """Particle KL(b || b') for a 1-D Gaussian belief and b' proportional to b * exp(lam * phi)."""
    rng = np.random.default_rng(seed)
    phi = rng.normal(mu, np.sqrt(var), m)
    w = np.full(m, 1.0 / m)
    logw = np.log(w) + lam * phi
    post = np.exp(logw - logsumexp(logw))
    return kl_divergence(w, post)


def tilted_kl_grid(mu, var, lam, n=200_001):
    """Dense-grid quadrature of the same KL."""
    sd = np.sqrt(var)
    x = np.linspace(mu - 12 * sd, mu + 12 * sd + lam * var, n)
    dx = x[1] - x[0]
    logb = -0.5 * (x - mu) ** 2 / var
    logb -= logsumexp(logb) + np.log(dx)
    logq = logb + lam * x
    logq -= logsumexp(logq) + np.log(dx)
    b = np.exp(logb)
    return float(np.sum(b * (logb - logq)) * dx)


def straight_modes(T=10, y=(0.0, 0.0, 0.0), p=(0.5, 0.3, 0.2), v=8.0):
    k = np.arange(1, T + 1)
    covs = np.broadcast_to(0.2 * np.eye(2), (T, 2, 2))
    return [ModePrediction(np.column_stack([v * DT * k * (1 - 0.1 * i), np.full(T, yy)]), covs, pp)
            for i, (yy, pp) in enumerate(zip(y, p))]


class TestRewards:
    def test_zero_phi(self):
        assert agent_reward(FeatureTrace([[-1.0, 2.0, -0.5]]), (0, 0, 0)) == 0.0

    def test_dot_product(self):
        assert agent_reward(FeatureTrace([[-1.0, 2.0, -0.5]]), BehaviorParams(AGGRESSIVE)) == pytest.approx(-0.125)

    def test_aggressive_prefers_constant_speed(self):
        T = 20
        k = np.arange(1, T + 1)
        cruise = np.column_stack([8.0 * DT * k, np.zeros(T)])
        v = np.maximum(8.0 - 2.0 * DT * k, 0.0)
        yielding = np.column_stack([np.cumsum(v) * DT, np.zeros(T)])
        ego = np.column_stack([30.0 + 6.0 * DT * k, np.full(T, 3.5)])
        lane = straight_lane("l", (-10, 0), (200, 0))
        f_cruise = feature_trace(cruise, (0, 0), ego, lane)
        f_yield = feature_trace(yielding, (0, 0), ego, lane)
        assert agent_reward(f_cruise, AGGRESSIVE) > agent_reward(f_yield, AGGRESSIVE)

    def test_invalid_phi(self):
        with pytest.raises(ValueError):
            BehaviorParams((-0.1, 0.2, 0.3))
        with pytest.raises(ValueError):
            FeatureTrace([[np.inf, 0, 0]])


class TestBoltzmann:
    def test_uniform_reward_returns_prior(self):
        prior = np.array([0.2, 0.5, 0.3])
        np.testing.assert_array_equal(boltzmann_likelihoods([1.7, 1.7, 1.7], prior), prior)

    def test_two_mode_closed_form(self):
        np.testing.assert_allclose(boltzmann_likelihoods([np.log(2), 0.0], [0.5, 0.5]), [2 / 3, 1 / 3],
                                   rtol=0, atol=1e-12)

    def test_degenerate_prior(self):
        with pytest.raises(DegeneratePriorError):
            boltzmann_likelihoods([0, 0], [0, 0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=6), st.floats(-100, 100), st.integers(0, 2 ** 16))
    def test_invariants(self, rewards, shift, seed):
        prior = np.random.default_rng(seed).dirichlet(np.ones(len(rewards)))
        out = boltzmann_likelihoods(rewards, prior)
        np.testing.assert_allclose(out.sum(), 1.0, rtol=0, atol=1e-12)
        np.testing.assert_allclose(boltzmann_likelihoods(np.array(rewards) + shift, prior), out, rtol=0, atol=1e-12)
        assert np.argmax(out) == np.argmax(np.log(prior) + np.array(rewards))


class TestPosterior:
    def test_constant_likelihood_keeps_prior(self):
        b = BeliefParticles.from_prior(n=500, rng=np.random.default_rng(0))
        modes = straight_modes()
        ego = np.full((10, 2), 1e4)   # saturated distance, so no particle dependence
        post = hypothetical_posterior(b, 0, ego, modes, start=np.zeros(2),
                                      model=FeatureModel(v_desired=8.0, d_sat=10.0))
        p_hat = particle_log_likelihoods(b.particles, AgentModeFeatures.build(modes, np.zeros(2), None).features(ego),
                                         np.array([0.5, 0.3, 0.2]))
        if np.ptp(p_hat[:, 0]) < 1e-12:
            np.testing.assert_allclose(post.weights, b.weights, rtol=1e-12)
        # the distance feature is saturated for every mode; the others do not depend on the ego
        np.testing.assert_allclose(kl_divergence(b.weights, post.weights), 0.0, atol=0.05)

    def test_two_atom_bayes(self):
        b = BeliefParticles(np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2]]), np.array([0.5, 0.5]))
        post = b.reweighted(np.log([0.8, 0.2]))
        np.testing.assert_allclose(post.weights, [0.8, 0.2], rtol=1e-12)

    def test_increasing_likelihood_against_grid(self):
        mu, var, lam = 0.33, 0.05, 3.0
        rng = np.random.default_rng(5)
        phi2 = rng.normal(mu, np.sqrt(var), 20_000)
        b = BeliefParticles(np.column_stack([np.full_like(phi2, 0.33), phi2, np.full_like(phi2, 0.33)]),
                            np.full(len(phi2), 1 / len(phi2)))
        post = b.reweighted(lam * phi2)
        assert post.mean()[1] > b.mean()[1]
        x = np.linspace(mu - 10 * np.sqrt(var), mu + 10 * np.sqrt(var), 100_001)
        dens = np.exp(-0.5 * (x - mu) ** 2 / var + lam * x)
        grid_mean = np.sum(x * dens) / np.sum(dens)
        np.testing.assert_allclose(post.mean()[1], grid_mean, atol=0.01)

    def test_underflow_resets_uniform(self):
        b = BeliefParticles(np.ones((3, 3)), np.full(3, 1 / 3))
        post = b.reweighted(np.full(3, -np.inf))
        assert post.degenerate
        np.testing.assert_allclose(post.weights, 1 / 3)


class TestInfoGain:
    def test_identical_posterior(self):
        b = BeliefParticles.from_prior(n=100, rng=np.random.default_rng(1))
        prof = RiskProfile(["a"], np.full((1, 3, 5), 0.5))
        assert info_gain(b, b, prof, "a", 0, tau=5.0) == 0.0

    def test_gated_mode_is_zero(self):
        b = BeliefParticles.from_prior(n=100, rng=np.random.default_rng(1))
        post = b.reweighted(np.linspace(-2, 2, 100))
        prof = RiskProfile(["a"], np.full((1, 3, 5), 0.6))
        assert info_gain(b, post, prof, "a", 1, tau=0.5) == 0.0
        assert info_gain(b, post, prof, "a", 1, tau=5.0) > 0.0

    def test_grid_oracle(self):
        mu, var, lam = 0.33, 0.05, 2.0
        grid = tilted_kl_grid(mu, var, lam)
        np.testing.assert_allclose(grid, lam ** 2 * var / 2, rtol=1e-6)   # Gaussian shift closed form
        est = tilted_kl_particles(mu, var, lam, 10_000, seed=0)
        assert abs(est - grid) / grid < 0.05

    def test_estimator_converges(self):
        mu, var, lam = 0.33, 0.05, 2.0
        half = tilted_kl_particles(mu, var, lam, 5_000, seed=11)
        full = tilted_kl_particles(mu, var, lam, 10_000, seed=11)
        assert abs(full - half) / full < 0.02

    def test_total_info(self):
        assert total_info([0.0, 0.0, 0.0]) == 0.0
        assert total_info([0.3, 0.0, 0.0]) == pytest.approx(0.1)
        with pytest.raises(ValueError):
            total_info([])

    def test_stacked_matches_posterior_route(self):
        rng = np.random.default_rng(2)
        b = BeliefParticles.from_prior(n=64, rng=rng)
        modes = straight_modes(y=(0.0, 0.5, 1.5))
        start = np.zeros(2)
        ego = np.column_stack([2.0 + 0.6 * np.arange(1, 11), np.full(10, 2.5)])
        gains = [kl_divergence(b.weights, hypothetical_posterior(b, k, ego, modes, start=start).weights)
                 for k in range(3)]
        amf = AgentModeFeatures.build(modes, start, None)
        got = batched_info(b.weights, b.particles, amf, ego, np.zeros(3, bool))
        np.testing.assert_allclose(got, total_info(gains), rtol=1e-9)
        gated = batched_info(b.weights, b.particles, amf, ego, np.array([True, False, False]))
        np.testing.assert_allclose(gated, (gains[1] + gains[2]) / 3, rtol=1e-9)

    def test_nonnegative_random_instances(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            M, K, T = int(rng.integers(2, 30)), 3, 5
            w = rng.dirichlet(np.ones(M))
            parts = np.abs(rng.normal(0.33, 0.3, (M, 3)))
            means = rng.normal(0, 10, (K, T, 2))
            modes = [ModePrediction(means[k], np.broadcast_to(np.eye(2), (T, 2, 2)), p)
                     for k, p in enumerate(rng.dirichlet(np.ones(K)))]
            amf = AgentModeFeatures.build(modes, np.zeros(2), None)
            val = stacked_info(w[None], parts[None], [amf], rng.normal(0, 10, (T, 2)), np.zeros((1, K), bool))
            assert val[0] >= 0.0 and np.isfinite(val[0])


class TestObservedUpdate:
    def lane(self):
        return straight_lane("l", (-10.0, 0.0), (300.0, 0.0))

    def test_flat_likelihood_leaves_belief(self):
        T = 10
        k = np.arange(1, T + 1)
        path = np.column_stack([8.0 * DT * k, np.zeros(T)])
        covs = np.broadcast_to(0.2 * np.eye(2), (T, 2, 2))
        modes = [ModePrediction(path, covs, p) for p in (0.5, 0.3, 0.2)]
        b = BeliefParticles.from_prior(n=300, rng=np.random.default_rng(0))
        obs = ObservationModel(accelerations=(0.0,), forgetting=1.0)
        post = belief_update_observed(b, AgentState(0.8, 0.0, 0.0, 8.0), modes, np.full((T, 2), 50.0),
                                      previous=AgentState(0, 0, 0, 8.0), lane=self.lane(), obs=obs)
        np.testing.assert_allclose(post.weights, b.weights, rtol=1e-12)

    def test_preserves_normalization_and_count(self):
        b = BeliefParticles.from_prior(n=400, rng=np.random.default_rng(3))
        modes = straight_modes(y=(0.0, 0.0, 1.0))
        ego = np.column_stack([5.0 + 0.6 * np.arange(1, 11), np.full(10, 3.5)])
        post = belief_update_observed(b, AgentState(0.75, 0.0, 0.0, 7.6), modes, ego,
                                      previous=AgentState(0, 0, 0, 8.0), lane=self.lane(),
                                      rng=np.random.default_rng(0))
        assert len(post) == 400
        np.testing.assert_allclose(post.weights.sum(), 1.0, atol=1e-12)
        assert np.all(post.particles >= 0)

    def test_resample(self):
        b = BeliefParticles.from_prior(n=200, rng=np.random.default_rng(0))
        b = b.reweighted(np.where(np.arange(200) < 10, 0.0, -50.0))
        r = resample(b, np.random.default_rng(1), 1e-6, rejuvenation=0.1)
        assert len(r) == 200
        np.testing.assert_allclose(r.weights, 1 / 200)
        close = np.min(np.linalg.norm(r.particles[:, None] - b.particles[None, :10], axis=-1), axis=1)
        assert np.sum(close < 0.01) >= 170   # at most the rejuvenated fifth moved away

    def test_subsample_deterministic(self):
        b = BeliefParticles.from_prior(n=200, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(b.subsample(32).particles, b.subsample(32).particles)
        assert len(b.subsample(32)) == 32
