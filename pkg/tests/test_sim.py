from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskprobe.dynamics import DT, V_MAX, AgentState, rollout_array
from riskprobe.inference import AGGRESSIVE, DEFENSIVE
from riskprobe.lanes import LANE_WIDTH, VEHICLE_LENGTH, VEHICLE_WIDTH
from riskprobe.planner import reference_trajectory
from riskprobe.sim.agents import AgentController, Snapshot, agent_policy
from riskprobe.sim.campaign import (
    INTERSECTION_COLUMNS,
    MERGE_COLUMNS,
    aggregate,
    apply_draw,
    draw_episode,
    run_monte_carlo,
)
from riskprobe.sim.collision import boxes_overlap, footprint, vehicles_collide
from riskprobe.sim.episode import EGO_ID, EpisodeTrace, merge_complete, run_episode
from riskprobe.sim.metrics import EmptyTraceError, compute_metrics
from riskprobe.sim.scenarios import BUNDLED, MERGE_LANES, merge_lanes


def merge_map():
    from riskprobe.lanes import LaneMap
    return LaneMap([ls.build() for ls in merge_lanes()])


def drive(state, phi, others_fn, steps, lane="middle", v_desired=8.0):
    """Closed-loop agent rollout; ``others_fn(k)`` gives the other vehicles at step k."""
    lm = merge_map()
    ctl = AgentController()
    states, accels, omegas = [state.as_array()], [], []
    for k in range(steps):
        u = ctl.act(AgentState.from_array(states[-1]), phi, Snapshot(others_fn(k), lm[lane], v_desired))
        accels.append(u.a)
        omegas.append(u.omega)
        states.append(rollout_array(states[-1], np.array([[u.a, u.omega]]))[-1])
    return np.array(states), np.array(accels), np.array(omegas)


class TestAgentPolicy:
    def test_aggressive_keeps_speed(self):
        start = AgentState(0.0, MERGE_LANES["middle"], 0.0, 8.0)
        states, _, _ = drive(start, (0.5, 0.25, 0.25), lambda k: np.zeros((0, 4)), 30)
        assert np.all(np.abs(states[:, 3] - 8.0) <= 0.05 * 8.0)

    def test_defensive_yields_to_cut_in(self):
        start = AgentState(0.0, MERGE_LANES["middle"], 0.0, 8.0)

        def ego(k):
            # ego slightly ahead, drifting down into the agent's lane
            return np.array([[9.0 + 6.0 * DT * k, MERGE_LANES["middle"] + 2.0 - 0.3 * DT * k, -0.1, 6.0]])

        _, accels, _ = drive(start, DEFENSIVE, ego, 3)
        assert np.any(accels < 0)

    @pytest.mark.parametrize("offset", [1.0, -1.0])
    def test_lane_term_steers_toward_centre(self, offset):
        lm = merge_map()
        state = AgentState(0.0, MERGE_LANES["middle"] + offset, 0.0, 8.0)
        u = agent_policy(state, (0.0, 0.0, 1.0), Snapshot(np.zeros((0, 4)), lm["middle"], 8.0), lm)
        assert np.sign(u.omega) == -np.sign(offset)

    def test_deterministic(self):
        start = AgentState(0.0, MERGE_LANES["middle"], 0.0, 7.0)
        ego = lambda k: np.array([[6.0, MERGE_LANES["top"], 0.0, 6.0]])
        a, b = drive(start, AGGRESSIVE, ego, 5), drive(start, AGGRESSIVE, ego, 5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


def inside(points, box):
    """Points inside a convex counter-clockwise quadrilateral (boundary included)."""
    inside = np.ones(len(points), dtype=bool)
    for i in range(4):
        p, q = box[i], box[(i + 1) % 4]
        cross = (q[0] - p[0]) * (points[:, 1] - p[1]) - (q[1] - p[1]) * (points[:, 0] - p[0])
        inside &= cross >= -1e-12
    return inside


def sample_box(box, n=40):
    u, v = np.meshgrid(np.linspace(0, 1, n), np.linspace(0, 1, n))
    u, v = u.ravel()[:, None], v.ravel()[:, None]
    return box[0] + u * (box[1] - box[0]) + v * (box[3] - box[0])


class TestCollision:
    def test_footprint_extent(self):
        box = footprint(1.0, 2.0, 0.0)
        np.testing.assert_allclose(box.max(0) - box.min(0), [VEHICLE_LENGTH, VEHICLE_WIDTH])
        np.testing.assert_allclose(box.mean(0), [1.0, 2.0])

    def test_point_sampling_oracle(self):
        rng = np.random.default_rng(11)
        agree = 0
        for _ in range(100):
            s1 = np.array([0.0, 0.0, rng.uniform(-np.pi, np.pi), 0.0])
            s2 = np.array([*rng.uniform(-5, 5, 2), rng.uniform(-np.pi, np.pi), 0.0])
            a, b = footprint(*s1[:3]), footprint(*s2[:3])
            oracle = inside(sample_box(a), b).any() or inside(sample_box(b), a).any()
            agree += oracle == vehicles_collide(s1, s2)
        assert agree == 100

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-6, 6), st.floats(-6, 6), st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi))
    def test_symmetric(self, x, y, t1, t2):
        s1, s2 = np.array([0.0, 0.0, t1]), np.array([x, y, t2])
        assert vehicles_collide(s1, s2) == vehicles_collide(s2, s1)

    def test_separated_lanes_do_not_collide(self):
        assert not vehicles_collide([0, 0, 0], [0, LANE_WIDTH, 0])
        assert vehicles_collide([0, 0, 0], [VEHICLE_LENGTH - 0.01, 0, 0])
        assert not vehicles_collide([0, 0, 0], [VEHICLE_LENGTH + 0.01, 0, 0])

    def test_touching_counts(self):
        assert boxes_overlap(footprint(0, 0, 0), footprint(VEHICLE_LENGTH, 0, 0))


def synthetic_trace(t, a, omega, v=None, outcome="timeout", tc=None, others=()):
    """Trace with ego controls at ``t`` plus a terminal zero-control record."""
    tr = EpisodeTrace("synthetic", "probing", DT, outcome=outcome, completion_time=tc)
    n = len(t)
    v = np.full(n + 1, 5.0) if v is None else v
    times = list(t) + [t[-1] + DT]
    for k in range(n + 1):
        ak, wk = (a[k], omega[k]) if k < n else (0.0, 0.0)
        tr.records.append({"t": round(times[k], 6), "id": EGO_ID, "x": 5.0 * times[k], "y": 0.0, "theta": 0.0,
                           "v": float(v[k]), "a": float(ak), "omega": float(wk)})
        for vid, (dx, dy) in others:
            tr.records.append({"t": round(times[k], 6), "id": vid, "x": 5.0 * times[k] + dx, "y": dy,
                               "theta": 0.0, "v": 5.0, "a": 0.0, "omega": 0.0})
    return tr


class TestMetrics:
    def test_constant_trace_has_zero_jerk(self):
        t = np.arange(20) * DT
        m = compute_metrics(synthetic_trace(t, np.zeros(20), np.zeros(20)))
        assert (m.longitudinal_jerk, m.angular_jerk, m.mean_velocity) == (0.0, 0.0, 5.0)

    def test_linear_ramp(self):
        t = np.arange(30) * DT
        m = compute_metrics(synthetic_trace(t, t.copy(), np.zeros(30)))
        np.testing.assert_allclose(m.longitudinal_jerk, 1.0, rtol=1e-12)

    def test_hand_differences(self):
        # da/dt: (0.5 - 0)/0.1 = 5, (0.3 - 0.5)/0.1 = -2, mean 1.5
        # d2w/dt2: (-0.1 - 2*0.1 + 0)/0.01 = -30
        m = compute_metrics(synthetic_trace([0.0, 0.1, 0.2], [0.0, 0.5, 0.3], [0.0, 0.1, -0.1]))
        np.testing.assert_allclose([m.longitudinal_jerk, m.angular_jerk], [1.5, -30.0], rtol=1e-12)

    def test_gaps_at_completion(self):
        tr = synthetic_trace(np.arange(5) * DT, np.zeros(5), np.zeros(5), outcome="success", tc=0.3,
                             others=[("1", (-6.0, 0.0)), ("2", (3.0, 4.0))])
        m = compute_metrics(tr)
        assert (m.gap_to_vehicle_1, m.gap_to_vehicle_2, m.gap_to_nearest) == (6.0, 5.0, 5.0)
        assert m.success and not m.collision and m.time_to_complete == 0.3

    def test_failure_has_nan_gaps(self):
        m = compute_metrics(synthetic_trace([0.0, 0.1], [0.0, 0.0], [0.0, 0.0], outcome="collision"))
        assert m.collision and np.isnan(m.gap_to_vehicle_1) and np.isnan(m.time_to_complete)

    def test_empty_trace(self):
        with pytest.raises(EmptyTraceError):
            compute_metrics(EpisodeTrace("x", "probing", DT))


def free_merge():
    return replace(BUNDLED["merge_a2"](), agents=[])


class TestEpisode:
    def test_free_road_merge_time(self):
        cfg = free_merge()
        tr = run_episode(cfg, "probing")
        assert tr.outcome == "success"
        lane = cfg.lane_map[cfg.ego_lane]
        ref = reference_trajectory(cfg.ego_spawn, lane, cfg.ego_speed, 200, DT, cfg.planner.lateral_tau).states
        # an ideal follower points along the reference path
        d = np.diff(ref[:, :2], axis=0)
        ref[1:, 2] = np.arctan2(d[:, 1], d[:, 0])
        t_ref = next(k * DT for k, s in enumerate(ref) if k and merge_complete(s, lane))
        # the lateral offset decays exponentially, so a small tracking lag costs
        # a disproportionate share of time; 20% covers the quadratic-cost lag
        assert abs(tr.completion_time - t_ref) <= 0.2 * t_ref

    def test_deterministic(self):
        cfg = replace(BUNDLED["merge_a2"](), episode_length=2.0)
        a = run_episode(cfg, "probing", seed=3)
        b = run_episode(cfg, "probing", seed=3)
        assert a.records == b.records and a.diagnostics == b.diagnostics

    def test_no_teleport(self):
        cfg = replace(BUNDLED["merge_a2"](), episode_length=3.0)
        tr = run_episode(cfg, "no_probing", record_diagnostics=False)
        for vid in tr.vehicle_ids:
            r = tr.vehicle(vid)
            step = np.hypot(np.diff(r["x"]), np.diff(r["y"]))
            assert np.all(step <= V_MAX * DT + 1e-9)

    def test_switch_applies_at_configured_step(self):
        cfg = replace(BUNDLED["switch_b1"](), episode_length=3.0)
        spec = cfg.agents[0]
        assert spec.phi_at(1.9) == DEFENSIVE and spec.phi_at(2.0) == AGGRESSIVE
        never = replace(cfg, agents=[replace(spec, switch_time=None, switch_phi=None)] + cfg.agents[1:])
        a = run_episode(cfg, "no_probing", run_to_end=True, record_diagnostics=False).vehicle("1")
        b = run_episode(never, "no_probing", run_to_end=True, record_diagnostics=False).vehicle("1")
        k = int(round(2.0 / DT))
        np.testing.assert_array_equal(a["a"][:k], b["a"][:k])
        assert np.any(a["a"][k:k + 10] != b["a"][k:k + 10])

    def test_defensive_weight_is_learned(self):
        cfg = replace(BUNDLED["merge_a2"](), episode_length=2.0)
        tr = run_episode(cfg, "probing", run_to_end=True)
        phi2 = [d["belief_mean"]["2"][1] for d in tr.diagnostics]
        assert phi2[-1] > phi2[0]

    def test_jsonl_round_trip(self, tmp_path):
        cfg = replace(BUNDLED["merge_a2"](), episode_length=0.5)
        tr = run_episode(cfg, "no_probing")
        tr.write_jsonl(tmp_path / "e.jsonl")
        back = EpisodeTrace.read_jsonl(tmp_path / "e.jsonl")
        assert back.records == tr.records and back.outcome == tr.outcome and back.dt == DT


class TestCampaign:
    def small(self):
        return replace(BUNDLED["merge_a2"](), episode_length=12.0)

    def test_single_episode_aggregate(self):
        camp = run_monte_carlo(self.small(), 1, variants=("no_probing",), seed=5)
        (r,) = camp.results
        (row,) = camp.table()
        m = r.metrics
        assert row["episodes"] == 1 and row["success_rate"] == float(m.success)
        assert row["velocity"] == m.mean_velocity and row["longitudinal_jerk"] == m.longitudinal_jerk
        if m.success:
            assert row["time_to_merge"] == m.time_to_complete and row["gap_to_vehicle_2"] == m.gap_to_vehicle_2

    def test_same_seed_identical_table(self):
        cfg = replace(self.small(), episode_length=2.0)
        a = run_monte_carlo(cfg, 2, variants=("conservative",), seed=9).table()
        b = run_monte_carlo(cfg, 2, variants=("conservative",), seed=9).table()
        assert repr(a) == repr(b)

    def test_draws_shared_and_seeded(self):
        base = self.small()
        d1, d2 = draw_episode(base, 3, 7), draw_episode(base, 3, 7)
        np.testing.assert_array_equal(d1.shifts, d2.shifts)
        assert d1.phis == d2.phis and d1.seed == d2.seed
        assert draw_episode(base, 4, 7).seed != d1.seed
        cfg = apply_draw(base, d1)
        assert all(min(a.phi) >= 0 for a in cfg.agents)
        assert np.all(np.abs(d1.shifts) <= 2.0)

    def test_column_sets(self):
        row = aggregate("merge", "probing", [compute_metrics(synthetic_trace([0.0], [0.0], [0.0]))])
        assert tuple(row) == MERGE_COLUMNS
        row = aggregate("intersection", "probing", [compute_metrics(synthetic_trace([0.0], [0.0], [0.0]))])
        assert tuple(row) == INTERSECTION_COLUMNS

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            run_monte_carlo(self.small(), 0)
        with pytest.raises(ValueError):
            run_monte_carlo(self.small(), 1, variants=("bold",))
