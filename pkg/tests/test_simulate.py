import math

import numpy as np
import pytest

from slipnet.events import validate_stream
from slipnet.simulate import (
    GeometryViolation,
    GravityScenario,
    KinematicScenario,
    NoSlipOccurred,
    PapillaeState,
    SimParams,
    SkinGeometry,
    build_geometry,
    generate_events,
    ground_truth_onsets,
    mirror_stream,
    normal_forces,
    run_scenario,
    scenario_from_kv,
    scenario_to_kv,
    simulate_trajectory,
    step_dynamics,
    _run_papillae,
)

LAYOUT = build_geometry()
PARAMS = SimParams()


class TestGeometry:
    def test_default_layout(self):
        assert LAYOUT.n_papillae == 37
        assert np.array_equal(np.bincount(LAYOUT.ring), [1, 6, 12, 18])
        radii = np.hypot(LAYOUT.rest_xy_mm[:, 0], LAYOUT.rest_xy_mm[:, 1])
        for k, expect in enumerate([0.0, 5.6, 11.2, 16.8]):
            assert radii[LAYOUT.ring == k] == pytest.approx(expect)

    def test_ring_heights(self):
        for k, expect in enumerate([10.1, 9.0, 7.9, 6.8]):
            assert LAYOUT.height_mm[LAYOUT.ring == k] == pytest.approx(expect)

    def test_first_papilla_of_each_ring_points_up(self):
        # angles start at pi/2, so the first papilla sits at (0, +radius)
        for k in (1, 2, 3):
            first = LAYOUT.rest_xy_mm[LAYOUT.ring == k][0]
            assert first[0] == pytest.approx(0.0, abs=1e-12)
            assert first[1] == pytest.approx(k * 5.6)

    def test_overlapping_rings_rejected(self):
        with pytest.raises(GeometryViolation):
            build_geometry(SkinGeometry(ring_spacing_mm=3.9, papilla_radius_mm=2.0))

    def test_height_profile_invariant(self):
        with pytest.raises(GeometryViolation):
            build_geometry(SkinGeometry(center_height_mm=2.0, ring_height_step_mm=1.1))
        with pytest.raises(GeometryViolation):
            build_geometry(SkinGeometry(ring_height_step_mm=0.0))

    def test_outer_ring_must_stay_above_base(self):
        # 3.2 - 3 steps of 1.1 puts the outer ring below zero height
        with pytest.raises(GeometryViolation):
            build_geometry(SkinGeometry(center_height_mm=3.2, ring_height_step_mm=1.1))


class TestNormalForces:
    def test_outer_ring_unloaded_at_shallow_depth(self):
        n = normal_forces(LAYOUT, 2.4, PARAMS)
        assert np.all(n[LAYOUT.ring == 3] == 0.0)
        assert np.all(n[LAYOUT.ring < 3] > 0.0)

    def test_ring2_compression_at_full_depth(self):
        n = normal_forces(LAYOUT, 3.4, PARAMS)
        # depth 3.4 minus two height steps leaves 1.2 mm compression
        assert n[LAYOUT.ring == 2] == pytest.approx(1.2)
        assert n[LAYOUT.ring == 3] == pytest.approx(0.1)

    def test_zero_depth_unloads_everything(self):
        assert np.all(normal_forces(LAYOUT, 0.0, PARAMS) == 0.0)


class TestStepDynamics:
    def test_stick_follows_surface(self):
        state = PapillaeState.rest(LAYOUT.n_papillae)
        new = step_dynamics(state, (1.0, 0.0), 3.0, LAYOUT, PARAMS)
        contact = normal_forces(LAYOUT, 3.0, PARAMS) > 0
        dt = PARAMS.dt_s
        assert np.allclose(new.delta_mm[contact, 0], 1.0 * dt)
        assert np.allclose(new.delta_mm[contact, 1], 0.0)
        assert not new.slipping[contact].any()
        # unloaded outer ring does not move
        assert np.all(new.delta_mm[~contact] == 0.0)

    def test_breakaway_when_spring_exceeds_static_hold(self):
        # center at depth 3.0 breaks when k_t*|delta| > mu_s*N = 3.6,
        # i.e. just past 7.2 mm deflection
        state = PapillaeState.rest(LAYOUT.n_papillae)
        state.delta_mm[0] = (7.2, 0.0)
        new = step_dynamics(state, (1.0, 0.0), 3.0, LAYOUT, PARAMS)
        assert new.slipping[0]
        state.delta_mm[0] = (7.0, 0.0)
        new = step_dynamics(state, (1.0, 0.0), 3.0, LAYOUT, PARAMS)
        assert not new.slipping[0]

    def test_slip_relaxes_toward_kinetic_balance(self):
        state = PapillaeState.rest(LAYOUT.n_papillae)
        state.delta_mm[0] = (7.2, 0.0)
        state.slipping[0] = True
        new = step_dynamics(state, (0.0, 0.0), 3.0, LAYOUT, PARAMS)
        # relax rate (k_t*7.2 - mu_k*3.0)/b = 48 mm/s against +x
        assert new.delta_mm[0, 0] == pytest.approx(7.2 - 48.0 * PARAMS.dt_s, rel=1e-12)
        assert new.slide_mm[0] == pytest.approx(48.0 * PARAMS.dt_s, rel=1e-12)
        assert new.slipping[0]

    def test_restick_at_kinetic_hold(self):
        state = PapillaeState.rest(LAYOUT.n_papillae)
        state.delta_mm[0] = (4.8, 0.0)  # k_t*4.8 = 2.4 = mu_k*N exactly
        state.slipping[0] = True
        new = step_dynamics(state, (1.0, 0.0), 3.0, LAYOUT, PARAMS)
        assert not new.slipping[0]
        assert new.delta_mm[0, 0] == pytest.approx(4.8 + PARAMS.dt_s, rel=1e-12)
        assert new.slide_mm[0] == 0.0

    def test_unloaded_papilla_relaxes_freely(self):
        state = PapillaeState.rest(LAYOUT.n_papillae)
        outer = int(np.flatnonzero(LAYOUT.ring == 3)[0])
        state.delta_mm[outer] = (1.0, 0.0)
        new = step_dynamics(state, (5.0, 0.0), 2.4, LAYOUT, PARAMS)  # ring 3 unloaded
        rate = 0.5 * 1.0 / PARAMS.slip_damping  # spring/b, no friction hold
        assert new.delta_mm[outer, 0] == pytest.approx(1.0 - rate * PARAMS.dt_s, rel=1e-12)
        # no surface drag and no slide bookkeeping out of contact
        assert new.slide_mm[outer] == 0.0

    def test_input_state_not_mutated(self):
        state = PapillaeState.rest(LAYOUT.n_papillae)
        step_dynamics(state, (1.0, 0.0), 3.0, LAYOUT, PARAMS)
        assert np.all(state.delta_mm == 0.0)


def kinematic_drive(depth, speed, seconds, params=PARAMS):
    T = int(round(seconds / params.dt_s))
    drive = np.zeros((T, 2))
    drive[:, 0] = speed
    return np.full(T, depth), drive


class TestTrajectory:
    def test_ring_breakaway_order_outer_first(self):
        depth, drive = kinematic_drive(3.0, 1.0, 8.0)
        traj = simulate_trajectory(LAYOUT, depth, drive, PARAMS)
        per_ring = []
        for k in range(4):
            vals = traj.first_slip_s[LAYOUT.ring == k]
            per_ring.append(vals)
        assert np.all(np.isnan(per_ring[3]))  # never in contact at 3.0
        for k in (0, 1, 2):
            assert np.all(np.isfinite(per_ring[k]))
            # all papillae of a ring break together
            assert np.ptp(per_ring[k]) == pytest.approx(0.0, abs=1e-9)
        assert per_ring[2][0] < per_ring[1][0] < per_ring[0][0]

    def test_breakaway_times_match_deflection_thresholds(self):
        # at 1 mm/s the surface travel equals mu_s*N/k_t per ring
        depth, drive = kinematic_drive(3.0, 1.0, 8.0)
        traj = simulate_trajectory(LAYOUT, depth, drive, PARAMS)
        for k, n_load in ((0, 3.0), (1, 1.9), (2, 0.8)):
            expect = 1.2 * n_load / 0.5
            got = traj.first_slip_s[LAYOUT.ring == k][0]
            assert got == pytest.approx(expect, abs=2 * PARAMS.dt_s)

    def test_onsets_ordered_and_threshold_zero_matches_first_slip(self):
        depth, drive = kinematic_drive(3.0, 1.0, 8.0)
        traj = simulate_trajectory(LAYOUT, depth, drive, PARAMS)
        inc, gross = ground_truth_onsets(traj, PARAMS.displacement_threshold_mm)
        assert inc is not None and gross is not None and inc <= gross
        inc0, _ = ground_truth_onsets(traj, 0.0)
        first = np.nanmin(traj.first_slip_s)
        # sliding starts the step after breakaway
        assert inc0 == pytest.approx((first + PARAMS.dt_s) * 1e6, abs=1)

    def test_no_crossing_gives_none(self):
        depth, drive = kinematic_drive(3.0, 1.0, 1.0)  # 1 mm travel: ring 2 only
        traj = simulate_trajectory(LAYOUT, depth, drive, PARAMS)
        _, gross = ground_truth_onsets(traj, PARAMS.displacement_threshold_mm)
        assert gross is None

    def test_slide_accumulates_only_in_slip(self):
        depth, drive = kinematic_drive(3.0, 1.0, 1.5)
        traj = simulate_trajectory(LAYOUT, depth, drive, PARAMS)
        stuck_window = traj.slide_mm[: int(1.0 / PARAMS.dt_s)]
        assert np.all(stuck_window == 0.0)  # first breakaway is at 1.92 s

    def test_jit_and_python_kernels_agree(self):
        if not hasattr(_run_papillae, "py_func"):
            pytest.skip("numba not active")
        n = LAYOUT.n_papillae
        ring_drop = (LAYOUT.ring * LAYOUT.geometry.ring_height_step_mm).astype(float)
        T = 400
        depth = np.full(T, 3.0)
        dx = np.zeros(T)
        drive_x = np.full(T, 1.2)
        drive_y = np.full(T, -0.4)
        args = (ring_drop, depth, drive_x, drive_y, True, 2.0,
                1.0, 0.5, 1.2, 0.8, 0.025, 0.1, 1e-4)
        outs_jit = _run_papillae(np.zeros(n), np.zeros(n), np.zeros(n, bool), np.zeros(n), *args)
        outs_py = _run_papillae.py_func(np.zeros(n), np.zeros(n), np.zeros(n, bool), np.zeros(n), *args)
        for a, b in zip(outs_jit, outs_py):
            assert np.array_equal(a, b, equal_nan=True)


class TestGenerateEvents:
    def make_traj(self, T=2000, speed=1.0):
        depth, drive = kinematic_drive(3.0, speed, T * PARAMS.dt_s)
        return simulate_trajectory(LAYOUT, depth, drive, PARAMS)

    def test_deterministic_for_seed(self):
        traj = self.make_traj()
        a = generate_events(traj, LAYOUT, seed=5, params=PARAMS)
        b = generate_events(traj, LAYOUT, seed=5, params=PARAMS)
        assert a == b
        c = generate_events(traj, LAYOUT, seed=6, params=PARAMS)
        assert a != c

    def test_stream_is_valid_and_sorted(self):
        traj = self.make_traj()
        s = generate_events(traj, LAYOUT, seed=1, params=PARAMS)
        assert validate_stream(s) == []
        assert s.sensor_width == 640 and s.sensor_height == 480

    def test_signal_count_tracks_integrated_rate(self):
        traj = self.make_traj()
        quiet = SimParams(background_rate_hz=0.0)
        s = generate_events(traj, LAYOUT, seed=2, params=quiet)
        expected = float(
            (quiet.events_per_mm * traj.tip_speed_mm_s.astype(float) * quiet.dt_s).sum()
        )
        assert abs(len(s) - expected) < 5 * math.sqrt(expected)

    def test_signal_events_live_on_footprints(self):
        traj = self.make_traj(T=500)
        quiet = SimParams(background_rate_hz=0.0)
        s = generate_events(traj, LAYOUT, seed=3, params=quiet)
        # within the first 50 ms deflections are tiny, so every event
        # must fall within a footprint radius of a rest position
        centers_x = 319.5 + 10.0 * LAYOUT.rest_xy_mm[:, 0]
        centers_y = 239.5 + 10.0 * LAYOUT.rest_xy_mm[:, 1]
        dx = s.x[:, None] + 0.5 - centers_x[None, :]
        dy = s.y[:, None] + 0.5 - centers_y[None, :]
        dist = np.sqrt(dx**2 + dy**2).min(axis=1)
        assert np.all(dist <= quiet.footprint_radius_px + 1.5)
        assert np.all(s.polarity == 1)

    def test_background_fills_frame_with_negative_fraction(self):
        traj = self.make_traj(T=500, speed=0.0)
        loud = SimParams(background_rate_hz=20_000.0)
        s = generate_events(traj, LAYOUT, seed=4, params=loud)
        frac_neg = (s.polarity == -1).mean()
        assert 0.02 < frac_neg < 0.09
        # uniform over the full frame, not just the active crop
        assert (s.x < 120).any() and (s.x >= 520).any()

    def test_mirror_involution(self):
        traj = self.make_traj(T=500)
        s = generate_events(traj, LAYOUT, seed=8, params=PARAMS)
        assert mirror_stream(mirror_stream(s)) == s


class TestRunScenario:
    def test_kinematic_trial(self):
        trial = run_scenario(KinematicScenario(3.0, 1.0, 0.0, seed=11))
        assert trial.incipient_onset_us is not None
        assert trial.gross_onset_us is not None
        assert trial.incipient_onset_us < trial.gross_onset_us
        assert validate_stream(trial.stream) == []
        assert trial.scenario["kind"] == "kinematic"

    def test_no_slip_raises(self):
        with pytest.raises(NoSlipOccurred):
            run_scenario(KinematicScenario(3.0, 1.0, 0.0, seed=1, travel_mm=0.5))

    def test_direction_rotates_pattern(self):
        east = run_scenario(KinematicScenario(3.0, 1.2, 0.0, seed=9, travel_mm=2.5))
        west = run_scenario(KinematicScenario(3.0, 1.2, 180.0, seed=9, travel_mm=2.5))
        # same seed, opposite drive: events pile on opposite sides of center
        assert east.stream.x.mean() > 320 > west.stream.x.mean()

    def test_gravity_trial_breaks_away_outside_in(self):
        trial = run_scenario(GravityScenario(0.205, 0.7, seed=21))
        assert trial.incipient_onset_us < trial.gross_onset_us
        lead = trial.gross_onset_us - trial.incipient_onset_us
        assert lead > 500_000  # sequential cascade leaves a long lead
        assert validate_stream(trial.stream) == []
        # truncated two seconds past gross
        assert trial.stream.t_us[-1] <= trial.gross_onset_us + 2_000_000

    def test_gravity_right_is_exact_mirror_of_left(self):
        left = run_scenario(GravityScenario(0.205, 0.7, seed=33, disturbance_fraction=0.5, side="left"))
        right = run_scenario(GravityScenario(0.205, 0.7, seed=33, disturbance_fraction=0.5, side="right"))
        assert right.stream == mirror_stream(left.stream)
        assert right.incipient_onset_us == left.incipient_onset_us
        assert right.gross_onset_us == left.gross_onset_us

    def test_gravity_needs_positive_retraction(self):
        with pytest.raises(NoSlipOccurred):
            run_scenario(GravityScenario(0.205, 0.0, seed=1))


class TestScenarioKv:
    def test_roundtrip_kinematic(self):
        sc = KinematicScenario(2.8, 1.4, 225.0, seed=77)
        assert scenario_from_kv(scenario_to_kv(sc)) == sc

    def test_roundtrip_gravity(self):
        sc = GravityScenario(0.165, 0.3, seed=5, disturbance_fraction=0.75, side="right")
        assert scenario_from_kv(scenario_to_kv(sc)) == sc

    def test_unknown_keys_rejected(self):
        kv = scenario_to_kv(KinematicScenario(2.8, 1.4, 0.0, seed=1))
        kv["bogus"] = "1"
        with pytest.raises(ValueError):
            scenario_from_kv(kv)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            scenario_from_kv({"kind": "levitation"})
