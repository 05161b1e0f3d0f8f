import math

import numpy as np
import pytest

from bearnav.core import NavigatorConfig, Pose, Velocity
from bearnav.sim import (
    EstimationError,
    NoiseModel,
    RobotState,
    compare_to_model,
    estimate_l,
    large_hall_world,
    log_to_csv,
    loop_summary_to_csv,
    plan_from_profile,
    room_world_for_plan,
    run_multi_loop,
    run_traversal,
    small_room_world,
    step_kinematics,
    taught_pose_at,
)
from bearnav.teach_repeat import DrivePlan, circle_plan, oval_plan, straight_plan, teach
from bearnav.vision import CameraModel, CorruptionModel, World, random_descriptors, uniform_box_world

CAMERA = CameraModel()
CONFIG = NavigatorConfig()
ORIGIN = Pose(0.0, 0.0, 0.0)


def small_route(plan, seed=0, config=CONFIG, margin=1.0, n=360):
    world = room_world_for_plan(plan, ORIGIN, margin=margin, n=n, seed=seed)
    route = teach(plan, world, CAMERA, config)
    return route, world


class TestStepKinematics:
    def test_straight_step(self):
        state = step_kinematics(RobotState(ORIGIN), Velocity(1.0, 0.0), 1.0)
        assert (state.pose.x, state.pose.y, state.pose.theta) == (1.0, 0.0, 0.0)
        assert state.odometer == 1.0

    def test_quarter_arc(self):
        state = step_kinematics(RobotState(ORIGIN), Velocity(1.0, math.pi / 2), 1.0)
        radius = 2.0 / math.pi
        assert state.pose.x == pytest.approx(radius)
        assert state.pose.y == pytest.approx(radius)
        assert state.pose.theta == pytest.approx(math.pi / 2)

    def test_full_circle_single_step(self):
        state = step_kinematics(RobotState(ORIGIN), Velocity(1.0, 2 * math.pi), 1.0)
        assert abs(state.pose.x) < 1e-12
        assert abs(state.pose.y) < 1e-12
        assert state.pose.theta == pytest.approx(0.0)

    def test_commanded_circle_returns_to_start(self):
        # Exact arc formula: a commanded circle closes to within 1e-9
        # regardless of the step count.
        state = RobotState(ORIGIN)
        dt = 0.05
        for _ in range(400):
            state = step_kinematics(state, Velocity(1.0, 2 * math.pi / 20.0), dt)
        assert state.pose.position_distance(ORIGIN) < 1e-9

    def test_odometry_scale_error_accumulates(self):
        noise = NoiseModel(odometry_scale_error=1.02, odometry_noise_sigma=0.01,
                           seed=1)
        rng = noise.rng()
        state = RobotState(ORIGIN)
        for _ in range(200):  # 10 m of true travel
            state = step_kinematics(state, Velocity(0.5, 0.0), 0.1, noise, rng)
        assert state.pose.x == pytest.approx(10.0)
        assert abs(state.odometer - 10.0) == pytest.approx(0.2, abs=0.05)

    def test_slip_moves_robot_back_without_odometer_debit(self):
        noise = NoiseModel(slip_prob=1.0, slip_magnitude=0.02, seed=2)
        state = step_kinematics(RobotState(ORIGIN), Velocity(1.0, 0.0), 0.1,
                                noise, noise.rng())
        assert state.pose.x == pytest.approx(0.1 - 0.02)
        assert state.odometer == pytest.approx(0.1)

    def test_omega_scale_error_applies(self):
        noise = NoiseModel(omega_scale_error=1.1)
        state = step_kinematics(RobotState(ORIGIN), Velocity(1.0, 0.5), 1.0, noise)
        assert state.pose.theta == pytest.approx(0.55)

    def test_heading_noise_deterministic_per_seed(self):
        noise = NoiseModel(heading_actuation_sigma=0.05, seed=3)
        a = step_kinematics(RobotState(ORIGIN), Velocity(1.0, 0.0), 0.1,
                            noise, noise.rng())
        b = step_kinematics(RobotState(ORIGIN), Velocity(1.0, 0.0), 0.1,
                            noise, noise.rng())
        assert a.pose == b.pose


class TestEstimateL:
    def test_single_landmark(self):
        desc = random_descriptors(1, np.random.default_rng(0))
        world = World(np.array([0]), np.array([[5.0, 0.0, 1.0]]), desc)
        assert estimate_l(world, ORIGIN, CAMERA) == pytest.approx(5.0)

    def test_mean_of_two_depths(self):
        desc = random_descriptors(2, np.random.default_rng(0))
        world = World(np.array([0, 1]),
                      np.array([[2.0, 0.0, 1.0], [8.0, 0.5, 1.0]]), desc)
        assert estimate_l(world, ORIGIN, CAMERA) == pytest.approx(5.0)

    def test_no_visible_landmarks(self):
        desc = random_descriptors(1, np.random.default_rng(0))
        world = World(np.array([0]), np.array([[-5.0, 0.0, 1.0]]), desc)
        with pytest.raises(EstimationError):
            estimate_l(world, ORIGIN, CAMERA)

    def test_matches_enumeration_oracle(self):
        world = uniform_box_world(200, (0.0, 12.0), (-3.0, 3.0), seed=4)
        pose = Pose(1.0, 0.5, 0.2)
        depths = []
        for i in range(len(world)):
            dx = world.positions[i, 0] - pose.x
            dy = world.positions[i, 1] - pose.y
            depth = dx * math.cos(pose.theta) + dy * math.sin(pose.theta)
            bearing = math.atan2(-dx * math.sin(pose.theta) + dy * math.cos(pose.theta),
                                 depth)
            if depth > 0 and abs(bearing) < CAMERA.h_fov / 2:
                depths.append(depth)
        assert estimate_l(world, pose, CAMERA) == pytest.approx(np.mean(depths))


class TestRunTraversal:
    def test_perfect_replay_on_straight_route(self):
        route, world = small_route(straight_plan(4.0, 0.5))
        log = run_traversal(route, ORIGIN, world, CAMERA)
        assert log.completed
        end = Pose(float(log.final_pose.x), float(log.final_pose.y), 0.0)
        taught_end = taught_pose_at(route, route.total_length)
        assert end.position_distance(taught_end) < 0.01

    def test_perfect_replay_closed_loop_end_error(self):
        route, world = small_route(oval_plan(10.0))
        log = run_traversal(route, ORIGIN, world, CAMERA)
        assert log.completed
        # Zero noise, zero corruption: residual is only the map-spacing
        # servo bias on curves, decayed along the final straight.
        assert log.loop_end_error < 0.1

    def test_exact_replay_with_fine_maps(self):
        # Segment boundaries on the exact step grid (v dt = 1/16 m) and
        # map spacing tight enough that the rotation lag inside a map
        # window stays inside the zero vote bin: the repeat trajectory
        # then matches the taught one to integration tolerance.
        plan = DrivePlan((
            (2.0, 0.5, 0.0),
            (3.125, 0.5, 0.5 / (3.125 / math.pi)),
            (2.0, 0.5, 0.0),
            (3.125, 0.5, 0.5 / (3.125 / math.pi)),
        ))
        config = NavigatorConfig(map_spacing=0.004)
        world = room_world_for_plan(plan, ORIGIN, margin=1.0, n=360, seed=5)
        route = teach(plan, world, CAMERA, config)
        log = run_traversal(route, ORIGIN, world, CAMERA, dt=0.125)
        assert log.completed
        for i in range(len(log)):
            taught = taught_pose_at(route, log.d_est[i])
            err = math.hypot(log.x_true[i] - taught.x, log.y_true[i] - taught.y)
            assert err < 1e-3

    def test_reproducible_bit_identical(self):
        route, world = small_route(oval_plan(10.0), seed=6)
        corruption = CorruptionModel(bit_flip_prob=0.02, dropout_prob=0.1,
                                     clutter_rate=2.0, pixel_noise_sigma=0.5, seed=7)
        noise = NoiseModel(odometry_scale_error=1.02, odometry_noise_sigma=0.01,
                           heading_actuation_sigma=0.01, seed=8)
        a = run_traversal(route, Pose(0.0, 0.3, 0.0), world, CAMERA, corruption, noise)
        b = run_traversal(route, Pose(0.0, 0.3, 0.0), world, CAMERA, corruption, noise)
        for field in ("t", "x_true", "y_true", "theta_true", "d_est", "kappa",
                      "omega_cmd", "v_cmd", "support"):
            assert np.array_equal(getattr(a, field), getattr(b, field),
                                  equal_nan=True), field
        assert a.loop_end_error == b.loop_end_error

    def test_step_budget_flags_noncompletion(self):
        route, world = small_route(straight_plan(4.0, 0.5))
        log = run_traversal(route, ORIGIN, world, CAMERA, step_budget=10)
        assert not log.completed
        assert len(log) == 10

    def test_convergence_direction_curved_path(self):
        # Lateral initial error on a curved route, zero noise: one loop
        # strictly shrinks the loop-end error.
        route, world = small_route(circle_plan(10.0))
        start = Pose(0.0, -0.5, 0.0)  # 0.5 m laterally off the taught start
        log = run_traversal(route, start, world, CAMERA)
        assert log.completed
        assert log.loop_end_error < 0.5


class TestRunMultiLoop:
    def test_single_loop_equals_run_traversal(self):
        route, world = small_route(oval_plan(10.0), seed=9)
        noise = NoiseModel(odometry_noise_sigma=0.01, seed=10)
        a = run_traversal(route, ORIGIN, world, CAMERA, None, noise)
        [b] = run_multi_loop(route, ORIGIN, 1, world, CAMERA, None, noise)
        assert np.array_equal(a.x_true, b.x_true)
        assert a.loop_end_error == b.loop_end_error

    def test_loops_chain_from_previous_end(self):
        route, world = small_route(oval_plan(10.0), seed=11)
        logs = run_multi_loop(route, Pose(0.0, 0.4, 0.0), 3, world, CAMERA)
        assert len(logs) == 3
        for prev, nxt in zip(logs, logs[1:]):
            assert nxt.x_true[0] == pytest.approx(prev.final_pose.x)
            assert nxt.y_true[0] == pytest.approx(prev.final_pose.y)

    def test_gap_route_floor_is_the_gap(self):
        # Start and end of the taught path sit 0.15 m apart; the loop
        # error settles near that gap rather than near zero.
        plan = oval_plan(10.0, end_gap=0.15)
        route, world = small_route(plan)
        logs = run_multi_loop(route, ORIGIN, 3, world, CAMERA)
        for log in logs[1:]:
            assert log.loop_end_error > 0.075
            assert log.loop_end_error < 0.4

    def test_budget_exhaustion_aborts_remaining(self):
        route, world = small_route(straight_plan(4.0, 0.5))
        logs = run_multi_loop(route, ORIGIN, 5, world, CAMERA, step_budget=10)
        assert len(logs) == 1
        assert not logs[0].completed


class TestCompareToModel:
    def test_straight_route_longitudinal_error_constant(self):
        # Pure longitudinal offset on a straight route: both simulation
        # and model hold x fixed (the straight-segment transition has a
        # unit top-left entry).
        route, world = small_route(straight_plan(4.0, 0.5))
        start = Pose(-0.2, 0.0, 0.0)
        log = run_traversal(route, start, world, CAMERA)
        l = estimate_l(world, ORIGIN, CAMERA)
        report = compare_to_model(log, route, l)
        assert np.allclose(report.sim_error[:, 0], -0.2, atol=0.02)
        assert np.allclose(report.model_error[:, 0], -0.2, atol=1e-6)
        assert report.deviation.max() < 0.05

    def test_curved_route_prediction_tracks_simulation(self):
        config = NavigatorConfig(map_spacing=0.05)
        plan = circle_plan(10.0)
        world = room_world_for_plan(plan, ORIGIN, margin=1.0, n=360, seed=12)
        route = teach(plan, world, CAMERA, config)
        start = Pose(-0.2, -0.25, 0.0)
        log = run_traversal(route, start, world, CAMERA, dt=0.05)
        l = estimate_l(world, ORIGIN, CAMERA)
        report = compare_to_model(log, route, l)
        initial = report.sim_norm[0]
        assert report.deviation.max() < 0.25 * initial
        assert report.norm_correlation > 0.9

    def test_section_rates_require_both_kinds(self):
        route, world = small_route(oval_plan(10.0), seed=13)
        log = run_traversal(route, Pose(-0.2, -0.2, 0.0), world, CAMERA)
        report = compare_to_model(log, route, 2.0)
        kinds = {s.curved for s in report.sections}
        assert kinds == {True, False}


class TestBuiltInWorlds:
    def test_hall_triples_the_feature_distance(self):
        plan = oval_plan(10.0)
        room = small_room_world(plan, ORIGIN, seed=14)
        hall = large_hall_world(plan, ORIGIN, seed=14)
        ds = np.linspace(0.0, plan.total_length, 40)
        l_room = np.mean([estimate_l(room, plan.pose_at(d, ORIGIN), CAMERA)
                          for d in ds])
        l_hall = np.mean([estimate_l(hall, plan.pose_at(d, ORIGIN), CAMERA)
                          for d in ds])
        assert 2.0 < l_hall / l_room < 4.5

    def test_plan_reconstruction_from_profile(self):
        plan = oval_plan(10.0)
        rebuilt = plan_from_profile(plan.profile())
        for d in np.linspace(0.0, 10.0, 17):
            a = plan.pose_at(d, ORIGIN)
            b = rebuilt.pose_at(d, ORIGIN)
            assert a.position_distance(b) < 1e-9


class TestExports:
    def test_log_csv_columns(self):
        route, world = small_route(straight_plan(1.0, 0.5))
        log = run_traversal(route, ORIGIN, world, CAMERA)
        lines = log_to_csv(log).splitlines()
        assert lines[0] == "t,x_true,y_true,theta_true,d_est,kappa,omega_cmd,conclusive"
        assert len(lines) == len(log) + 1

    def test_loop_summary_csv(self):
        text = loop_summary_to_csv([0.5, 0.25, 0.1])
        assert text.splitlines()[0] == "loop,end_error"
        assert text.splitlines()[1] == "1,0.5"
