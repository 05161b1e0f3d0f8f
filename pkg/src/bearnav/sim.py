"""Closed-loop simulation: unicycle robot, noise, and traversal runners.

The robot is a unicycle with exact arc kinematics (no Euler drift), a
noisy odometer, and optional actuation errors. ``run_traversal`` wires
the perception stack and the repeating navigator into the loop
project -> corrupt -> repeat_step -> step_kinematics and records a
:class:`TraversalLog`; ``run_multi_loop`` chains traversals the way the
repeated-loop experiments do. ``compare_to_model`` turns a log into the
local-frame error trajectory and integrates the analytical error
dynamics alongside it.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import NavigatorConfig, PathProfile, Pose, Velocity, profile_velocity_at, wrap_angle
from .error_model import ErrorState, integrate_error
from .teach_repeat import (
    DrivePlan,
    NavigatorState,
    TaughtRoute,
    measure_loop_error,
    repeat_step,
)
from .vision import CameraModel, CorruptionModel, World, corrupt, project, rect_room_world

__all__ = [
    "RobotState",
    "NoiseModel",
    "TraversalLog",
    "EstimationError",
    "step_kinematics",
    "run_traversal",
    "run_multi_loop",
    "estimate_l",
    "compare_to_model",
    "ModelComparison",
    "plan_from_profile",
    "taught_pose_at",
    "local_frame_error",
    "room_world_for_plan",
    "small_room_world",
    "large_hall_world",
    "log_to_csv",
    "loop_summary_to_csv",
]


class EstimationError(ValueError):
    """A quantity could not be estimated from the available landmarks."""


@dataclass(frozen=True, slots=True)
class RobotState:
    """Ground-truth pose plus the robot's own odometer reading."""

    pose: Pose
    odometer: float = 0.0


@dataclass(frozen=True, slots=True)
class NoiseModel:
    """Actuation and odometry imperfections.

    ``odometry_scale_error`` is systematic (1.02 = odometer reads 2%
    long); ``odometry_noise_sigma`` is the per-step fractional noise on
    the odometer increment; ``heading_actuation_sigma`` is white heading
    noise in rad/sqrt(s); ``omega_scale_error`` is a systematic turn
    miscalibration (executed omega = scale * commanded); slip events
    remove ``slip_magnitude`` meters of true motion with probability
    ``slip_prob`` per step while the odometer keeps its credit.
    """

    odometry_scale_error: float = 1.0
    odometry_noise_sigma: float = 0.0
    heading_actuation_sigma: float = 0.0
    omega_scale_error: float = 1.0
    slip_prob: float = 0.0
    slip_magnitude: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.odometry_scale_error <= 0.0 or self.omega_scale_error <= 0.0:
            raise ValueError("scale errors must be > 0")
        if min(self.odometry_noise_sigma, self.heading_actuation_sigma,
               self.slip_prob, self.slip_magnitude) < 0.0:
            raise ValueError("noise magnitudes must be >= 0")
        if self.slip_prob > 1.0:
            raise ValueError("slip_prob must be <= 1")

    @property
    def is_exact(self) -> bool:
        return (self.odometry_scale_error == 1.0 and self.odometry_noise_sigma == 0.0
                and self.heading_actuation_sigma == 0.0
                and self.omega_scale_error == 1.0 and self.slip_prob == 0.0)

    def rng(self, stream: int = 0) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, stream]))


def step_kinematics(state: RobotState, cmd: Velocity, dt: float,
                    noise: NoiseModel | None = None,
                    rng: np.random.Generator | None = None) -> RobotState:
    """Advance the robot one control period.

    The pose follows the exact constant-rate arc of the (noisy) executed
    velocities; the odometer integrates the commanded forward speed with
    its own scale and noise errors. Draw order per step is fixed
    (heading noise, odometry noise, slip) so runs with identical seeds
    stay aligned regardless of the commands.
    """
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    if noise is None:
        noise = NoiseModel()
    if rng is None and not noise.is_exact:
        rng = noise.rng()

    omega = cmd.omega * noise.omega_scale_error
    if noise.heading_actuation_sigma > 0.0:
        omega += rng.normal(0.0, noise.heading_actuation_sigma / math.sqrt(dt))

    x, y, theta = state.pose.x, state.pose.y, state.pose.theta
    dtheta = omega * dt
    if abs(dtheta) < 1e-9:
        x += cmd.v * dt * math.cos(theta)
        y += cmd.v * dt * math.sin(theta)
    else:
        radius = cmd.v / omega
        x += radius * (math.sin(theta + dtheta) - math.sin(theta))
        y -= radius * (math.cos(theta + dtheta) - math.cos(theta))

    increment = cmd.v * dt * noise.odometry_scale_error
    if noise.odometry_noise_sigma > 0.0:
        increment *= 1.0 + rng.normal(0.0, noise.odometry_noise_sigma)
    odometer = state.odometer + max(increment, 0.0)

    if noise.slip_prob > 0.0 and rng.random() < noise.slip_prob:
        x -= noise.slip_magnitude * math.cos(state.pose.theta)
        y -= noise.slip_magnitude * math.sin(state.pose.theta)

    return RobotState(Pose(x, y, wrap_angle(theta + dtheta)), odometer)


@dataclass
class TraversalLog:
    """Per-step record of one repeat traversal, column-wise.

    ``kappa`` holds NaN where the vote was inconclusive. ``v_cmd`` and
    ``support`` are carried for analysis beyond the canonical CSV
    columns.
    """

    t: np.ndarray
    x_true: np.ndarray
    y_true: np.ndarray
    theta_true: np.ndarray
    d_est: np.ndarray
    kappa: np.ndarray
    conclusive: np.ndarray
    omega_cmd: np.ndarray
    v_cmd: np.ndarray
    support: np.ndarray
    loop_end_error: float
    completed: bool
    final_pose: Pose

    def __len__(self) -> int:
        return len(self.t)


def _taught_duration(profile: PathProfile) -> float:
    return profile.duration


def run_traversal(
    route: TaughtRoute,
    start_pose: Pose,
    world: World,
    camera: CameraModel,
    corruption: CorruptionModel | None = None,
    noise: NoiseModel | None = None,
    dt: float = 0.1,
    step_budget: int | None = None,
    loop: int = 0,
    config: NavigatorConfig | None = None,
) -> TraversalLog:
    """Run one autonomous traversal of a taught route.

    Steps the loop project -> corrupt -> repeat_step -> step_kinematics
    until the navigator reports the end of the profile or the step
    budget (default ten times the taught duration) runs out; budget
    exhaustion is flagged on the returned log, not raised. ``loop``
    selects the per-loop noise/corruption streams so chained traversals
    differ while staying reproducible. ``config`` overrides the route's
    stored navigator configuration (ablations).
    """
    if corruption is None:
        corruption = CorruptionModel()
    if noise is None:
        noise = NoiseModel()
    if config is None:
        config = route.config
    if step_budget is None:
        step_budget = max(int(math.ceil(10.0 * _taught_duration(route.profile) / dt)), 1)

    rng_c = corruption.rng(loop)
    rng_n = noise.rng(loop)

    cols: dict[str, list] = {k: [] for k in
                             ("t", "x", "y", "th", "d", "kap", "conc", "om", "v", "sup")}
    state = NavigatorState()
    robot = RobotState(start_pose, 0.0)
    last_odometer = 0.0
    t = 0.0
    completed = False

    for _ in range(step_budget):
        obs = project(robot.pose, camera, world)
        obs = corrupt(obs, corruption, rng_c)
        cmd, state = repeat_step(state, route, obs, robot.odometer - last_odometer,
                                 config)
        last_odometer = robot.odometer
        if state.finished:
            completed = True
            break
        vote = state.last_vote
        cols["t"].append(t)
        cols["x"].append(robot.pose.x)
        cols["y"].append(robot.pose.y)
        cols["th"].append(robot.pose.theta)
        cols["d"].append(state.d_est)
        cols["kap"].append(vote.kappa if vote.conclusive else math.nan)
        cols["conc"].append(vote.conclusive)
        cols["om"].append(cmd.omega)
        cols["v"].append(cmd.v)
        cols["sup"].append(vote.support)
        robot = step_kinematics(robot, cmd, dt, noise, rng_n)
        t += dt

    return TraversalLog(
        t=np.array(cols["t"]),
        x_true=np.array(cols["x"]),
        y_true=np.array(cols["y"]),
        theta_true=np.array(cols["th"]),
        d_est=np.array(cols["d"]),
        kappa=np.array(cols["kap"]),
        conclusive=np.array(cols["conc"], dtype=bool),
        omega_cmd=np.array(cols["om"]),
        v_cmd=np.array(cols["v"]),
        support=np.array(cols["sup"], dtype=np.int64),
        loop_end_error=measure_loop_error(robot.pose, route),
        completed=completed,
        final_pose=robot.pose,
    )


def run_multi_loop(
    route: TaughtRoute,
    start_pose: Pose,
    n_loops: int,
    world: World,
    camera: CameraModel,
    corruption: CorruptionModel | None = None,
    noise: NoiseModel | None = None,
    dt: float = 0.1,
    step_budget: int | None = None,
    config: NavigatorConfig | None = None,
) -> list[TraversalLog]:
    """Chain traversals, each starting at the previous ground-truth end pose.

    The odometry estimate resets to zero per loop. A non-completed
    traversal aborts the remaining loops; its partial log is the last
    list element.
    """
    if n_loops < 1:
        raise ValueError("n_loops must be >= 1")
    logs = []
    pose = start_pose
    for i in range(n_loops):
        log = run_traversal(route, pose, world, camera, corruption, noise, dt,
                            step_budget, loop=i, config=config)
        logs.append(log)
        if not log.completed:
            break
        pose = log.final_pose
    return logs


def estimate_l(world: World, pose: Pose, camera: CameraModel) -> float:
    """Mean depth (along the heading) of the currently visible landmarks.

    This is the simulator's concrete definition of the feature distance
    feeding the error-dynamics predictions. Raises
    :class:`EstimationError` when nothing is visible.
    """
    dx = world.positions[:, 0] - pose.x
    dy = world.positions[:, 1] - pose.y
    depth = dx * math.cos(pose.theta) + dy * math.sin(pose.theta)
    lateral = -dx * math.sin(pose.theta) + dy * math.cos(pose.theta)
    bearing = np.arctan2(lateral, depth)
    visible = (depth > 0.0) & (np.abs(bearing) < camera.h_fov / 2.0)
    if not visible.any():
        raise EstimationError("no landmarks visible from this pose")
    return float(depth[visible].mean())


def plan_from_profile(profile: PathProfile) -> DrivePlan:
    """Reconstruct the constant-velocity segments a profile encodes."""
    bounds = [d for d, _ in profile.entries] + [profile.total_length]
    segments = []
    for (d0, vel), d1 in zip(profile.entries, bounds[1:]):
        if d1 > d0:
            segments.append((d1 - d0, vel.v, vel.omega))
    return DrivePlan(tuple(segments))


def taught_pose_at(route: TaughtRoute, d: float) -> Pose:
    """Taught-path pose at travelled distance ``d``."""
    return plan_from_profile(route.profile).pose_at(
        min(max(d, 0.0), route.total_length), route.start_pose)


def local_frame_error(route: TaughtRoute, pose: Pose, d: float) -> np.ndarray:
    """Position error of ``pose`` in the frame of the taught pose at ``d``.

    x is longitudinal (along the taught heading), y lateral (left
    positive).
    """
    p = taught_pose_at(route, d)
    dx = pose.x - p.x
    dy = pose.y - p.y
    c, s = math.cos(p.theta), math.sin(p.theta)
    return np.array([c * dx + s * dy, -s * dx + c * dy])


@dataclass(frozen=True)
class SectionStats:
    """Error-norm decay over one contiguous profile section."""

    curved: bool
    t_start: float
    t_end: float
    sim_decay_rate: float
    model_decay_rate: float


@dataclass(frozen=True)
class ModelComparison:
    """Simulated versus analytically predicted error trajectories."""

    t: np.ndarray
    sim_error: np.ndarray
    model_error: np.ndarray
    l: float
    sections: tuple[SectionStats, ...]

    @property
    def sim_norm(self) -> np.ndarray:
        return np.linalg.norm(self.sim_error, axis=1)

    @property
    def model_norm(self) -> np.ndarray:
        return np.linalg.norm(self.model_error, axis=1)

    @property
    def deviation(self) -> np.ndarray:
        """Per-sample distance between simulated and predicted error."""
        return np.linalg.norm(self.sim_error - self.model_error, axis=1)

    @property
    def norm_correlation(self) -> float:
        """Pearson correlation of the two error-norm decay curves."""
        return float(np.corrcoef(self.sim_norm, self.model_norm)[0, 1])

    def mean_decay_rate(self, curved: bool, model: bool = False) -> float:
        rates = [s.model_decay_rate if model else s.sim_decay_rate
                 for s in self.sections if s.curved == curved]
        if not rates:
            raise ValueError("no sections of the requested kind")
        return float(np.mean(rates))


def compare_to_model(log: TraversalLog, route: TaughtRoute, l: float,
                     dt_model: float = 1e-3) -> ModelComparison:
    """Compare a traversal log against the analytical error dynamics.

    The ground-truth error is expressed in the local frame of the taught
    pose at the robot's own distance estimate; the prediction integrates
    the error dynamics with the taught velocity schedule and the given
    feature distance from the same initial error. Per-section decay
    rates use the mean of d(ln ||e||)/dt over each contiguous straight
    or curved stretch of the schedule.
    """
    if len(log) < 2:
        raise ValueError("log too short to compare")
    sim_err = np.array([
        local_frame_error(route, Pose(x, y, th), d)
        for x, y, th, d in zip(log.x_true, log.y_true, log.theta_true, log.d_est)
    ])

    t_rel = log.t - log.t[0]
    schedule = _TaughtSchedule(route.profile)
    t_fine, traj = integrate_error(
        ErrorState(float(sim_err[0, 0]), float(sim_err[0, 1])),
        schedule.controls_at, l, None, float(t_rel[-1]), dt_model)
    model_err = np.column_stack([
        np.interp(t_rel, t_fine, traj[:, 0]),
        np.interp(t_rel, t_fine, traj[:, 1]),
    ])

    curved = np.array([
        profile_velocity_at(route.profile,
                            min(schedule.distance_at(ti), route.total_length)).omega != 0.0
        for ti in t_rel
    ])
    sections = _section_stats(t_rel, curved,
                              np.linalg.norm(sim_err, axis=1),
                              np.linalg.norm(model_err, axis=1))
    return ModelComparison(log.t.copy(), sim_err, model_err, l, tuple(sections))


class _TaughtSchedule:
    """Time parametrisation of a taught profile (piecewise-constant v)."""

    def __init__(self, profile: PathProfile):
        self.profile = profile
        bounds = [d for d, _ in profile.entries] + [profile.total_length]
        self.t_knots = [0.0]
        self.d_knots = [0.0]
        for (d0, vel), d1 in zip(profile.entries, bounds[1:]):
            self.t_knots.append(self.t_knots[-1] + (d1 - d0) / vel.v)
            self.d_knots.append(d1)

    def distance_at(self, t: float) -> float:
        return float(np.interp(t, self.t_knots, self.d_knots))

    def controls_at(self, t: float) -> tuple[float, float]:
        d = min(self.distance_at(t), self.profile.total_length)
        vel = profile_velocity_at(self.profile, d)
        return vel.v, vel.omega


def _section_stats(t: np.ndarray, curved: np.ndarray, sim_norm: np.ndarray,
                   model_norm: np.ndarray) -> list[SectionStats]:
    sections = []
    start = 0
    for i in range(1, len(t) + 1):
        if i == len(t) or curved[i] != curved[start]:
            if i - start >= 2:
                span = t[i - 1] - t[start]
                eps = 1e-12
                sim_rate = -(math.log(sim_norm[i - 1] + eps)
                             - math.log(sim_norm[start] + eps)) / span
                model_rate = -(math.log(model_norm[i - 1] + eps)
                               - math.log(model_norm[start] + eps)) / span
                sections.append(SectionStats(bool(curved[start]), float(t[start]),
                                             float(t[i - 1]), sim_rate, model_rate))
            start = i
    return sections


# --- built-in worlds -------------------------------------------------------

def _plan_bbox(plan: DrivePlan, start: Pose) -> tuple[float, float, float, float]:
    ds = np.linspace(0.0, plan.total_length, 200)
    xs, ys = zip(*((p.x, p.y) for p in (plan.pose_at(d, start) for d in ds)))
    return min(xs), max(xs), min(ys), max(ys)


def room_world_for_plan(plan: DrivePlan, start: Pose, margin: float,
                        n: int, seed: int) -> World:
    """Rectangular wall world sized to the plan's bounding box plus margin."""
    x0, x1, y0, y1 = _plan_bbox(plan, start)
    return rect_room_world((x0 - margin, x1 + margin), (y0 - margin, y1 + margin),
                           n, seed)


def small_room_world(plan: DrivePlan, start: Pose, seed: int, n: int = 360) -> World:
    """Close walls: short feature distances and fast error decay."""
    return room_world_for_plan(plan, start, margin=1.2, n=n, seed=seed)


def large_hall_world(plan: DrivePlan, start: Pose, seed: int, n: int = 900) -> World:
    """Distant walls: roughly triple the feature distance of the small room."""
    return room_world_for_plan(plan, start, margin=7.0, n=n, seed=seed)


# --- exports ----------------------------------------------------------------

def log_to_csv(log: TraversalLog) -> str:
    """Canonical per-sample CSV: t,x_true,y_true,theta_true,d_est,kappa,omega_cmd,conclusive."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "x_true", "y_true", "theta_true", "d_est",
                     "kappa", "omega_cmd", "conclusive"])
    for i in range(len(log)):
        writer.writerow([
            repr(float(log.t[i])), repr(float(log.x_true[i])),
            repr(float(log.y_true[i])), repr(float(log.theta_true[i])),
            repr(float(log.d_est[i])), repr(float(log.kappa[i])),
            repr(float(log.omega_cmd[i])), int(log.conclusive[i]),
        ])
    return buf.getvalue()


def loop_summary_to_csv(end_errors: Sequence[float]) -> str:
    """Per-loop summary CSV: loop,end_error (loops numbered from 1)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["loop", "end_error"])
    for i, err in enumerate(end_errors, start=1):
        writer.writerow([i, repr(float(err))])
    return buf.getvalue()
