"""The navigation method: teaching a route, then repeating it.

Teaching drives a scripted plan through the simulated world, recording a
path profile (velocity changes indexed by travelled distance) and a
local feature map every ``map_spacing`` meters. Repeating replays the
profile by odometry distance alone and corrects only the heading: the
current camera frame is matched against the single local map at or
below the odometry estimate, the displacement vote ``kappa`` is turned
into a corrective term ``-alpha * kappa`` on the commanded angular rate,
and an inconclusive vote simply leaves the profile command untouched.

Two contracts hold throughout: vision never alters the forward velocity
command, and the travelled-distance estimate depends only on odometry
increments, never on vision.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import NavigatorConfig, PathProfile, Pose, Velocity, profile_velocity_at
from .fileio import atomic_write_bytes
from .vision import (
    CameraModel,
    CorruptionModel,
    FrameObservations,
    HistogramResult,
    World,
    corrupt,
    histogram_vote,
    match,
    project,
)

__all__ = [
    "DrivePlan",
    "straight_plan",
    "oval_plan",
    "lemniscate_plan",
    "circle_plan",
    "rounded_rect_plan",
    "LocalMap",
    "TaughtRoute",
    "NavigatorState",
    "TeachingError",
    "RouteFormatError",
    "RouteVersionError",
    "RouteChecksumError",
    "teach",
    "repeat_step",
    "measure_loop_error",
    "save_route",
    "load_route",
    "route_to_json",
    "route_from_json",
]


class TeachingError(ValueError):
    """The drive plan cannot be taught (e.g. non-positive forward speed)."""


# --- drive plans ---------------------------------------------------------

@dataclass(frozen=True)
class DrivePlan:
    """Scripted operator input: constant-velocity segments in sequence.

    Each segment is ``(length_m, v, omega)``. The plan stands in for the
    human driver of the teaching phase and doubles as exact reference
    geometry: :meth:`pose_at` advances along circular arcs in closed
    form.
    """

    segments: tuple[tuple[float, float, float], ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("plan needs at least one segment")
        if any(length <= 0.0 for length, _, _ in self.segments):
            raise ValueError("segment lengths must be > 0")

    @property
    def total_length(self) -> float:
        return sum(length for length, _, _ in self.segments)

    def velocity_at(self, d: float) -> Velocity:
        """Commanded velocity at travelled distance ``d`` (left-continuous hold)."""
        if not (0.0 <= d <= self.total_length + 1e-9):
            raise ValueError(f"d={d} outside plan range [0, {self.total_length}]")
        acc = 0.0
        for length, v, omega in self.segments:
            acc += length
            if d < acc:
                return Velocity(v, omega)
        return Velocity(*self.segments[-1][1:])

    def pose_at(self, d: float, start: Pose = Pose(0.0, 0.0, 0.0)) -> Pose:
        """Exact pose after driving ``d`` meters of the plan from ``start``."""
        if not (0.0 <= d <= self.total_length + 1e-9):
            raise ValueError(f"d={d} outside plan range [0, {self.total_length}]")
        pose = start
        remaining = d
        for length, v, omega in self.segments:
            step = min(length, remaining)
            if step > 0.0:
                pose = _advance_arc(pose, v, omega, step)
            remaining -= step
            if remaining <= 0.0:
                break
        return pose

    def profile(self) -> PathProfile:
        """Path profile with one entry per commanded-velocity change."""
        entries: list[tuple[float, Velocity]] = []
        acc = 0.0
        for length, v, omega in self.segments:
            vel = Velocity(v, omega)
            if not entries or entries[-1][1] != vel:
                entries.append((acc, vel))
            acc += length
        return PathProfile(tuple(entries), total_length=acc)


def _advance_arc(pose: Pose, v: float, omega: float, dist: float) -> Pose:
    """Advance ``dist`` meters along a constant (v, omega) arc, exactly."""
    if v <= 0.0:
        raise ValueError("arc advance requires v > 0")
    dtheta = omega / v * dist
    if abs(dtheta) < 1e-12:
        return Pose(pose.x + dist * math.cos(pose.theta),
                    pose.y + dist * math.sin(pose.theta), pose.theta)
    radius = dist / dtheta
    return Pose(
        pose.x + radius * (math.sin(pose.theta + dtheta) - math.sin(pose.theta)),
        pose.y - radius * (math.cos(pose.theta + dtheta) - math.cos(pose.theta)),
        pose.theta + dtheta,
    )


def straight_plan(length: float, v: float = 0.5) -> DrivePlan:
    return DrivePlan(((length, v, 0.0),))


def circle_plan(length: float = 10.0, v: float = 0.5) -> DrivePlan:
    """Closed circle of the given circumference, turning left."""
    radius = length / (2.0 * math.pi)
    return DrivePlan(((length, v, v / radius),))


def oval_plan(length: float = 10.0, v: float = 0.5, radius: float = 1.0,
              end_gap: float = 0.0) -> DrivePlan:
    """Closed oval: two left half-circles joined by two straights.

    Starts at the entry of the first half-circle, heading +x, and ends
    with a straight leading back to the start. ``end_gap`` shortens the
    final straight so start and end sit ``end_gap`` meters apart.
    """
    arc = math.pi * radius
    straight = (length - 2.0 * arc) / 2.0
    if straight <= 0.0:
        raise ValueError("length too short for the chosen radius")
    if not (0.0 <= end_gap < straight):
        raise ValueError("end_gap must lie in [0, straight length)")
    omega = v / radius
    return DrivePlan((
        (arc, v, omega),
        (straight, v, 0.0),
        (arc, v, omega),
        (straight - end_gap, v, 0.0),
    ))


def lemniscate_plan(length: float = 17.0, v: float = 0.5,
                    radius: float = 1.0) -> DrivePlan:
    """Closed figure-eight: four half-circles joined by three straights.

    One lobe turns right, the other left; the middle straight crosses
    the start point, so the taught trajectory self-intersects there.
    """
    arcs = 4.0 * math.pi * radius
    straight = (length - arcs) / 4.0
    if straight <= 0.0:
        raise ValueError("length too short for the chosen radius")
    omega = v / radius
    arc = math.pi * radius
    return DrivePlan((
        (arc, v, -omega),
        (straight, v, 0.0),
        (arc, v, -omega),
        (2.0 * straight, v, 0.0),
        (arc, v, omega),
        (straight, v, 0.0),
        (arc, v, omega),
    ))


def rounded_rect_plan(width: float, height: float,
                      radii: tuple[float, float, float, float],
                      v: float = 0.5) -> DrivePlan:
    """Closed rounded rectangle traversed counter-clockwise.

    ``radii`` are the corner radii in traversal order starting from the
    corner after the bottom side. Mixing one small radius in produces a
    route with a single sharp turn.
    """
    r0, r1, r2, r3 = radii
    sides = (width - r3 - r0, height - r0 - r1, width - r1 - r2, height - r2 - r3)
    if min(sides) <= 0.0:
        raise ValueError("corner radii too large for the rectangle")
    segments: list[tuple[float, float, float]] = []
    for side, r in zip(sides, (r0, r1, r2, r3)):
        segments.append((side, v, 0.0))
        segments.append((math.pi * r / 2.0, v, v / r))
    return DrivePlan(tuple(segments))


# --- taught routes -------------------------------------------------------

@dataclass(frozen=True)
class LocalMap:
    """Feature observations captured at one travelled-distance mark."""

    d: float
    observations: FrameObservations


@dataclass(frozen=True)
class TaughtRoute:
    """Everything recorded while teaching one route."""

    profile: PathProfile
    maps: tuple[LocalMap, ...]
    camera: CameraModel
    config: NavigatorConfig
    start_pose: Pose
    metadata: dict
    _map_dists: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.maps:
            raise ValueError("route needs at least one local map")
        object.__setattr__(self, "_map_dists", tuple(m.d for m in self.maps))

    @property
    def total_length(self) -> float:
        return self.profile.total_length

    def map_index_at(self, d: float) -> int:
        """Index of the local map nearest to travelled distance ``d``.

        Ties resolve to the lower index. Nearest (rather than
        at-or-below) selection keeps the reference view centred on the
        robot's position: with an at-or-below rule the heading servo
        pins the robot half a map spacing behind its own odometry on
        curved sections, which translates into a systematic
        stop-short loop error of that size.
        """
        idx = bisect_right(self._map_dists, d)
        if idx == 0:
            return 0
        if idx == len(self._map_dists):
            return idx - 1
        below = self._map_dists[idx - 1]
        above = self._map_dists[idx]
        return idx - 1 if d - below <= above - d else idx


def teach(
    drive_plan: DrivePlan,
    world: World,
    camera: CameraModel,
    config: NavigatorConfig,
    start_pose: Pose = Pose(0.0, 0.0, 0.0),
    corruption: CorruptionModel | None = None,
    metadata: dict | None = None,
) -> TaughtRoute:
    """Teach a route by driving the plan through the world.

    Local maps are captured at exact ``map_spacing`` marks (endpoint
    included), idealising the operator drive; pass ``corruption`` to
    model imperfect mapping-day conditions. Raises
    :class:`TeachingError` if the plan commands a non-positive forward
    speed anywhere.
    """
    acc = 0.0
    for length, v, _ in drive_plan.segments:
        if v <= 0.0:
            raise TeachingError(
                f"drive plan commands v={v} <= 0 at distance {acc:.3f} m"
            )
        acc += length

    profile = drive_plan.profile()
    total = profile.total_length
    n_marks = int(math.floor(total / config.map_spacing + 1e-9)) + 1
    rng = corruption.rng(0) if corruption is not None else None

    maps = []
    for i in range(n_marks):
        d = min(i * config.map_spacing, total)
        obs = project(drive_plan.pose_at(d, start_pose), camera, world)
        if corruption is not None:
            obs = corrupt(obs, corruption, rng)
        maps.append(LocalMap(d, obs))

    meta = dict(metadata or {})
    meta.setdefault("world_seed", world.seed)
    return TaughtRoute(profile, tuple(maps), camera, config, start_pose, meta)


# --- the repeating navigator ---------------------------------------------

@dataclass(frozen=True)
class NavigatorState:
    """Value-threaded state of one repeat traversal."""

    d_est: float = 0.0
    map_index: int = 0
    last_vote: HistogramResult | None = None
    finished: bool = False


def repeat_step(
    state: NavigatorState,
    route: TaughtRoute,
    current_obs: FrameObservations,
    delta_d: float,
    config: NavigatorConfig,
) -> tuple[Velocity, NavigatorState]:
    """One control step of the repeat phase.

    Advances the odometry estimate by ``delta_d``, looks up the profile
    velocity and the active local map, matches and votes, and returns
    the velocity command plus the successor state. The visual correction
    and the final angular command are both clamped to
    ``max_angular_rate``; the forward command is always the profile
    value. Reaching the end of the profile returns a stop command with
    ``finished`` set.
    """
    if state.finished:
        raise ValueError("navigator already finished")
    if delta_d < 0.0:
        raise ValueError("odometry increment must be >= 0")

    d = state.d_est + delta_d
    if d >= route.total_length:
        return Velocity(0.0, 0.0), replace(state, d_est=d, finished=True)

    profile_cmd = profile_velocity_at(route.profile, d)
    idx = route.map_index_at(d)
    matches = match(route.maps[idx].observations, current_obs, config.max_hamming)
    vote = histogram_vote(matches, config, image_width=route.camera.image_width)

    limit = config.max_angular_rate
    if config.mode == "vision-only":
        if vote.conclusive:
            cmd = Velocity(profile_cmd.v,
                           _clip(-config.alpha * vote.kappa, limit))
        else:
            # No profile fallback in this mode: hold position.
            cmd = Velocity(0.0, 0.0)
    else:
        correction = _clip(-config.alpha * vote.kappa, limit) if vote.conclusive else 0.0
        cmd = Velocity(profile_cmd.v, _clip(profile_cmd.omega + correction, limit))

    return cmd, NavigatorState(d_est=d, map_index=idx, last_vote=vote, finished=False)


def _clip(value: float, limit: float) -> float:
    return max(-limit, min(limit, value))


def measure_loop_error(ground_truth_pose: Pose, route: TaughtRoute) -> float:
    """Euclidean distance from the pose to the route's start pose."""
    return ground_truth_pose.position_distance(route.start_pose)


# --- route files ---------------------------------------------------------
#
# Versioned binary container (little-endian):
#   magic "BNRT", version u32, then sections.
#   Section: tag (4 ascii bytes), payload length u64, payload, crc32 u32.
#   META: JSON (camera, config, start pose, free-form metadata).
#   PROF: entry count u32, entries (d, v, omega) f64 each, total_length f64.
#   MAPS: descriptor bytes u16, map count u32, per map d f64 + count u32 +
#         u f64[n] + landmark ids i64[n] + descriptors n*B bytes.

ROUTE_MAGIC = b"BNRT"
ROUTE_VERSION = 1


class RouteFormatError(ValueError):
    """Not a route file, or structurally truncated/invalid."""


class RouteVersionError(RouteFormatError):
    """Route file written by an incompatible format version."""


class RouteChecksumError(RouteFormatError):
    """A section's payload failed its checksum."""


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload + struct.pack(
        "<I", zlib.crc32(payload))


def _route_meta(route: TaughtRoute) -> dict:
    return {
        "camera": {"h_fov": route.camera.h_fov,
                   "image_width": route.camera.image_width},
        "config": {
            "alpha": route.config.alpha,
            "map_spacing": route.config.map_spacing,
            "histogram_bin_width": route.config.histogram_bin_width,
            "min_matches": route.config.min_matches,
            "max_angular_rate": route.config.max_angular_rate,
            "max_hamming": route.config.max_hamming,
            "mode": route.config.mode,
        },
        "start_pose": [route.start_pose.x, route.start_pose.y,
                       route.start_pose.theta],
        "metadata": route.metadata,
    }


def _meta_to_parts(meta: dict) -> tuple[CameraModel, NavigatorConfig, Pose, dict]:
    camera = CameraModel(**meta["camera"])
    config = NavigatorConfig(**meta["config"])
    start = Pose(*meta["start_pose"])
    return camera, config, start, meta.get("metadata", {})


def save_route(route: TaughtRoute, path: str | Path) -> None:
    """Write a route file; the round trip through :func:`load_route` is exact."""
    meta_payload = json.dumps(_route_meta(route), sort_keys=True).encode("utf-8")

    prof = bytearray(struct.pack("<I", len(route.profile.entries)))
    for d, vel in route.profile.entries:
        prof += struct.pack("<3d", d, vel.v, vel.omega)
    prof += struct.pack("<d", route.profile.total_length)

    desc_bytes = route.maps[0].observations.descriptors.shape[1]
    maps = bytearray(struct.pack("<HI", desc_bytes, len(route.maps)))
    for lm in route.maps:
        obs = lm.observations
        maps += struct.pack("<dI", lm.d, len(obs))
        maps += obs.u.astype("<f8").tobytes()
        maps += obs.landmark_ids.astype("<i8").tobytes()
        maps += obs.descriptors.tobytes()

    blob = (ROUTE_MAGIC + struct.pack("<I", ROUTE_VERSION)
            + _section(b"META", meta_payload)
            + _section(b"PROF", bytes(prof))
            + _section(b"MAPS", bytes(maps)))
    atomic_write_bytes(path, blob)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise RouteFormatError(f"truncated route file while reading {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.data)


def load_route(path: str | Path) -> TaughtRoute:
    """Load a route file written by :func:`save_route`.

    Raises :class:`RouteFormatError` for non-route or truncated files,
    :class:`RouteVersionError` for unknown versions, and
    :class:`RouteChecksumError` (naming the section) for corrupted
    payloads.
    """
    data = Path(path).read_bytes()
    if len(data) == 0:
        raise RouteFormatError("empty file is not a route")
    reader = _Reader(data)
    if reader.take(4, "magic") != ROUTE_MAGIC:
        raise RouteFormatError("bad magic: not a route file")
    (version,) = reader.unpack("<I", "version")
    if version != ROUTE_VERSION:
        raise RouteVersionError(
            f"route file version {version}, expected {ROUTE_VERSION}")

    sections: dict[bytes, bytes] = {}
    while not reader.exhausted:
        tag = reader.take(4, "section tag")
        (length,) = reader.unpack("<Q", f"{tag!r} length")
        payload = reader.take(length, f"{tag.decode('ascii', 'replace')} payload")
        (crc,) = reader.unpack("<I", f"{tag!r} checksum")
        if zlib.crc32(payload) != crc:
            raise RouteChecksumError(
                f"checksum mismatch in {tag.decode('ascii', 'replace')} section")
        sections[tag] = payload

    for required in (b"META", b"PROF", b"MAPS"):
        if required not in sections:
            raise RouteFormatError(f"missing {required.decode()} section")

    camera, config, start, metadata = _meta_to_parts(
        json.loads(sections[b"META"].decode("utf-8")))

    prof = _Reader(sections[b"PROF"])
    (n_entries,) = prof.unpack("<I", "profile entry count")
    entries = []
    for _ in range(n_entries):
        d, v, omega = prof.unpack("<3d", "profile entry")
        entries.append((d, Velocity(v, omega)))
    (total_length,) = prof.unpack("<d", "profile total length")
    profile = PathProfile(tuple(entries), total_length)

    mr = _Reader(sections[b"MAPS"])
    desc_bytes, n_maps = mr.unpack("<HI", "maps header")
    maps = []
    for _ in range(n_maps):
        d, n_obs = mr.unpack("<dI", "map header")
        u = np.frombuffer(mr.take(8 * n_obs, "map u"), dtype="<f8")
        ids = np.frombuffer(mr.take(8 * n_obs, "map ids"), dtype="<i8")
        desc = np.frombuffer(mr.take(desc_bytes * n_obs, "map descriptors"),
                             dtype=np.uint8).reshape(n_obs, desc_bytes)
        maps.append(LocalMap(d, FrameObservations(u, desc, ids,
                                                  camera.image_width)))

    return TaughtRoute(profile, tuple(maps), camera, config, start, metadata)


def route_to_json(route: TaughtRoute) -> str:
    """Human-inspectable JSON mirror of a route file."""
    doc = _route_meta(route)
    doc["profile"] = {
        "total_length": route.profile.total_length,
        "entries": [[d, vel.v, vel.omega] for d, vel in route.profile.entries],
    }
    doc["maps"] = [
        {
            "d": lm.d,
            "observations": [
                {"u": float(u), "landmark_id": int(lid),
                 "descriptor_hex": bytes(desc).hex()}
                for u, lid, desc in zip(lm.observations.u,
                                        lm.observations.landmark_ids,
                                        lm.observations.descriptors)
            ],
        }
        for lm in route.maps
    ]
    return json.dumps(doc, indent=2, sort_keys=True)


def route_from_json(text: str) -> TaughtRoute:
    doc = json.loads(text)
    camera, config, start, metadata = _meta_to_parts(doc)
    entries = tuple((d, Velocity(v, omega)) for d, v, omega in doc["profile"]["entries"])
    profile = PathProfile(entries, doc["profile"]["total_length"])
    maps = []
    for m in doc["maps"]:
        obs = m["observations"]
        u = np.array([o["u"] for o in obs])
        ids = np.array([o["landmark_id"] for o in obs], dtype=np.int64)
        if obs:
            desc = np.array([np.frombuffer(bytes.fromhex(o["descriptor_hex"]),
                                           dtype=np.uint8) for o in obs])
        else:
            desc = np.empty((0, 32), dtype=np.uint8)
        maps.append(LocalMap(m["d"], FrameObservations(u, desc, ids,
                                                       camera.image_width)))
    return TaughtRoute(profile, tuple(maps), camera, config, start, metadata)
