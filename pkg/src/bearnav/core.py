"""Shared value types and conventions for the navigation stack.

Conventions, binding for every module in this package:

- distances and positions in meters, world frame, x/y planar
- headings and angular quantities in radians, counter-clockwise positive,
  wrapped to the half-open interval (-pi, pi]
- image coordinates in pixels
- travelled distance ``d`` is the nonnegative accumulated path length of
  one traversal (a plain ``float`` everywhere)

All types here are immutable value objects and safe to share between
threads.
"""

from __future__ import annotations

import csv
import io
import math
from bisect import bisect_right
from dataclasses import dataclass, field

__all__ = [
    "Pose",
    "Velocity",
    "PathProfile",
    "NavigatorConfig",
    "wrap_angle",
    "profile_velocity_at",
    "profile_to_csv",
    "profile_from_csv",
]

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi].

    Raises ValueError for non-finite input. Idempotent:
    ``wrap_angle(wrap_angle(t)) == wrap_angle(t)``.
    """
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    # (pi - theta) % 2pi lies in [0, 2pi), so the result lies in (-pi, pi].
    return math.pi - (math.pi - theta) % TWO_PI


@dataclass(frozen=True, slots=True)
class Pose:
    """Planar robot pose in the world frame.

    ``theta`` is normalised to (-pi, pi] on construction.
    """

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def position_distance(self, other: "Pose") -> float:
        """Euclidean distance between the two positions (heading ignored)."""
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True, slots=True)
class Velocity:
    """Forward speed ``v`` (m/s) and angular rate ``omega`` (rad/s).

    Reversing is not supported: ``v`` must be >= 0 (zero only while the
    robot is stopped).
    """

    v: float
    omega: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.v) and math.isfinite(self.omega)):
            raise ValueError("velocity components must be finite")
        if self.v < 0.0:
            raise ValueError(f"forward velocity must be >= 0, got {self.v}")


@dataclass(frozen=True)
class PathProfile:
    """Distance-indexed record of commanded velocities.

    ``entries`` holds ``(d, Velocity)`` pairs, one per commanded-velocity
    change, strictly increasing in ``d`` and starting at ``d == 0``. The
    velocity between entries is a piecewise-constant hold of the last
    entry at or below ``d`` (see :func:`profile_velocity_at`).
    """

    entries: tuple[tuple[float, Velocity], ...]
    total_length: float
    _dists: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("profile needs at least one entry")
        dists = tuple(d for d, _ in self.entries)
        if dists[0] != 0.0:
            raise ValueError(f"first profile entry must be at d=0, got {dists[0]}")
        if any(b <= a for a, b in zip(dists, dists[1:])):
            raise ValueError("profile entries must be strictly increasing in d")
        if self.total_length < dists[-1]:
            raise ValueError(
                f"total_length {self.total_length} < last entry d {dists[-1]}"
            )
        object.__setattr__(self, "_dists", dists)

    @property
    def duration(self) -> float:
        """Time to traverse the profile at the commanded forward speeds."""
        t = 0.0
        for (d0, vel), d1 in zip(self.entries, self._dists[1:] + (self.total_length,)):
            if vel.v > 0.0:
                t += (d1 - d0) / vel.v
        return t


def profile_velocity_at(profile: PathProfile, d: float) -> Velocity:
    """Commanded velocity at travelled distance ``d``.

    Piecewise-constant, left-continuous hold of the last entry whose
    distance is <= ``d``. ``d`` outside [0, total_length] raises a
    ValueError naming the valid interval.
    """
    if not (0.0 <= d <= profile.total_length):
        raise ValueError(
            f"d={d} outside the profile range [0, {profile.total_length}]"
        )
    idx = bisect_right(profile._dists, d) - 1
    return profile.entries[idx][1]


def profile_to_csv(profile: PathProfile) -> str:
    """Serialise a profile as CSV with header ``d,v,omega``.

    When ``total_length`` exceeds the last entry distance, a terminal row
    repeating the last velocity is written at ``total_length`` so the
    length survives the round trip; the held velocity function is
    unchanged.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["d", "v", "omega"])
    for d, vel in profile.entries:
        writer.writerow([repr(d), repr(vel.v), repr(vel.omega)])
    last_d, last_vel = profile.entries[-1]
    if profile.total_length > last_d:
        writer.writerow([repr(profile.total_length), repr(last_vel.v), repr(last_vel.omega)])
    return buf.getvalue()


def profile_from_csv(text: str) -> PathProfile:
    """Parse a profile from the CSV format of :func:`profile_to_csv`."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["d", "v", "omega"]:
        raise ValueError(f"expected header d,v,omega, got {header!r}")
    entries: list[tuple[float, Velocity]] = []
    for row in reader:
        if not row:
            continue
        if len(row) != 3:
            raise ValueError(f"expected 3 columns, got {row!r}")
        d, v, omega = (float(c) for c in row)
        entries.append((d, Velocity(v, omega)))
    if not entries:
        raise ValueError("profile CSV has no entries")
    total = entries[-1][0]
    # Drop a terminal row that only encodes total_length (no velocity change).
    if len(entries) >= 2 and entries[-1][1] == entries[-2][1]:
        entries = entries[:-1]
    return PathProfile(entries=tuple(entries), total_length=total)


@dataclass(frozen=True, slots=True)
class NavigatorConfig:
    """Tunables of the repeating navigator.

    Attributes
    ----------
    alpha:
        Steering gain, rad/s of corrective turn per pixel of voted image
        shift. The correction applied is ``-alpha * kappa``.
    map_spacing:
        Travelled distance between stored local maps, meters.
    histogram_bin_width:
        Width of the displacement-vote bins, pixels. Bins are centred on
        integer multiples of the width so a zero shift votes exactly zero.
    min_matches:
        Minimum vote count in the winning bin for a conclusive result.
    max_angular_rate:
        Saturation for both the visual correction and the final angular
        command, rad/s.
    max_hamming:
        Greatest descriptor Hamming distance accepted as a feature match,
        bits.
    mode:
        ``"combined"`` replays the taught profile and adds the visual
        correction. ``"vision-only"`` drops the taught angular rate and
        steers purely by the vote; it stops when the vote is inconclusive
        (without profile data there is no fallback steering).
    """

    alpha: float = 0.005
    map_spacing: float = 0.2
    histogram_bin_width: int = 4
    min_matches: int = 5
    max_angular_rate: float = 1.0
    max_hamming: int = 64
    mode: str = "combined"

    def __post_init__(self) -> None:
        if self.alpha < 0.0:
            raise ValueError("alpha must be >= 0")
        if self.map_spacing <= 0.0:
            raise ValueError("map_spacing must be > 0")
        if self.histogram_bin_width < 1:
            raise ValueError("histogram_bin_width must be >= 1")
        if self.min_matches < 1:
            raise ValueError("min_matches must be >= 1")
        if self.max_angular_rate <= 0.0:
            raise ValueError("max_angular_rate must be > 0")
        if self.max_hamming < 0:
            raise ValueError("max_hamming must be >= 0")
        if self.mode not in ("combined", "vision-only"):
            raise ValueError(f"unknown navigator mode {self.mode!r}")
