"""Synthetic perception: landmark worlds, projection, matching, voting.

Replaces a physical camera and keypoint pipeline with a statistically
equivalent stand-in: every landmark carries a fixed random binary
descriptor, a pinhole model projects landmarks to horizontal pixel
coordinates, and a corruption model (descriptor bit flips, detection
dropout, pixel noise, clutter) plays the role of appearance and
illumination change. Matching is mutual-nearest-neighbour under Hamming
distance; the voted mode of the per-match horizontal displacements is
the heading-error signal consumed by the navigator.

Image geometry: a landmark at counter-clockwise bearing ``b`` relative
to the heading (``b = 0`` dead ahead) projects to
``u = focal_px * tan(b) + width / 2``, so ``u`` grows with bearing and
rotating the camera by a small ``delta`` shifts every feature by about
``-focal_px * delta``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .core import NavigatorConfig, Pose, wrap_angle

__all__ = [
    "DESCRIPTOR_BITS",
    "Landmark",
    "World",
    "CameraModel",
    "Observation",
    "FrameObservations",
    "MatchSet",
    "HistogramResult",
    "CorruptionModel",
    "hamming_matrix",
    "random_descriptors",
    "project",
    "corrupt",
    "match",
    "histogram_vote",
    "uniform_box_world",
    "corridor_world",
    "rect_room_world",
    "ring_world",
    "world_to_json",
    "world_from_json",
]

DESCRIPTOR_BITS = 256


def random_descriptors(n: int, rng: np.random.Generator,
                       bits: int = DESCRIPTOR_BITS) -> np.ndarray:
    """Uniform random bit-vector descriptors, shape (n, bits/8) uint8."""
    if bits % 8 != 0:
        raise ValueError("descriptor length must be a multiple of 8 bits")
    return rng.integers(0, 256, size=(n, bits // 8), dtype=np.uint8)


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between two descriptor arrays.

    ``a`` is (m, k) uint8, ``b`` is (n, k) uint8; returns (m, n) int32.
    """
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"descriptor lengths differ: {a.shape[1] * 8} vs {b.shape[1] * 8} bits"
        )
    if a.shape[1] % 8 == 0:
        # View bytes as uint64 words: one popcount per 8 bytes.
        aw = a.reshape(a.shape[0], -1).view(np.uint64)
        bw = b.reshape(b.shape[0], -1).view(np.uint64)
        x = aw[:, None, :] ^ bw[None, :, :]
    else:
        x = a[:, None, :] ^ b[None, :, :]
    return np.bitwise_count(x).sum(axis=2, dtype=np.int32)


@dataclass(frozen=True, slots=True)
class Landmark:
    """One world landmark: 3D position plus a fixed binary descriptor."""

    id: int
    position: np.ndarray
    descriptor: np.ndarray


class World:
    """Immutable landmark set stored column-wise for fast projection."""

    def __init__(self, ids: np.ndarray, positions: np.ndarray,
                 descriptors: np.ndarray, seed: int | None = None):
        ids = np.asarray(ids, dtype=np.int64)
        positions = np.asarray(positions, dtype=float)
        descriptors = np.asarray(descriptors, dtype=np.uint8)
        if positions.shape != (len(ids), 3):
            raise ValueError("positions must have shape (n, 3)")
        if descriptors.ndim != 2 or descriptors.shape[0] != len(ids):
            raise ValueError("descriptors must have shape (n, bytes)")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("landmark ids must be unique")
        self.ids = ids
        self.positions = positions
        self.descriptors = descriptors
        self.seed = seed

    def __len__(self) -> int:
        return len(self.ids)

    def landmark(self, index: int) -> Landmark:
        return Landmark(int(self.ids[index]), self.positions[index].copy(),
                        self.descriptors[index].copy())

    @property
    def descriptor_bits(self) -> int:
        return self.descriptors.shape[1] * 8


@dataclass(frozen=True, slots=True)
class CameraModel:
    """Pinhole camera reduced to its horizontal axis.

    Defaults: 45 degree horizontal field of view, 320 pixel wide image.
    ``focal_px`` follows from the two: ``(width / 2) / tan(h_fov / 2)``.
    """

    h_fov: float = math.radians(45.0)
    image_width: int = 320

    def __post_init__(self) -> None:
        if not (0.0 < self.h_fov < math.pi):
            raise ValueError("h_fov must lie in (0, pi)")
        if self.image_width < 2:
            raise ValueError("image_width must be >= 2")

    @property
    def focal_px(self) -> float:
        return (self.image_width / 2.0) / math.tan(self.h_fov / 2.0)


@dataclass(frozen=True, slots=True)
class Observation:
    """A single projected feature: pixel column, descriptor, true source.

    ``landmark_id`` is ground truth for tests and diagnostics only; the
    navigator never reads it (clutter carries -1).
    """

    u: float
    descriptor: np.ndarray
    landmark_id: int


class FrameObservations(Sequence):
    """Observations of one frame, stored column-wise.

    Behaves as a sequence of :class:`Observation`. ``image_width`` is
    carried along so downstream noise models can clamp coordinates.
    """

    def __init__(self, u: np.ndarray, descriptors: np.ndarray,
                 landmark_ids: np.ndarray, image_width: int):
        self.u = np.asarray(u, dtype=float)
        self.descriptors = np.asarray(descriptors, dtype=np.uint8)
        self.landmark_ids = np.asarray(landmark_ids, dtype=np.int64)
        self.image_width = int(image_width)
        n = len(self.u)
        if self.descriptors.shape[0] != n or len(self.landmark_ids) != n:
            raise ValueError("column lengths disagree")
        if n and (self.u.min() < 0.0 or self.u.max() >= self.image_width):
            raise ValueError("u outside image bounds")

    def __len__(self) -> int:
        return len(self.u)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return FrameObservations(self.u[index], self.descriptors[index],
                                     self.landmark_ids[index], self.image_width)
        return Observation(float(self.u[index]), self.descriptors[index],
                           int(self.landmark_ids[index]))

    def __iter__(self) -> Iterator[Observation]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_observations(cls, observations: Sequence[Observation],
                          image_width: int) -> "FrameObservations":
        if not observations:
            bits = DESCRIPTOR_BITS // 8
            return cls(np.empty(0), np.empty((0, bits), np.uint8),
                       np.empty(0, np.int64), image_width)
        return cls(
            np.array([o.u for o in observations]),
            np.stack([o.descriptor for o in observations]),
            np.array([o.landmark_id for o in observations]),
            image_width,
        )

    @classmethod
    def empty(cls, image_width: int, descriptor_bytes: int = DESCRIPTOR_BITS // 8
              ) -> "FrameObservations":
        return cls(np.empty(0), np.empty((0, descriptor_bytes), np.uint8),
                   np.empty(0, np.int64), image_width)


def project(pose: Pose, camera: CameraModel, world: World) -> FrameObservations:
    """Project world landmarks into the camera at ``pose``.

    A landmark is visible when its depth along the heading is positive
    and its bearing magnitude is below half the field of view. Height
    (z) plays no role in this planar model.
    """
    dx = world.positions[:, 0] - pose.x
    dy = world.positions[:, 1] - pose.y
    cos_t = math.cos(pose.theta)
    sin_t = math.sin(pose.theta)
    depth = dx * cos_t + dy * sin_t
    lateral = -dx * sin_t + dy * cos_t
    bearing = np.arctan2(lateral, depth)
    visible = (depth > 0.0) & (np.abs(bearing) < camera.h_fov / 2.0)
    u = camera.focal_px * np.tan(bearing[visible]) + camera.image_width / 2.0
    return FrameObservations(u, world.descriptors[visible],
                             world.ids[visible], camera.image_width)


@dataclass(frozen=True, slots=True)
class CorruptionModel:
    """Observation corruption standing in for appearance change.

    ``bit_flip_prob`` flips each descriptor bit independently;
    ``dropout_prob`` deletes each observation; ``pixel_noise_sigma``
    jitters pixel columns (clamped into the image); ``clutter_rate`` is
    the Poisson mean of spurious observations appended per frame with
    random descriptors and ``landmark_id = -1``.
    """

    bit_flip_prob: float = 0.0
    dropout_prob: float = 0.0
    clutter_rate: float = 0.0
    pixel_noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.bit_flip_prob <= 1.0 and 0.0 <= self.dropout_prob <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.clutter_rate < 0.0 or self.pixel_noise_sigma < 0.0:
            raise ValueError("clutter_rate and pixel_noise_sigma must be >= 0")

    @property
    def is_identity(self) -> bool:
        return (self.bit_flip_prob == 0.0 and self.dropout_prob == 0.0
                and self.clutter_rate == 0.0 and self.pixel_noise_sigma == 0.0)

    def rng(self, stream: int = 0) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, stream]))


def corrupt(observations: FrameObservations, model: CorruptionModel,
            rng: np.random.Generator | None = None) -> FrameObservations:
    """Apply a corruption model to one frame.

    Deterministic for a fixed seed: when ``rng`` is omitted a fresh
    generator is built from ``model.seed``. Draw order is dropout, bit
    flips, pixel noise, clutter.
    """
    if rng is None:
        rng = model.rng()
    if model.is_identity:
        return observations

    width = observations.image_width
    keep = rng.random(len(observations)) >= model.dropout_prob
    u = observations.u[keep]
    desc = observations.descriptors[keep]
    ids = observations.landmark_ids[keep]

    if model.bit_flip_prob > 0.0 and len(u):
        bits = desc.shape[1] * 8
        flips = rng.random((len(u), bits)) < model.bit_flip_prob
        desc = desc ^ np.packbits(flips, axis=1)

    if model.pixel_noise_sigma > 0.0 and len(u):
        u = u + rng.normal(0.0, model.pixel_noise_sigma, size=len(u))
        u = np.clip(u, 0.0, np.nextafter(float(width), 0.0))

    n_clutter = int(rng.poisson(model.clutter_rate))
    if n_clutter:
        bits = desc.shape[1] * 8 if desc.shape[1] else DESCRIPTOR_BITS
        u_cl = rng.uniform(0.0, width, size=n_clutter)
        u_cl = np.minimum(u_cl, np.nextafter(float(width), 0.0))
        desc_cl = random_descriptors(n_clutter, rng, bits=bits)
        u = np.concatenate([u, u_cl])
        desc = np.concatenate([desc, desc_cl]) if desc.shape[1] else desc_cl
        ids = np.concatenate([ids, np.full(n_clutter, -1, dtype=np.int64)])

    return FrameObservations(u, desc, ids, width)


@dataclass(frozen=True)
class MatchSet:
    """One-to-one feature matches between a stored map frame and the
    current frame.

    ``displacements`` are ``u_map - u_current`` per pair, the raw voting
    signal. Index arrays refer back into the two source frames.
    """

    u_map: np.ndarray
    u_current: np.ndarray
    map_indices: np.ndarray
    current_indices: np.ndarray

    def __len__(self) -> int:
        return len(self.u_map)

    @property
    def displacements(self) -> np.ndarray:
        return self.u_map - self.u_current

    @classmethod
    def empty(cls) -> "MatchSet":
        z = np.empty(0)
        zi = np.empty(0, dtype=np.int64)
        return cls(z, z, zi, zi)


def match(map_obs: FrameObservations, current_obs: FrameObservations,
          max_hamming: int = 64) -> MatchSet:
    """Mutual-nearest-neighbour descriptor matching.

    A pair is kept when each side is the strict unique nearest
    neighbour of the other and the distance is within ``max_hamming``
    bits. Ties produce no match, which keeps the result one-to-one,
    deterministic, and symmetric in its arguments.
    """
    if len(map_obs) == 0 or len(current_obs) == 0:
        return MatchSet.empty()
    dist = hamming_matrix(map_obs.descriptors, current_obs.descriptors)

    row_best = dist.argmin(axis=1)
    col_best = dist.argmin(axis=0)
    rows = np.arange(dist.shape[0])
    best = dist[rows, row_best]
    row_unique = (dist == best[:, None]).sum(axis=1) == 1
    mutual = col_best[row_best] == rows
    col_vals = dist[:, row_best].min(axis=0)
    col_unique = (dist[:, row_best] == col_vals[None, :]).sum(axis=0) == 1
    ok = mutual & row_unique & col_unique & (best <= max_hamming)

    mi = rows[ok]
    ci = row_best[ok]
    return MatchSet(map_obs.u[mi], current_obs.u[ci],
                    mi.astype(np.int64), ci.astype(np.int64))


@dataclass(frozen=True)
class HistogramResult:
    """Outcome of displacement voting.

    ``kappa`` is the centre of the winning bin in pixels, or ``None``
    when the vote is inconclusive (winning support below the configured
    minimum). ``bin_centers``/``bin_counts`` expose the full histogram.
    """

    kappa: float | None
    support: int
    bin_centers: np.ndarray
    bin_counts: np.ndarray

    @property
    def conclusive(self) -> bool:
        return self.kappa is not None


def histogram_vote(matches: MatchSet, config: NavigatorConfig,
                   image_width: int = 320) -> HistogramResult:
    """Vote the dominant horizontal displacement of a match set.

    Displacements are binned over [-image_width, +image_width] into bins
    of the configured width centred on integer multiples of that width
    (a zero shift votes exactly zero). The winner is the fullest bin;
    ties resolve toward the centre nearest zero, negative first. A
    winning count below ``config.min_matches`` is inconclusive — by
    design a value, not an error, because it is the navigator's normal
    fallback signal.
    """
    w = config.histogram_bin_width
    k_max = int(math.ceil(image_width / w))
    centers = np.arange(-k_max, k_max + 1) * float(w)
    if len(matches) == 0:
        return HistogramResult(None, 0, centers,
                               np.zeros(2 * k_max + 1, dtype=np.int64))
    k = np.floor(matches.displacements / w + 0.5).astype(np.int64)
    k = np.clip(k, -k_max, k_max)
    counts = np.bincount(k + k_max, minlength=2 * k_max + 1)
    top = counts.max()
    cand = np.flatnonzero(counts == top) - k_max
    winner = cand[np.lexsort((cand, np.abs(cand)))[0]]
    if top < config.min_matches:
        return HistogramResult(None, int(top), centers, counts)
    return HistogramResult(float(winner * w), int(top), centers, counts)


# --- deterministic world generators -------------------------------------

_Z_RANGE = (0.3, 2.0)


def _world_from_xy(xs: np.ndarray, ys: np.ndarray, seed: int,
                   rng: np.random.Generator, bits: int) -> World:
    n = len(xs)
    zs = rng.uniform(*_Z_RANGE, size=n)
    positions = np.column_stack([xs, ys, zs])
    return World(np.arange(n), positions, random_descriptors(n, rng, bits), seed)


def uniform_box_world(n: int, x_range: tuple[float, float],
                      y_range: tuple[float, float], seed: int,
                      bits: int = DESCRIPTOR_BITS) -> World:
    """Landmarks scattered uniformly in an axis-aligned box."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    xs = rng.uniform(*x_range, size=n)
    ys = rng.uniform(*y_range, size=n)
    return _world_from_xy(xs, ys, seed, rng, bits)


def corridor_world(length: float, half_width: float, n_per_wall: int, seed: int,
                   bits: int = DESCRIPTOR_BITS) -> World:
    """Landmarks along the two walls of a corridor running along +x."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 102]))
    xs = rng.uniform(0.0, length, size=2 * n_per_wall)
    ys = np.concatenate([np.full(n_per_wall, half_width),
                         np.full(n_per_wall, -half_width)])
    ys = ys + rng.normal(0.0, 0.02 * half_width, size=2 * n_per_wall)
    return _world_from_xy(xs, ys, seed, rng, bits)


def rect_room_world(x_range: tuple[float, float], y_range: tuple[float, float],
                    n: int, seed: int, bits: int = DESCRIPTOR_BITS) -> World:
    """Landmarks on the four walls of a rectangular room."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 103]))
    x0, x1 = x_range
    y0, y1 = y_range
    wx, wy = x1 - x0, y1 - y0
    perim = 2.0 * (wx + wy)
    s = rng.uniform(0.0, perim, size=n)
    xs = np.empty(n)
    ys = np.empty(n)
    for i, si in enumerate(s):
        if si < wx:
            xs[i], ys[i] = x0 + si, y0
        elif si < wx + wy:
            xs[i], ys[i] = x1, y0 + (si - wx)
        elif si < 2 * wx + wy:
            xs[i], ys[i] = x1 - (si - wx - wy), y1
        else:
            xs[i], ys[i] = x0, y1 - (si - 2 * wx - wy)
    return _world_from_xy(xs, ys, seed, rng, bits)


def ring_world(center: tuple[float, float], radius: float, n: int, seed: int,
               bits: int = DESCRIPTOR_BITS) -> World:
    """Landmarks on a circular wall around ``center``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 104]))
    ang = rng.uniform(0.0, 2.0 * math.pi, size=n)
    xs = center[0] + radius * np.cos(ang)
    ys = center[1] + radius * np.sin(ang)
    return _world_from_xy(xs, ys, seed, rng, bits)


# --- world serialisation -------------------------------------------------

def world_to_json(world: World) -> str:
    """JSON array of landmarks ``{id, x, y, z, descriptor_hex}``."""
    records = [
        {
            "id": int(world.ids[i]),
            "x": float(world.positions[i, 0]),
            "y": float(world.positions[i, 1]),
            "z": float(world.positions[i, 2]),
            "descriptor_hex": bytes(world.descriptors[i]).hex(),
        }
        for i in range(len(world))
    ]
    return json.dumps(records, indent=2, sort_keys=True)


def world_from_json(text: str) -> World:
    records = json.loads(text)
    if not isinstance(records, list):
        raise ValueError("world JSON must be an array of landmarks")
    ids = np.array([r["id"] for r in records], dtype=np.int64)
    positions = np.array([[r["x"], r["y"], r["z"]] for r in records], dtype=float)
    descriptors = np.array(
        [np.frombuffer(bytes.fromhex(r["descriptor_hex"]), dtype=np.uint8)
         for r in records]
    )
    return World(ids, positions, descriptors)
