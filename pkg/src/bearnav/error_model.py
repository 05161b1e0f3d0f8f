"""Continuous-time model of the repeat-phase position error.

The position error ``e = (x, y)`` of the robot, expressed in the local
frame of the taught-path point currently in use, obeys the linear
time-varying system

    de/dt = A(t) e + s(t),      A = [[0,      omega],
                                     [-omega, -v/l ]]

where ``v`` and ``omega`` are the commanded velocities, ``l`` is the
distance at which the robot's heading ray meets the taught-path tangent
(set by the depth of the visual features used for heading correction),
and ``s`` collects disturbance velocities. The off-diagonal terms come
from the rotation of the local frame; the ``-v/l`` term is the lateral
pull of the heading correction.

This module provides the closed-form eigenvalue analysis of ``A``, a
fixed-step RK4 integrator for the forced system, per-segment transition
matrices (straight segments decay laterally only; any segment with
rotation contracts both components), their composition across a route,
and the fixed point of a stable composed loop.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ErrorState",
    "SystemMatrix",
    "EigenPair",
    "Perturbation",
    "SegmentTransition",
    "DivergenceError",
    "UnstableLoopError",
    "system_matrix",
    "eigenvalues",
    "integrate_error",
    "straight_segment_transition",
    "curved_segment_transition",
    "compose_transitions",
    "steady_loop_error",
    "spectral_radius_2x2",
    "stability_sweep",
    "trajectory_to_csv",
    "sweep_to_csv",
]

Controls = Callable[[float], tuple[float, float]]

DEFAULT_DT = 1e-3


class DivergenceError(RuntimeError):
    """Integration produced a non-finite state."""

    def __init__(self, t: float):
        super().__init__(f"error state became non-finite at t={t:.6g} s")
        self.t = t


class UnstableLoopError(ValueError):
    """The composed loop transition has no attracting fixed point."""


@dataclass(frozen=True, slots=True)
class ErrorState:
    """Longitudinal (x) and lateral (y) position error, meters."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("error components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    @property
    def norm(self) -> float:
        return math.hypot(self.x, self.y)


@dataclass(frozen=True, slots=True)
class SystemMatrix:
    """The 2x2 error-dynamics matrix, entries in 1/s."""

    a11: float
    a12: float
    a21: float
    a22: float

    def as_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]], dtype=float)


@dataclass(frozen=True, slots=True)
class EigenPair:
    """Eigenvalues of the error-dynamics matrix, 1/s.

    ``lambda1`` takes the ``+sqrt`` branch of the quadratic, ``lambda2``
    the ``-sqrt`` branch; for ``omega == 0`` this makes ``lambda1 == 0``
    exact.
    """

    lambda1: complex
    lambda2: complex

    @property
    def max_real(self) -> float:
        return max(self.lambda1.real, self.lambda2.real)


def _require_positive(v: float, l: float) -> None:
    if v <= 0.0:
        raise ValueError(f"model requires v > 0, got v={v}")
    if l <= 0.0:
        raise ValueError(f"model requires l > 0, got l={l}")


def system_matrix(v: float, omega: float, l: float) -> SystemMatrix:
    """Error-dynamics matrix for constant ``v``, ``omega`` and feature distance ``l``."""
    _require_positive(v, l)
    return SystemMatrix(0.0, omega, -omega, -v / l)


def eigenvalues(v: float, omega: float, l: float) -> EigenPair:
    """Closed-form eigenvalues of :func:`system_matrix`.

    Roots of ``lam * (lam + v/l) + omega**2 = 0``: a complex-conjugate
    pair with real part ``-v/(2l)`` when ``(v/l)**2 < 4 omega**2``, two
    real roots otherwise. Both real parts are negative whenever
    ``omega != 0``; for ``omega == 0`` the pair is exactly
    ``(0, -v/l)``.
    """
    _require_positive(v, l)
    rate = v / l
    disc = rate * rate - 4.0 * omega * omega
    if disc >= 0.0:
        # lambda2 has no cancellation; recover lambda1 from the product of
        # roots (= omega^2) instead of the cancelling +sqrt form. Exact
        # zero for omega == 0.
        lam2 = (-rate - math.sqrt(disc)) / 2.0
        lam1 = (omega * omega) / lam2
        return EigenPair(complex(lam1), complex(lam2))
    root = math.sqrt(-disc)
    return EigenPair(complex(-rate / 2.0, root / 2.0), complex(-rate / 2.0, -root / 2.0))


@dataclass
class Perturbation:
    """Disturbance velocities ``s = (s_x, s_y)`` forcing the error dynamics.

    Three ingredients may be combined: a constant bias, zero-mean
    Gaussian noise (held constant within each integration step and drawn
    from this object's own seeded generator), and a smooth callback of
    time. ``s_max`` declares the bound used by noise clipping; callers
    may rely on ``|s| <= bias + s_max + callback bound``.
    """

    bias: tuple[float, float] = (0.0, 0.0)
    noise_sigma: tuple[float, float] = (0.0, 0.0)
    callback: Callable[[float], tuple[float, float]] | None = None
    seed: int = 0
    s_max: float = math.inf
    _rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if min(self.noise_sigma) < 0.0:
            raise ValueError("noise sigma must be >= 0")
        self._rng = np.random.default_rng(self.seed)

    @classmethod
    def zero(cls) -> "Perturbation":
        return cls()

    @classmethod
    def constant(cls, s_x: float, s_y: float) -> "Perturbation":
        return cls(bias=(s_x, s_y))

    @classmethod
    def white(cls, sigma_x: float, sigma_y: float, seed: int = 0,
              s_max: float = math.inf) -> "Perturbation":
        return cls(noise_sigma=(sigma_x, sigma_y), seed=seed, s_max=s_max)

    @classmethod
    def of_time(cls, fn: Callable[[float], tuple[float, float]],
                s_max: float = math.inf) -> "Perturbation":
        return cls(callback=fn, s_max=s_max)

    @property
    def is_zero(self) -> bool:
        return (self.bias == (0.0, 0.0) and self.noise_sigma == (0.0, 0.0)
                and self.callback is None)

    def smooth_at(self, t: float) -> np.ndarray:
        """Bias plus callback value at time ``t`` (noise excluded)."""
        s = np.array(self.bias, dtype=float)
        if self.callback is not None:
            s += np.asarray(self.callback(t), dtype=float)
        return s

    def draw_noise(self) -> np.ndarray:
        """One per-step noise sample, clipped to ``s_max``."""
        if self.noise_sigma == (0.0, 0.0):
            return np.zeros(2)
        sample = self._rng.normal(0.0, self.noise_sigma)
        return np.clip(sample, -self.s_max, self.s_max)


def integrate_error(
    x0: ErrorState,
    controls: Controls,
    l: float,
    s: Perturbation | None = None,
    t_end: float = 1.0,
    dt: float = DEFAULT_DT,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate ``de/dt = A(t) e + s(t)`` with fixed-step RK4.

    ``controls`` maps time to ``(v, omega)``. Returns ``(t, e)`` where
    ``t`` has shape (n,) including 0 and ``t_end``, and ``e`` has shape
    (n, 2). The last step is shortened to land exactly on ``t_end``.
    Noise perturbations are sampled once per step and held constant;
    bias and callback terms are evaluated at the RK4 stage times.

    Raises :class:`DivergenceError` if the state leaves the finite range.
    """
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    if t_end < 0.0:
        raise ValueError("t_end must be >= 0")
    if l <= 0.0:
        raise ValueError(f"model requires l > 0, got l={l}")
    if s is None:
        s = Perturbation.zero()

    n_steps = max(int(math.ceil(t_end / dt - 1e-12)), 0)
    times = [0.0]
    states = [np.array([x0.x, x0.y], dtype=float)]
    e = states[0]

    def deriv(ti: float, ei: np.ndarray, noise: np.ndarray) -> np.ndarray:
        v, omega = controls(ti)
        sx, sy = s.smooth_at(ti) + noise
        return np.array([omega * ei[1] + sx, -omega * ei[0] - (v / l) * ei[1] + sy])

    for i in range(n_steps):
        t = i * dt
        t_next = t_end if i == n_steps - 1 else (i + 1) * dt
        h = t_next - t
        noise = s.draw_noise()
        k1 = deriv(t, e, noise)
        k2 = deriv(t + h / 2.0, e + (h / 2.0) * k1, noise)
        k3 = deriv(t + h / 2.0, e + (h / 2.0) * k2, noise)
        k4 = deriv(t + h, e + h * k3, noise)
        e = e + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(e)):
            raise DivergenceError(t_next)
        times.append(t_next)
        states.append(e)

    return np.array(times), np.array(states)


@dataclass(frozen=True)
class SegmentTransition:
    """Affine map of the error across one path segment: ``e1 = N e0 + b``.

    ``N`` is dimensionless (2x2), ``b`` the accumulated disturbance
    offset in meters. A straight segment has spectral radius exactly 1
    (the longitudinal error is untouched); any segment containing
    rotation has spectral radius < 1.
    """

    N: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        N = np.asarray(self.N, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if N.shape != (2, 2) or b.shape != (2,):
            raise ValueError("transition needs a 2x2 matrix and a 2-vector")
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "b", b)

    @property
    def spectral_radius(self) -> float:
        return spectral_radius_2x2(self.N)

    def apply(self, e: np.ndarray) -> np.ndarray:
        return self.N @ np.asarray(e, dtype=float) + self.b

    @classmethod
    def identity(cls) -> "SegmentTransition":
        return cls(np.eye(2), np.zeros(2))


def spectral_radius_2x2(m: np.ndarray) -> float:
    """Largest eigenvalue magnitude of a real 2x2 matrix, closed form."""
    m = np.asarray(m, dtype=float)
    if m[0, 1] == 0.0 or m[1, 0] == 0.0:
        # Triangular: eigenvalues are the diagonal, exactly. Keeps the
        # straight-segment spectral radius at 1 with no rounding.
        return max(abs(m[0, 0]), abs(m[1, 1]))
    tr = m[0, 0] + m[1, 1]
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    disc = tr * tr / 4.0 - det
    if disc >= 0.0:
        root = math.sqrt(disc)
        return max(abs(tr / 2.0 + root), abs(tr / 2.0 - root))
    # Complex pair: |lambda|^2 = det (det > tr^2/4 >= 0 here).
    return math.sqrt(det)


def straight_segment_transition(
    v: float,
    l: float,
    duration: float,
    s: Perturbation | None = None,
    dt: float = DEFAULT_DT,
) -> SegmentTransition:
    """Transition across a straight segment (``omega == 0``).

    ``N = [[1, 0], [0, exp(-(v/l) duration)]]`` in closed form; the
    offset ``b`` is zero for ``s = 0`` and otherwise obtained by
    integrating the forced system from zero initial error.
    """
    _require_positive(v, l)
    if duration < 0.0:
        raise ValueError(f"duration must be >= 0, got {duration}")
    N = np.array([[1.0, 0.0], [0.0, math.exp(-(v / l) * duration)]])
    if s is None or s.is_zero:
        b = np.zeros(2)
    else:
        _, traj = integrate_error(ErrorState(0.0, 0.0), lambda t: (v, 0.0),
                                  l, s, duration, dt)
        b = traj[-1]
    return SegmentTransition(N, b)


def _segment_omega_all_zero(controls: Controls, duration: float, dt: float) -> bool:
    n = max(int(math.ceil(duration / dt)), 1)
    for i in range(n + 1):
        if controls(min(i * dt, duration))[1] != 0.0:
            return False
    return True


def curved_segment_transition(
    controls: Controls,
    duration: float,
    l: float,
    dt: float = DEFAULT_DT,
    s: Perturbation | None = None,
) -> SegmentTransition:
    """Transition across a segment containing non-zero rotation.

    ``N`` is the state-transition matrix of the homogeneous system,
    integrated columnwise; its spectral radius is strictly below 1.
    A segment whose ``omega`` vanishes throughout is rejected (use
    :func:`straight_segment_transition`), so the contraction promise of
    the returned value stays honest.
    """
    if l <= 0.0:
        raise ValueError(f"model requires l > 0, got l={l}")
    if duration <= 0.0:
        raise ValueError(f"duration must be > 0, got {duration}")
    if _segment_omega_all_zero(controls, duration, dt):
        raise ValueError(
            "segment has omega == 0 throughout; use straight_segment_transition"
        )
    cols = []
    for e0 in (ErrorState(1.0, 0.0), ErrorState(0.0, 1.0)):
        _, traj = integrate_error(e0, controls, l, None, duration, dt)
        cols.append(traj[-1])
    N = np.column_stack(cols)
    if s is None or s.is_zero:
        b = np.zeros(2)
    else:
        _, traj = integrate_error(ErrorState(0.0, 0.0), controls, l, s, duration, dt)
        b = traj[-1]
    return SegmentTransition(N, b)


def compose_transitions(segments: Sequence[SegmentTransition]) -> SegmentTransition:
    """Compose transitions in traversal order.

    For segments applied first-to-last, the result is
    ``N = N_k ... N_1 N_0`` with offset folded as ``b <- N_i b + b_i``.
    """
    if not segments:
        raise ValueError("need at least one segment transition")
    N = np.eye(2)
    b = np.zeros(2)
    for seg in segments:
        N = seg.N @ N
        b = seg.N @ b + seg.b
    return SegmentTransition(N, b)


def steady_loop_error(loop_transition: SegmentTransition) -> ErrorState:
    """Fixed point ``e* = N e* + b`` of a contracting loop transition.

    Raises :class:`UnstableLoopError` when the spectral radius is >= 1.
    """
    rho = loop_transition.spectral_radius
    if rho >= 1.0:
        raise UnstableLoopError(
            f"spectral radius {rho:.6g} >= 1: loop error has no fixed point"
        )
    e = np.linalg.solve(np.eye(2) - loop_transition.N, loop_transition.b)
    return ErrorState(float(e[0]), float(e[1]))


def stability_sweep(
    v_values: Iterable[float],
    omega_values: Iterable[float],
    l_values: Iterable[float],
) -> list[tuple[float, float, float, float, float]]:
    """Eigenvalue real parts over a parameter grid.

    Returns rows ``(v, omega, l, re_lambda1, re_lambda2)`` in grid order
    (v outermost, l innermost).
    """
    rows = []
    for v in v_values:
        for omega in omega_values:
            for l in l_values:
                pair = eigenvalues(v, omega, l)
                rows.append((v, omega, l, pair.lambda1.real, pair.lambda2.real))
    return rows


def trajectory_to_csv(t: np.ndarray, e: np.ndarray) -> str:
    """CSV export of an integrated trajectory, header ``t,x,y``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "x", "y"])
    for ti, (xi, yi) in zip(t, e):
        writer.writerow([repr(float(ti)), repr(float(xi)), repr(float(yi))])
    return buf.getvalue()


def sweep_to_csv(rows: Iterable[tuple[float, float, float, float, float]]) -> str:
    """CSV export of a stability sweep, header ``v,omega,l,re_lambda1,re_lambda2``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["v", "omega", "l", "re_lambda1", "re_lambda2"])
    for row in rows:
        writer.writerow([repr(float(c)) for c in row])
    return buf.getvalue()
