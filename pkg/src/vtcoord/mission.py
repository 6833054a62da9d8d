"""Desired trajectories, physical bounds and the virtual-time limits derived from them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np


class BoundsError(ValueError):
    """Raised when physical or virtual-time bounds are inconsistent."""


@dataclass(frozen=True)
class Circle:
    """Horizontal circle with an optional vertical sinusoid.

    ``x(g) = center + (r cos(w g + p), r sin(w g + p), A sin(W g))``
    """

    center: tuple
    radius: float
    omega: float
    duration: float
    phase: float = 0.0
    z_amplitude: float = 0.0
    z_omega: float = 0.0

    def _eval(self, g: float):
        c = np.asarray(self.center, dtype=float)
        th = self.omega * g + self.phase
        r, w = self.radius, self.omega
        zA, zW = self.z_amplitude, self.z_omega
        pos = c + np.array([r * math.cos(th), r * math.sin(th), zA * math.sin(zW * g)])
        vel = np.array([-r * w * math.sin(th), r * w * math.cos(th), zA * zW * math.cos(zW * g)])
        acc = np.array([-r * w * w * math.cos(th), -r * w * w * math.sin(th), -zA * zW * zW * math.sin(zW * g)])
        return pos, vel, acc


@dataclass(frozen=True)
class Line:
    start: tuple
    end: tuple
    duration: float

    def _eval(self, g: float):
        a = np.asarray(self.start, dtype=float)
        b = np.asarray(self.end, dtype=float)
        vel = (b - a) / self.duration
        return a + vel * g, vel, np.zeros(3)


@dataclass(frozen=True)
class Composite:
    """Segments traversed back to back; segment ``m`` starts where ``m-1`` ends in time.

    At a joint the later segment is used.
    """

    segments: tuple
    duration: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "duration", float(sum(s.duration for s in self.segments)))

    def _eval(self, g: float):
        start = 0.0
        for seg in self.segments[:-1]:
            if g < start + seg.duration:
                return seg._eval(g - start)
            start += seg.duration
        return self.segments[-1]._eval(g - start)

    def joints(self) -> list[float]:
        return list(np.cumsum([s.duration for s in self.segments])[:-1])


DesiredTrajectory = Union[Circle, Line, Composite]


def eval_trajectory(traj: DesiredTrajectory, gamma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Position, velocity and acceleration at virtual time ``gamma``.

    ``gamma`` is clamped to ``[0, duration]``: before the start and after the
    end of the mission the endpoint values are returned.
    """
    g = min(max(float(gamma), 0.0), traj.duration)
    return traj._eval(g)


def trajectory_from_json(obj: dict) -> DesiredTrajectory:
    kind = obj.get("kind")
    if kind == "circle":
        return Circle(
            center=tuple(obj.get("center", (0.0, 0.0, 0.0))),
            radius=float(obj["radius"]),
            omega=float(obj["omega"]),
            duration=float(obj["duration"]),
            phase=float(obj.get("phase", 0.0)),
            z_amplitude=float(obj.get("z_amplitude", 0.0)),
            z_omega=float(obj.get("z_omega", 0.0)),
        )
    if kind == "line":
        return Line(tuple(obj["start"]), tuple(obj["end"]), float(obj["duration"]))
    if kind == "composite":
        segs = tuple(trajectory_from_json(s) for s in obj["segments"])
        if not segs:
            raise ValueError("composite trajectory needs at least one segment")
        return Composite(segs)
    raise ValueError(f"unknown trajectory kind '{kind}'")


def concentric_circles(n: int, center, base_radius: float, radius_step: float, speed: float,
                       duration: float, z_amplitude: float = 0.0, z_omega: float = 0.0) -> list[Circle]:
    """``n`` circles about a common center, all flown at the same linear speed."""
    out = []
    for i in range(n):
        r = base_radius + i * radius_step
        out.append(Circle(tuple(center), r, speed / r, duration, phase=2.0 * math.pi * i / max(n, 1),
                          z_amplitude=z_amplitude, z_omega=z_omega))
    return out


def speed_range(traj: DesiredTrajectory, samples: int = 2001) -> tuple[float, float, float]:
    """Sampled (min speed, max speed, max acceleration) over the interior of the mission."""
    gs = np.linspace(0.0, traj.duration, samples)
    speeds, accs = [], []
    for g in gs:
        _, v, a = eval_trajectory(traj, g)
        speeds.append(np.linalg.norm(v))
        accs.append(np.linalg.norm(a))
    return float(min(speeds)), float(max(speeds)), float(max(accs))


@dataclass(frozen=True)
class PhysicalBounds:
    v_min: float
    v_max: float
    a_max: float
    v_d_min: float
    v_d_max: float
    a_d_max: float

    def __post_init__(self):
        if not (0.0 <= self.v_min < self.v_d_min <= self.v_d_max < self.v_max):
            raise BoundsError(
                "speed bounds must satisfy 0 <= v_min < v_d_min <= v_d_max < v_max, got "
                f"v_min={self.v_min}, v_d_min={self.v_d_min}, v_d_max={self.v_d_max}, v_max={self.v_max}"
            )
        if not (0.0 <= self.a_d_max < self.a_max):
            raise BoundsError(f"need 0 <= a_d_max < a_max, got a_d_max={self.a_d_max}, a_max={self.a_max}")


@dataclass(frozen=True)
class GammaBounds:
    """Limits on the virtual-time rate (dimensionless) and acceleration (1/s)."""

    rate_min: float
    rate_max: float
    accel_max: float

    def __post_init__(self):
        if not (self.rate_min <= 1.0 <= self.rate_max):
            raise BoundsError(f"rate bounds must bracket 1, got [{self.rate_min}, {self.rate_max}]")
        if self.rate_min == self.rate_max:
            raise BoundsError("rate bounds are degenerate (no coordination authority)")
        if not self.accel_max > 0.0:
            raise BoundsError(f"accel_max must be positive, got {self.accel_max}")

    @property
    def delta_rate_min(self) -> float:
        return self.rate_min - 1.0

    @property
    def delta_rate_max(self) -> float:
        return self.rate_max - 1.0

    def accel_limit_slack(self, phys: PhysicalBounds) -> float:
        """``a_max - (accel_max v_d_max + rate_max^2 a_d_max)``; nonnegative when admissible."""
        return phys.a_max - (self.accel_max * phys.v_d_max + self.rate_max ** 2 * phys.a_d_max)


def derive_gamma_bounds(b: PhysicalBounds) -> GammaBounds:
    """Extremal admissible virtual-time limits for the given vehicle and mission bounds."""
    rate_min = b.v_min / b.v_d_min
    rate_max = b.v_max / b.v_d_max
    accel_max = (b.a_max - rate_max ** 2 * b.a_d_max) / b.v_d_max
    if accel_max <= 0.0:
        raise BoundsError(
            f"derived virtual-time acceleration limit {accel_max:.6g} <= 0: "
            f"a_max={b.a_max} cannot cover rate_max^2 * a_d_max = {rate_max ** 2 * b.a_d_max:.6g}"
        )
    return GammaBounds(rate_min, rate_max, accel_max)


def min_pairwise_distance(positions: np.ndarray) -> float:
    """Smallest Euclidean distance between rows; ``inf`` for fewer than two rows."""
    P = np.asarray(positions, dtype=float)
    if P.shape[0] < 2:
        return math.inf
    diff = P[:, None, :] - P[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    iu = np.triu_indices(P.shape[0], k=1)
    return float(dist[iu].min())


def min_pairwise_separation(trajs: Sequence[DesiredTrajectory], gammas: Sequence[float]) -> float:
    """Minimum distance between the reference positions ``x_d,i(gamma_i)``."""
    pos = np.array([eval_trajectory(tr, g)[0] for tr, g in zip(trajs, gammas)])
    return min_pairwise_distance(pos)
