"""Dubins reference paths and their time-sampled reference trajectories.

A path is the shortest curvature-bounded route between two poses, picked
from the six candidate turn/straight words. Sampling walks the path with
a trapezoidal speed profile so that straight-segment samples are exactly
reachable by the Euler vehicle model; past the goal the trajectory holds
the goal pose at zero speed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .vehicle_model import VehicleParams

TWO_PI = 2.0 * math.pi


def mod2pi(x: float) -> float:
    return x - TWO_PI * math.floor(x / TWO_PI)


def wrap_pi(x: float) -> float:
    return (x + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    psi: float

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class PathSegment:
    kind: str  # "L", "S", "R"
    length: float  # arc length [m], >= 0
    curvature: float  # signed [1/m], 0 for straights


# (t, p, q) solvers in the normalized frame: alpha/beta are start/goal
# headings relative to the start-goal axis, d the scaled separation.
def _lsl(alpha, beta, d):
    sa, sb, ca, cb = math.sin(alpha), math.sin(beta), math.cos(alpha), math.cos(beta)
    p_sq = 2 + d * d - 2 * math.cos(alpha - beta) + 2 * d * (sa - sb)
    if p_sq < 0:
        return None
    tmp = math.atan2(cb - ca, d + sa - sb)
    return mod2pi(-alpha + tmp), math.sqrt(p_sq), mod2pi(beta - tmp)


def _rsr(alpha, beta, d):
    sa, sb, ca, cb = math.sin(alpha), math.sin(beta), math.cos(alpha), math.cos(beta)
    p_sq = 2 + d * d - 2 * math.cos(alpha - beta) + 2 * d * (sb - sa)
    if p_sq < 0:
        return None
    tmp = math.atan2(ca - cb, d - sa + sb)
    return mod2pi(alpha - tmp), math.sqrt(p_sq), mod2pi(-beta + tmp)


def _lsr(alpha, beta, d):
    sa, sb, ca, cb = math.sin(alpha), math.sin(beta), math.cos(alpha), math.cos(beta)
    p_sq = -2 + d * d + 2 * math.cos(alpha - beta) + 2 * d * (sa + sb)
    if p_sq < 0:
        return None
    p = math.sqrt(p_sq)
    tmp = math.atan2(-ca - cb, d + sa + sb) - math.atan2(-2.0, p)
    return mod2pi(-alpha + tmp), p, mod2pi(-mod2pi(beta) + tmp)


def _rsl(alpha, beta, d):
    sa, sb, ca, cb = math.sin(alpha), math.sin(beta), math.cos(alpha), math.cos(beta)
    p_sq = d * d - 2 + 2 * math.cos(alpha - beta) - 2 * d * (sa + sb)
    if p_sq < 0:
        return None
    p = math.sqrt(p_sq)
    tmp = math.atan2(ca + cb, d - sa - sb) - math.atan2(2.0, p)
    return mod2pi(alpha - tmp), p, mod2pi(beta - tmp)


def _rlr(alpha, beta, d):
    sa, sb, ca, cb = math.sin(alpha), math.sin(beta), math.cos(alpha), math.cos(beta)
    tmp = (6.0 - d * d + 2 * math.cos(alpha - beta) + 2 * d * (sa - sb)) / 8.0
    if abs(tmp) > 1:
        return None
    p = mod2pi(TWO_PI - math.acos(tmp))
    t = mod2pi(alpha - math.atan2(ca - cb, d - sa + sb) + p / 2.0)
    return t, p, mod2pi(alpha - beta - t + p)


def _lrl(alpha, beta, d):
    sa, sb, ca, cb = math.sin(alpha), math.sin(beta), math.cos(alpha), math.cos(beta)
    tmp = (6.0 - d * d + 2 * math.cos(alpha - beta) + 2 * d * (sb - sa)) / 8.0
    if abs(tmp) > 1:
        return None
    p = mod2pi(TWO_PI - math.acos(tmp))
    t = mod2pi(-alpha - math.atan2(ca - cb, d + sa - sb) + p / 2.0)
    return t, p, mod2pi(mod2pi(beta) - alpha - t + p)


_WORDS = {
    "LSL": (_lsl, "LSL"),
    "RSR": (_rsr, "RSR"),
    "LSR": (_lsr, "LSR"),
    "RSL": (_rsl, "RSL"),
    "RLR": (_rlr, "RLR"),
    "LRL": (_lrl, "LRL"),
}

_SIGN = {"L": 1.0, "S": 0.0, "R": -1.0}


@dataclass(frozen=True, eq=False)
class DubinsPath:
    start: Pose
    word: str
    segments: tuple[PathSegment, ...]
    radius: float

    @property
    def length(self) -> float:
        return sum(seg.length for seg in self.segments)

    def point_at(self, s: float) -> Pose:
        """Pose at arc length ``s`` (clamped to [0, length]); the heading
        accumulates segment turns, so it is continuous and unwrapped."""
        s = min(max(s, 0.0), self.length)
        x, y, psi = self.start.x, self.start.y, self.start.psi
        for seg in self.segments:
            ds = min(s, seg.length)
            x, y, psi = _advance(x, y, psi, seg, ds)
            s -= ds
            if s <= 1e-12:
                break
        return Pose(x, y, psi)

    def distance_to(self, point) -> float:
        """Exact Euclidean distance from a 2-d point to the path."""
        p = np.asarray(point, dtype=float)
        x, y, psi = self.start.x, self.start.y, self.start.psi
        if not self.segments or self.length == 0.0:
            return float(np.hypot(p[0] - x, p[1] - y))
        best = math.inf
        for seg in self.segments:
            if seg.length > 0:
                best = min(best, _segment_distance(x, y, psi, seg, p))
            x, y, psi = _advance(x, y, psi, seg, seg.length)
        best = min(best, float(np.hypot(p[0] - x, p[1] - y)))
        return best


def _advance(x, y, psi, seg: PathSegment, ds: float):
    if seg.kind == "S":
        return x + ds * math.cos(psi), y + ds * math.sin(psi), psi
    r = 1.0 / seg.curvature
    cx = x - r * math.sin(psi)
    cy = y + r * math.cos(psi)
    npsi = psi + seg.curvature * ds
    return cx + r * math.sin(npsi), cy - r * math.cos(npsi), npsi


def _segment_distance(x, y, psi, seg: PathSegment, p) -> float:
    if seg.kind == "S":
        ex, ey, _ = _advance(x, y, psi, seg, seg.length)
        d = np.array([ex - x, ey - y])
        t = float(np.dot(p - np.array([x, y]), d)) / max(seg.length**2, 1e-300)
        t = min(max(t, 0.0), 1.0)
        proj = np.array([x, y]) + t * d
        return float(np.hypot(*(p - proj)))
    r = 1.0 / seg.curvature
    cx = x - r * math.sin(psi)
    cy = y + r * math.cos(psi)
    radius = abs(r)
    theta0 = math.atan2(y - cy, x - cx)
    sweep = seg.curvature * seg.length  # signed, |sweep| <= 2*pi
    theta_p = math.atan2(p[1] - cy, p[0] - cx)
    rel = mod2pi((theta_p - theta0) * math.copysign(1.0, sweep))
    if rel <= abs(sweep):
        return abs(math.hypot(p[0] - cx, p[1] - cy) - radius)
    ex, ey, _ = _advance(x, y, psi, seg, seg.length)
    return min(
        float(np.hypot(p[0] - x, p[1] - y)), float(np.hypot(p[0] - ex, p[1] - ey))
    )


def _assemble(start: Pose, word: str, tpq, radius: float) -> DubinsPath:
    segments = []
    for kind, amount in zip(word, tpq):
        if kind == "S":
            segments.append(PathSegment("S", amount * radius, 0.0))
        else:
            segments.append(
                PathSegment(kind, amount * radius, _SIGN[kind] / radius)
            )
    return DubinsPath(start, word, tuple(segments), radius)


def path_for_word(start: Pose, goal: Pose, radius: float, word: str) -> DubinsPath | None:
    """Path for one specific word, or None when that word has no solution."""
    if radius <= 0:
        raise ValueError("turn radius must be positive")
    solver, kinds = _WORDS[word]
    dx, dy = goal.x - start.x, goal.y - start.y
    big_d = math.hypot(dx, dy)
    theta = math.atan2(dy, dx)
    tpq = solver(mod2pi(start.psi - theta), mod2pi(goal.psi - theta), big_d / radius)
    if tpq is None:
        return None
    return _assemble(start, kinds, tpq, radius)


def dubins_shortest_path(start: Pose, goal: Pose, radius: float) -> DubinsPath:
    """Shortest path among the six candidate words.

    Identical poses yield a degenerate zero-length path.
    """
    if radius <= 0:
        raise ValueError("turn radius must be positive")
    if (
        math.hypot(goal.x - start.x, goal.y - start.y) < 1e-12
        and abs(wrap_pi(goal.psi - start.psi)) < 1e-12
    ):
        return DubinsPath(start, "S", (PathSegment("S", 0.0, 0.0),), radius)
    best = None
    for word in _WORDS:
        cand = path_for_word(start, goal, radius, word)
        if cand is not None and (best is None or cand.length < best.length):
            best = cand
    assert best is not None  # every pose pair admits at least one word
    return best


@dataclass(frozen=True, eq=False)
class ReferenceTrajectory:
    """Time-stamped samples along a path.

    ``states`` has shape (n_steps + 1, 4); row k is [x, y, psi, v] at
    time k * dt, row 0 being the start pose at standstill. Past the goal
    the rows repeat the goal pose with v = 0.
    """

    states: np.ndarray
    dt: float
    path: DubinsPath

    @property
    def goal(self) -> Pose:
        end = self.path.point_at(self.path.length)
        return Pose(end.x, end.y, end.psi)

    def window(self, t: int, horizon: int) -> np.ndarray:
        """Rows t+1 .. t+horizon, clamped to the final sample."""
        idx = np.minimum(np.arange(t + 1, t + 1 + horizon), len(self.states) - 1)
        return self.states[idx].copy()

    def speed_at(self, t: int) -> float:
        return float(self.states[min(t, len(self.states) - 1), 3])


def sample_trajectory(
    path: DubinsPath,
    params: VehicleParams,
    cruise_speed: float,
    n_steps: int,
) -> ReferenceTrajectory:
    """Sample the path with a trapezoidal speed profile.

    Arc length advances by v(k) * dt per step (the speed recorded at the
    sample being left), accelerating at a_max toward the cruise speed and
    braking to rest at the goal. The goal pose is padded once reached.
    """
    cruise = min(max(cruise_speed, 0.0), params.v_max)
    decel = abs(params.a_min)
    total = path.length
    dt = params.dt
    states = np.zeros((n_steps + 1, 4))
    s, v = 0.0, 0.0
    for k in range(n_steps + 1):
        pose = path.point_at(s)
        states[k] = [pose.x, pose.y, pose.psi, v]
        s_next = s + v * dt
        rem = total - s_next
        if rem <= 1e-12:
            s, v = total, 0.0
            continue
        v_next = min(v + params.a_max * dt, cruise, math.sqrt(2.0 * decel * rem))
        if v_next * dt >= rem - 1e-12:
            v_next = rem / dt  # land exactly on the goal next step
        s, v = s_next, v_next
    return ReferenceTrajectory(states, dt, path)
