"""Planar rigid-body transforms, the lifted pinhole camera, and landmark visibility.

Conventions: world frame is x-east / y-north / z-up; the robot frame is
x-forward / y-left with heading theta measured counterclockwise from +x.
The camera sits at a fixed mount height with its optical axis along the
robot heading and zero roll/pitch, so image u grows to the robot's right
and v grows downward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    t = theta % TWO_PI  # [0, 2*pi)
    if t > math.pi:
        t -= TWO_PI
    return t


@dataclass(frozen=True)
class Pose2:
    """Planar pose (meters, meters, radians in (-pi, pi])."""

    x: float
    y: float
    theta: float

    def position(self) -> Tuple[float, float]:
        return (self.x, self.y)


IDENTITY = Pose2(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class WaypointAction:
    """Robot-centric motion command: longitudinal dx, lateral dy, rotation dtheta."""

    dx: float
    dy: float
    dtheta: float


@dataclass(frozen=True)
class Landmark3:
    """A world landmark: unique id and 3D position (z up, z >= 0)."""

    id: int
    position: Tuple[float, float, float]


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus the planar mount that lifts a Pose2 to 3D."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    mount_height: float
    max_range: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")


@dataclass(frozen=True)
class Observation2:
    """One detected landmark: its id and pixel location."""

    landmark_id: int
    pixel: Tuple[float, float]


def compose(a: Pose2, b: Pose2) -> Pose2:
    """SE(2) composition a * b (apply b in a's frame)."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        normalize_angle(a.theta + b.theta),
    )


def inverse(p: Pose2) -> Pose2:
    """SE(2) inverse: compose(p, inverse(p)) is the identity."""
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2(
        -(c * p.x + s * p.y),
        -(-s * p.x + c * p.y),
        normalize_angle(-p.theta),
    )


def relative_in_frame(origin: Pose2, target: Pose2) -> WaypointAction:
    """Express `target` in `origin`'s robot-centric frame (x forward, y left).

    Composing `origin` with the returned action as a pose reproduces `target`.
    """
    c, s = math.cos(origin.theta), math.sin(origin.theta)
    wx = target.x - origin.x
    wy = target.y - origin.y
    return WaypointAction(
        c * wx + s * wy,
        -s * wx + c * wy,
        normalize_angle(target.theta - origin.theta),
    )


def action_as_pose(a: WaypointAction) -> Pose2:
    return Pose2(a.dx, a.dy, normalize_angle(a.dtheta))


def euclidean(a: Pose2, b: Pose2) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


_FWD_EPS = 1e-9


def camera_point(cam: CameraModel, pose: Pose2, lm: Landmark3) -> Tuple[float, float, float]:
    """Landmark coordinates in the camera frame: (forward, left, up)."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dx = lm.position[0] - pose.x
    dy = lm.position[1] - pose.y
    fwd = c * dx + s * dy
    left = -s * dx + c * dy
    up = lm.position[2] - cam.mount_height
    return fwd, left, up


def project(cam: CameraModel, pose: Pose2, lm: Landmark3) -> Optional[Observation2]:
    """Pinhole projection of a landmark; None when not visible.

    Not visible means: behind the camera, outside the image bounds, or
    farther than max_range (3D Euclidean distance).
    """
    fwd, left, up = camera_point(cam, pose, lm)
    if fwd <= _FWD_EPS:
        return None
    if math.sqrt(fwd * fwd + left * left + up * up) > cam.max_range:
        return None
    u = cam.cx - cam.fx * left / fwd
    v = cam.cy - cam.fy * up / fwd
    if not (0.0 <= u < cam.width and 0.0 <= v < cam.height):
        return None
    return Observation2(lm.id, (u, v))
