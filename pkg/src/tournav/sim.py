"""Synthetic landmark-world simulator.

Provides deterministic world generation, a serpentine tour route, camera
observation rendering with configurable noise (pixel jitter, identity
outliers, feature dropouts), and noisy waypoint execution. Stands in for
a real building plus robot so the navigation stack can be exercised and
scored end to end.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .descriptor import DEFAULT_DESCRIPTOR_DIM, compute_descriptor
from .errors import FormatError, ValidationError
from .geometry import (
    CameraModel,
    Landmark3,
    Observation2,
    Pose2,
    WaypointAction,
    compose,
    normalize_angle,
)
from .localization import QueryObservation
from .tour import Tour, TourFrame

WORLD_FORMAT_VERSION = 1

Segment = Tuple[Tuple[float, float], Tuple[float, float]]

DEFAULT_CAMERA = CameraModel(
    fx=200.0, fy=200.0, cx=160.0, cy=120.0,
    width=320, height=240, mount_height=1.0, max_range=8.0,
)


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    def clamp(self, x: float, y: float) -> Tuple[float, float]:
        return (
            min(max(x, self.xmin), self.xmax),
            min(max(y, self.ymin), self.ymax),
        )


@dataclass(frozen=True)
class InstructionTag:
    """Ground truth for goal finding: instruction text and its goal pose."""

    text: str
    goal_pose: Pose2
    image_pose: Optional[Pose2] = None


@dataclass(frozen=True)
class NoiseModel:
    pixel_sigma: float = 0.0
    outlier_rate: float = 0.0
    action_sigma_xy: float = 0.0
    action_sigma_theta: float = 0.0
    drop_rate: float = 0.0

    def __post_init__(self):
        for name in ("pixel_sigma", "outlier_rate", "action_sigma_xy",
                     "action_sigma_theta", "drop_rate"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.outlier_rate >= 1.0 or self.drop_rate > 1.0:
            raise ValidationError("rates must be below 1 (drop_rate may be 1)")

    @property
    def noiseless(self) -> bool:
        return (self.pixel_sigma == 0 and self.outlier_rate == 0
                and self.action_sigma_xy == 0 and self.action_sigma_theta == 0
                and self.drop_rate == 0)


NO_NOISE = NoiseModel()


@dataclass(frozen=True)
class World:
    bounds: Rect
    walls: Tuple[Segment, ...]
    landmarks: Tuple[Landmark3, ...]
    camera: CameraModel
    instruction_tags: Tuple[InstructionTag, ...] = ()
    descriptor_dim: int = DEFAULT_DESCRIPTOR_DIM

    def landmark_map(self) -> Dict[int, Landmark3]:
        return {lm.id: lm for lm in self.landmarks}

    def tag_for(self, instruction_text: str) -> Optional[InstructionTag]:
        for tag in self.instruction_tags:
            if tag.text == instruction_text:
                return tag
        return None


@dataclass(frozen=True)
class WorldSpec:
    seed: int
    size: Tuple[float, float] = (40.0, 20.0)
    landmark_count: int = 300
    wall_layout: str = "none"  # "none" | "cross"
    tag_count: int = 0
    camera: CameraModel = DEFAULT_CAMERA
    descriptor_dim: int = DEFAULT_DESCRIPTOR_DIM
    # fraction of landmarks placed on walls (boundary included) so that
    # close-up views near walls still carry enough features to localize
    wall_landmark_fraction: float = 0.5


def _segment_orient(p, q, r) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _on_segment(p, q, r) -> bool:
    return (min(p[0], q[0]) - 1e-12 <= r[0] <= max(p[0], q[0]) + 1e-12
            and min(p[1], q[1]) - 1e-12 <= r[1] <= max(p[1], q[1]) + 1e-12)


def segments_intersect(a: Segment, b: Segment) -> bool:
    p1, p2 = a
    p3, p4 = b
    d1 = _segment_orient(p3, p4, p1)
    d2 = _segment_orient(p3, p4, p2)
    d3 = _segment_orient(p1, p2, p3)
    d4 = _segment_orient(p1, p2, p4)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and \
       ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    if d1 == 0 and _on_segment(p3, p4, p1):
        return True
    if d2 == 0 and _on_segment(p3, p4, p2):
        return True
    if d3 == 0 and _on_segment(p1, p2, p3):
        return True
    if d4 == 0 and _on_segment(p1, p2, p4):
        return True
    return False


def _point_segment_dist(p: Tuple[float, float], seg: Segment) -> float:
    (x1, y1), (x2, y2) = seg
    px, py = p
    dx, dy = x2 - x1, y2 - y1
    l2 = dx * dx + dy * dy
    if l2 == 0:
        return math.hypot(px - x1, py - y1)
    t = max(0.0, min(1.0, ((px - x1) * dx + (py - y1) * dy) / l2))
    return math.hypot(px - (x1 + t * dx), py - (y1 + t * dy))


def _layout_walls(bounds: Rect, layout: str) -> Tuple[Segment, ...]:
    if layout == "none":
        return ()
    if layout == "cross":
        cx = (bounds.xmin + bounds.xmax) / 2.0
        cy = (bounds.ymin + bounds.ymax) / 2.0
        # two interior walls with gaps near the boundary so the route can pass
        return (
            ((cx, bounds.ymin + 0.25 * bounds.height), (cx, cy)),
            ((bounds.xmin + 0.25 * bounds.width, cy), (cx, cy)),
        )
    raise ValidationError(f"unknown wall layout {layout!r}")


def generate_world(spec: WorldSpec) -> World:
    """Deterministic world from the spec's seed."""
    if spec.landmark_count < 1:
        raise ValidationError("landmark_count must be >= 1")
    w, h = spec.size
    if w <= 0 or h <= 0:
        raise ValidationError("world size must be positive")
    bounds = Rect(0.0, 0.0, float(w), float(h))
    walls = _layout_walls(bounds, spec.wall_layout)
    rng = np.random.default_rng(spec.seed)
    landmarks: List[Landmark3] = []
    n_wall = int(spec.landmark_count * spec.wall_landmark_fraction)
    inset = 0.05
    boundary: List[Segment] = [
        ((bounds.xmin + inset, bounds.ymin + inset), (bounds.xmax - inset, bounds.ymin + inset)),
        ((bounds.xmax - inset, bounds.ymin + inset), (bounds.xmax - inset, bounds.ymax - inset)),
        ((bounds.xmax - inset, bounds.ymax - inset), (bounds.xmin + inset, bounds.ymax - inset)),
        ((bounds.xmin + inset, bounds.ymax - inset), (bounds.xmin + inset, bounds.ymin + inset)),
    ]
    surfaces = boundary + list(walls)
    lengths = np.array([math.dist(a, b) for a, b in surfaces])
    weights = lengths / lengths.sum()
    for _ in range(n_wall):
        si = int(rng.choice(len(surfaces), p=weights))
        (ax, ay), (bx, by) = surfaces[si]
        t = float(rng.uniform(0.0, 1.0))
        x, y = ax + t * (bx - ax), ay + t * (by - ay)
        if si >= len(boundary):
            # nudge off the interior wall so the occlusion ray test is clean
            nx, ny = -(by - ay), (bx - ax)
            norm = math.hypot(nx, ny) or 1.0
            side = 1.0 if rng.random() < 0.5 else -1.0
            x += side * inset * nx / norm
            y += side * inset * ny / norm
            x, y = bounds.clamp(x, y)
        z = float(rng.uniform(0.5, 1.5))
        landmarks.append(Landmark3(len(landmarks) + 1, (x, y, z)))
    attempts = 0
    while len(landmarks) < spec.landmark_count:
        attempts += 1
        if attempts > 100 * spec.landmark_count + 1000:
            raise ValidationError("could not place landmarks: no free area")
        x = float(rng.uniform(bounds.xmin, bounds.xmax))
        y = float(rng.uniform(bounds.ymin, bounds.ymax))
        z = float(rng.uniform(0.5, 1.5))
        if any(_point_segment_dist((x, y), seg) < 0.1 for seg in walls):
            continue
        landmarks.append(Landmark3(len(landmarks) + 1, (x, y, z)))
    tags: List[InstructionTag] = []
    if spec.tag_count > 0:
        route = serpentine_route(bounds, frame_count=max(200, 10 * spec.tag_count))
        picks = rng.choice(len(route), size=spec.tag_count, replace=False)
        for i, pi in enumerate(sorted(int(p) for p in picks), start=1):
            pose = route[pi]
            tags.append(
                InstructionTag(
                    text=f"Take me to location {i}",
                    goal_pose=pose,
                    image_pose=pose,
                )
            )
    return World(
        bounds=bounds,
        walls=walls,
        landmarks=tuple(landmarks),
        camera=spec.camera,
        instruction_tags=tuple(tags),
        descriptor_dim=spec.descriptor_dim,
    )


def occluded(world: World, pose: Pose2, lm: Landmark3) -> bool:
    ray: Segment = ((pose.x, pose.y), (lm.position[0], lm.position[1]))
    return any(segments_intersect(ray, wall) for wall in world.walls)


_world_arrays: Dict[int, Tuple[World, np.ndarray]] = {}


def _landmark_positions(world: World) -> np.ndarray:
    """(n, 3) position array per world, cached since worlds are immutable."""
    entry = _world_arrays.get(id(world))
    if entry is not None and entry[0] is world:
        return entry[1]
    arr = np.array([lm.position for lm in world.landmarks], dtype=np.float64)
    _world_arrays[id(world)] = (world, arr)
    return arr


def visible_landmarks(world: World, pose: Pose2) -> List[Tuple[Landmark3, Observation2]]:
    """Projected, unoccluded landmarks at a pose, in landmark-id order.

    Vectorized over all landmarks; matches geometry.project exactly."""
    cam = world.camera
    P = _landmark_positions(world)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dx = P[:, 0] - pose.x
    dy = P[:, 1] - pose.y
    fwd = c * dx + s * dy
    left = -s * dx + c * dy
    up = P[:, 2] - cam.mount_height
    ok = fwd > 1e-9
    safe = np.where(ok, fwd, 1.0)
    ok &= np.sqrt(fwd * fwd + left * left + up * up) <= cam.max_range
    u = cam.cx - cam.fx * left / safe
    v = cam.cy - cam.fy * up / safe
    ok &= (u >= 0.0) & (u < cam.width) & (v >= 0.0) & (v < cam.height)
    out = []
    for i in np.nonzero(ok)[0]:
        lm = world.landmarks[i]
        if world.walls and occluded(world, pose, lm):
            continue
        out.append((lm, Observation2(lm.id, (float(u[i]), float(v[i])))))
    return out


def render(
    world: World,
    pose: Pose2,
    noise: NoiseModel = NO_NOISE,
    seed: int = 0,
) -> QueryObservation:
    """Render the camera observation at a pose.

    The descriptor is computed from the noiseless visible set; pixel noise,
    identity outliers and feature dropouts only affect the observations.
    """
    if not world.bounds.contains(pose.x, pose.y):
        raise ValidationError(f"pose ({pose.x:.2f}, {pose.y:.2f}) outside world bounds")
    vis = visible_landmarks(world, pose)
    ranges = [
        (lm.id, math.dist((pose.x, pose.y, world.camera.mount_height), lm.position))
        for lm, _ in vis
    ]
    desc = compute_descriptor(ranges, world.descriptor_dim)
    rng = np.random.default_rng(seed)
    cam = world.camera
    observations: List[Observation2] = []
    for lm, obs in vis:
        u, v = obs.pixel
        if noise.pixel_sigma > 0:
            u += float(rng.normal(0.0, noise.pixel_sigma))
            v += float(rng.normal(0.0, noise.pixel_sigma))
            u = min(max(u, 0.0), cam.width - 1e-6)
            v = min(max(v, 0.0), cam.height - 1e-6)
        observations.append(Observation2(lm.id, (u, v)))
    if noise.outlier_rate > 0 and observations:
        n_out = int(noise.outlier_rate * len(observations))
        if n_out > 0:
            picks = rng.choice(len(observations), size=n_out, replace=False)
            all_ids = [lm.id for lm in world.landmarks]
            for pi in picks:
                old = observations[pi]
                wrong = old.landmark_id
                while wrong == old.landmark_id:
                    wrong = int(all_ids[int(rng.integers(0, len(all_ids)))])
                observations[pi] = Observation2(wrong, old.pixel)
    if noise.drop_rate > 0 and float(rng.random()) < noise.drop_rate:
        observations = []
    return QueryObservation(descriptor=tuple(desc), observations=tuple(observations))


def generate_tour(
    world: World, path: Sequence[Pose2], fps: float = 1.0
) -> Tour:
    """Noiseless tour along a pose path, timestamps at 1/fps spacing."""
    if fps <= 0:
        raise ValidationError("fps must be positive")
    frames = []
    for i, pose in enumerate(path, start=1):
        q = render(world, pose, NO_NOISE, seed=0)
        frames.append(
            TourFrame(
                index=i,
                timestamp=(i - 1) / fps,
                descriptor=q.descriptor,
                observations=q.observations,
                narrative=None,
                pose=pose,
            )
        )
    return Tour(frames=tuple(frames), fps=fps, descriptor_dim=world.descriptor_dim)


def execute(
    world: World,
    pose: Pose2,
    action: WaypointAction,
    noise: NoiseModel = NO_NOISE,
    rng: Optional[np.random.Generator] = None,
) -> Pose2:
    """Apply a waypoint action with additive Gaussian noise; clamp to bounds."""
    nxt = compose(pose, Pose2(action.dx, action.dy, normalize_angle(action.dtheta)))
    if noise.action_sigma_xy > 0 or noise.action_sigma_theta > 0:
        if rng is None:
            raise ValidationError("noisy execution requires an rng")
        nxt = Pose2(
            nxt.x + float(rng.normal(0.0, noise.action_sigma_xy)) if noise.action_sigma_xy > 0 else nxt.x,
            nxt.y + float(rng.normal(0.0, noise.action_sigma_xy)) if noise.action_sigma_xy > 0 else nxt.y,
            normalize_angle(
                nxt.theta
                + (float(rng.normal(0.0, noise.action_sigma_theta)) if noise.action_sigma_theta > 0 else 0.0)
            ),
        )
    x, y = world.bounds.clamp(nxt.x, nxt.y)
    return Pose2(x, y, nxt.theta)


def serpentine_route(
    bounds: Rect,
    frame_count: int,
    row_spacing: float = 3.0,
    margin: float = 2.5,
) -> List[Pose2]:
    """A closed serpentine loop: lawnmower rows plus a return leg down the
    left edge, sampled into frame_count poses facing the travel direction.

    The loop is a single directed cycle, so the resulting topological
    graph is strongly connected.
    """
    if frame_count < 2:
        raise ValidationError("frame_count must be >= 2")
    x0, x1 = bounds.xmin + margin, bounds.xmax - margin
    y0, y1 = bounds.ymin + margin, bounds.ymax - margin
    if x1 <= x0 or y1 <= y0:
        raise ValidationError("bounds too small for the route margin")
    n_rows = max(2, int((y1 - y0) / row_spacing) + 1)
    if n_rows % 2 == 1:
        n_rows += 1
    ys = [y0 + r * (y1 - y0) / (n_rows - 1) for r in range(n_rows)]
    waypoints: List[Tuple[float, float]] = []
    for r, y in enumerate(ys):
        if r % 2 == 0:
            waypoints += [(x0, y), (x1, y)]
        else:
            waypoints += [(x1, y), (x0, y)]
    # return leg on its own column so no two route poses coincide exactly
    # (coincident vertices would alias the nearest-vertex tie-break)
    xr = max(bounds.xmin + 0.5, x0 - 1.0)
    waypoints += [(xr, ys[-1]), (xr, y0), (x0, y0)]

    seg_lens = [
        math.dist(a, b) for a, b in zip(waypoints, waypoints[1:])
    ]
    total = sum(seg_lens)
    poses: List[Pose2] = []
    step = total / frame_count
    seg_i = 0
    seg_start = 0.0
    for i in range(frame_count):
        arc = i * step
        while seg_i < len(seg_lens) - 1 and arc > seg_start + seg_lens[seg_i]:
            seg_start += seg_lens[seg_i]
            seg_i += 1
        a = waypoints[seg_i]
        b = waypoints[seg_i + 1]
        seg_len = seg_lens[seg_i]
        t = 0.0 if seg_len == 0 else (arc - seg_start) / seg_len
        heading = math.atan2(b[1] - a[1], b[0] - a[0])
        poses.append(
            Pose2(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), heading)
        )
    return poses


# ---------------------------------------------------------------------------
# Persistence


def save_world(world: World, path: str) -> None:
    doc = {
        "version": WORLD_FORMAT_VERSION,
        "bounds": [world.bounds.xmin, world.bounds.ymin, world.bounds.xmax, world.bounds.ymax],
        "walls": [[list(a), list(b)] for a, b in world.walls],
        "landmarks": [
            {"id": lm.id, "position": list(lm.position)} for lm in world.landmarks
        ],
        "camera": {
            "fx": world.camera.fx, "fy": world.camera.fy,
            "cx": world.camera.cx, "cy": world.camera.cy,
            "width": world.camera.width, "height": world.camera.height,
            "mount_height": world.camera.mount_height,
            "max_range": world.camera.max_range,
        },
        "descriptor_dim": world.descriptor_dim,
        "instruction_tags": [
            {
                "text": t.text,
                "goal_pose": {"x": t.goal_pose.x, "y": t.goal_pose.y, "theta": t.goal_pose.theta},
                "image_pose": None if t.image_pose is None else {
                    "x": t.image_pose.x, "y": t.image_pose.y, "theta": t.image_pose.theta
                },
            }
            for t in world.instruction_tags
        ],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_world(path: str) -> World:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read world {path}: {e}") from e
    if doc.get("version") != WORLD_FORMAT_VERSION:
        raise FormatError(
            f"unsupported world format version {doc.get('version')!r}, "
            f"expected {WORLD_FORMAT_VERSION}"
        )
    try:
        b = doc["bounds"]
        cam = doc["camera"]

        def pose_of(d):
            return None if d is None else Pose2(float(d["x"]), float(d["y"]), float(d["theta"]))

        return World(
            bounds=Rect(*[float(v) for v in b]),
            walls=tuple(
                ((float(a[0]), float(a[1])), (float(c[0]), float(c[1])))
                for a, c in doc["walls"]
            ),
            landmarks=tuple(
                Landmark3(int(lm["id"]), tuple(float(v) for v in lm["position"]))
                for lm in doc["landmarks"]
            ),
            camera=CameraModel(
                fx=float(cam["fx"]), fy=float(cam["fy"]),
                cx=float(cam["cx"]), cy=float(cam["cy"]),
                width=int(cam["width"]), height=int(cam["height"]),
                mount_height=float(cam["mount_height"]),
                max_range=float(cam["max_range"]),
            ),
            descriptor_dim=int(doc["descriptor_dim"]),
            instruction_tags=tuple(
                InstructionTag(
                    text=str(t["text"]),
                    goal_pose=pose_of(t["goal_pose"]),
                    image_pose=pose_of(t.get("image_pose")),
                )
                for t in doc["instruction_tags"]
            ),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed world file {path}: {e}") from e
