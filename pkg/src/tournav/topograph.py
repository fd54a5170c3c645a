"""Topological graph: construction from a posed tour, Dijkstra queries, persistence.

A directed edge s -> t exists iff t is within max_edge_dist of s and lies
"in front" of s: the bearing from s's heading to the displacement vector
is below front_half_angle. Edge cost is Euclidean distance times the
graph's metric scale factor.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from .errors import FormatError, NoPathError, ValidationError
from .geometry import Pose2, normalize_angle
from .tour import Tour

GRAPH_FORMAT_VERSION = 1

DEFAULT_MAX_EDGE_DIST = 2.0
DEFAULT_FRONT_HALF_ANGLE = math.pi / 2


@dataclass(frozen=True)
class Vertex:
    frame_index: int
    pose: Pose2


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    cost: float


@dataclass
class TopoGraph:
    vertices: List[Vertex]
    edges: List[Edge]
    scale: float = 1.0
    _adjacency: Dict[int, List[Tuple[int, float]]] = field(
        default=None, repr=False, compare=False
    )
    _vmap: Dict[int, Vertex] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._adjacency is None:
            adj: Dict[int, List[Tuple[int, float]]] = {v.frame_index: [] for v in self.vertices}
            for e in self.edges:
                adj[e.source].append((e.target, e.cost))
            for nbrs in adj.values():
                nbrs.sort()
            object.__setattr__(self, "_adjacency", adj)
        if self._vmap is None:
            object.__setattr__(self, "_vmap", {v.frame_index: v for v in self.vertices})

    def vertex(self, frame_index: int) -> Vertex:
        try:
            return self._vmap[frame_index]
        except KeyError:
            raise ValidationError(f"no vertex with frame index {frame_index}") from None

    def pose_of(self, frame_index: int) -> Pose2:
        return self.vertex(frame_index).pose

    def vertex_map(self) -> Dict[int, Vertex]:
        return self._vmap

    def neighbors(self, frame_index: int) -> List[Tuple[int, float]]:
        return self._adjacency[frame_index]


def bearing(source: Pose2, target: Pose2) -> float:
    """Absolute angle between source's heading and the displacement to target.

    Defined as 0 for zero displacement so standstill frames stay connected.
    """
    dx = target.x - source.x
    dy = target.y - source.y
    if dx == 0.0 and dy == 0.0:
        return 0.0
    return abs(normalize_angle(math.atan2(dy, dx) - source.theta))


def edge_allowed(
    source: Pose2,
    target: Pose2,
    max_edge_dist: float = DEFAULT_MAX_EDGE_DIST,
    front_half_angle: float = DEFAULT_FRONT_HALF_ANGLE,
) -> bool:
    dist = math.hypot(target.x - source.x, target.y - source.y)
    return dist <= max_edge_dist and bearing(source, target) < front_half_angle


def build_graph(
    tour: Tour,
    max_edge_dist: float = DEFAULT_MAX_EDGE_DIST,
    front_half_angle: float = DEFAULT_FRONT_HALF_ANGLE,
    scale: float = 1.0,
) -> TopoGraph:
    """One vertex per posed tour frame; directed edges by the distance + bearing rule."""
    vertices = []
    for f in tour.frames:
        if f.pose is None:
            raise ValidationError(f"cannot build graph: frame {f.index} has no pose")
        vertices.append(Vertex(f.index, f.pose))
    edges: List[Edge] = []
    for s in vertices:
        for t in vertices:
            if s.frame_index == t.frame_index:
                continue
            if edge_allowed(s.pose, t.pose, max_edge_dist, front_half_angle):
                dist = math.hypot(t.pose.x - s.pose.x, t.pose.y - s.pose.y)
                edges.append(Edge(s.frame_index, t.frame_index, dist * scale))
    return TopoGraph(vertices=vertices, edges=edges, scale=scale)


def shortest_path(g: TopoGraph, start: int, goal: int) -> List[int]:
    """Minimum-cost directed path as a list of frame indices [start, ..., goal].

    Ties are broken by fewer hops, then by smaller frame index, which makes
    the result deterministic. Raises NoPathError when the goal is
    unreachable, reporting how many vertices were reachable.
    """
    vmap = g.vertex_map()
    if start not in vmap:
        raise ValidationError(f"start vertex {start} not in graph")
    if goal not in vmap:
        raise ValidationError(f"goal vertex {goal} not in graph")
    if start == goal:
        return [start]

    best: Dict[int, Tuple[float, int]] = {start: (0.0, 0)}
    pred: Dict[int, int] = {}
    heap: List[Tuple[float, int, int]] = [(0.0, 0, start)]
    settled = set()
    while heap:
        cost, hops, u = heapq.heappop(heap)
        if u in settled:
            continue
        settled.add(u)
        if u == goal:
            break
        for v, w in g.neighbors(u):
            key = (cost + w, hops + 1)
            if v not in best or key < best[v]:
                best[v] = key
                pred[v] = u
                heapq.heappush(heap, (cost + w, hops + 1, v))
    if goal not in settled:
        raise NoPathError(start, goal, reachable_count=len(settled))
    path = [goal]
    while path[-1] != start:
        path.append(pred[path[-1]])
    path.reverse()
    return path


def path_cost(g: TopoGraph, path: List[int]) -> float:
    total = 0.0
    for a, b in zip(path, path[1:]):
        for v, w in g.neighbors(a):
            if v == b:
                total += w
                break
        else:
            raise ValidationError(f"path uses missing edge {a}->{b}")
    return total


def save_graph(g: TopoGraph, path: str) -> None:
    doc = {
        "version": GRAPH_FORMAT_VERSION,
        "scale": g.scale,
        "vertices": [
            {"frame_index": v.frame_index, "x": v.pose.x, "y": v.pose.y, "theta": v.pose.theta}
            for v in g.vertices
        ],
        "edges": [{"from": e.source, "to": e.target, "cost": e.cost} for e in g.edges],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_graph(path: str) -> TopoGraph:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read graph {path}: {e}") from e
    if doc.get("version") != GRAPH_FORMAT_VERSION:
        raise FormatError(
            f"unsupported graph format version {doc.get('version')!r}, "
            f"expected {GRAPH_FORMAT_VERSION}"
        )
    try:
        vertices = [
            Vertex(int(v["frame_index"]), Pose2(float(v["x"]), float(v["y"]), float(v["theta"])))
            for v in doc["vertices"]
        ]
        edges = [
            Edge(int(e["from"]), int(e["to"]), float(e["cost"])) for e in doc["edges"]
        ]
        scale = float(doc["scale"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed graph file {path}: {e}") from e
    seen = set()
    for v in vertices:
        if v.frame_index in seen:
            raise FormatError(f"duplicate vertex {v.frame_index} in {path}")
        seen.add(v.frame_index)
    return TopoGraph(vertices=vertices, edges=edges, scale=scale)
