"""Tour-based topological navigation: offline mapping from a demonstration
tour, hierarchical visual localization, a shortest-path waypoint policy,
a pluggable goal finder, and an SR/SPL evaluation harness over a synthetic
landmark-world simulator."""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    CameraModel,
    Landmark3,
    Observation2,
    Pose2,
    WaypointAction,
    compose,
    inverse,
    project,
    relative_in_frame,
)
from .tour import Tour, TourFrame, attach_narrative, load_tour, save_tour, subsample  # noqa: F401
from .topograph import TopoGraph, Vertex, build_graph, load_graph, save_graph, shortest_path  # noqa: F401
