"""Shared fixtures: a small simulated world with its tour and graph, plus
hand-built tiny tours for prompt and parsing tests."""

import math

import pytest

from tournav.evaluation import make_context
from tournav.geometry import Pose2
from tournav.sim import WorldSpec, generate_tour, generate_world, serpentine_route
from tournav.topograph import build_graph
from tournav.tour import Tour, TourFrame, attach_narrative


@pytest.fixture(scope="session")
def small_world():
    spec = WorldSpec(seed=3, size=(24.0, 12.0), landmark_count=360, tag_count=6)
    return generate_world(spec)


@pytest.fixture(scope="session")
def small_route(small_world):
    return serpentine_route(small_world.bounds, frame_count=200)


@pytest.fixture(scope="session")
def small_tour(small_world, small_route):
    return generate_tour(small_world, small_route)


@pytest.fixture(scope="session")
def small_graph(small_tour):
    return build_graph(small_tour)


@pytest.fixture(scope="session")
def small_ctx(small_world, small_tour):
    return make_context(small_world, small_tour)


def unit_descriptor(dim: int = 4):
    return tuple([1.0 / math.sqrt(dim)] * dim)


def make_plain_tour(n: int, fps: float = 1.0, dim: int = 4) -> Tour:
    """A minimal valid tour: uniform descriptors, poses on a line, no features."""
    frames = tuple(
        TourFrame(
            index=i,
            timestamp=(i - 1) / fps,
            descriptor=unit_descriptor(dim),
            observations=(),
            pose=Pose2(float(i), 0.0, 0.0),
        )
        for i in range(1, n + 1)
    )
    return Tour(frames=frames, fps=fps, descriptor_dim=dim)


@pytest.fixture
def narrated_tour_3():
    """The 3-frame tour behind the golden prompt files; frame 2 is narrated."""
    return attach_narrative(make_plain_tour(3), 2, "Lewis' desk")
