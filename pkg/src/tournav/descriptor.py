"""Synthetic global image descriptors.

Stand-in for a learned place-recognition descriptor: each visible landmark
id hashes to a coordinate bucket with weight 1/(1 + range), and the vector
is L2-normalized. View-dependent (visibility and range change with pose),
deterministic, and pluggable: anything matching DescriptorFn can replace it.
"""

from __future__ import annotations

from typing import Callable, Sequence, Tuple

import numpy as np

DEFAULT_DESCRIPTOR_DIM = 64

# Knuth multiplicative hash constant; spreads consecutive ids across buckets.
_HASH_MULT = 2654435761

DescriptorFn = Callable[[Sequence[Tuple[int, float]], int], np.ndarray]


def landmark_bucket(landmark_id: int, dim: int) -> int:
    return (landmark_id * _HASH_MULT) % dim


def compute_descriptor(
    visible: Sequence[Tuple[int, float]], dim: int = DEFAULT_DESCRIPTOR_DIM
) -> np.ndarray:
    """Descriptor from (landmark_id, range_m) pairs; unit L2 norm.

    An empty visible set yields the uniform unit vector so the result is
    always well-defined.
    """
    vec = np.zeros(dim, dtype=np.float64)
    for lm_id, rng in visible:
        vec[landmark_bucket(lm_id, dim)] += 1.0 / (1.0 + rng)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        vec[:] = 1.0 / np.sqrt(dim)
        return vec
    return vec / norm
