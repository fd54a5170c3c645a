"""Demonstration-tour data model, on-disk format, narratives, and FPS subsampling.

On disk a tour is a directory holding `tour.json` (fps, descriptor_dim,
version) and `frames.jsonl` with one JSON object per frame.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

from .errors import FormatError, ValidationError
from .geometry import Observation2, Pose2

TOUR_FORMAT_VERSION = 1

_NORM_TOL = 1e-6


@dataclass(frozen=True)
class TourFrame:
    """One tour sample: 1-based index, timestamp, descriptor, landmark observations."""

    index: int
    timestamp: float
    descriptor: Tuple[float, ...]
    observations: Tuple[Observation2, ...]
    narrative: Optional[str] = None
    pose: Optional[Pose2] = None


@dataclass(frozen=True)
class Tour:
    """An ordered, validated frame sequence.

    source_indices maps each frame back to the full-rate tour it was
    subsampled from; None means the tour is full rate (identity map).
    """

    frames: Tuple[TourFrame, ...]
    fps: float
    descriptor_dim: int
    source_indices: Optional[Tuple[int, ...]] = None

    def __len__(self) -> int:
        return len(self.frames)

    def frame(self, index: int) -> TourFrame:
        """Frame by 1-based index."""
        if not 1 <= index <= len(self.frames):
            raise ValidationError(f"frame index {index} out of range 1..{len(self.frames)}")
        return self.frames[index - 1]

    def source_index(self, index: int) -> int:
        """Map a frame index of this tour back to the full-rate tour."""
        if self.source_indices is None:
            self.frame(index)  # bounds check
            return index
        return self.source_indices[index - 1]


def validate_tour(tour: Tour) -> None:
    if tour.fps <= 0:
        raise ValidationError("fps must be positive")
    prev_ts = None
    for i, f in enumerate(tour.frames, start=1):
        if f.index != i:
            raise ValidationError(
                f"indices consecutive: frame at position {i} has index {f.index}"
            )
        if prev_ts is not None and f.timestamp <= prev_ts:
            raise ValidationError(
                f"timestamps strictly increasing: violated at frame {i}"
            )
        prev_ts = f.timestamp
        if len(f.descriptor) != tour.descriptor_dim:
            raise ValidationError(
                f"descriptor dimension: frame {i} has {len(f.descriptor)}, "
                f"expected {tour.descriptor_dim}"
            )
        norm = math.sqrt(sum(c * c for c in f.descriptor))
        if abs(norm - 1.0) > _NORM_TOL:
            raise ValidationError(f"descriptor unit norm: frame {i} has norm {norm:.8f}")


def _frame_to_dict(f: TourFrame) -> dict:
    return {
        "index": f.index,
        "timestamp": f.timestamp,
        "descriptor": list(f.descriptor),
        "observations": [
            {"landmark_id": o.landmark_id, "u": o.pixel[0], "v": o.pixel[1]}
            for o in f.observations
        ],
        "narrative": f.narrative,
        "pose": None
        if f.pose is None
        else {"x": f.pose.x, "y": f.pose.y, "theta": f.pose.theta},
    }


def _frame_from_dict(d: dict) -> TourFrame:
    pose = d.get("pose")
    return TourFrame(
        index=int(d["index"]),
        timestamp=float(d["timestamp"]),
        descriptor=tuple(float(c) for c in d["descriptor"]),
        observations=tuple(
            Observation2(int(o["landmark_id"]), (float(o["u"]), float(o["v"])))
            for o in d["observations"]
        ),
        narrative=d.get("narrative"),
        pose=None if pose is None else Pose2(float(pose["x"]), float(pose["y"]), float(pose["theta"])),
    )


def save_tour(tour: Tour, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    meta = {
        "version": TOUR_FORMAT_VERSION,
        "fps": tour.fps,
        "descriptor_dim": tour.descriptor_dim,
    }
    with open(os.path.join(path, "tour.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(path, "frames.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
        for f in tour.frames:
            fh.write(json.dumps(_frame_to_dict(f), sort_keys=True))
            fh.write("\n")


def load_tour(path: str) -> Tour:
    meta_path = os.path.join(path, "tour.json")
    frames_path = os.path.join(path, "frames.jsonl")
    try:
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read tour metadata {meta_path}: {e}") from e
    if meta.get("version") != TOUR_FORMAT_VERSION:
        raise FormatError(
            f"unsupported tour format version {meta.get('version')!r}, "
            f"expected {TOUR_FORMAT_VERSION}"
        )
    frames: List[TourFrame] = []
    try:
        with open(frames_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    frames.append(_frame_from_dict(json.loads(line)))
                except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
                    raise FormatError(f"{frames_path}:{lineno}: malformed frame record: {e}") from e
    except OSError as e:
        raise FormatError(f"cannot read frames {frames_path}: {e}") from e
    tour = Tour(
        frames=tuple(frames),
        fps=float(meta["fps"]),
        descriptor_dim=int(meta["descriptor_dim"]),
    )
    validate_tour(tour)
    return tour


def attach_narrative(tour: Tour, index: int, text: str) -> Tour:
    """Return a tour whose frame `index` carries `text` (last writer wins)."""
    if not 1 <= index <= len(tour.frames):
        raise ValidationError(f"narrative index {index} out of range 1..{len(tour.frames)}")
    frames = list(tour.frames)
    frames[index - 1] = replace(frames[index - 1], narrative=text)
    return replace(tour, frames=tuple(frames))


def subsample(tour: Tour, target_fps: float) -> Tour:
    """Reduce the tour rate, always retaining narrated frames.

    Keeps every ceil(fps/target_fps)-th frame starting from frame 1,
    re-indexes consecutively, and records original indices so goal frames
    can be mapped back to the full-rate tour.
    """
    if target_fps <= 0 or target_fps > tour.fps:
        raise ValidationError(
            f"target_fps must be in (0, {tour.fps}], got {target_fps}"
        )
    stride = math.ceil(tour.fps / target_fps)
    kept = set(range(1, len(tour.frames) + 1, stride))
    kept.update(f.index for f in tour.frames if f.narrative is not None)
    kept_sorted = sorted(kept)
    frames = tuple(
        replace(tour.frames[i - 1], index=new_i)
        for new_i, i in enumerate(kept_sorted, start=1)
    )
    sources = tuple(tour.source_index(i) for i in kept_sorted)
    return Tour(
        frames=frames,
        fps=target_fps,
        descriptor_dim=tour.descriptor_dim,
        source_indices=sources,
    )


def posed_frames(tour: Tour) -> Sequence[TourFrame]:
    """All frames, raising if any lacks a pose."""
    for f in tour.frames:
        if f.pose is None:
            raise ValidationError(f"frame {f.index} has no pose")
    return tour.frames
