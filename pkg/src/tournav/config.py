"""Flat run configuration: every tunable default in one place, JSON-overridable."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Optional

from .errors import FormatError
from .goalfinder import GoalFinderConfig
from .localization import LocalizationConfig, RansacParams
from .policy import PolicyConfig
from .sim import NoiseModel


@dataclass(frozen=True)
class Config:
    # retrieval + pose solving
    k: int = 5
    ransac_iterations: int = 100
    inlier_px: float = 2.0
    min_inliers: int = 6
    ransac_seed: int = 0
    min_features: int = 4
    # graph construction
    max_edge_dist: float = 2.0
    front_half_angle: float = math.pi / 2
    scale: float = 1.0
    # policy
    success_radius: float = 1.0
    max_steps: Optional[int] = None
    # goal finding
    retries: int = 2
    goalfinder_fps: Optional[float] = None
    vlm_model: str = "vlm"
    vlm_timeout: float = 60.0
    vlm_max_tokens: int = 256
    # evaluation
    starts_per_instruction: int = 4
    goal_radius: float = 2.0
    min_start_dist: float = 20.0
    workers: int = 1
    # simulator noise
    pixel_sigma: float = 0.0
    outlier_rate: float = 0.0
    action_sigma_xy: float = 0.0
    action_sigma_theta: float = 0.0
    drop_rate: float = 0.0

    @classmethod
    def load(cls, path: Optional[str]) -> "Config":
        if path is None:
            return cls()
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise FormatError(f"cannot read config {path}: {e}") from e
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise FormatError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def ransac(self) -> RansacParams:
        return RansacParams(
            iterations=self.ransac_iterations,
            inlier_px=self.inlier_px,
            min_inliers=self.min_inliers,
            seed=self.ransac_seed,
        )

    def localization(self) -> LocalizationConfig:
        return LocalizationConfig(
            k=self.k, ransac=self.ransac(), min_features=self.min_features
        )

    def policy(self) -> PolicyConfig:
        return PolicyConfig(
            localization=self.localization(),
            success_radius=self.success_radius,
            max_steps=self.max_steps,
        )

    def goalfinder(self) -> GoalFinderConfig:
        return GoalFinderConfig(retries=self.retries, fps=self.goalfinder_fps)

    def noise(self) -> NoiseModel:
        return NoiseModel(
            pixel_sigma=self.pixel_sigma,
            outlier_rate=self.outlier_rate,
            action_sigma_xy=self.action_sigma_xy,
            action_sigma_theta=self.action_sigma_theta,
            drop_rate=self.drop_rate,
        )
