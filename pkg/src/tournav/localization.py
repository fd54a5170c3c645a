"""Hierarchical localization against the tour reconstruction.

Coarse stage: k-nearest-neighbor retrieval over global descriptors.
Fine stage: per-candidate 2D-3D correspondences solved by RANSAC over
minimal 3-point samples, each hypothesis refined by Gauss-Newton on the
squared pixel reprojection error of a 3-DoF (x, y, theta) camera pose.
The candidate with the most inliers wins; feature-sparse queries fall
back to the last known pose.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import TournavError, ValidationError
from .geometry import CameraModel, Landmark3, Pose2, normalize_angle
from .tour import Tour

_FWD_EPS = 1e-9
_BAD_RESIDUAL = 1e6


class SolveFailure(TournavError):
    """RANSAC could not produce a pose with enough inliers."""


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 100
    inlier_px: float = 2.0
    min_inliers: int = 6
    seed: int = 0
    confidence: float = 0.99


@dataclass(frozen=True)
class LocalizationConfig:
    k: int = 5
    ransac: RansacParams = field(default_factory=RansacParams)
    min_features: int = 4


@dataclass(frozen=True)
class QueryObservation:
    """Current camera observation: global descriptor plus landmark detections."""

    descriptor: Tuple[float, ...]
    observations: Tuple  # of geometry.Observation2


@dataclass(frozen=True)
class LocalizationResult:
    pose: Pose2
    nearest_vertex: int
    inliers: int
    candidate: Optional[int]
    fallback: bool


@dataclass(frozen=True)
class DescriptorIndex:
    """Retrieval index: one unit descriptor per tour frame."""

    frame_indices: np.ndarray  # (n,) int
    matrix: np.ndarray  # (n, dim) float64, rows unit norm
    dimension: int

    @classmethod
    def from_tour(cls, tour: Tour) -> "DescriptorIndex":
        n = len(tour)
        if n == 0:
            raise ValidationError("cannot index an empty tour")
        mat = np.array([f.descriptor for f in tour.frames], dtype=np.float64)
        norms = np.linalg.norm(mat, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValidationError("descriptor index requires unit-norm vectors")
        idx = np.array([f.index for f in tour.frames], dtype=np.int64)
        return cls(frame_indices=idx, matrix=mat, dimension=mat.shape[1])


def knn_candidates(index: DescriptorIndex, q: QueryObservation, k: int) -> List[int]:
    """The k frames nearest to q's descriptor (L2), ties by smaller frame index."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    qv = np.asarray(q.descriptor, dtype=np.float64)
    if qv.shape[0] != index.dimension:
        raise ValidationError(
            f"descriptor dimension {qv.shape[0]} does not match index {index.dimension}"
        )
    d2 = np.sum((index.matrix - qv[None, :]) ** 2, axis=1)
    order = np.lexsort((index.frame_indices, d2))
    return [int(index.frame_indices[i]) for i in order[:k]]


@dataclass
class LocalizationContext:
    """Immutable world data localization runs against."""

    index: DescriptorIndex
    tour: Tour
    camera: CameraModel
    landmarks: Dict[int, Landmark3]
    _vertex_xy: Optional[np.ndarray] = field(default=None, repr=False)
    _vertex_ids: Optional[np.ndarray] = field(default=None, repr=False)

    def vertex_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._vertex_xy is None:
            xy = []
            ids = []
            for f in self.tour.frames:
                if f.pose is None:
                    raise ValidationError(f"frame {f.index} has no pose")
                xy.append((f.pose.x, f.pose.y))
                ids.append(f.index)
            self._vertex_xy = np.array(xy, dtype=np.float64)
            self._vertex_ids = np.array(ids, dtype=np.int64)
        return self._vertex_xy, self._vertex_ids


def nearest_vertex(ctx: LocalizationContext, pose: Pose2) -> int:
    xy, ids = ctx.vertex_arrays()
    d2 = np.sum((xy - np.array([pose.x, pose.y])) ** 2, axis=1)
    order = np.lexsort((ids, d2))
    return int(ids[order[0]])


# ---------------------------------------------------------------------------
# Reprojection residuals and Gauss-Newton refinement


def reprojection_residual(
    cam: CameraModel, pose: Pose2, points: np.ndarray, pixels: np.ndarray
) -> np.ndarray:
    """Stacked (u, v) residuals, shape (2n,). Points behind the camera get
    a large sentinel residual so they can never look like inliers."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dx = points[:, 0] - pose.x
    dy = points[:, 1] - pose.y
    fwd = c * dx + s * dy
    left = -s * dx + c * dy
    up = points[:, 2] - cam.mount_height
    ok = fwd > _FWD_EPS
    safe_fwd = np.where(ok, fwd, 1.0)
    u = cam.cx - cam.fx * left / safe_fwd
    v = cam.cy - cam.fy * up / safe_fwd
    r = np.empty(2 * points.shape[0])
    r[0::2] = np.where(ok, u - pixels[:, 0], _BAD_RESIDUAL)
    r[1::2] = np.where(ok, v - pixels[:, 1], _BAD_RESIDUAL)
    return r


def reprojection_jacobian(
    cam: CameraModel, pose: Pose2, points: np.ndarray
) -> np.ndarray:
    """Analytic Jacobian of the stacked residual w.r.t. (x, y, theta), (2n, 3).

    With fwd = c*dx + s*dy, left = -s*dx + c*dy, up = z - mount_height:
        u = cx - fx * left / fwd
        v = cy - fy * up / fwd
    and d(fwd)/dtheta = left, d(left)/dtheta = -fwd.
    """
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dx = points[:, 0] - pose.x
    dy = points[:, 1] - pose.y
    fwd = c * dx + s * dy
    left = -s * dx + c * dy
    up = points[:, 2] - cam.mount_height
    ok = fwd > _FWD_EPS
    fwd = np.where(ok, fwd, 1.0)
    f2 = fwd * fwd
    J = np.zeros((2 * points.shape[0], 3))
    # du/dp = -fx * (dleft * fwd - left * dfwd) / fwd^2
    J[0::2, 0] = -cam.fx * (s * fwd + c * left) / f2
    J[0::2, 1] = -cam.fx * (-c * fwd + s * left) / f2
    J[0::2, 2] = cam.fx * (f2 + left * left) / f2
    # dv/dp = fy * up * dfwd / fwd^2
    J[1::2, 0] = cam.fy * up * (-c) / f2
    J[1::2, 1] = cam.fy * up * (-s) / f2
    J[1::2, 2] = cam.fy * up * left / f2
    bad = np.repeat(~ok, 2)
    J[bad, :] = 0.0
    return J


def _cost(cam: CameraModel, pose: Pose2, points: np.ndarray, pixels: np.ndarray) -> float:
    r = reprojection_residual(cam, pose, points, pixels)
    return float(r @ r)


def gauss_newton_refine(
    cam: CameraModel,
    points: np.ndarray,
    pixels: np.ndarray,
    init: Pose2,
    max_iters: int = 25,
    tol: float = 1e-12,
) -> Pose2:
    """Damped Gauss-Newton on the summed squared pixel residual.

    Steps are halved until the cost does not increase, so the cost sequence
    is non-increasing.
    """
    pose = init
    r = reprojection_residual(cam, pose, points, pixels)
    cost = float(r @ r)
    for _ in range(max_iters):
        J = reprojection_jacobian(cam, pose, points)
        jtj = J.T @ J
        jtr = J.T @ r
        try:
            delta = np.linalg.solve(jtj + 1e-12 * np.eye(3), -jtr)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(delta)):
            break
        step = 1.0
        improved = False
        while step >= 1.0 / 64.0:
            cand = Pose2(
                pose.x + step * delta[0],
                pose.y + step * delta[1],
                normalize_angle(pose.theta + step * delta[2]),
            )
            cand_r = reprojection_residual(cam, cand, points, pixels)
            cand_cost = float(cand_r @ cand_r)
            if cand_cost <= cost:
                if cost - cand_cost < tol:
                    return cand if cand_cost < cost else pose
                pose, r, cost = cand, cand_r, cand_cost
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return pose


def grid_initial_pose(
    cam: CameraModel, points: np.ndarray, pixels: np.ndarray, n_theta: int = 24
) -> Pose2:
    """Coarse start: sweep heading, solve (x, y) linearly, keep the lowest cost.

    For a fixed heading the projection constraints are linear in (x, y):
        from u: ((cx-u)*c + fx*s) * (X - x) + ((cx-u)*s - fx*c) * (Y - y) = 0
        from v: (cy-v) * fwd = fy * (Z - mount_height)
    so each heading costs one 2x2 normal-equation solve, batched over the
    whole sweep.
    """
    thetas = -math.pi + (np.arange(n_theta) + 0.5) * 2.0 * math.pi / n_theta
    c = np.cos(thetas)[:, None]  # (T, 1)
    s = np.sin(thetas)[:, None]
    X, Y, Z = points[:, 0], points[:, 1], points[:, 2]
    u, v = pixels[:, 0], pixels[:, 1]
    A = (cam.cx - u) * c + cam.fx * s  # (T, n)
    B = (cam.cx - u) * s - cam.fx * c
    C = (cam.cy - v) * c
    D = (cam.cy - v) * s
    bu = A * X + B * Y
    bv = C * X + D * Y - cam.fy * (Z - cam.mount_height)
    m00 = np.sum(A * A + C * C, axis=1)
    m01 = np.sum(A * B + C * D, axis=1)
    m11 = np.sum(B * B + D * D, axis=1)
    r0 = np.sum(A * bu + C * bv, axis=1)
    r1 = np.sum(B * bu + D * bv, axis=1)
    det = m00 * m11 - m01 * m01
    ok = np.abs(det) > 1e-12
    safe_det = np.where(ok, det, 1.0)
    xs = (m11 * r0 - m01 * r1) / safe_det
    ys = (m00 * r1 - m01 * r0) / safe_det

    # vectorized cost of every (x, y, theta) candidate
    dx = X[None, :] - xs[:, None]
    dy = Y[None, :] - ys[:, None]
    fwd = c * dx + s * dy
    left = -s * dx + c * dy
    front = fwd > _FWD_EPS
    sf = np.where(front, fwd, 1.0)
    ru = np.where(front, cam.cx - cam.fx * left / sf - u, _BAD_RESIDUAL)
    rv = np.where(front, cam.cy - cam.fy * (Z - cam.mount_height) / sf - v, _BAD_RESIDUAL)
    costs = np.sum(ru * ru + rv * rv, axis=1)
    costs = np.where(ok, costs, np.inf)
    best = int(np.argmin(costs))
    if not np.isfinite(costs[best]):
        return Pose2(0.0, 0.0, 0.0)
    return Pose2(float(xs[best]), float(ys[best]), normalize_angle(float(thetas[best])))


def _solve_minimal(
    cam: CameraModel,
    points: np.ndarray,
    pixels: np.ndarray,
    init: Optional[Pose2] = None,
    accept_px: float = math.inf,
) -> Pose2:
    """Minimal-sample hypothesis. A warm-start init is accepted only when
    refinement from it explains the sample within accept_px per point;
    otherwise fall back to the coarse grid."""
    if init is not None:
        pose = gauss_newton_refine(cam, points, pixels, init)
        r = reprojection_residual(cam, pose, points, pixels)
        if float(np.max(np.hypot(r[0::2], r[1::2]))) <= accept_px:
            return pose
    init = grid_initial_pose(cam, points, pixels)
    return gauss_newton_refine(cam, points, pixels, init)


def solve_pose(
    cam: CameraModel,
    correspondences: Sequence[Tuple[Tuple[float, float], Landmark3]],
    params: RansacParams = RansacParams(),
    init: Optional[Pose2] = None,
) -> Tuple[Pose2, np.ndarray]:
    """RANSAC + Gauss-Newton 3-DoF pose from 2D-3D correspondences.

    Returns the refined pose and the boolean inlier mask computed from it.
    Deterministic for a fixed seed. An optional init pose warm-starts the
    first hypothesis (online localization passes the last known pose).
    Raises ValidationError for fewer than 3 correspondences and
    SolveFailure when no hypothesis reaches min_inliers.
    """
    n = len(correspondences)
    if n < 3:
        raise ValidationError(f"need at least 3 correspondences, got {n}")
    pixels = np.array([c[0] for c in correspondences], dtype=np.float64)
    points = np.array([c[1].position for c in correspondences], dtype=np.float64)

    rng = random.Random(params.seed)
    best_count = 0
    best_mask: Optional[np.ndarray] = None
    best_pose: Optional[Pose2] = None
    needed = params.iterations
    i = 0
    while i < min(params.iterations, needed):
        i += 1
        sample = rng.sample(range(n), 3)
        pose_h = _solve_minimal(
            cam,
            points[sample],
            pixels[sample],
            init=init if i == 1 else None,
            accept_px=params.inlier_px,
        )
        r = reprojection_residual(cam, pose_h, points, pixels)
        norms = np.hypot(r[0::2], r[1::2])
        mask = norms <= params.inlier_px
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            best_pose = pose_h
            w = count / n
            if w >= 1.0:
                break
            denom = math.log(max(1e-12, 1.0 - w**3))
            needed = math.ceil(math.log(1.0 - params.confidence) / denom)
    if best_pose is None or best_count < params.min_inliers:
        raise SolveFailure(
            f"best hypothesis had {best_count} inliers, need {params.min_inliers}"
        )
    refined = gauss_newton_refine(cam, points[best_mask], pixels[best_mask], best_pose)
    r = reprojection_residual(cam, refined, points, pixels)
    norms = np.hypot(r[0::2], r[1::2])
    final_mask = norms <= params.inlier_px
    if int(final_mask.sum()) < params.min_inliers:
        raise SolveFailure(
            f"refined pose kept {int(final_mask.sum())} inliers, need {params.min_inliers}"
        )
    return refined, final_mask


def localize(
    ctx: LocalizationContext,
    q: QueryObservation,
    last: Pose2,
    cfg: LocalizationConfig = LocalizationConfig(),
) -> LocalizationResult:
    """Full hierarchical localization with last-known-pose fallback.

    Fallback (never an error): the query is feature-sparse or every
    retrieval candidate failed the pose solve.
    """
    if len(q.observations) < cfg.min_features:
        return _fallback(ctx, last)
    candidates = knn_candidates(ctx.index, q, cfg.k)
    corrs = []
    for rank, cand in enumerate(candidates):
        cand_ids = {o.landmark_id for o in ctx.tour.frame(cand).observations}
        corr = [
            (o.pixel, ctx.landmarks[o.landmark_id])
            for o in q.observations
            if o.landmark_id in cand_ids and o.landmark_id in ctx.landmarks
        ]
        if len(corr) >= 3:
            corrs.append((rank, cand, corr))
    # A candidate's inlier count is bounded by its correspondence count, so
    # solving in descending-bound order lets us stop once no remaining
    # candidate can beat (or tie) the best so far. Ties between candidates
    # go to the earlier retrieval rank, matching a plain scan in knn order.
    corrs.sort(key=lambda t: (-len(t[2]), t[0]))
    best: Optional[Tuple[int, int, Pose2, int]] = None  # (inliers, -rank, pose, cand)
    for rank, cand, corr in corrs:
        if best is not None and best[0] > len(corr):
            break
        try:
            pose, mask = solve_pose(ctx.camera, corr, cfg.ransac, init=last)
        except (SolveFailure, ValidationError):
            continue
        count = int(mask.sum())
        if best is None or (count, -rank) > (best[0], best[1]):
            best = (count, -rank, pose, cand)
    if best is None:
        return _fallback(ctx, last)
    count, _, pose, cand = best
    return LocalizationResult(
        pose=pose,
        nearest_vertex=nearest_vertex(ctx, pose),
        inliers=count,
        candidate=cand,
        fallback=False,
    )


def _fallback(ctx: LocalizationContext, last: Pose2) -> LocalizationResult:
    return LocalizationResult(
        pose=last,
        nearest_vertex=nearest_vertex(ctx, last),
        inliers=0,
        candidate=None,
        fallback=True,
    )


def evaluate_ate(pairs: Sequence[Tuple[Pose2, Pose2]]) -> Dict[str, object]:
    """Absolute trajectory error statistics over (estimate, ground truth) pairs."""
    if not pairs:
        raise ValidationError("evaluate_ate requires at least one pair")
    errors = [
        math.hypot(est.x - gt.x, est.y - gt.y) for est, gt in pairs
    ]
    return {
        "median": float(np.median(errors)),
        "mean": float(np.mean(errors)),
        "per_sample": errors,
    }
