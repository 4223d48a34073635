"""Pinhole projection, PnP + RANSAC pose estimation and pose-error metrics.

Poses map model coordinates into the camera frame, ``x_cam = R @ X + t``.
Cameras follow the x-right / y-down / z-forward convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateConfigurationError, TooFewCorrespondencesError, ValidationError
from .model import Bbox3, CameraIntrinsics, Pose

CHIRALITY_EPS = 1e-9
DEGENERACY_TOL = 1e-10
LINEAR_MIN_POINTS = 6
# LM steps applied to each minimal-sample DLT hypothesis; raw 6-point DLT is
# too noise-sensitive to score inliers at pixel-level thresholds.
HYPOTHESIS_POLISH_ITERATIONS = 5


@dataclass(frozen=True)
class Correspondence:
    pixel: tuple[float, float]
    point_id: int
    position: tuple[float, float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "pixel", tuple(float(v) for v in self.pixel))
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "point_id", int(self.point_id))
        if not all(math.isfinite(v) for v in self.pixel + self.position):
            raise ValidationError(f"correspondence for point {self.point_id} is not finite")


@dataclass(frozen=True)
class EstimatorConfig:
    ransac_max_iterations: int = 1000
    ransac_inlier_threshold_px: float = 3.0
    ransac_confidence: float = 0.999
    min_correspondences: int = 6
    refine_max_iterations: int = 50
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not self.ransac_inlier_threshold_px > 0:
            raise ValidationError("estimator.ransac_inlier_threshold_px: must be > 0")
        if self.min_correspondences < 4:
            raise ValidationError("estimator.min_correspondences: must be >= 4")
        if not 0 < self.ransac_confidence < 1:
            raise ValidationError("estimator.ransac_confidence: must lie in (0, 1)")
        if self.ransac_max_iterations < 1:
            raise ValidationError("estimator.ransac_max_iterations: must be >= 1")
        if self.refine_max_iterations < 0:
            raise ValidationError("estimator.refine_max_iterations: must be >= 0")

    @property
    def sample_size(self) -> int:
        return max(self.min_correspondences, LINEAR_MIN_POINTS)


@dataclass(frozen=True)
class PoseEstimate:
    pose: Pose | None
    inlier_ids: frozenset[int]
    num_iterations_used: int
    converged: bool


# --- rotations -------------------------------------------------------------


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def rotvec_to_matrix(w: np.ndarray) -> np.ndarray:
    """Rodrigues' formula."""
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        return np.eye(3) + skew(w)
    K = skew(np.asarray(w) / theta)
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


def qvec_to_rotmat(q: Sequence[float]) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * z * x + 2 * w * y],
            [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
            [2 * z * x - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
        ]
    )


def rotmat_to_qvec(R: np.ndarray) -> np.ndarray:
    Rxx, Ryx, Rzx, Rxy, Ryy, Rzy, Rxz, Ryz, Rzz = np.asarray(R, dtype=np.float64).flat
    K = np.array(
        [
            [Rxx - Ryy - Rzz, 0, 0, 0],
            [Ryx + Rxy, Ryy - Rxx - Rzz, 0, 0],
            [Rzx + Rxz, Rzy + Ryz, Rzz - Rxx - Ryy, 0],
            [Ryz - Rzy, Rzx - Rxz, Rxy - Ryx, Rxx + Ryy + Rzz],
        ]
    ) / 3.0
    eigvals, eigvecs = np.linalg.eigh(K)
    q = eigvecs[[3, 0, 1, 2], np.argmax(eigvals)]
    if q[0] < 0:
        q = -q
    return q


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    return U @ D @ Vt


def look_at(center: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> Pose:
    """Pose of a camera at ``center`` whose optical axis passes through ``target``."""
    center = np.asarray(center, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - center
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    if np.linalg.norm(np.cross(fwd, up)) < 1e-6:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return Pose(R, -R @ center)


# --- projection ------------------------------------------------------------


def project_points(camera: CameraIntrinsics, R: np.ndarray, t: np.ndarray, X: np.ndarray):
    """Vectorised projection. Returns ``(uv, in_front)``; uv is NaN where not in front."""
    Xc = np.asarray(X, dtype=np.float64).reshape(-1, 3) @ np.asarray(R).T + np.asarray(t)
    z = Xc[:, 2]
    in_front = z > CHIRALITY_EPS
    safe_z = np.where(in_front, z, 1.0)
    uv = np.empty((len(Xc), 2))
    uv[:, 0] = camera.fx * Xc[:, 0] / safe_z + camera.cx
    uv[:, 1] = camera.fy * Xc[:, 1] / safe_z + camera.cy
    uv[~in_front] = np.nan
    return uv, in_front


def project(camera: CameraIntrinsics, pose: Pose, point3) -> np.ndarray | None:
    """Project one point; ``None`` marks a point on or behind the image plane."""
    uv, in_front = project_points(camera, pose.rotation, pose.translation, point3)
    return uv[0] if in_front[0] else None


def reprojection_errors(camera: CameraIntrinsics, R, t, X, uv) -> np.ndarray:
    """Per-point pixel error; ``inf`` for points behind the camera."""
    proj, in_front = project_points(camera, R, t, X)
    err = np.linalg.norm(proj - uv, axis=1)
    err[~in_front] = np.inf
    return err


# --- linear PnP ------------------------------------------------------------


def _as_arrays(correspondences: Sequence[Correspondence]):
    X = np.array([c.position for c in correspondences], dtype=np.float64).reshape(-1, 3)
    uv = np.array([c.pixel for c in correspondences], dtype=np.float64).reshape(-1, 2)
    ids = np.array([c.point_id for c in correspondences], dtype=np.int64)
    return X, uv, ids


def _normalized_image_coords(camera: CameraIntrinsics, uv: np.ndarray) -> np.ndarray:
    return np.column_stack([(uv[:, 0] - camera.cx) / camera.fx, (uv[:, 1] - camera.cy) / camera.fy])


def _dlt_pose(X: np.ndarray, xn: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """DLT on normalized image coordinates, Hartley-conditioned on both sides."""
    n = len(X)
    c2 = xn.mean(axis=0)
    d2 = np.linalg.norm(xn - c2, axis=1).mean()
    c3 = X.mean(axis=0)
    d3 = np.linalg.norm(X - c3, axis=1).mean()
    if d2 < 1e-300 or d3 < 1e-300:
        raise DegenerateConfigurationError("correspondences collapse to a single point")
    s2, s3 = math.sqrt(2.0) / d2, math.sqrt(3.0) / d3
    T2 = np.array([[s2, 0, -s2 * c2[0]], [0, s2, -s2 * c2[1]], [0, 0, 1.0]])
    T3 = np.eye(4)
    T3[:3, :3] *= s3
    T3[:3, 3] = -s3 * c3
    Xh = np.column_stack([(X - c3) * s3, np.ones(n)])
    u = (xn[:, 0] - c2[0]) * s2
    v = (xn[:, 1] - c2[1]) * s2

    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -u[:, None] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -v[:, None] * Xh
    _, s, Vt = np.linalg.svd(A)
    if s[0] <= 0 or s[-2] / s[0] < DEGENERACY_TOL:
        raise DegenerateConfigurationError(
            "correspondences are degenerate (coplanar or collinear points)"
        )
    P = np.linalg.solve(T2, Vt[-1].reshape(3, 4)) @ T3

    Xw = np.column_stack([X, np.ones(n)])
    depths = Xw @ P[2]
    if np.count_nonzero(depths > 0) < n / 2:
        P = -P
    M = P[:, :3]
    U, S, Vt3 = np.linalg.svd(M)
    d = 1.0 if np.linalg.det(U @ Vt3) > 0 else -1.0
    R = U @ np.diag([1.0, 1.0, d]) @ Vt3
    scale = (S[0] + S[1] + d * S[2]) / 3.0
    if abs(scale) < 1e-300:
        raise DegenerateConfigurationError("linear solution has zero scale")
    return R, P[:, 3] / scale


def solve_pnp_linear(correspondences: Sequence[Correspondence], camera: CameraIntrinsics) -> Pose:
    """Pose from six or more non-coplanar 2D-3D correspondences via DLT."""
    if len(correspondences) < LINEAR_MIN_POINTS:
        raise TooFewCorrespondencesError(
            f"linear PnP needs at least {LINEAR_MIN_POINTS} correspondences, got {len(correspondences)}"
        )
    X, uv, _ = _as_arrays(correspondences)
    R, t = _dlt_pose(X, _normalized_image_coords(camera, uv))
    return Pose(R, t)


# --- nonlinear refinement --------------------------------------------------


def _residuals_and_jacobian(R, t, X, uv, camera: CameraIntrinsics, with_jacobian: bool = True):
    """Stacked reprojection residuals and their Jacobian.

    The Jacobian is taken w.r.t. ``(w, dt)`` where the perturbed pose is
    ``(expm(skew(w)) @ R, t + dt)``.
    """
    RX = X @ R.T
    Xc = RX + t
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    if np.any(z <= CHIRALITY_EPS):
        return None, None
    inv_z = 1.0 / z
    r = np.empty((len(X), 2))
    r[:, 0] = camera.fx * x * inv_z + camera.cx - uv[:, 0]
    r[:, 1] = camera.fy * y * inv_z + camera.cy - uv[:, 1]
    if not with_jacobian:
        return r.ravel(), None

    n = len(X)
    dproj = np.zeros((n, 2, 3))
    dproj[:, 0, 0] = camera.fx * inv_z
    dproj[:, 0, 2] = -camera.fx * x * inv_z**2
    dproj[:, 1, 1] = camera.fy * inv_z
    dproj[:, 1, 2] = -camera.fy * y * inv_z**2
    # d(Xc)/dw = -skew(RX)
    neg_skew = np.zeros((n, 3, 3))
    neg_skew[:, 0, 1] = RX[:, 2]
    neg_skew[:, 0, 2] = -RX[:, 1]
    neg_skew[:, 1, 0] = -RX[:, 2]
    neg_skew[:, 1, 2] = RX[:, 0]
    neg_skew[:, 2, 0] = RX[:, 1]
    neg_skew[:, 2, 1] = -RX[:, 0]
    J = np.concatenate([dproj @ neg_skew, dproj], axis=2)
    return r.ravel(), J.reshape(2 * n, 6)


def _lm(R, t, X, uv, camera, max_iterations: int):
    r, J = _residuals_and_jacobian(R, t, X, uv, camera)
    if r is None:
        return R, t
    cost = float(r @ r)
    lam = 1e-3
    for _ in range(max_iterations):
        H = J.T @ J
        g = J.T @ r
        try:
            delta = -np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-12), g)
        except np.linalg.LinAlgError:
            break
        if np.linalg.norm(delta) < 1e-10:
            break
        R_new = rotvec_to_matrix(delta[:3]) @ R
        t_new = t + delta[3:]
        r_new, J_new = _residuals_and_jacobian(R_new, t_new, X, uv, camera)
        new_cost = float(r_new @ r_new) if r_new is not None else math.inf
        if new_cost < cost:
            R, t, r, J, cost = R_new, t_new, r_new, J_new, new_cost
            lam = max(lam / 10.0, 1e-12)
        else:
            lam *= 10.0
            if lam > 1e12:
                break
    return nearest_rotation(R), t


def total_squared_error(pose: Pose, correspondences: Sequence[Correspondence], camera: CameraIntrinsics) -> float:
    X, uv, _ = _as_arrays(correspondences)
    err = reprojection_errors(camera, pose.rotation, pose.translation, X, uv)
    return float(np.sum(err**2))


def refine_pose(
    initial: Pose,
    correspondences: Sequence[Correspondence],
    camera: CameraIntrinsics,
    max_iterations: int = 50,
) -> Pose:
    """Levenberg-Marquardt on total squared reprojection error.

    Never returns a pose worse than ``initial``.
    """
    if len(correspondences) < 4:
        raise TooFewCorrespondencesError(f"refinement needs at least 4 inliers, got {len(correspondences)}")
    X, uv, _ = _as_arrays(correspondences)
    return _refine_arrays(initial.rotation, initial.translation, X, uv, camera, max_iterations, initial)


def _refine_arrays(R0, t0, X, uv, camera, max_iterations, initial: Pose | None = None) -> Pose:
    R, t = _lm(np.array(R0), np.array(t0), X, uv, camera, max_iterations)
    before = np.sum(reprojection_errors(camera, R0, t0, X, uv) ** 2)
    after = np.sum(reprojection_errors(camera, R, t, X, uv) ** 2)
    if not after < before:
        return initial if initial is not None else Pose(R0, t0)
    return Pose(R, t)


# --- RANSAC ----------------------------------------------------------------


def _required_iterations(inlier_fraction: float, sample_size: int, confidence: float) -> float:
    good = inlier_fraction**sample_size
    if good >= 1.0:
        return 0.0
    if good <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log(1.0 - good)


def ransac_pnp(
    correspondences: Sequence[Correspondence],
    camera: CameraIntrinsics,
    config: EstimatorConfig = EstimatorConfig(),
) -> PoseEstimate:
    """Hypothesize-and-verify PnP followed by refinement on the inlier set.

    The hypothesis with the most inliers wins; ties go to the lower mean
    inlier reprojection error.  Points behind the camera are never inliers.
    """
    n = len(correspondences)
    k = config.sample_size
    if n < k:
        raise TooFewCorrespondencesError(f"RANSAC needs at least {k} correspondences, got {n}")
    X, uv, ids = _as_arrays(correspondences)
    xn = _normalized_image_coords(camera, uv)
    rng = np.random.default_rng(config.rng_seed)
    thr = config.ransac_inlier_threshold_px

    best = None  # (count, mean_err, R, t, mask)
    used = 0
    for it in range(config.ransac_max_iterations):
        used = it + 1
        sample = rng.choice(n, size=k, replace=False)
        try:
            R, t = _dlt_pose(X[sample], xn[sample])
        except DegenerateConfigurationError:
            continue
        R, t = _lm(R, t, X[sample], uv[sample], camera, HYPOTHESIS_POLISH_ITERATIONS)
        err = reprojection_errors(camera, R, t, X, uv)
        mask = err < thr
        count = int(mask.sum())
        if count == 0:
            continue
        mean_err = float(err[mask].mean())
        if best is None or count > best[0] or (count == best[0] and mean_err < best[1]):
            best = (count, mean_err, R, t, mask)
            needed = _required_iterations(count / n, k, config.ransac_confidence)
        if best is not None and used >= needed:
            break

    if best is None:
        return PoseEstimate(None, frozenset(), used, False)
    count, _, R, t, mask = best
    if count < config.min_correspondences:
        return PoseEstimate(Pose(R, t), frozenset(ids[mask].tolist()), used, False)

    # re-fit on the full inlier set, keep whichever start is better
    Xi, uvi = X[mask], uv[mask]
    R0, t0 = R, t
    if count >= LINEAR_MIN_POINTS:
        try:
            R1, t1 = _dlt_pose(Xi, xn[mask])
            if np.sum(reprojection_errors(camera, R1, t1, Xi, uvi) ** 2) < np.sum(
                reprojection_errors(camera, R0, t0, Xi, uvi) ** 2
            ):
                R0, t0 = R1, t1
        except DegenerateConfigurationError:
            pass
    pose = _refine_arrays(R0, t0, Xi, uvi, camera, config.refine_max_iterations)
    final_mask = reprojection_errors(camera, pose.rotation, pose.translation, X, uv) < thr
    inliers = frozenset(ids[final_mask].tolist())
    return PoseEstimate(pose, inliers, used, len(inliers) >= config.min_correspondences)


# --- error metrics -----------------------------------------------------------


def loc_error(t_gt, t_hat) -> float:
    """Euclidean distance between true and estimated object locations."""
    return float(np.linalg.norm(np.asarray(t_gt, dtype=np.float64) - np.asarray(t_hat, dtype=np.float64)))


def geodesic_error(R_gt, R_hat) -> float:
    """Rotation angle of ``R_gt^T R_hat`` in radians, in ``[0, pi]``.

    The cosine comes from the trace and the sine from the skew part; atan2 of
    the pair equals the clamped arccos of the cosine but keeps full precision
    near 0 and pi, where arccos amplifies rounding to ~1e-8.
    """
    dR = np.asarray(R_gt, dtype=np.float64).T @ np.asarray(R_hat, dtype=np.float64)
    cos = (np.trace(dR) - 1.0) / 2.0
    sin = 0.5 * math.hypot(dR[2, 1] - dR[1, 2], dR[0, 2] - dR[2, 0], dR[1, 0] - dR[0, 1])
    return float(math.atan2(sin, cos))


def bbox_add_error(pose_gt: Pose, pose_hat: Pose, bbox: Bbox3) -> float:
    """Mean displacement of the 8 bbox corners, divided by the bbox diagonal."""
    corners = bbox.corners
    diff = pose_gt.transform(corners) - pose_hat.transform(corners)
    return float(np.linalg.norm(diff, axis=1).mean() / bbox.diagonal)


def translation_ratio_error(pose_gt: Pose, pose_hat: Pose, bbox: Bbox3) -> float:
    """Location error divided by the bbox diagonal (alternative edge criterion)."""
    return loc_error(pose_gt.translation, pose_hat.translation) / bbox.diagonal
