"""Synthetic scenes with exact ground truth.

A scene is an object-centred point cloud, a set of reference cameras looking
at the object (the SfM model), and held-out query views with their true poses.
Keypoints are exact projections; noise is injected later, at match time.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .correspondence import QueryView
from .errors import ParseError, ValidationError
from .geometry import look_at, project_points, qvec_to_rotmat, rotmat_to_qvec
from .model import Bbox3, CameraIntrinsics, Point3D, Pose, RefImage, SfmModel
from .model_io import dumps_canonical, save_native

DISTRIBUTIONS = ("cube_surface", "sphere_surface", "gaussian_blob")
LAYOUTS = ("ring", "sphere_cap", "hemisphere")
MIN_POINTS_PER_CAMERA = 6
SPHERE_CAP_MIN_ELEVATION_DEG = 45.0


@dataclass(frozen=True)
class SynthConfig:
    num_points: int = 500
    point_distribution: str = "cube_surface"
    object_extent: float = 0.1
    num_ref_cameras: int = 36
    camera_layout: str = "ring"
    camera_radius: float = 0.6
    num_query_cameras: int = 20
    descriptor_dim: int = 64
    visibility_fraction: float = 1.0
    rng_seed: int = 0
    # None disables the test; otherwise a surface point is only detected when
    # the camera sees it within this angle of its outward normal
    max_incidence_deg: float | None = None
    ring_elevation_deg: float = 15.0
    query_jitter_deg: float = 10.0
    query_radius_jitter: float = 0.1
    focal_px: float = 500.0
    image_width: int = 640
    image_height: int = 480

    def __post_init__(self) -> None:
        problems = []
        if self.num_points < 8:
            problems.append(f"num_points: must be >= 8 (got {self.num_points})")
        if self.num_ref_cameras < 2:
            problems.append(f"num_ref_cameras: must be >= 2 (got {self.num_ref_cameras})")
        if not self.object_extent > 0:
            problems.append("object_extent: must be > 0")
        if not self.camera_radius > self.object_extent:
            problems.append(
                f"camera_radius: must exceed object_extent ({self.camera_radius} <= {self.object_extent})"
            )
        if self.point_distribution not in DISTRIBUTIONS:
            problems.append(f"point_distribution: must be one of {', '.join(DISTRIBUTIONS)}")
        if self.camera_layout not in LAYOUTS:
            problems.append(f"camera_layout: must be one of {', '.join(LAYOUTS)}")
        if self.num_query_cameras < 0:
            problems.append("num_query_cameras: must be >= 0")
        if self.descriptor_dim < 2:
            problems.append("descriptor_dim: must be >= 2")
        if not 0 < self.visibility_fraction <= 1:
            problems.append("visibility_fraction: must lie in (0, 1]")
        if self.max_incidence_deg is not None and not 0 < self.max_incidence_deg <= 180:
            problems.append("max_incidence_deg: must lie in (0, 180]")
        if not self.focal_px > 0 or self.image_width <= 0 or self.image_height <= 0:
            problems.append("focal_px, image_width, image_height: must be positive")
        if problems:
            raise ValidationError("; ".join(problems))

    @property
    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics(
            self.focal_px, self.focal_px, self.image_width / 2, self.image_height / 2, self.image_width, self.image_height
        )


@dataclass(frozen=True)
class Query:
    view: QueryView
    pose_gt: Pose


@dataclass(frozen=True)
class Scene:
    model: SfmModel
    queries: list[Query]


def _sample_points(cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Positions and unit outward normals."""
    n, e = cfg.num_points, cfg.object_extent
    if cfg.point_distribution == "cube_surface":
        face = rng.integers(0, 6, size=n)
        uv = rng.uniform(-e, e, size=(n, 2))
        axis, sign = face // 2, np.where(face % 2 == 0, 1.0, -1.0)
        pts = np.empty((n, 3))
        normals = np.zeros((n, 3))
        for k in range(n):
            others = [a for a in range(3) if a != axis[k]]
            pts[k, axis[k]] = sign[k] * e
            pts[k, others] = uv[k]
            normals[k, axis[k]] = sign[k]
        return pts, normals
    if cfg.point_distribution == "sphere_surface":
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return e * v, v
    pts = np.clip(rng.normal(scale=e / 2, size=(n, 3)), -e, e)
    norms = np.linalg.norm(pts, axis=1, keepdims=True)
    return pts, pts / np.maximum(norms, 1e-12)


def _direction(azimuth: float, elevation: float) -> np.ndarray:
    return np.array([math.cos(elevation) * math.cos(azimuth), math.cos(elevation) * math.sin(azimuth), math.sin(elevation)])


def layout_angles(cfg: SynthConfig) -> list[tuple[float, float]]:
    """(azimuth, elevation) in radians for each reference camera."""
    n = cfg.num_ref_cameras
    if cfg.camera_layout == "ring":
        elev = math.radians(cfg.ring_elevation_deg)
        return [(2 * math.pi * k / n, elev) for k in range(n)]
    z_lo = 0.0 if cfg.camera_layout == "hemisphere" else math.sin(math.radians(SPHERE_CAP_MIN_ELEVATION_DEG))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    out = []
    for k in range(n):
        z = z_lo + (1.0 - z_lo) * (k + 0.5) / n
        out.append(((k * golden) % (2 * math.pi), math.asin(z)))
    return out


def camera_pose(azimuth: float, elevation: float, radius: float) -> Pose:
    return look_at(radius * _direction(azimuth, elevation), np.zeros(3))


def observe(cfg: SynthConfig, camera: CameraIntrinsics, pose: Pose, points: np.ndarray, normals: np.ndarray,
            rng: np.random.Generator) -> np.ndarray:
    """Indices of points detected by a camera, with their exact pixel projections."""
    uv, in_front = project_points(camera, pose.rotation, pose.translation, points)
    mask = in_front & camera.contains(np.nan_to_num(uv, nan=-1.0))
    if cfg.max_incidence_deg is not None:
        to_cam = pose.center - points
        to_cam /= np.linalg.norm(to_cam, axis=1, keepdims=True)
        mask &= np.einsum("ij,ij->i", to_cam, normals) >= math.cos(math.radians(cfg.max_incidence_deg))
    # detector repeatability: each point is independently missed
    mask &= rng.random(len(points)) < cfg.visibility_fraction
    idx = np.flatnonzero(mask)
    return idx, uv[idx]


def generate_scene(cfg: SynthConfig) -> Scene:
    rng = np.random.default_rng(cfg.rng_seed)
    points, normals = _sample_points(cfg, rng)
    desc = rng.normal(size=(cfg.num_points, cfg.descriptor_dim))
    desc /= np.linalg.norm(desc, axis=1, keepdims=True)
    cam = cfg.camera

    images = {}
    tracks: dict[int, list[tuple[int, int]]] = {}
    for k, (az, el) in enumerate(layout_angles(cfg)):
        image_id = k + 1
        pose = camera_pose(az, el, cfg.camera_radius)
        idx, uv = observe(cfg, cam, pose, points, normals, rng)
        if len(idx) < MIN_POINTS_PER_CAMERA:
            raise ValidationError(
                f"reference camera {k} sees only {len(idx)} points (need {MIN_POINTS_PER_CAMERA}); "
                "adjust camera_radius, object_extent or visibility"
            )
        images[image_id] = RefImage(image_id, cam, pose, uv, desc[idx], name=f"ref_{k:04d}", camera_id=1)
        for kp, pid in enumerate(idx):
            tracks.setdefault(int(pid), []).append((image_id, kp))

    model_points = {pid: Point3D(pid, points[pid], track, desc[pid]) for pid, track in sorted(tracks.items())}
    bbox = Bbox3.from_points(np.array([p.position for p in model_points.values()]))
    model = SfmModel(model_points, images, bbox)

    layout = layout_angles(cfg)
    jitter = math.radians(cfg.query_jitter_deg)
    queries = []
    for _ in range(cfg.num_query_cameras):
        az, el = layout[int(rng.integers(len(layout)))]
        az += rng.normal(0.0, jitter)
        el = float(np.clip(el + rng.normal(0.0, jitter), -math.pi / 2 + 1e-3, math.pi / 2 - 1e-3))
        radius = cfg.camera_radius * (1.0 + rng.uniform(-cfg.query_radius_jitter, cfg.query_radius_jitter))
        radius = max(radius, cfg.object_extent * 1.5)
        pose = camera_pose(az, el, radius)
        idx, uv = observe(cfg, cam, pose, points, normals, rng)
        queries.append(Query(QueryView(cam, uv, desc[idx]), pose))
    return Scene(model, queries)


# --- files -----------------------------------------------------------------


def _camera_dict(c: CameraIntrinsics) -> dict[str, Any]:
    return {"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy, "width": c.width, "height": c.height}


def queries_to_list(queries: list[Query]) -> list[dict[str, Any]]:
    return [
        {
            "view": {
                "camera": _camera_dict(q.view.camera),
                "keypoints": np.asarray(q.view.keypoints, dtype=np.float64).tolist(),
                "descriptors": None if q.view.descriptors is None else np.asarray(q.view.descriptors).tolist(),
            },
            "pose_gt": {
                "quaternion": rotmat_to_qvec(q.pose_gt.rotation).tolist(),
                "translation": q.pose_gt.translation.tolist(),
            },
        }
        for q in queries
    ]


def queries_from_list(doc: list[dict[str, Any]], source: str = "<queries>") -> list[Query]:
    out = []
    try:
        for k, item in enumerate(doc):
            v = item["view"]
            c = v["camera"]
            cam = CameraIntrinsics(c["fx"], c["fy"], c["cx"], c["cy"], int(c["width"]), int(c["height"]))
            kps = np.array(v.get("keypoints") or [], dtype=np.float64).reshape(-1, 2)
            desc = None if v.get("descriptors") is None else np.array(v["descriptors"], dtype=np.float64)
            if desc is not None:
                desc = desc.reshape(len(kps), -1)
            p = item["pose_gt"]
            out.append(Query(QueryView(cam, kps, desc), Pose(qvec_to_rotmat(p["quaternion"]), p["translation"])))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"query {len(out)}: {exc}", source) from None
    return out


def save_queries(queries: list[Query], path: str | Path) -> None:
    Path(path).write_text(dumps_canonical(queries_to_list(queries)) + "\n", encoding="utf-8")


def load_queries(path: str | Path) -> list[Query]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", str(path), exc.lineno) from None
    if not isinstance(doc, list):
        raise ParseError("queries file must hold a JSON array", str(path))
    return queries_from_list(doc, str(path))


def scene_to_native_files(scene: Scene, directory: str | Path) -> None:
    """Write ``model.json`` and ``queries.json`` into ``directory``."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        save_native(scene.model, directory / "model.json")
        save_queries(scene.queries, directory / "queries.json")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write scene to {directory}: {exc.strerror}", str(directory)) from exc


def config_to_dict(cfg: SynthConfig) -> dict[str, Any]:
    return asdict(cfg)
