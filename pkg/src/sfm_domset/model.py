"""SfM reconstruction data model and the dominating-set filtering operations.

A model is a set of 3D points, each carrying a track of ``(image_id,
keypoint_index)`` observations, plus the posed reference images those tracks
point into.  Models are immutable; every operation returns a new model and ids
are never renumbered.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from .errors import DanglingReferenceError, UnknownIdError, ValidationError

log = logging.getLogger(__name__)

ROTATION_TOL = 1e-9
_KEYPOINT_SLACK = 1e-6


def _frozen_array(values, shape=None, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


def _opt_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and bool(np.array_equal(a, b))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive (fx={self.fx}, fy={self.fy})")
        if not (self.width > 0 and self.height > 0):
            raise ValidationError(f"image size must be positive ({self.width}x{self.height})")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValidationError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def contains(self, uv: np.ndarray) -> np.ndarray:
        """Boolean mask of pixels inside ``[0, width] x [0, height]``."""
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        return (uv[:, 0] >= 0) & (uv[:, 0] <= self.width) & (uv[:, 1] >= 0) & (uv[:, 1] <= self.height)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform taking model coordinates to camera coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        R = _frozen_array(self.rotation, (3, 3))
        t = _frozen_array(self.translation, (3,))
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValidationError("pose contains non-finite values")
        if np.abs(R.T @ R - np.eye(3)).max() > ROTATION_TOL or abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise ValidationError("rotation is not orthonormal with determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)

    def __hash__(self) -> int:
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def transform(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    @property
    def center(self) -> np.ndarray:
        """Camera center expressed in the model frame."""
        return -self.rotation.T @ self.translation

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


@dataclass(frozen=True, eq=False)
class Point3D:
    id: int
    position: np.ndarray
    track: tuple[tuple[int, int], ...]
    descriptor: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _frozen_array(self.position, (3,)))
        object.__setattr__(self, "track", tuple((int(i), int(k)) for i, k in self.track))
        if self.descriptor is not None:
            object.__setattr__(self, "descriptor", _frozen_array(self.descriptor).ravel())
        if not self.track:
            raise ValidationError(f"point {self.id} has an empty track")
        image_ids = [i for i, _ in self.track]
        if len(set(image_ids)) != len(image_ids):
            raise ValidationError(f"point {self.id} observes the same image more than once")
        if not np.all(np.isfinite(self.position)):
            raise ValidationError(f"point {self.id} has a non-finite position")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Point3D):
            return NotImplemented
        return (
            self.id == other.id
            and self.track == other.track
            and np.array_equal(self.position, other.position)
            and _opt_equal(self.descriptor, other.descriptor)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def image_ids(self) -> frozenset[int]:
        return frozenset(i for i, _ in self.track)


@dataclass(frozen=True, eq=False)
class RefImage:
    id: int
    camera: CameraIntrinsics
    pose: Pose
    keypoints: np.ndarray
    descriptors: np.ndarray | None = None
    name: str = ""
    camera_id: int = 1

    def __post_init__(self) -> None:
        kps = _frozen_array(self.keypoints if len(self.keypoints) else np.zeros((0, 2))).reshape(-1, 2)
        object.__setattr__(self, "keypoints", kps)
        if self.descriptors is not None:
            desc = _frozen_array(self.descriptors)
            if desc.ndim != 2 or desc.shape[0] != kps.shape[0]:
                raise ValidationError(
                    f"image {self.id}: {desc.shape[0] if desc.ndim else 0} descriptors for {kps.shape[0]} keypoints"
                )
            object.__setattr__(self, "descriptors", desc)
        cam = self.camera
        if kps.size and (
            kps.min(axis=0)[0] < -_KEYPOINT_SLACK
            or kps.min(axis=0)[1] < -_KEYPOINT_SLACK
            or kps[:, 0].max() > cam.width + _KEYPOINT_SLACK
            or kps[:, 1].max() > cam.height + _KEYPOINT_SLACK
        ):
            raise ValidationError(f"image {self.id}: keypoint outside the {cam.width}x{cam.height} image")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RefImage):
            return NotImplemented
        return (
            self.id == other.id
            and self.name == other.name
            and self.camera_id == other.camera_id
            and self.camera == other.camera
            and self.pose == other.pose
            and np.array_equal(self.keypoints, other.keypoints)
            and _opt_equal(self.descriptors, other.descriptors)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class Bbox3:
    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self) -> None:
        lo = _frozen_array(self.min_corner, (3,))
        hi = _frozen_array(self.max_corner, (3,))
        if not np.all(lo < hi):
            raise ValidationError(f"bbox min {lo.tolist()} must be strictly below max {hi.tolist()}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @classmethod
    def from_points(cls, positions: np.ndarray) -> "Bbox3":
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        if len(positions) == 0:
            raise ValidationError("cannot derive a bounding box from an empty point set")
        lo, hi = positions.min(axis=0), positions.max(axis=0)
        # flat axes get a hair of thickness so the box stays valid
        flat = hi <= lo
        pad = 1e-9 * (1.0 + np.abs(lo))
        return cls(np.where(flat, lo - pad, lo), np.where(flat, hi + pad, hi))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Bbox3):
            return NotImplemented
        return np.array_equal(self.min_corner, other.min_corner) and np.array_equal(self.max_corner, other.max_corner)

    __hash__ = None  # type: ignore[assignment]

    @property
    def corners(self) -> np.ndarray:
        lo, hi = self.min_corner, self.max_corner
        return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.max_corner - self.min_corner))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    def contains(self, positions: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        return np.all((positions >= self.min_corner - tol) & (positions <= self.max_corner + tol), axis=1)


@dataclass(frozen=True, eq=False)
class SfmModel:
    points: Mapping[int, Point3D]
    images: Mapping[int, RefImage]
    bbox: Bbox3
    validate: bool = field(default=True, repr=False)

    def __post_init__(self) -> None:
        points = {int(k): v for k, v in sorted(dict(self.points).items())}
        images = {int(k): v for k, v in sorted(dict(self.images).items())}
        object.__setattr__(self, "points", MappingProxyType(points))
        object.__setattr__(self, "images", MappingProxyType(images))
        if self.validate:
            self.check()

    def check(self) -> None:
        """Raise if any track entry dangles or any point sits outside the bbox."""
        for pid, p in self.points.items():
            if pid != p.id:
                raise ValidationError(f"point keyed {pid} carries id {p.id}")
            for image_id, kp in p.track:
                img = self.images.get(image_id)
                if img is None:
                    raise DanglingReferenceError(f"point {pid} references missing image {image_id}")
                if not 0 <= kp < len(img.keypoints):
                    raise DanglingReferenceError(
                        f"point {pid} references keypoint {kp} of image {image_id}, "
                        f"which has {len(img.keypoints)} keypoints"
                    )
        for iid, img in self.images.items():
            if iid != img.id:
                raise ValidationError(f"image keyed {iid} carries id {img.id}")
        if self.points and not np.all(self.bbox.contains(self.positions)):
            raise ValidationError("bbox does not enclose every point")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SfmModel):
            return NotImplemented
        return (
            self.bbox == other.bbox
            and list(self.points) == list(other.points)
            and list(self.images) == list(other.images)
            and all(self.points[k] == other.points[k] for k in self.points)
            and all(self.images[k] == other.images[k] for k in self.images)
        )

    __hash__ = None  # type: ignore[assignment]

    @cached_property
    def point_ids(self) -> np.ndarray:
        return _frozen_array(list(self.points), dtype=np.int64)

    @cached_property
    def positions(self) -> np.ndarray:
        if not self.points:
            return _frozen_array(np.zeros((0, 3)))
        return _frozen_array(np.stack([p.position for p in self.points.values()]))

    @cached_property
    def descriptors(self) -> np.ndarray | None:
        """Point descriptors stacked row-wise, or None if any point lacks one."""
        if not self.points or any(p.descriptor is None for p in self.points.values()):
            return None
        return _frozen_array(np.stack([p.descriptor for p in self.points.values()]))

    @property
    def num_points(self) -> int:
        return len(self.points)

    @property
    def num_images(self) -> int:
        return len(self.images)


def parents(model: SfmModel, point_id: int) -> frozenset[int]:
    """Ids of the reference images whose keypoints observe ``point_id``."""
    try:
        return model.points[point_id].image_ids
    except KeyError:
        raise UnknownIdError(f"unknown point id {point_id}") from None


def _submodel(model: SfmModel, keep_images: frozenset[int], bbox: Bbox3 | None) -> SfmModel:
    points = {}
    for pid, p in model.points.items():
        track = tuple(entry for entry in p.track if entry[0] in keep_images)
        if track:
            points[pid] = p if len(track) == len(p.track) else Point3D(pid, p.position, track, p.descriptor)
    images = {i: model.images[i] for i in sorted(keep_images)}
    if bbox is None:
        bbox = Bbox3.from_points(np.stack([p.position for p in points.values()])) if points else model.bbox
    return SfmModel(points, images, bbox, validate=False)


def restrict_to_image(model: SfmModel, image_id: int) -> SfmModel:
    """Sub-model holding one image and exactly the points it observes.

    The parent's bbox is kept so error ratios stay comparable.
    """
    if image_id not in model.images:
        raise UnknownIdError(f"unknown image id {image_id}")
    sub = _submodel(model, frozenset([image_id]), model.bbox)
    if not sub.points:
        log.warning("image %s observes no points; restricted model is empty", image_id)
    return sub


def filter_by_dominating_set(
    model: SfmModel, dominating_set: Iterable[int], recompute_bbox: bool = False
) -> SfmModel:
    """Keep the images in ``dominating_set`` and every point one of them observes.

    Surviving tracks are pruned to entries inside the set.  With
    ``recompute_bbox=False`` (the default) the original bbox is retained so
    that diagonal-relative thresholds match the unfiltered model.
    """
    members = frozenset(int(i) for i in dominating_set)
    if not members:
        raise ValidationError("dominating set is empty")
    unknown = sorted(members - set(model.images))
    if unknown:
        raise UnknownIdError(f"dominating set references unknown image ids {unknown}")
    return _submodel(model, members, None if recompute_bbox else model.bbox)
