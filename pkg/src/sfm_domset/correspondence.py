"""2D-3D correspondence providers.

Two interchangeable providers produce the match set a PnP solver consumes:

* ``oracle``: projects model points with the true query pose, then injects
  pixel noise, dropouts and outliers.
* ``descriptor-nn``: brute-force mutual nearest-neighbour matching of query
  keypoint descriptors against point descriptors, with a ratio test.

Both are pure functions of their inputs and an integer seed path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .geometry import Correspondence, project_points
from .model import CameraIntrinsics, Pose, RefImage, SfmModel
from .seeding import make_rng

PROVIDER_NAMES = ("oracle", "descriptor-nn")
_CHUNK_ELEMENTS = 1 << 20


@dataclass(frozen=True)
class NoiseConfig:
    pixel_noise_sigma: float = 0.0
    outlier_ratio: float = 0.0
    drop_ratio: float = 0.0
    rng_seed: int = 0
    descriptor_noise_sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.pixel_noise_sigma < 0:
            raise ValidationError("noise.pixel_noise_sigma: must be >= 0")
        if self.descriptor_noise_sigma < 0:
            raise ValidationError("noise.descriptor_noise_sigma: must be >= 0")
        if not 0 <= self.outlier_ratio < 1:
            raise ValidationError("noise.outlier_ratio: must lie in [0, 1)")
        if not 0 <= self.drop_ratio < 1:
            raise ValidationError("noise.drop_ratio: must lie in [0, 1)")


@dataclass
class MatchSet:
    correspondences: list[Correspondence]
    provider_name: str
    elapsed: float = 0.0
    candidate_comparisons: int = 0

    def __len__(self) -> int:
        return len(self.correspondences)


@dataclass(frozen=True, eq=False)
class QueryView:
    """What a provider may see of a query image (never its true pose)."""

    camera: CameraIntrinsics
    keypoints: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    descriptors: np.ndarray | None = None

    @classmethod
    def from_image(cls, image: RefImage) -> "QueryView":
        return cls(image.camera, image.keypoints, image.descriptors)


def _outlier_pixels(rng: np.random.Generator, uv: np.ndarray, ratio: float, camera: CameraIntrinsics) -> None:
    """Replace ``round(ratio * n)`` random rows of ``uv`` with uniform in-image pixels, in place."""
    n_out = int(round(ratio * len(uv)))
    if n_out == 0:
        return
    idx = rng.choice(len(uv), size=n_out, replace=False)
    uv[idx, 0] = rng.uniform(0.0, camera.width, size=n_out)
    uv[idx, 1] = rng.uniform(0.0, camera.height, size=n_out)


def oracle_matches(
    model: SfmModel,
    query_pose: Pose,
    query_camera: CameraIntrinsics,
    noise: NoiseConfig = NoiseConfig(),
    seed_key: Sequence[int] = (),
) -> MatchSet:
    """Ground-truth matches for every model point inside the query frustum."""
    start = time.perf_counter()
    rng = make_rng(noise.rng_seed, *seed_key)
    if model.num_points == 0:
        return MatchSet([], "oracle", time.perf_counter() - start)
    X = model.positions
    uv, in_front = project_points(query_camera, query_pose.rotation, query_pose.translation, X)
    visible = in_front & query_camera.contains(np.nan_to_num(uv, nan=-1.0))
    idx = np.flatnonzero(visible)
    pix = uv[idx].copy()
    if noise.pixel_noise_sigma > 0:
        pix += rng.normal(0.0, noise.pixel_noise_sigma, size=pix.shape)
    keep = rng.random(len(idx)) >= noise.drop_ratio
    idx, pix = idx[keep], pix[keep]
    _outlier_pixels(rng, pix, noise.outlier_ratio, query_camera)
    ids = model.point_ids
    corr = [Correspondence(tuple(p), int(ids[i]), tuple(X[i])) for i, p in zip(idx, pix)]
    return MatchSet(corr, "oracle", time.perf_counter() - start)


def _nearest_two(query: np.ndarray, base: np.ndarray):
    """Exhaustive search: per query row, the nearest and second-nearest base rows.

    Also returns, per base row, the nearest query row.  Distances are computed
    explicitly from differences so cost grows linearly with ``len(base)``.
    """
    nq, nb = len(query), len(base)
    best = np.full(nq, -1, dtype=np.int64)
    d1 = np.full(nq, np.inf)
    d2 = np.full(nq, np.inf)
    back_best = np.full(nb, -1, dtype=np.int64)
    back_d = np.full(nb, np.inf)
    rows = max(1, _CHUNK_ELEMENTS // max(1, nb * base.shape[1]))
    for s in range(0, nq, rows):
        block = query[s : s + rows]
        diff = block[:, None, :] - base[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        if nb >= 2:
            part = np.argpartition(dist, 1, axis=1)[:, :2]
            pd = np.take_along_axis(dist, part, axis=1)
            order = np.argsort(pd, axis=1, kind="stable")
            part = np.take_along_axis(part, order, axis=1)
            pd = np.take_along_axis(pd, order, axis=1)
            best[s : s + len(block)] = part[:, 0]
            d1[s : s + len(block)] = pd[:, 0]
            d2[s : s + len(block)] = pd[:, 1]
        else:
            best[s : s + len(block)] = 0
            d1[s : s + len(block)] = dist[:, 0]
        col_best = np.argmin(dist, axis=0)
        col_d = dist[col_best, np.arange(nb)]
        better = col_d < back_d
        back_best[better] = col_best[better] + s
        back_d[better] = col_d[better]
    return best, d1, d2, back_best


def descriptor_matches(
    model: SfmModel,
    query_keypoints: np.ndarray,
    query_descriptors: np.ndarray,
    ratio_threshold: float = 0.8,
) -> MatchSet:
    """Mutual nearest neighbours in descriptor space, filtered by the ratio test.

    A pair is accepted when each side is the other's nearest neighbour and the
    nearest distance is strictly below ``ratio_threshold`` times the
    second-nearest.
    """
    if model.num_points == 0:
        return MatchSet([], "descriptor-nn", 0.0, 0)
    base = model.descriptors
    if base is None:
        raise ValidationError("model points carry no descriptors; descriptor matching is unavailable")
    kps = np.asarray(query_keypoints, dtype=np.float64).reshape(-1, 2)
    desc = np.asarray(query_descriptors, dtype=np.float64).reshape(len(kps), -1)
    if desc.shape[1] != base.shape[1] and len(kps):
        raise ValidationError(f"query descriptor dim {desc.shape[1]} != model descriptor dim {base.shape[1]}")
    comparisons = len(kps) * len(base)
    start = time.perf_counter()
    if len(kps) == 0:
        return MatchSet([], "descriptor-nn", time.perf_counter() - start, comparisons)
    best, d1, d2, back = _nearest_two(desc, base)
    q = np.arange(len(kps))
    ok = (back[best] == q) & (d1 < ratio_threshold * d2)
    elapsed = time.perf_counter() - start
    ids, X = model.point_ids, model.positions
    corr = [Correspondence(tuple(kps[i]), int(ids[best[i]]), tuple(X[best[i]])) for i in np.flatnonzero(ok)]
    return MatchSet(corr, "descriptor-nn", elapsed, comparisons)


def perturb_view(view: QueryView, noise: NoiseConfig, rng: np.random.Generator):
    """Apply match-time noise to a query's keypoints and descriptors.

    Outliers keep their descriptor (so they still match the right 3D point)
    but get a uniformly random pixel.
    """
    kps = np.array(view.keypoints, dtype=np.float64).reshape(-1, 2)
    desc = None if view.descriptors is None else np.array(view.descriptors, dtype=np.float64)
    if noise.pixel_noise_sigma > 0:
        kps += rng.normal(0.0, noise.pixel_noise_sigma, size=kps.shape)
    keep = rng.random(len(kps)) >= noise.drop_ratio
    kps = kps[keep]
    if desc is not None:
        desc = desc[keep]
        if noise.descriptor_noise_sigma > 0:
            desc = desc + rng.normal(0.0, noise.descriptor_noise_sigma, size=desc.shape)
            desc /= np.maximum(np.linalg.norm(desc, axis=1, keepdims=True), 1e-12)
    _outlier_pixels(rng, kps, noise.outlier_ratio, view.camera)
    return kps, desc


@dataclass(frozen=True)
class OracleProvider:
    noise: NoiseConfig = NoiseConfig()
    name: str = "oracle"

    def __call__(self, model: SfmModel, view: QueryView, pose_gt: Pose, seed_key: Sequence[int] = ()) -> MatchSet:
        return oracle_matches(model, pose_gt, view.camera, self.noise, seed_key)


@dataclass(frozen=True)
class DescriptorProvider:
    noise: NoiseConfig = NoiseConfig()
    ratio_threshold: float = 0.8
    name: str = "descriptor-nn"

    def __call__(self, model: SfmModel, view: QueryView, pose_gt: Pose, seed_key: Sequence[int] = ()) -> MatchSet:
        if view.descriptors is None:
            raise ValidationError("query view carries no descriptors")
        rng = make_rng(self.noise.rng_seed, *seed_key)
        kps, desc = perturb_view(view, self.noise, rng)
        return descriptor_matches(model, kps, desc, self.ratio_threshold)


def make_provider(name: str, noise: NoiseConfig = NoiseConfig(), ratio_threshold: float = 0.8):
    if name == "oracle":
        return OracleProvider(noise)
    if name == "descriptor-nn":
        return DescriptorProvider(noise, ratio_threshold)
    raise ValidationError(f"unknown provider {name!r} (choose from {', '.join(PROVIDER_NAMES)})")
