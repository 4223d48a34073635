import numpy as np
import pytest

from sfm_domset.geometry import Correspondence, look_at, project_points, rotvec_to_matrix
from sfm_domset.model import CameraIntrinsics, Pose

CAMERA = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


def random_pose(rng: np.random.Generator, distance: float = 2.0) -> Pose:
    """A camera on a sphere around the origin looking roughly at it."""
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    base = look_at(distance * d, rng.normal(scale=0.05, size=3))
    tilt = rotvec_to_matrix(rng.normal(scale=0.05, size=3))
    R = tilt @ base.rotation
    return Pose(R, -R @ base.center)


def visible_points(rng: np.random.Generator, pose: Pose, n: int, camera=CAMERA, extent: float = 0.5) -> np.ndarray:
    """``n`` random points inside a cube of half-size ``extent`` that project into the image."""
    out = []
    while len(out) < n:
        X = rng.uniform(-extent, extent, size=(4 * n, 3))
        uv, ok = project_points(camera, pose.rotation, pose.translation, X)
        ok &= camera.contains(np.nan_to_num(uv, nan=-1.0))
        out.extend(X[ok])
    return np.array(out[:n])


def make_correspondences(X, uv, start_id: int = 0):
    return [Correspondence(tuple(p), start_id + k, tuple(x)) for k, (x, p) in enumerate(zip(X, uv))]


def outlier_fixture(seed: int = 2024, n: int = 50, outlier_ratio: float = 0.4, sigma: float = 1.0):
    """50 correspondences, 40% uniform outliers, 1 px noise on the inliers."""
    rng = np.random.default_rng(seed)
    pose = random_pose(rng)
    X = visible_points(rng, pose, n)
    uv, _ = project_points(CAMERA, pose.rotation, pose.translation, X)
    uv = uv + rng.normal(0.0, sigma, size=uv.shape)
    n_out = int(round(outlier_ratio * n))
    bad = rng.choice(n, size=n_out, replace=False)
    uv[bad, 0] = rng.uniform(0, CAMERA.width, size=n_out)
    uv[bad, 1] = rng.uniform(0, CAMERA.height, size=n_out)
    true_inliers = frozenset(set(range(n)) - set(bad.tolist()))
    return pose, make_correspondences(X, uv), true_inliers


@pytest.fixture
def camera():
    return CAMERA


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
