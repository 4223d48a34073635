"""Readers and writers for SfM models.

Two formats are supported: the plain-text ``cameras.txt`` / ``images.txt`` /
``points3D.txt`` export produced by common SfM tools, and a single-document
JSON "native" format (see ``docs/native_format.md``).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DanglingReferenceError, ParseError, UnsupportedCameraModelError, ValidationError, VersionError
from .geometry import qvec_to_rotmat, rotmat_to_qvec
from .model import Bbox3, CameraIntrinsics, Point3D, Pose, RefImage, SfmModel

NATIVE_VERSION = 1
TEXT_FILES = ("cameras.txt", "images.txt", "points3D.txt")


# --- text reconstruction format --------------------------------------------------


def _data_lines(path: Path):
    """Yield ``(line_number, stripped_text)`` for every non-comment line, blanks included."""
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if text.startswith("#"):
                continue
            yield lineno, text


def _camera_from_params(model_name: str, width: int, height: int, params: list[float]) -> CameraIntrinsics:
    if model_name == "PINHOLE":
        if len(params) != 4:
            raise ValueError(f"PINHOLE expects 4 params, got {len(params)}")
        fx, fy, cx, cy = params
    elif model_name == "SIMPLE_PINHOLE":
        if len(params) != 3:
            raise ValueError(f"SIMPLE_PINHOLE expects 3 params, got {len(params)}")
        fx, cx, cy = params
        fy = fx
    else:
        raise UnsupportedCameraModelError(model_name)
    return CameraIntrinsics(fx, fy, cx, cy, width, height)


def _read_cameras_text(path: Path) -> dict[int, CameraIntrinsics]:
    cameras = {}
    for lineno, text in _data_lines(path):
        if not text:
            continue
        fields = text.split()
        try:
            if len(fields) < 4:
                raise ValueError("expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS...")
            cam_id = int(fields[0])
            cameras[cam_id] = _camera_from_params(
                fields[1], int(fields[2]), int(fields[3]), [float(v) for v in fields[4:]]
            )
        except UnsupportedCameraModelError:
            raise
        except ValueError as exc:
            raise ParseError(str(exc), str(path), lineno) from None
    return cameras


def _read_images_text(path: Path, cameras: dict[int, CameraIntrinsics]):
    images: dict[int, RefImage] = {}
    observations: dict[int, list[tuple[int, int, int]]] = {}
    lines = iter(_data_lines(path))
    for lineno, header in lines:
        if not header:
            continue
        fields = header.split()
        try:
            if len(fields) < 10:
                raise ValueError("expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME")
            image_id = int(fields[0])
            qvec = [float(v) for v in fields[1:5]]
            tvec = [float(v) for v in fields[5:8]]
            cam_id = int(fields[8])
            name = " ".join(fields[9:])
        except ValueError as exc:
            raise ParseError(str(exc), str(path), lineno) from None
        if cam_id not in cameras:
            raise DanglingReferenceError(f"{path}:{lineno}: image {image_id} references missing camera {cam_id}")
        pt_lineno, pt_text = next(lines, (lineno + 1, ""))
        vals = pt_text.split()
        if len(vals) % 3:
            raise ParseError("points2D line must hold X Y POINT3D_ID triples", str(path), pt_lineno)
        try:
            triples = [(float(vals[i]), float(vals[i + 1]), int(vals[i + 2])) for i in range(0, len(vals), 3)]
        except ValueError as exc:
            raise ParseError(str(exc), str(path), pt_lineno) from None
        kps = np.array([(x, y) for x, y, _ in triples]).reshape(-1, 2)
        try:
            images[image_id] = RefImage(
                image_id, cameras[cam_id], Pose(qvec_to_rotmat(qvec), tvec), kps, name=name, camera_id=cam_id
            )
        except ValidationError as exc:
            raise ParseError(str(exc), str(path), lineno) from None
        observations[image_id] = [(k, pid, image_id) for k, (_, _, pid) in enumerate(triples) if pid != -1]
    return images, observations


def _read_points_text(path: Path) -> dict[int, Point3D]:
    points = {}
    for lineno, text in _data_lines(path):
        if not text:
            continue
        fields = text.split()
        try:
            if len(fields) < 8 or (len(fields) - 8) % 2:
                raise ValueError("expected POINT3D_ID X Y Z R G B ERROR (IMAGE_ID POINT2D_IDX)...")
            pid = int(fields[0])
            xyz = [float(v) for v in fields[1:4]]
            rest = [int(v) for v in fields[8:]]
            track = list(zip(rest[0::2], rest[1::2]))
            points[pid] = Point3D(pid, xyz, track)
        except ValueError as exc:
            raise ParseError(str(exc), str(path), lineno) from None
    return points


def load_reconstruction_text(directory: str | Path, bbox: Bbox3 | None = None) -> SfmModel:
    """Load a model from ``cameras.txt``, ``images.txt`` and ``points3D.txt``.

    ``bbox`` overrides the default axis-aligned box of the point positions.
    """
    directory = Path(directory)
    for name in TEXT_FILES:
        if not (directory / name).is_file():
            raise FileNotFoundError(f"missing reconstruction file {directory / name}")
    cameras = _read_cameras_text(directory / "cameras.txt")
    images, observations = _read_images_text(directory / "images.txt", cameras)
    points = _read_points_text(directory / "points3D.txt")

    for pid, p in points.items():
        for image_id, kp in p.track:
            if image_id not in images:
                raise DanglingReferenceError(f"point {pid} references image {image_id}, absent from images.txt")
    for image_id, obs in observations.items():
        for kp, pid, _ in obs:
            if pid not in points:
                raise DanglingReferenceError(f"image {image_id} keypoint {kp} references missing point {pid}")
            if (image_id, kp) not in points[pid].track:
                raise DanglingReferenceError(
                    f"image {image_id} keypoint {kp} claims point {pid}, whose track does not list it"
                )
    if bbox is None:
        bbox = Bbox3.from_points(np.array([p.position for p in points.values()]))
    return SfmModel(points, images, bbox)


def _cameras_by_id(model: SfmModel) -> dict[int, CameraIntrinsics]:
    cameras: dict[int, CameraIntrinsics] = {}
    for img in model.images.values():
        seen = cameras.setdefault(img.camera_id, img.camera)
        if seen != img.camera:
            raise ValidationError(f"camera id {img.camera_id} is shared by images with different intrinsics")
    return dict(sorted(cameras.items()))


def save_reconstruction_text(model: SfmModel, directory: str | Path) -> None:
    """Write the text export. Descriptors are not representable and are dropped."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cameras = _cameras_by_id(model)
    with open(directory / "cameras.txt", "w", encoding="utf-8") as fh:
        fh.write("# CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]\n")
        for cid, cam in cameras.items():
            fh.write(f"{cid} PINHOLE {cam.width} {cam.height} {cam.fx!r} {cam.fy!r} {cam.cx!r} {cam.cy!r}\n")
    owner = {(i, k): pid for pid, p in model.points.items() for i, k in p.track}
    with open(directory / "images.txt", "w", encoding="utf-8") as fh:
        fh.write("# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n# POINTS2D[] as (X, Y, POINT3D_ID)\n")
        for iid, img in model.images.items():
            q = rotmat_to_qvec(img.pose.rotation)
            t = img.pose.translation
            vals = " ".join(repr(float(v)) for v in (*q, *t))
            fh.write(f"{iid} {vals} {img.camera_id} {img.name or f'image_{iid}'}\n")
            fh.write(
                " ".join(
                    f"{float(x)!r} {float(y)!r} {owner.get((iid, k), -1)}" for k, (x, y) in enumerate(img.keypoints)
                )
                + "\n"
            )
    with open(directory / "points3D.txt", "w", encoding="utf-8") as fh:
        fh.write("# POINT3D_ID X Y Z R G B ERROR TRACK[] as (IMAGE_ID, POINT2D_IDX)\n")
        for pid, p in model.points.items():
            xyz = " ".join(repr(float(v)) for v in p.position)
            track = " ".join(f"{i} {k}" for i, k in p.track)
            fh.write(f"{pid} {xyz} 128 128 128 0 {track}\n")


# --- native JSON format ----------------------------------------------------------


def _floats(arr) -> list:
    return np.asarray(arr, dtype=np.float64).tolist()


def model_to_dict(model: SfmModel) -> dict[str, Any]:
    cameras = _cameras_by_id(model)
    return {
        "version": NATIVE_VERSION,
        "bbox": {"min": _floats(model.bbox.min_corner), "max": _floats(model.bbox.max_corner)},
        "cameras": [
            {"id": cid, "model": "PINHOLE", "width": c.width, "height": c.height, "params": [c.fx, c.fy, c.cx, c.cy]}
            for cid, c in cameras.items()
        ],
        "images": [
            {
                "id": iid,
                "name": img.name,
                "camera_id": img.camera_id,
                "rotation": _floats(img.pose.rotation),
                "translation": _floats(img.pose.translation),
                "keypoints": _floats(img.keypoints),
                "descriptors": None if img.descriptors is None else _floats(img.descriptors),
            }
            for iid, img in model.images.items()
        ],
        "points": [
            {
                "id": pid,
                "position": _floats(p.position),
                "track": [list(entry) for entry in p.track],
                "descriptor": None if p.descriptor is None else _floats(p.descriptor),
            }
            for pid, p in model.points.items()
        ],
    }


def model_from_dict(doc: dict[str, Any], source: str = "<model>") -> SfmModel:
    if not isinstance(doc, dict):
        raise ParseError("top level must be a JSON object", source)
    version = doc.get("version")
    if str(version) != str(NATIVE_VERSION):
        raise VersionError(f"{source}: unsupported native format version {version!r} (expected {NATIVE_VERSION})")
    where = "top level"
    try:
        where = "cameras"
        cameras = {}
        for c in doc["cameras"]:
            cameras[int(c["id"])] = _camera_from_params(c["model"], int(c["width"]), int(c["height"]), c["params"])
        images = {}
        for k, d in enumerate(doc["images"]):
            where = f"images[{k}]"
            cid = int(d["camera_id"])
            if cid not in cameras:
                raise DanglingReferenceError(f"image {d['id']} references missing camera {cid}")
            images[int(d["id"])] = RefImage(
                int(d["id"]),
                cameras[cid],
                Pose(d["rotation"], d["translation"]),
                np.array(d["keypoints"], dtype=np.float64).reshape(-1, 2),
                None if d.get("descriptors") is None else np.array(d["descriptors"], dtype=np.float64),
                name=d.get("name", ""),
                camera_id=cid,
            )
        points = {}
        for k, d in enumerate(doc["points"]):
            where = f"points[{k}]"
            points[int(d["id"])] = Point3D(
                int(d["id"]),
                d["position"],
                [tuple(e) for e in d["track"]],
                None if d.get("descriptor") is None else np.array(d["descriptor"], dtype=np.float64),
            )
        where = "bbox"
        bbox = Bbox3(doc["bbox"]["min"], doc["bbox"]["max"])
    except UnsupportedCameraModelError:
        raise
    except DanglingReferenceError as exc:
        raise DanglingReferenceError(f"{source}: {where}: {exc}") from None
    except (KeyError, TypeError, ValueError) as exc:
        msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
        raise ParseError(f"{where}: {msg}", source) from None
    return SfmModel(points, images, bbox)


def dumps_canonical(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def save_native(model: SfmModel, path: str | Path) -> None:
    Path(path).write_text(dumps_canonical(model_to_dict(model)) + "\n", encoding="utf-8")


def load_native(path: str | Path) -> SfmModel:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg} (column {exc.colno})", str(path), exc.lineno) from None
    return model_from_dict(doc, str(path))


def model_digest(model: SfmModel) -> str:
    """SHA-256 over the canonical native serialization."""
    return hashlib.sha256(dumps_canonical(model_to_dict(model)).encode("utf-8")).hexdigest()


def load_model(path: str | Path) -> SfmModel:
    """Load from a native ``.json`` file, or a directory holding either format."""
    path = Path(path)
    if path.is_dir():
        if (path / "model.json").is_file():
            return load_native(path / "model.json")
        return load_reconstruction_text(path)
    return load_native(path)
