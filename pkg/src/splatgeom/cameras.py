"""Pinhole cameras: projection of splat means and pose loading (JSON, COLMAP text)."""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import SplatGeomError
from .splat_model import normalize_quats, quat_to_rotmat


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray     # world-to-camera, 3x3
    translation: np.ndarray  # camera frame
    mask_path: str = None

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
            raise SplatGeomError("camera rotation is not orthonormal")
        if self.width <= 0 or self.height <= 0:
            raise SplatGeomError("camera width/height must be positive")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def K(self):
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @property
    def center(self):
        return -self.rotation.T @ self.translation

    def to_json(self):
        d = dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                 width=self.width, height=self.height,
                 rotation=self.rotation.reshape(-1).tolist(),
                 translation=self.translation.tolist())
        if self.mask_path is not None:
            d["mask_path"] = self.mask_path
        return d


def project_mean(camera, point):
    """Project a world point. Returns (pixel, depth), or None when the point is behind the camera."""
    p = camera.rotation @ np.asarray(point, dtype=np.float64) + camera.translation
    if p[2] <= 0:
        return None
    pixel = np.array([camera.fx * p[0] / p[2] + camera.cx, camera.fy * p[1] / p[2] + camera.cy])
    return pixel, float(p[2])


def project_points(camera, points):
    """Vectorized projection: (pixels (N, 2), depths (N,), in_front (N,) bool)."""
    p = np.asarray(points, dtype=np.float64) @ camera.rotation.T + camera.translation
    z = p[:, 2]
    front = z > 0
    safe = np.where(front, z, 1.0)
    pix = np.stack([camera.fx * p[:, 0] / safe + camera.cx,
                    camera.fy * p[:, 1] / safe + camera.cy], axis=1)
    return pix, z, front


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """World-to-camera (R, t) for an OpenCV-style camera (x right, y down, z forward)."""
    eye = np.asarray(eye, float)
    fwd = np.asarray(target, float) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return R, -R @ eye


def load_cameras_json(path):
    """List of CameraModel from a JSON list; mask_path is resolved relative to the file."""
    with open(path) as fh:
        entries = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    cams = []
    for i, e in enumerate(entries):
        try:
            mask = e.get("mask_path")
            if mask is not None and not os.path.isabs(mask):
                mask = os.path.join(base, mask)
            cams.append(CameraModel(
                float(e["fx"]), float(e["fy"]), float(e["cx"]), float(e["cy"]),
                int(e["width"]), int(e["height"]),
                np.asarray(e["rotation"], float).reshape(3, 3),
                np.asarray(e["translation"], float), mask))
        except (KeyError, ValueError, TypeError) as exc:
            raise SplatGeomError(f"{path}: bad camera entry {i}: {exc}") from exc
    return cams


def save_cameras_json(cameras, path):
    with open(path, "w") as fh:
        json.dump([c.to_json() for c in cameras], fh, indent=1)


def _data_lines(path):
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                yield line


def load_colmap_text(cameras_txt, images_txt):
    """Cameras from COLMAP text export, ordered by image name.

    Only PINHOLE and SIMPLE_PINHOLE intrinsics are accepted.
    """
    intr = {}
    for line in _data_lines(cameras_txt):
        tok = line.split()
        cam_id, model, w, h = int(tok[0]), tok[1], int(tok[2]), int(tok[3])
        params = [float(x) for x in tok[4:]]
        if model == "PINHOLE":
            fx, fy, cx, cy = params[:4]
        elif model == "SIMPLE_PINHOLE":
            fx = fy = params[0]
            cx, cy = params[1:3]
        else:
            raise SplatGeomError(f"unsupported COLMAP camera model {model}")
        intr[cam_id] = (fx, fy, cx, cy, w, h)

    lines = list(_data_lines(images_txt))
    poses = []
    # an image record is followed by its 2D point line (possibly empty and thus skipped)
    for line in lines:
        tok = line.split()
        if len(tok) < 10:
            continue
        try:
            qvec = [float(x) for x in tok[1:5]]
            tvec = [float(x) for x in tok[5:8]]
            cam_id = int(tok[8])
        except ValueError:
            continue
        if cam_id not in intr or len(tok) != 10:
            continue
        poses.append((tok[9], qvec, tvec, cam_id))
    poses.sort(key=lambda p: p[0])
    cams = []
    for name, qvec, tvec, cam_id in poses:
        fx, fy, cx, cy, w, h = intr[cam_id]
        R = quat_to_rotmat(normalize_quats(qvec))
        cams.append(CameraModel(fx, fy, cx, cy, w, h, R, tvec, mask_path=name))
    return cams
