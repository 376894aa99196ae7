"""Pinhole cameras and the perspective projection of Gaussians.

Camera space is x right, y down, z forward. Pixel ``(i, j)`` covers
``[i, i+1] x [j, j+1]``, so its center sits at ``(i + 0.5, j + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, InvalidParameterError

NEAR_PLANE = 0.2
FRUSTUM_PADDING = 16.0


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera with a world-to-camera rigid transform ``x' = R x + t``."""

    rotation: np.ndarray
    translation: np.ndarray
    focal_x: float
    focal_y: float
    width: int
    height: int
    principal_point: np.ndarray = field(default=None)
    near: float = NEAR_PLANE

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(t))):
            raise InvalidParameterError("camera pose is not finite")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-6:
            raise InvalidParameterError("camera rotation is not orthonormal")
        if not (self.focal_x > 0 and self.focal_y > 0):
            raise InvalidParameterError("focal lengths must be positive")
        if int(self.width) < 1 or int(self.height) < 1:
            raise InvalidParameterError("image dimensions must be >= 1")
        pp = self.principal_point
        pp = np.array([self.width / 2.0, self.height / 2.0]) if pp is None else np.asarray(pp, dtype=np.float64)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "focal_x", float(self.focal_x))
        object.__setattr__(self, "focal_y", float(self.focal_y))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "principal_point", pp.reshape(2))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), *, focal: float, width: int, height: int, **kw) -> "Camera":
        """Camera at ``eye`` looking at ``target``; ``up`` maps to image-up (-y)."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, [1.0, 0.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        return cls(rot, -rot @ eye, focal, focal, width, height, **kw)

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def max_focal(self) -> float:
        return max(self.focal_x, self.focal_y)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def project(self, points: np.ndarray) -> np.ndarray:
        """Pixel coordinates of world points (no near-plane check)."""
        pc = self.to_camera(points)
        return self.project_camera_space(pc)

    def project_camera_space(self, pc: np.ndarray) -> np.ndarray:
        pc = np.asarray(pc, dtype=np.float64)
        x, y, z = pc[..., 0], pc[..., 1], pc[..., 2]
        u = self.focal_x * x / z + self.principal_point[0]
        v = self.focal_y * y / z + self.principal_point[1]
        return np.stack([u, v], axis=-1)

    def scaled(self, factor: float) -> "Camera":
        """Zoom by scaling focal lengths, principal point and image size together."""
        return Camera(
            self.rotation,
            self.translation,
            self.focal_x * factor,
            self.focal_y * factor,
            max(1, int(round(self.width * factor))),
            max(1, int(round(self.height * factor))),
            self.principal_point * factor,
            self.near,
        )

    def moved_along_axis(self, factor: float, target=(0.0, 0.0, 0.0)) -> "Camera":
        """Zoom by moving the camera towards ``target``; distance is divided by ``factor``."""
        target = np.asarray(target, dtype=np.float64)
        eye = target + (self.center - target) / factor
        return Camera(self.rotation, -self.rotation @ eye, self.focal_x, self.focal_y,
                      self.width, self.height, self.principal_point, self.near)


def world_to_camera(cam: Camera, p: np.ndarray, sigma: np.ndarray):
    """Transform a mean and covariance into camera space: ``(R p + t, R S R^T)``."""
    rot = cam.rotation
    p_cam = np.asarray(p, dtype=np.float64) @ rot.T + cam.translation
    sigma_cam = rot @ np.asarray(sigma, dtype=np.float64) @ rot.T
    return p_cam, sigma_cam


def projection_jacobian(cam: Camera, p_cam: np.ndarray) -> np.ndarray:
    """Jacobian of the pixel projection at camera-space point(s).

    Returns:
        (2, 3) matrix, or (N, 2, 3) for (N, 3) input.

    Raises:
        BehindCameraError: any point has ``z <= cam.near``.
    """
    p_cam = np.asarray(p_cam, dtype=np.float64)
    x, y, z = p_cam[..., 0], p_cam[..., 1], p_cam[..., 2]
    if np.any(z <= cam.near):
        raise BehindCameraError(f"point at depth <= near plane {cam.near}")
    fx, fy = cam.focal_x, cam.focal_y
    zero = np.zeros_like(z)
    jac = np.stack(
        [fx / z, zero, -fx * x / (z * z), zero, fy / z, -fy * y / (z * z)],
        axis=-1,
    )
    return jac.reshape(p_cam.shape[:-1] + (2, 3))


def project_covariance(jac: np.ndarray, sigma_cam: np.ndarray) -> np.ndarray:
    """Screen-space covariance ``J S J^T``, symmetrized."""
    jac = np.asarray(jac, dtype=np.float64)
    cov = jac @ np.asarray(sigma_cam, dtype=np.float64) @ np.swapaxes(jac, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def in_frustum(cam: Camera, p: np.ndarray, padding: float = FRUSTUM_PADDING):
    """Whether world point(s) lie in front of the near plane and project inside
    the image grown by ``padding`` pixels on each side."""
    pc = cam.to_camera(p)
    z = pc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = cam.project_camera_space(pc)
    inside = (
        (z > cam.near)
        & (uv[..., 0] >= -padding)
        & (uv[..., 0] <= cam.width + padding)
        & (uv[..., 1] >= -padding)
        & (uv[..., 1] <= cam.height + padding)
    )
    return bool(inside) if np.ndim(inside) == 0 else inside
