"""Synthetic scenes and camera rigs for desk-scale experiments.

The ground-truth scene mixes blobs with needle-like Gaussians whose cross
section is well below a training pixel, the kind of structure (thin spokes,
wires) that exposes dilation and erosion artifacts when the sampling rate
changes. Ground-truth images are rendered unfiltered at a supersampled
resolution and box-averaged, which is what a physical sensor records.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .camera import Camera
from .filters import FilterConfig
from .gaussians import GaussianScene, inverse_sigmoid, rgb_to_sh_dc
from .metrics import box_downsample
from .rasterizer import RenderSettings, render


def _random_quaternions(rng, n):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1
    return q


def make_toy_scene(n: int = 200, seed: int = 0, thin_fraction: float = 0.4,
                   radius: float = 1.0, thin_width: float = 0.003) -> GaussianScene:
    """Random scene of blobs and thin needles inside a ball of ``radius``."""
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    positions = dirs * radius * rng.uniform(0.0, 1.0, n)[:, None] ** (1 / 3)
    n_thin = int(round(thin_fraction * n))
    scales = np.empty((n, 3))
    scales[:n_thin, 0] = rng.uniform(0.15, 0.4, n_thin) * radius
    scales[:n_thin, 1:] = thin_width * radius * rng.uniform(0.7, 1.3, (n_thin, 2))
    scales[n_thin:] = rng.uniform(0.02, 0.1, (n - n_thin, 1)) * radius * rng.uniform(0.5, 1.0, (n - n_thin, 3))
    colors = rng.uniform(0.15, 1.0, (n, 3))
    opac = rng.uniform(0.6, 0.95, n)
    return GaussianScene.create(positions, _random_quaternions(rng, n), np.log(scales),
                                inverse_sigmoid(opac), rgb_to_sh_dc(colors)[:, None, :])


def make_texture_scene(n: int = 3000, seed: int = 0, radius: float = 0.8,
                       dot_scale: float = 0.006) -> GaussianScene:
    """Sphere covered with small random-colored dots.

    At low resolution the dots blend into a smooth average; their layout is
    detail that low-resolution views cannot pin down.
    """
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    scales = dot_scale * rng.uniform(0.7, 1.3, (n, 3))
    scales[:, 2] *= 0.3
    # flatten each dot along the surface normal
    quats = np.empty((n, 4))
    for i, d in enumerate(dirs):
        quats[i] = _quat_z_to(d)
    colors = rng.uniform(0.05, 1.0, (n, 3))
    opac = rng.uniform(0.8, 0.98, n)
    return GaussianScene.create(dirs * radius, quats, np.log(scales), inverse_sigmoid(opac),
                                rgb_to_sh_dc(colors)[:, None, :])


def _quat_z_to(d: np.ndarray) -> np.ndarray:
    """Unit quaternion rotating +z onto unit vector ``d``."""
    z = np.array([0.0, 0.0, 1.0])
    w = 1.0 + float(d @ z)
    if w < 1e-9:
        return np.array([0.0, 1.0, 0.0, 0.0])
    q = np.concatenate([[w], np.cross(z, d)])
    return q / np.linalg.norm(q)


def orbit_cameras(n: int, distance: float = 4.0, focal: float = 240.0, width: int = 128,
                  height: int = 128, seed: int = 0, elevation_range=(-0.5, 0.5),
                  phase: float = 0.0) -> list[Camera]:
    """``n`` cameras on a sphere around the origin, evenly spread in azimuth."""
    rng = np.random.default_rng(seed)
    az = phase + 2 * np.pi * (np.arange(n) + rng.uniform(-0.2, 0.2, n)) / n
    el = rng.uniform(*elevation_range, n)
    cams = []
    for a, e in zip(az, el):
        eye = distance * np.array([np.cos(e) * np.sin(a), np.sin(e), -np.cos(e) * np.cos(a)])
        cams.append(Camera.look_at(eye, [0.0, 0.0, 0.0], focal=focal, width=width, height=height))
    return cams


def render_ground_truth(scene: GaussianScene, camera: Camera, supersample: int = 8,
                        background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Pixel-area integrated image: unfiltered render at ``supersample`` x, then box average."""
    settings = RenderSettings(background=background)
    img = render(scene, camera.scaled(supersample), FilterConfig.unfiltered(), None, settings)
    return np.clip(box_downsample(img, supersample), 0.0, 1.0)


def init_from_points(points: np.ndarray, colors: np.ndarray | None = None, sh_degree: int = 0,
                     opacity: float = 0.1) -> GaussianScene:
    """Isotropic primitives at ``points``, sized by the mean distance to 3 neighbours."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    k = min(4, n)
    dist, _ = cKDTree(points).query(points, k=k)
    mean_d = np.sqrt(np.mean(dist[:, 1:] ** 2, axis=1)) if k > 1 else np.full(n, 0.1)
    mean_d = np.maximum(mean_d, 1e-7)
    colors = np.full((n, 3), 0.5) if colors is None else np.asarray(colors, dtype=np.float64)
    sh = np.zeros((n, (sh_degree + 1) ** 2, 3))
    sh[:, 0] = rgb_to_sh_dc(colors)
    quat = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    return GaussianScene.create(points, quat, np.log(mean_d)[:, None].repeat(3, 1),
                                np.full(n, float(inverse_sigmoid(opacity))), sh)


def sample_surface_points(scene: GaussianScene, n: int, seed: int = 0) -> np.ndarray:
    """Points drawn from the scene's Gaussians (a stand-in for an SfM point cloud)."""
    rng = np.random.default_rng(seed)
    w = scene.opacities() * np.exp(scene.log_scales).max(1)
    idx = rng.choice(len(scene), size=n, p=w / w.sum())
    cov = scene.covariances()[idx]
    chol = np.linalg.cholesky(cov + 1e-12 * np.eye(3))
    return scene.positions[idx] + np.einsum("nij,nj->ni", chol, rng.normal(size=(n, 3)))


def make_views(scene: GaussianScene, cameras, supersample: int = 8):
    return [(cam, render_ground_truth(scene, cam, supersample)) for cam in cameras]
