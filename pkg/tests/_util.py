"""Shared scene builders and independent oracles used across the test suite."""

from __future__ import annotations

import math
import os
import subprocess
import sys

import numpy as np

from mipsplat.backward import PARAM_FIELDS, backward
from mipsplat.camera import Camera
from mipsplat.filters import FilterConfig, ScreenMode
from mipsplat.gaussians import GaussianScene, num_sh_coeffs, quaternion_to_rotation
from mipsplat.rasterizer import RenderSettings, render
from mipsplat.sampling import SamplingState

DATA = os.path.join(os.path.dirname(__file__), "data")
SMOOTH = RenderSettings(alpha_min=0.0, t_min=0.0)
ALL_MODES = (ScreenMode.NONE, ScreenMode.DILATION, ScreenMode.EWA, ScreenMode.MIP)


def front_camera(width=32, height=32, focal=40.0, distance=4.0) -> Camera:
    """Camera at (0, 0, -distance) looking down +z."""
    return Camera(np.eye(3), np.array([0.0, 0.0, distance]), focal, focal, width, height)


def random_scene(rng, n, sh_degree=0, spread=0.8, log_scale_range=(-2.5, -1.2),
                 opacity_range=(0.3, 0.9)) -> GaussianScene:
    q = rng.normal(size=(n, 4))
    sh = rng.normal(scale=0.3, size=(n, num_sh_coeffs(sh_degree), 3))
    sh[:, 0] = rng.uniform(0.5, 1.5, (n, 3))  # keeps colors clear of the clamp at 0
    opac = rng.uniform(*opacity_range, n)
    return GaussianScene.create(
        rng.uniform(-spread, spread, (n, 3)),
        q,
        rng.uniform(*log_scale_range, (n, 3)),
        np.log(opac / (1 - opac)),
        sh,
    )


def filter_grid():
    """All eight {screen mode} x {3D smoothing on/off} configurations."""
    return [FilterConfig(m, None, s) for s in (0.2, 0.0) for m in ALL_MODES]


def _loss(scene, cam, fc, state, weights, settings):
    return float(np.sum(weights * render(scene, cam, fc, state, settings)))


def gradient_check(scene, cam, fc, state, weights, rng, h=1e-5, n_coords=4, settings=SMOOTH):
    """Worst relative error of analytic vs. central-difference gradients.

    Checks one random direction per parameter field plus ``n_coords`` single
    coordinates per field.
    """
    grads = backward(scene, cam, fc, state, weights, settings).params()
    worst = 0.0
    for name in PARAM_FIELDS:
        base = getattr(scene, name)
        g = grads[name]
        dirs = [rng.normal(size=base.shape)]
        for flat in rng.choice(base.size, size=min(n_coords, base.size), replace=False):
            e = np.zeros(base.size)
            e[flat] = 1.0
            dirs.append(e.reshape(base.shape))
        for v in dirs:
            lp = _loss(scene.replace(**{name: base + h * v}), cam, fc, state, weights, settings)
            lm = _loss(scene.replace(**{name: base - h * v}), cam, fc, state, weights, settings)
            fd = (lp - lm) / (2 * h)
            an = float(np.sum(g * v))
            err = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
            worst = max(worst, err)
    return worst


def random_gradient_case(rng, fc, size=20):
    """Scene, camera, sampling state and loss weights for one gradient check."""
    n = int(rng.integers(1, 9))
    scene = random_scene(rng, n, sh_degree=int(rng.integers(0, 4)), spread=0.5)
    cam = front_camera(size, size, focal=float(rng.uniform(25, 45)), distance=float(rng.uniform(3, 5)))
    state = SamplingState.compute(scene.positions, [cam]) if fc.smoothing_active else None
    weights = rng.normal(size=(size, size, 3))
    return scene, cam, state, weights


# --- sampling-rate oracle -------------------------------------------------------


def brute_force_rate(p, cameras, padding=16.0):
    """Scalar loop over cameras, written independently of the vectorized code."""
    best = 0.0
    for cam in cameras:
        r, t = cam.rotation, cam.translation
        x = p[0] * r[0, 0] + p[1] * r[0, 1] + p[2] * r[0, 2] + t[0]
        y = p[0] * r[1, 0] + p[1] * r[1, 1] + p[2] * r[1, 2] + t[1]
        z = p[0] * r[2, 0] + p[1] * r[2, 1] + p[2] * r[2, 2] + t[2]
        if not z > cam.near:
            continue
        u = cam.focal_x * x / z + cam.principal_point[0]
        v = cam.focal_y * y / z + cam.principal_point[1]
        if -padding <= u <= cam.width + padding and -padding <= v <= cam.height + padding:
            best = max(best, max(cam.focal_x, cam.focal_y) / z)
    return best


def random_cameras(rng, n):
    """Half aimed at the origin from 1-8 units away, half arbitrarily oriented."""
    cams = []
    for i in range(n):
        fx, fy = rng.uniform(20, 400, 2)
        w, h = int(rng.integers(8, 200)), int(rng.integers(8, 200))
        if i % 2:
            rot = quaternion_to_rotation(rng.normal(size=4))
            cams.append(Camera(rot, rng.normal(scale=2, size=3), fx, fy, w, h))
        else:
            d = rng.normal(size=3)
            eye = d / np.linalg.norm(d) * rng.uniform(1, 8)
            c = Camera.look_at(eye, rng.normal(scale=0.3, size=3), focal=fx, width=w, height=h)
            cams.append(Camera(c.rotation, c.translation, fx, fy, w, h))
    return cams


# --- metric oracles -------------------------------------------------------------


def psnr_oracle(a, b):
    mse = sum((float(x) - float(y)) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
    return 10 * math.log10(1.0 / mse)


def ssim_oracle(a, b):
    """Window-by-window SSIM on Rec.709 luma with an 11x11 Gaussian window."""
    la = 0.2126 * a[..., 0] + 0.7152 * a[..., 1] + 0.0722 * a[..., 2]
    lb = 0.2126 * b[..., 0] + 0.7152 * b[..., 1] + 0.0722 * b[..., 2]
    g = np.array([math.exp(-((i - 5) ** 2) / (2 * 1.5 ** 2)) for i in range(11)])
    win = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(la.shape[0] - 10):
        for j in range(la.shape[1] - 10):
            x = la[i:i + 11, j:j + 11]
            y = lb[i:i + 11, j:j + 11]
            mx, my = (win * x).sum(), (win * y).sum()
            vx = (win * (x - mx) ** 2).sum()
            vy = (win * (y - my) ** 2).sum()
            cxy = (win * (x - mx) * (y - my)).sum()
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


# --- thread determinism ---------------------------------------------------------


_THREAD_SCRIPT = r"""
import hashlib, numpy as np
from mipsplat.scene_io import load_scene, load_cameras
from mipsplat.sampling import SamplingState
from mipsplat.filters import FilterConfig
from mipsplat.rasterizer import render
scene = load_scene({ply!r})
cams = load_cameras({cams!r}).cameras()
state = SamplingState.compute(scene.positions, cams)
h = hashlib.sha256()
for cam in cams:
    h.update(render(scene, cam.scaled(2), FilterConfig.mip_splatting(), state).tobytes())
print(h.hexdigest())
"""


def render_digest(threads: int) -> str:
    code = _THREAD_SCRIPT.format(ply=os.path.join(DATA, "reference.ply"),
                                 cams=os.path.join(DATA, "reference_cameras.json"))
    env = dict(os.environ, NUMBA_NUM_THREADS=str(threads))
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()
