"""Analytic gradients of a rendered image w.r.t. every primitive parameter.

The compiled kernel produces gradients of the per-pixel loss w.r.t. each
splat's screen-space quantities (mean, conic, effective opacity, color). The
rest of the chain rule runs here, vectorized over splats:

    conic -> filtered 2D covariance -> (Mip factor) -> projected covariance
    -> Jacobian / smoothed 3D covariance -> (3D smoothing factor)
    -> rotation, scales, position; color -> SH coefficients and view direction.

Sampling rates are treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .camera import Camera
from .errors import NonFiniteError
from .filters import FilterConfig
from .gaussians import GaussianScene, sh_basis_jacobian
from .rasterizer import RenderResult, RenderSettings, rasterize
from .sampling import SamplingState

PARAM_FIELDS = ("positions", "rotations", "log_scales", "opacity_logits", "sh_coeffs")


@dataclass
class GradientBuffer:
    """Per-primitive gradients, shaped like the fields of :class:`GaussianScene`.

    ``screen_grad`` is the norm of the loss gradient w.r.t. the projected
    center in normalized device units; ``visible`` flags primitives that were
    projected in this view.
    """

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray
    screen_grad: np.ndarray
    visible: np.ndarray

    @classmethod
    def zeros_like(cls, scene: GaussianScene) -> "GradientBuffer":
        n = len(scene)
        return cls(np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)), np.zeros(n),
                   np.zeros_like(scene.sh_coeffs), np.zeros(n), np.zeros(n, dtype=bool))

    def params(self) -> dict:
        return {f: getattr(self, f) for f in PARAM_FIELDS}

    def check_finite(self) -> None:
        for name, g in self.params().items():
            bad = ~np.isfinite(g.reshape(len(g), -1)).all(1)
            if bad.any():
                idx = np.flatnonzero(bad)
                raise NonFiniteError(f"non-finite gradient for {name} in primitives {idx.tolist()}", idx, name)

    def __iadd__(self, other: "GradientBuffer") -> "GradientBuffer":
        for f in PARAM_FIELDS + ("screen_grad",):
            getattr(self, f).__iadd__(getattr(other, f))
        self.visible |= other.visible
        return self


def _sym2_grad_to_matrix(ga, gb, gc):
    """Gradient w.r.t. a symmetric 2x2 matrix given per-entry gradients (a, b, c)
    where ``b`` is the shared off-diagonal parameter."""
    out = np.empty((len(ga), 2, 2))
    out[:, 0, 0] = ga
    out[:, 1, 1] = gc
    out[:, 0, 1] = out[:, 1, 0] = 0.5 * gb
    return out


def _quat_grad(q_raw: np.ndarray, g_rot: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. rotation matrices back to raw quaternions."""
    norm = np.linalg.norm(q_raw, axis=1)
    qn = q_raw / norm[:, None]
    w, x, y, z = qn.T
    g = g_rot
    gw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    gx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
              + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    gy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
              - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    gz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
              + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    gq = np.stack([gw, gx, gy, gz], 1)
    gq -= qn * np.sum(qn * gq, axis=1, keepdims=True)
    return gq / norm[:, None]


def splat_gradients(result: RenderResult, grad_image: np.ndarray) -> np.ndarray:
    """Per projected splat gradients (M, 9) w.r.t. mean2d, conic, opacity, color."""
    proj, binning, settings = result.projection, result.binning, result.settings
    h, w = result.image.shape[:2]
    pair = _kernels.composite_backward(
        proj.mean2d, proj.conic, proj.opacity, proj.color, binning.splats, binning.offsets,
        binning.tiles_x, w, h, settings.tile_size, np.asarray(settings.background, dtype=np.float64),
        settings.alpha_min, result.n_end, np.ascontiguousarray(grad_image, dtype=np.float64),
        max(binning.max_len, 1),
    )
    out = np.zeros((len(proj), _kernels.N_GRAD))
    # np.add.at accumulates sequentially in pair order: deterministic
    np.add.at(out, binning.splats, pair)
    return out


def backward_from_result(scene: GaussianScene, camera: Camera, result: RenderResult,
                         grad_image: np.ndarray) -> GradientBuffer:
    """Gradients of ``sum(grad_image * image)`` for an already rendered view."""
    proj = result.projection
    cache = proj.cache
    buf = GradientBuffer.zeros_like(scene)
    if len(proj) == 0:
        return buf
    g = splat_gradients(result, grad_image)
    g_mean = g[:, 0:2]
    g_ca, g_cb, g_cc = g[:, 2], g[:, 3], g[:, 4]
    g_opac = g[:, 5]
    g_color = g[:, 6:9]

    # conic = inverse(cov_f) with cov_f = [[a, b], [b, c]]
    cov_f = proj.cov2d
    a, b, c = cov_f[:, 0, 0], cov_f[:, 0, 1], cov_f[:, 1, 1]
    det = a * c - b * b
    d2 = det * det
    ga = g_ca * (-c * c / d2) + g_cb * (b * c / d2) + g_cc * (1.0 / det - a * c / d2)
    gb = g_ca * (2 * b * c / d2) + g_cb * (-1.0 / det - 2 * b * b / d2) + g_cc * (2 * a * b / d2)
    gc = g_ca * (1.0 / det - a * c / d2) + g_cb * (a * b / d2) + g_cc * (-a * a / d2)

    # effective opacity = sigmoid(logit) * norm3 * norm2
    base = proj.base_opacity
    g_base = g_opac * proj.norm3d * proj.norm2d
    g_norm3 = g_opac * base * proj.norm2d
    if cache["mip"]:
        g_norm2 = g_opac * base * proj.norm3d
        n2 = proj.norm2d
        raw = cache["cov2d_raw"]
        ra, rb, rc = raw[:, 0, 0], raw[:, 0, 1], raw[:, 1, 1]
        safe = n2 > 0
        k1 = np.where(safe, 0.5 / np.where(safe, n2, 1.0) / det, 0.0)
        k2 = np.where(safe, -0.5 * n2 / det, 0.0)
        # d norm2 = k1 * d det_raw + k2 * d det_f; both dets have d/da = c, d/db = -2b, d/dc = a
        ga = ga + g_norm2 * (k1 * rc + k2 * c)
        gb = gb + g_norm2 * (k1 * -2 * rb + k2 * -2 * b)
        gc = gc + g_norm2 * (k1 * ra + k2 * a)

    g_cov2d = _sym2_grad_to_matrix(ga, gb, gc)
    tmat = cache["tmat"]
    sigma_reg = cache["sigma_reg"]
    g_sigma = np.swapaxes(tmat, 1, 2) @ g_cov2d @ tmat
    g_tmat = 2.0 * g_cov2d @ tmat @ sigma_reg
    g_jac = g_tmat @ camera.rotation.T

    pc = cache["p_cam"]
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    fx, fy = camera.focal_x, camera.focal_y
    jac = cache["jac"]
    g_pc = np.einsum("nij,ni->nj", jac, g_mean)
    g_pc[:, 0] += g_jac[:, 0, 2] * (-fx / (z * z))
    g_pc[:, 1] += g_jac[:, 1, 2] * (-fy / (z * z))
    g_pc[:, 2] += (g_jac[:, 0, 0] * (-fx / (z * z)) + g_jac[:, 0, 2] * (2 * fx * x / z ** 3)
                   + g_jac[:, 1, 1] * (-fy / (z * z)) + g_jac[:, 1, 2] * (2 * fy * y / z ** 3))
    g_pos = g_pc @ camera.rotation

    idx = proj.index
    g_logs = np.zeros((len(proj), 3))
    if cache["smoothing"]:
        # norm3 = sqrt(det(S) / det(S + vI)), det(S) = exp(2 sum log s)
        n3 = proj.norm3d
        g_logs += (g_norm3 * n3)[:, None]
        g_sigma = g_sigma - (0.5 * g_norm3 * n3)[:, None, None] * np.linalg.inv(sigma_reg)

    rot, scales = cache["rot"], cache["scales"]
    m = rot * scales[:, None, :]
    g_m = (g_sigma + np.swapaxes(g_sigma, 1, 2)) @ m
    g_scales = np.einsum("nij,nij->nj", rot, g_m)
    g_logs += g_scales * scales
    g_rot = g_m * scales[:, None, :]
    g_quat = _quat_grad(cache["quat"], g_rot)

    # color = max(basis(dir) . sh + 0.5, 0)
    g_color = np.where(cache["raw_color"] > 0, g_color, 0.0)
    basis = cache["basis"]
    g_sh = basis[:, :, None] * g_color[:, None, :]
    degree = scene.sh_degree
    if degree > 0:
        dbasis = sh_basis_jacobian(cache["dirs"], degree)
        g_basis = np.einsum("nkc,nc->nk", scene.sh_coeffs[idx], g_color)
        g_dir = np.einsum("nk,nkj->nj", g_basis, dbasis)
        dirs = cache["dirs"]
        g_dir -= dirs * np.sum(dirs * g_dir, axis=1, keepdims=True)
        g_pos += g_dir / cache["view_len"][:, None]

    buf.positions[idx] = g_pos
    buf.rotations[idx] = g_quat
    buf.log_scales[idx] = g_logs
    buf.opacity_logits[idx] = g_base * base * (1.0 - base)
    buf.sh_coeffs[idx] = g_sh
    ndc_scale = 0.5 * np.array([camera.width, camera.height])
    buf.screen_grad[idx] = np.linalg.norm(g_mean * ndc_scale, axis=1)
    buf.visible[idx] = True
    buf.check_finite()
    return buf


def backward(scene: GaussianScene, camera: Camera, filter_config: FilterConfig,
             sampling_state: SamplingState | None, loss_grad: np.ndarray,
             settings: RenderSettings | None = None) -> GradientBuffer:
    """Render the view and return gradients of ``sum(loss_grad * image)``.

    Args:
        loss_grad: (H, W, 3) gradient of the loss w.r.t. the rendered image.
    """
    result = rasterize(scene, camera, filter_config, sampling_state, settings)
    return backward_from_result(scene, camera, result, loss_grad)
