"""Tile-based forward rendering of Gaussian scenes.

The pipeline per view:

1. compose world covariances, apply 3D smoothing (if active)
2. transform to camera space, cull at the near plane, project with the
   local affine Jacobian
3. apply the screen filter, evaluate SH color, fold every normalization
   factor into the per-splat opacity
4. sort globally by depth, bin splats into 16x16 tiles
5. composite front to back per pixel

``render_naive`` skips steps 4's tiling and evaluates every splat at every
pixel; it exists as a correctness oracle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .camera import Camera
from .errors import DimensionMismatchError, InvalidParameterError, NonFiniteError
from .filters import FilterConfig, ScreenMode, _det2, _det3, smoothing_variance
from .gaussians import GaussianScene, quaternion_to_rotation, sh_basis, sigmoid
from .sampling import SamplingState

DEGENERATE_DET = 1e-12


@dataclass(frozen=True)
class RenderSettings:
    """Numerical knobs of the compositor.

    ``alpha_min`` is the per-pixel contribution floor, ``t_min`` the early-stop
    transmittance. Setting both to zero makes the image a smooth function of
    the parameters, which finite-difference checks rely on.
    """

    tile_size: int = 16
    alpha_min: float = 1.0 / 255.0
    t_min: float = 1e-4
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.tile_size < 1:
            raise InvalidParameterError("tile_size must be >= 1")
        object.__setattr__(self, "background", tuple(float(c) for c in self.background))


@dataclass
class Projection:
    """Screen-space splats for one view, plus what the backward pass reuses.

    Arrays are indexed by projected splat; ``index`` maps back into the scene.
    """

    index: np.ndarray          # (M,) scene indices
    mean2d: np.ndarray         # (M, 2) pixels
    cov2d: np.ndarray          # (M, 2, 2) filtered screen covariance
    conic: np.ndarray          # (M, 3) inverse of cov2d as (a, b, c)
    depth: np.ndarray          # (M,)
    color: np.ndarray          # (M, 3)
    opacity: np.ndarray        # (M,) effective opacity incl. normalization
    base_opacity: np.ndarray   # (M,) sigmoid(logit)
    norm3d: np.ndarray         # (M,)
    norm2d: np.ndarray         # (M,)
    n_culled: int = 0
    n_degenerate: int = 0
    cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.index)

    @property
    def norm_factor(self) -> np.ndarray:
        return self.norm3d * self.norm2d

    def splat(self, i: int) -> "ProjectedSplat":
        return ProjectedSplat(self.mean2d[i].copy(), self.cov2d[i].copy(), float(self.depth[i]),
                              self.color[i].copy(), float(self.base_opacity[i]),
                              float(self.norm3d[i] * self.norm2d[i]))


@dataclass(frozen=True, eq=False)
class ProjectedSplat:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float
    norm_factor: float


@dataclass
class TileBinning:
    """Per-tile splat lists, each sorted by ascending depth.

    ``splats[offsets[t]:offsets[t+1]]`` are the projected-splat indices of
    tile ``t`` (row-major tile order).
    """

    tile_size: int
    tiles_x: int
    tiles_y: int
    splats: np.ndarray
    offsets: np.ndarray

    def tile(self, tx: int, ty: int) -> np.ndarray:
        t = ty * self.tiles_x + tx
        return self.splats[self.offsets[t]:self.offsets[t + 1]]

    @property
    def max_len(self) -> int:
        return int(np.max(np.diff(self.offsets))) if len(self.offsets) > 1 else 0


@dataclass
class RenderResult:
    image: np.ndarray
    stats: dict
    projection: Projection
    binning: TileBinning | None = None
    final_transmittance: np.ndarray | None = None
    n_end: np.ndarray | None = None
    settings: RenderSettings | None = None


def depth_sort(depths) -> np.ndarray:
    """Stable ascending order of depths; equal depths keep index order."""
    return np.argsort(np.asarray(depths, dtype=np.float64), kind="stable")


def _check_inputs(scene: GaussianScene, filter_config: FilterConfig, sampling_state):
    bad = scene.nonfinite_indices()
    if len(bad):
        raise NonFiniteError(f"non-finite parameters in primitives {bad.tolist()}", bad)
    if filter_config.smoothing_active:
        if sampling_state is None:
            raise InvalidParameterError("3D smoothing is active but no sampling state was given")
        if len(sampling_state.rates) != len(scene):
            raise DimensionMismatchError(
                f"sampling state has {len(sampling_state.rates)} rates for {len(scene)} primitives")


def project_scene(scene: GaussianScene, camera: Camera, filter_config: FilterConfig,
                  sampling_state: SamplingState | None = None) -> Projection:
    """Cull, project and filter every primitive for one camera."""
    _check_inputs(scene, filter_config, sampling_state)
    n = len(scene)
    rot_w = camera.rotation
    p_cam = scene.positions @ rot_w.T + camera.translation
    keep = p_cam[:, 2] > camera.near
    idx = np.flatnonzero(keep)
    n_culled = n - len(idx)

    q = scene.rotations[idx]
    q_norm = np.linalg.norm(q, axis=1)
    if np.any(q_norm == 0):
        bad = idx[q_norm == 0]
        raise NonFiniteError(f"zero-norm quaternion in primitives {bad.tolist()}", bad)
    rot = quaternion_to_rotation(q)
    scales = np.exp(scene.log_scales[idx])
    m = rot * scales[:, None, :]
    sigma = m @ np.swapaxes(m, 1, 2)

    if filter_config.smoothing_active:
        var3 = smoothing_variance(sampling_state.rates[idx], filter_config.smoothing3d)
        sigma_reg = sigma + var3[:, None, None] * np.eye(3)
        det_sigma = np.exp(2.0 * scene.log_scales[idx].sum(1))
        det_reg = _det3(sigma_reg)
        norm3 = np.minimum(np.sqrt(det_sigma / det_reg), 1.0)
    else:
        var3 = np.zeros(len(idx))
        sigma_reg = sigma
        norm3 = np.ones(len(idx))

    pc = p_cam[idx]
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    fx, fy = camera.focal_x, camera.focal_y
    jac = np.zeros((len(idx), 2, 3))
    jac[:, 0, 0] = fx / z
    jac[:, 0, 2] = -fx * x / (z * z)
    jac[:, 1, 1] = fy / z
    jac[:, 1, 2] = -fy * y / (z * z)
    tmat = jac @ rot_w
    cov2d = tmat @ sigma_reg @ np.swapaxes(tmat, 1, 2)
    cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, 1, 2))
    mean2d = np.stack([fx * x / z + camera.principal_point[0], fy * y / z + camera.principal_point[1]], 1)

    s2 = filter_config.screen_variance
    cov_f = cov2d + s2 * np.eye(2)
    det_f = _det2(cov_f)
    if filter_config.screen_mode is ScreenMode.MIP and s2 > 0:
        det_raw = _det2(cov2d)
        norm2 = np.where(det_f > 0, np.sqrt(np.clip(det_raw, 0.0, None) / np.where(det_f > 0, det_f, 1.0)), 0.0)
        norm2 = np.minimum(norm2, 1.0)
    else:
        det_raw = None
        norm2 = np.ones(len(idx))

    view = scene.positions[idx] - camera.center
    view_len = np.linalg.norm(view, axis=1)
    dirs = view / view_len[:, None]
    degree = scene.sh_degree
    basis = sh_basis(dirs, degree)
    raw_color = np.einsum("nk,nkc->nc", basis, scene.sh_coeffs[idx]) + 0.5
    color = np.maximum(raw_color, 0.0)

    base_op = sigmoid(scene.opacity_logits[idx])
    opacity = base_op * norm3 * norm2

    ok = det_f >= DEGENERATE_DET
    n_degenerate = int(np.count_nonzero(~ok))
    if n_degenerate:
        sel = np.flatnonzero(ok)
        idx, mean2d, cov_f, det_f, pc = idx[sel], mean2d[sel], cov_f[sel], det_f[sel], pc[sel]
        color, raw_color, base_op, opacity = color[sel], raw_color[sel], base_op[sel], opacity[sel]
        norm3, norm2, jac, tmat = norm3[sel], norm2[sel], jac[sel], tmat[sel]
        sigma_reg, rot, scales, q = sigma_reg[sel], rot[sel], scales[sel], q[sel]
        cov2d, dirs, view_len, basis, var3 = cov2d[sel], dirs[sel], view_len[sel], basis[sel], var3[sel]
        if det_raw is not None:
            det_raw = det_raw[sel]

    conic = np.stack([cov_f[:, 1, 1], -cov_f[:, 0, 1], cov_f[:, 0, 0]], 1) / det_f[:, None]
    proj = Projection(
        index=idx, mean2d=mean2d, cov2d=cov_f, conic=conic, depth=pc[:, 2].copy(),
        color=color, opacity=opacity, base_opacity=base_op, norm3d=norm3, norm2d=norm2,
        n_culled=n_culled, n_degenerate=n_degenerate,
    )
    proj.cache.update(
        p_cam=pc, jac=jac, tmat=tmat, sigma_reg=sigma_reg, rot=rot, scales=scales, quat=q,
        cov2d_raw=cov2d, det_raw=det_raw, dirs=dirs, view_len=view_len, basis=basis,
        raw_color=raw_color, var3=var3, smoothing=filter_config.smoothing_active,
        mip=det_raw is not None,
    )
    return proj


def _splat_radii(proj: Projection, alpha_min: float) -> np.ndarray:
    """Half-extent multiplier in standard deviations beyond which a splat falls
    under the alpha floor everywhere."""
    if alpha_min <= 0:
        return np.full(len(proj), np.inf)
    with np.errstate(divide="ignore"):
        r2 = 2.0 * np.log(proj.opacity / alpha_min)
    return np.sqrt(np.clip(r2, 0.0, None))


def bin_tiles(proj: Projection, width: int, height: int, settings: RenderSettings) -> TileBinning:
    """Assign depth-sorted splats to every tile their significant footprint touches.

    A splat's footprint is the bounding box of the ellipse on which its
    contribution drops to ``alpha_min``, so no pixel outside the box could
    receive a contribution above the floor.
    """
    ts = settings.tile_size
    tiles_x = -(-width // ts)
    tiles_y = -(-height // ts)
    n_tiles = tiles_x * tiles_y
    order = depth_sort(proj.depth)
    r = _splat_radii(proj, settings.alpha_min)[order]
    mx, my = proj.mean2d[order, 0], proj.mean2d[order, 1]
    with np.errstate(invalid="ignore"):
        ex = r * np.sqrt(proj.cov2d[order, 0, 0])
        ey = r * np.sqrt(proj.cov2d[order, 1, 1])
        ex = np.where(r > 0, ex, -1.0)
        ey = np.where(r > 0, ey, -1.0)
        # pixel index ranges whose centers fall in the box
        x0 = np.ceil(np.clip(mx - ex - 0.5, -1.0, width + 1.0))
        x1 = np.floor(np.clip(mx + ex - 0.5, -2.0, width + 1.0))
        y0 = np.ceil(np.clip(my - ey - 0.5, -1.0, height + 1.0))
        y1 = np.floor(np.clip(my + ey - 0.5, -2.0, height + 1.0))
    x0 = np.maximum(x0, 0).astype(np.int64)
    y0 = np.maximum(y0, 0).astype(np.int64)
    x1 = np.minimum(x1, width - 1).astype(np.int64)
    y1 = np.minimum(y1, height - 1).astype(np.int64)
    valid = (x0 <= x1) & (y0 <= y1) & (r > 0)
    tx0, tx1, ty0, ty1 = x0 // ts, x1 // ts, y0 // ts, y1 // ts
    nx = np.where(valid, tx1 - tx0 + 1, 0)
    ny = np.where(valid, ty1 - ty0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    rank = np.repeat(np.arange(len(order)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    nx_r = np.repeat(nx, counts)
    tile_x = np.repeat(tx0, counts) + local % np.maximum(nx_r, 1)
    tile_y = np.repeat(ty0, counts) + local // np.maximum(nx_r, 1)
    tile_id = tile_y * tiles_x + tile_x
    # stable sort by tile keeps the global depth order inside each tile
    perm = np.argsort(tile_id, kind="stable")
    splats = order[rank[perm]].astype(np.int64)
    offsets = np.zeros(n_tiles + 1, dtype=np.int64)
    np.cumsum(np.bincount(tile_id, minlength=n_tiles), out=offsets[1:])
    return TileBinning(ts, tiles_x, tiles_y, splats, offsets)


def rasterize(scene: GaussianScene, camera: Camera, filter_config: FilterConfig | None = None,
              sampling_state: SamplingState | None = None,
              settings: RenderSettings | None = None) -> RenderResult:
    """Render one view and keep the state the backward pass needs."""
    filter_config = filter_config or FilterConfig.mip_splatting()
    settings = settings or RenderSettings()
    t0 = time.perf_counter()
    proj = project_scene(scene, camera, filter_config, sampling_state)
    t1 = time.perf_counter()
    binning = bin_tiles(proj, camera.width, camera.height, settings)
    t2 = time.perf_counter()
    image, final_t, n_end = _kernels.composite_forward(
        proj.mean2d, proj.conic, proj.opacity, proj.color, binning.splats, binning.offsets,
        binning.tiles_x, camera.width, camera.height, settings.tile_size,
        np.asarray(settings.background, dtype=np.float64), settings.alpha_min, settings.t_min,
    )
    t3 = time.perf_counter()
    stats = {
        "splats": len(scene),
        "projected": len(proj),
        "culled": proj.n_culled,
        "skipped_degenerate": proj.n_degenerate,
        "tile_pairs": int(len(binning.splats)),
        "time_project_s": t1 - t0,
        "time_bin_s": t2 - t1,
        "time_composite_s": t3 - t2,
    }
    return RenderResult(image, stats, proj, binning, final_t, n_end, settings)


def render(scene: GaussianScene, camera: Camera, filter_config: FilterConfig | None = None,
           sampling_state: SamplingState | None = None,
           settings: RenderSettings | None = None) -> np.ndarray:
    """Render an (H, W, 3) linear RGB image."""
    return rasterize(scene, camera, filter_config, sampling_state, settings).image


def render_naive(scene: GaussianScene, camera: Camera, filter_config: FilterConfig | None = None,
                 sampling_state: SamplingState | None = None,
                 settings: RenderSettings | None = None) -> np.ndarray:
    """Reference renderer: every splat at every pixel, no tiles, no footprint cutoff."""
    filter_config = filter_config or FilterConfig.mip_splatting()
    settings = settings or RenderSettings()
    proj = project_scene(scene, camera, filter_config, sampling_state)
    h, w = camera.height, camera.width
    px, py = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    acc = np.zeros((h, w, 3))
    trans = np.ones((h, w))
    active = np.ones((h, w), dtype=bool)
    for s in depth_sort(proj.depth):
        dx = px - proj.mean2d[s, 0]
        dy = py - proj.mean2d[s, 1]
        a_, b_, c_ = proj.conic[s]
        power = -0.5 * (a_ * dx * dx + c_ * dy * dy) - b_ * dx * dy
        alpha = proj.opacity[s] * np.exp(np.minimum(power, 0.0))
        hit = active & (power <= 0.0) & (alpha >= settings.alpha_min)
        wgt = np.where(hit, alpha * trans, 0.0)
        acc += wgt[..., None] * proj.color[s]
        trans = np.where(hit, trans * (1.0 - alpha), trans)
        active &= ~(hit & (trans < settings.t_min))
    return acc + trans[..., None] * np.asarray(settings.background)
