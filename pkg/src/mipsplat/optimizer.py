"""Inverse rendering: photometric loss, Adam updates, density control, training loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .backward import PARAM_FIELDS, GradientBuffer, backward_from_result
from .camera import Camera
from .errors import DimensionMismatchError, DivergenceError, InvalidParameterError
from .filters import FilterConfig
from .gaussians import GaussianScene, quaternion_to_rotation, sigmoid
from .metrics import psnr, ssim_with_grad
from .rasterizer import RenderSettings, rasterize
from .sampling import DEFAULT_RECOMPUTE_INTERVAL, SamplingState, refresh_sampling_state

logger = logging.getLogger(__name__)

DEFAULT_LEARNING_RATES = {
    "positions": 1.6e-4,  # multiplied by the scene extent
    "rotations": 1e-3,
    "log_scales": 5e-3,
    "opacity_logits": 5e-2,
    "sh_dc": 2.5e-3,
    "sh_rest": 2.5e-3 / 20.0,
}


@dataclass
class TrainConfig:
    iterations: int = 3000
    learning_rates: dict = field(default_factory=lambda: dict(DEFAULT_LEARNING_RATES))
    lambda_dssim: float = 0.2
    densify: bool = True
    densify_interval: int = 100
    densify_from: int = 100
    densify_until: int | None = None
    densify_grad_threshold: float = 2e-4
    prune_opacity: float = 0.005
    percent_dense: float = 0.01
    max_primitives: int = 5000
    filter_config: FilterConfig = field(default_factory=FilterConfig.mip_splatting)
    sampling_interval: int = DEFAULT_RECOMPUTE_INTERVAL
    eval_interval: int = 100
    seed: int = 0
    scene_extent: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise InvalidParameterError("lambda_dssim must lie in [0, 1]")
        lrs = dict(DEFAULT_LEARNING_RATES)
        lrs.update(self.learning_rates)
        unknown = set(lrs) - set(DEFAULT_LEARNING_RATES)
        if unknown:
            raise InvalidParameterError(f"unknown learning-rate groups {sorted(unknown)}")
        if any(not v > 0 for v in lrs.values()):
            raise InvalidParameterError("learning rates must be positive")
        self.learning_rates = lrs
        if isinstance(self.filter_config, dict):
            self.filter_config = FilterConfig.from_dict(self.filter_config)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filter_config"] = self.filter_config.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidParameterError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def photometric_loss(rendered: np.ndarray, target: np.ndarray, lambda_dssim: float = 0.2) -> float:
    """``(1 - lambda) * L1 + lambda * (1 - SSIM)``."""
    return photometric_loss_and_grad(rendered, target, lambda_dssim)[0]


def photometric_loss_and_grad(rendered: np.ndarray, target: np.ndarray, lambda_dssim: float = 0.2):
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise DimensionMismatchError(f"rendered {rendered.shape} vs target {target.shape}")
    diff = rendered - target
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - lambda_dssim) * np.sign(diff) / diff.size
    loss = (1.0 - lambda_dssim) * l1
    if lambda_dssim > 0:
        s, gs = ssim_with_grad(rendered, target)
        loss += lambda_dssim * (1.0 - s)
        grad = grad - lambda_dssim * gs
    return max(loss, 0.0), grad


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class Adam:
    """Adam with one learning rate per parameter group.

    Groups are the scene fields, except that SH coefficients are split into
    the DC term (``sh_dc``) and the rest (``sh_rest``).
    """

    def __init__(self, learning_rates: dict, betas=(0.9, 0.999), eps: float = 1e-15):
        self.lr = dict(learning_rates)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def _lr_for(self, name: str, shape) -> np.ndarray | float:
        if name != "sh_coeffs":
            return self.lr[name]
        lr = np.full(shape[1:], self.lr["sh_rest"])
        lr[0] = self.lr["sh_dc"]
        return lr

    def step(self, scene: GaussianScene, grads: GradientBuffer) -> GaussianScene:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        updated = {}
        for name in PARAM_FIELDS:
            p = getattr(scene, name)
            g = getattr(grads, name)
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            step = self._lr_for(name, p.shape) * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            updated[name] = p - step
        q = updated["rotations"]
        updated["rotations"] = q / np.linalg.norm(q, axis=1, keepdims=True)
        return scene.replace(**updated)

    def remap(self, parents: np.ndarray, fresh: np.ndarray) -> None:
        """Re-index moments after densification; ``fresh`` rows start at zero."""
        for store in (self.m, self.v):
            for name, arr in store.items():
                new = arr[parents].copy()
                new[fresh] = 0.0
                store[name] = new


def step(scene: GaussianScene, grads: GradientBuffer, optimizer_state: Adam) -> GaussianScene:
    return optimizer_state.step(scene, grads)


# ---------------------------------------------------------------------------
# Density control
# ---------------------------------------------------------------------------


@dataclass
class DensifyStats:
    """Running screen-space gradient statistics between densification ticks."""

    grad_accum: np.ndarray
    count: np.ndarray
    pos_grad_accum: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(np.zeros(n), np.zeros(n), np.zeros((n, 3)))

    def add(self, grads: GradientBuffer) -> None:
        vis = grads.visible
        self.grad_accum[vis] += grads.screen_grad[vis]
        self.count[vis] += 1
        self.pos_grad_accum[vis] += grads.positions[vis]

    def mean_grad(self) -> np.ndarray:
        return np.where(self.count > 0, self.grad_accum / np.maximum(self.count, 1), 0.0)


@dataclass
class DensifyResult:
    scene: GaussianScene
    parents: np.ndarray   # for every new primitive, the index it came from
    fresh: np.ndarray     # True for primitives created by clone/split
    n_cloned: int = 0
    n_split: int = 0
    n_pruned: int = 0

    @property
    def count_change(self) -> int:
        return self.n_cloned + self.n_split - self.n_pruned


SPLIT_SCALE_DIVISOR = 1.6


def densify_and_prune(scene: GaussianScene, stats: DensifyStats, config: TrainConfig,
                      extent: float | None = None) -> DensifyResult:
    """Clone small and split large high-gradient splats, then drop transparent ones.

    A clone is shifted one standard deviation (its largest) against the
    accumulated positional gradient. A split replaces the parent by two
    children placed one standard deviation either side along its largest
    axis, each with scales divided by 1.6.
    """
    n = len(scene)
    extent = extent if extent is not None else (config.scene_extent or scene.extent())
    mean_grad = stats.mean_grad()
    scales = np.exp(scene.log_scales)
    max_scale = scales.max(1)
    hot = mean_grad >= config.densify_grad_threshold
    room = max(config.max_primitives - n, 0)
    hot_idx = np.flatnonzero(hot)
    if len(hot_idx) > room:
        hot_idx = hot_idx[np.argsort(-mean_grad[hot_idx], kind="stable")[:room]]
        hot = np.zeros(n, dtype=bool)
        hot[hot_idx] = True
    small = max_scale <= config.percent_dense * extent
    clone = hot & small
    split = hot & ~small

    clone_idx = np.flatnonzero(clone)
    g = stats.pos_grad_accum[clone_idx]
    g_norm = np.linalg.norm(g, axis=1, keepdims=True)
    shift_dir = np.where(g_norm > 0, -g / np.where(g_norm > 0, g_norm, 1.0), 0.0)
    clone_pos = scene.positions[clone_idx] + shift_dir * max_scale[clone_idx, None]

    split_idx = np.flatnonzero(split)
    rot = quaternion_to_rotation(scene.rotations[split_idx]) if len(split_idx) else np.zeros((0, 3, 3))
    axis = np.argmax(scales[split_idx], axis=1)
    offset = rot[np.arange(len(split_idx)), :, axis] * max_scale[split_idx, None]
    split_pos = np.concatenate([scene.positions[split_idx] + offset, scene.positions[split_idx] - offset])
    split_parents = np.concatenate([split_idx, split_idx])

    keep = ~split & (sigmoid(scene.opacity_logits) >= config.prune_opacity)
    keep_idx = np.flatnonzero(keep)
    clone_keep = sigmoid(scene.opacity_logits[clone_idx]) >= config.prune_opacity
    split_keep = sigmoid(scene.opacity_logits[split_parents]) >= config.prune_opacity
    clone_idx, clone_pos = clone_idx[clone_keep], clone_pos[clone_keep]
    split_parents, split_pos = split_parents[split_keep], split_pos[split_keep]

    parents = np.concatenate([keep_idx, clone_idx, split_parents]).astype(np.int64)
    positions = np.concatenate([scene.positions[keep_idx], clone_pos, split_pos])
    log_scales = scene.log_scales[parents].copy()
    n_keep_clone = len(keep_idx) + len(clone_idx)
    log_scales[n_keep_clone:] -= np.log(SPLIT_SCALE_DIVISOR)
    new_scene = GaussianScene.create(positions, scene.rotations[parents], log_scales,
                                     scene.opacity_logits[parents], scene.sh_coeffs[parents])
    fresh = np.zeros(len(parents), dtype=bool)
    fresh[len(keep_idx):] = True
    n_pruned = int(n - len(split_idx) - len(keep_idx))
    return DensifyResult(new_scene, parents, fresh, len(clone_idx), int(split.sum()), n_pruned)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    scene: GaussianScene
    trace: list
    sampling_state: SamplingState | None


def train(scene: GaussianScene, views, config: TrainConfig | None = None,
          settings: RenderSettings | None = None, callback=None) -> TrainResult:
    """Fit ``scene`` to ``views``, a list of ``(Camera, image)`` pairs.

    One view per iteration, visited in a fresh seeded permutation each epoch.
    Trace records carry the iteration, loss, training-view PSNR and primitive
    count every ``config.eval_interval`` iterations.

    Raises:
        DivergenceError: the loss became NaN; the partial trace is attached.
    """
    config = config or TrainConfig()
    settings = settings or RenderSettings()
    views = list(views)
    if not views:
        raise InvalidParameterError("training needs at least one view")
    cameras: list[Camera] = [c for c, _ in views]
    fc = config.filter_config
    rng = np.random.default_rng(config.seed)
    extent = config.scene_extent or scene.extent()
    lrs = dict(config.learning_rates)
    lrs["positions"] *= extent
    adam = Adam(lrs)
    stats = DensifyStats.zeros(len(scene))
    sampling = SamplingState(np.ones(len(scene)), config.sampling_interval, None)
    densify_until = config.densify_until if config.densify_until is not None else config.iterations // 2
    trace = []
    order = rng.permutation(len(views))
    window_loss, window_psnr, window_n = 0.0, 0.0, 0

    for it in range(config.iterations):
        sampling = refresh_sampling_state(sampling, scene.positions, cameras, it)
        pos = it % len(views)
        if pos == 0 and it > 0:
            order = rng.permutation(len(views))
        cam, target = views[order[pos]]
        result = rasterize(scene, cam, fc, sampling, settings)
        loss, dimg = photometric_loss_and_grad(result.image, target, config.lambda_dssim)
        if not np.isfinite(loss):
            raise DivergenceError(f"loss is {loss} at iteration {it}", trace)
        grads = backward_from_result(scene, cam, result, dimg)
        stats.add(grads)
        scene = adam.step(scene, grads)
        window_loss += loss
        window_psnr += psnr(np.clip(result.image, 0, 1), target)
        window_n += 1

        tick = it + 1
        if (config.densify and tick >= config.densify_from and tick <= densify_until
                and tick % config.densify_interval == 0):
            res = densify_and_prune(scene, stats, config, extent)
            scene = res.scene
            adam.remap(res.parents, res.fresh)
            sampling = sampling.select(res.parents)
            stats = DensifyStats.zeros(len(scene))
            logger.debug("iter %d: +%d clone +%d split -%d prune -> %d", tick, res.n_cloned,
                         res.n_split, res.n_pruned, len(scene))

        if tick % config.eval_interval == 0 or tick == config.iterations:
            rec = {"iteration": tick, "loss": window_loss / window_n,
                   "psnr": window_psnr / window_n, "primitives": len(scene)}
            trace.append(rec)
            window_loss, window_psnr, window_n = 0.0, 0.0, 0
            if callback is not None:
                callback(rec)
    return TrainResult(scene, trace, sampling)
