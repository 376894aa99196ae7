"""World-space sampling rates of primitives across the training cameras.

A pixel back-projected to depth ``d`` by a camera of focal ``f`` spans
``d / f`` world units. Each primitive takes the highest rate ``f / d`` over the
cameras whose frustum contains its center; that rate sizes its 3D smoothing
filter.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .camera import FRUSTUM_PADDING, Camera
from .errors import InvalidDepthError, InvalidParameterError

#: Marker rate for a point that no camera sees.
UNCONSTRAINED = 0.0
DEFAULT_RECOMPUTE_INTERVAL = 100


def sampling_interval(focal: float, depth: float) -> float:
    """World-space distance between adjacent pixel samples at ``depth``."""
    if not focal > 0:
        raise InvalidParameterError(f"focal must be positive, got {focal}")
    if not depth > 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    return depth / focal


def _visible_rates(positions: np.ndarray, cam: Camera, padding: float) -> np.ndarray:
    """Per-point ``f / d`` for one camera, :data:`UNCONSTRAINED` where not visible."""
    rot, t = cam.rotation, cam.translation
    px, py, pz = positions[:, 0], positions[:, 1], positions[:, 2]
    # elementwise on purpose: a fixed operation order keeps rates bit-reproducible
    x = px * rot[0, 0] + py * rot[0, 1] + pz * rot[0, 2] + t[0]
    y = px * rot[1, 0] + py * rot[1, 1] + pz * rot[1, 2] + t[1]
    z = px * rot[2, 0] + py * rot[2, 1] + pz * rot[2, 2] + t[2]
    visible = z > cam.near
    zs = np.where(visible, z, 1.0)
    u = cam.focal_x * x / zs + cam.principal_point[0]
    v = cam.focal_y * y / zs + cam.principal_point[1]
    visible &= (u >= -padding) & (u <= cam.width + padding)
    visible &= (v >= -padding) & (v <= cam.height + padding)
    return np.where(visible, cam.max_focal / zs, UNCONSTRAINED)


def max_sampling_rates(positions: np.ndarray, cameras, padding: float = FRUSTUM_PADDING) -> np.ndarray:
    """Maximal sampling rate per point; :data:`UNCONSTRAINED` if no camera sees it."""
    cameras = list(cameras)
    if not cameras:
        raise InvalidParameterError("at least one camera is required")
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    rates = np.full(len(positions), UNCONSTRAINED)
    for cam in cameras:
        np.maximum(rates, _visible_rates(positions, cam, padding), out=rates)
    return rates


def max_sampling_rate(p: np.ndarray, cameras, padding: float = FRUSTUM_PADDING) -> float:
    return float(max_sampling_rates(np.asarray(p)[None], cameras, padding)[0])


def fill_unconstrained(rates: np.ndarray) -> np.ndarray:
    """Give unseen points the smallest rate among seen ones (1.0 if none is seen)."""
    rates = np.asarray(rates, dtype=np.float64).copy()
    seen = rates > UNCONSTRAINED
    rates[~seen] = rates[seen].min() if seen.any() else 1.0
    return rates


@dataclass(frozen=True, eq=False)
class SamplingState:
    """Snapshot of per-primitive maximal sampling rates.

    ``rates`` are already filled for unseen primitives. ``last_computed_iter``
    is ``None`` until the first refresh.
    """

    rates: np.ndarray
    recompute_interval: int = DEFAULT_RECOMPUTE_INTERVAL
    last_computed_iter: int | None = None
    visible: np.ndarray | None = None

    def __post_init__(self):
        if int(self.recompute_interval) < 1:
            raise InvalidParameterError("recompute_interval must be a positive integer")

    @classmethod
    def compute(cls, positions, cameras, iteration: int = 0,
                recompute_interval: int = DEFAULT_RECOMPUTE_INTERVAL,
                padding: float = FRUSTUM_PADDING) -> "SamplingState":
        raw = max_sampling_rates(positions, cameras, padding)
        return cls(fill_unconstrained(raw), recompute_interval, iteration, raw > UNCONSTRAINED)

    def is_due(self, iteration: int) -> bool:
        if self.last_computed_iter is None:
            return True
        return iteration - self.last_computed_iter >= self.recompute_interval

    def select(self, index) -> "SamplingState":
        """State for a re-indexed scene (children inherit their parent's rate)."""
        vis = None if self.visible is None else self.visible[index]
        return replace(self, rates=self.rates[index], visible=vis)


def refresh_sampling_state(state: SamplingState, positions, cameras, iteration: int,
                           padding: float = FRUSTUM_PADDING) -> SamplingState:
    """Recompute all rates if ``recompute_interval`` iterations have passed."""
    if not state.is_due(iteration):
        return state
    return SamplingState.compute(positions, cameras, iteration, state.recompute_interval, padding)
