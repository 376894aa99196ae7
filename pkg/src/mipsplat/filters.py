"""Low-pass filters applied to Gaussians before and after projection.

* 3D smoothing: world-space convolution sized by the primitive's maximal
  sampling rate, with a determinant-ratio factor that keeps the integral fixed.
* 2D Mip: screen-space convolution approximating the pixel footprint, also
  mass preserving.
* Dilation and EWA: screen-space variance added without renormalization, so
  the peak stays at 1 and the integrated mass grows.

All functions accept a single matrix or a stack of matrices.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidParameterError, InvalidRateError

DEFAULT_MIP_VARIANCE = 0.1
DEFAULT_SMOOTH3D_VARIANCE = 0.2
DEFAULT_DILATION_VARIANCE = 0.3
DEFAULT_EWA_VARIANCE = 0.3


class ScreenMode(str, enum.Enum):
    NONE = "none"
    DILATION = "dilation"
    EWA = "ewa"
    MIP = "mip"

    @property
    def default_variance(self) -> float:
        return {
            ScreenMode.NONE: 0.0,
            ScreenMode.DILATION: DEFAULT_DILATION_VARIANCE,
            ScreenMode.EWA: DEFAULT_EWA_VARIANCE,
            ScreenMode.MIP: DEFAULT_MIP_VARIANCE,
        }[self]

    @property
    def normalized(self) -> bool:
        return self is ScreenMode.MIP


@dataclass(frozen=True)
class FilterConfig:
    """Which screen filter runs and whether 3D smoothing is active.

    Attributes:
        screen_mode: screen-space filter.
        screen_variance: its variance in pixels^2; ``None`` picks the mode's
            default (0.1 Mip, 0.3 dilation/EWA).
        smoothing3d: dimensionless 3D filter variance, or ``None`` to disable.
    """

    screen_mode: ScreenMode = ScreenMode.MIP
    screen_variance: float | None = None
    smoothing3d: float | None = DEFAULT_SMOOTH3D_VARIANCE

    def __post_init__(self):
        object.__setattr__(self, "screen_mode", ScreenMode(self.screen_mode))
        if self.screen_variance is None:
            object.__setattr__(self, "screen_variance", self.screen_mode.default_variance)
        if self.screen_mode is ScreenMode.NONE:
            object.__setattr__(self, "screen_variance", 0.0)
        if self.screen_variance < 0 or (self.smoothing3d is not None and self.smoothing3d < 0):
            raise InvalidParameterError("filter variances must be non-negative")

    @property
    def smoothing_active(self) -> bool:
        return self.smoothing3d is not None and self.smoothing3d > 0

    @classmethod
    def mip_splatting(cls) -> "FilterConfig":
        return cls(ScreenMode.MIP, DEFAULT_MIP_VARIANCE, DEFAULT_SMOOTH3D_VARIANCE)

    @classmethod
    def dilation(cls, variance: float = DEFAULT_DILATION_VARIANCE) -> "FilterConfig":
        return cls(ScreenMode.DILATION, variance, None)

    @classmethod
    def ewa(cls, variance: float = DEFAULT_EWA_VARIANCE) -> "FilterConfig":
        return cls(ScreenMode.EWA, variance, None)

    @classmethod
    def unfiltered(cls) -> "FilterConfig":
        return cls(ScreenMode.NONE, 0.0, None)

    def with_smoothing(self, s3d: float | None) -> "FilterConfig":
        return FilterConfig(self.screen_mode, self.screen_variance, s3d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["screen_mode"] = self.screen_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FilterConfig":
        unknown = set(d) - {"screen_mode", "screen_variance", "smoothing3d"}
        if unknown:
            raise InvalidParameterError(f"unknown filter keys: {sorted(unknown)}")
        return cls(**d)

    def label(self) -> str:
        s = "3d" if self.smoothing_active else "no3d"
        return f"{self.screen_mode.value}+{s}"


def _det3(m: np.ndarray) -> np.ndarray:
    return (
        m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
        - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
        + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0])
    )


def _det2(m: np.ndarray) -> np.ndarray:
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def _det_ratio_sqrt(det_a, det_b):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(np.clip(det_a, 0.0, None) / det_b)
    return np.where(det_b > 0, np.minimum(r, 1.0), 0.0)


def smoothing_variance(rate, s3d: float):
    """World-space variance ``s3d / rate^2`` of the 3D low-pass filter."""
    rate = np.asarray(rate, dtype=np.float64)
    if np.any(~(rate > 0)):
        raise InvalidRateError("sampling rate must be positive")
    return s3d / (rate * rate)


def smooth_3d(sigma: np.ndarray, rate, s3d: float):
    """Convolve a 3D Gaussian with an isotropic low-pass filter.

    Args:
        sigma: (3, 3) or (N, 3, 3) covariance.
        rate: maximal sampling rate(s) in 1/world-length.
        s3d: dimensionless filter variance (in squared sampling intervals).

    Returns:
        ``(sigma + s3d / rate^2 * I, sqrt(|sigma| / |sigma_reg|))``.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if s3d < 0:
        raise InvalidParameterError("s3d must be non-negative")
    var = smoothing_variance(rate, s3d)
    reg = sigma + np.asarray(var)[..., None, None] * np.eye(3)
    if s3d == 0:
        return reg, np.ones(sigma.shape[:-2]) if sigma.ndim > 2 else 1.0
    norm = _det_ratio_sqrt(_det3(sigma), _det3(reg))
    return reg, norm if sigma.ndim > 2 else float(norm)


def mip_filter_2d(cov2d: np.ndarray, s_mip: float):
    """Screen-space Mip filter: ``(cov + s I, sqrt(|cov| / |cov + s I|))``."""
    cov2d = np.asarray(cov2d, dtype=np.float64)
    if s_mip < 0:
        raise InvalidParameterError("s_mip must be non-negative")
    out = cov2d + s_mip * np.eye(2)
    if s_mip == 0:
        return out, np.ones(cov2d.shape[:-2]) if cov2d.ndim > 2 else 1.0
    norm = _det_ratio_sqrt(_det2(cov2d), _det2(out))
    return out, norm if cov2d.ndim > 2 else float(norm)


def dilation_2d(cov2d: np.ndarray, s_dil: float) -> np.ndarray:
    """Screen-space dilation: adds ``s_dil I`` and leaves the peak at 1."""
    if s_dil < 0:
        raise InvalidParameterError("s_dil must be non-negative")
    return np.asarray(cov2d, dtype=np.float64) + s_dil * np.eye(2)


def ewa_filter_2d(cov2d: np.ndarray, s_ewa: float = DEFAULT_EWA_VARIANCE) -> np.ndarray:
    """EWA screen filter. Same covariance update as dilation, no renormalization;
    pass ``s_ewa=1`` for the identity-covariance variant."""
    return dilation_2d(cov2d, s_ewa)


def apply_screen_filter(cov2d: np.ndarray, config: FilterConfig):
    """Run the configured screen filter; returns ``(filtered_cov, norm)``."""
    cov2d = np.asarray(cov2d, dtype=np.float64)
    mode = config.screen_mode
    if mode is ScreenMode.MIP:
        return mip_filter_2d(cov2d, config.screen_variance)
    ones = np.ones(cov2d.shape[:-2]) if cov2d.ndim > 2 else 1.0
    if mode is ScreenMode.NONE:
        return cov2d.copy(), ones
    return dilation_2d(cov2d, config.screen_variance), ones


def gaussian_mass_2d(cov2d, peak=1.0):
    """Integral of ``peak * exp(-x^T cov^-1 x / 2)`` over the plane."""
    return peak * 2.0 * np.pi * np.sqrt(np.clip(_det2(np.asarray(cov2d)), 0.0, None))


def gaussian_mass_3d(cov, peak=1.0):
    return peak * (2.0 * np.pi) ** 1.5 * np.sqrt(np.clip(_det3(np.asarray(cov)), 0.0, None))
