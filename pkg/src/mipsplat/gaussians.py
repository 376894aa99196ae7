"""Anisotropic 3D Gaussian primitives.

A primitive is stored in unconstrained form (log-scales, opacity logit, raw
quaternion) so that an optimizer can update it freely. ``GaussianScene`` keeps
a whole scene as parallel arrays; ``Gaussian3D`` is the per-primitive view.

Spherical harmonics follow the convention used by splat PLY files: real basis
up to degree 3, one coefficient set per color channel, color = SH + 0.5,
clamped at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidParameterError, NumericDegeneracyError

#: Diagonal floor added to covariances before inversion (world units^2).
COV_EPS = 1e-9

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)
MAX_SH_DEGREE = 3


def num_sh_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def sh_degree_from_count(count: int) -> int:
    degree = int(round(np.sqrt(count))) - 1
    if degree < 0 or num_sh_coeffs(degree) != count or degree > MAX_SH_DEGREE:
        raise InvalidParameterError(f"{count} is not a valid SH coefficient count")
    return degree


def _check_finite(name: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidParameterError(f"non-finite values in {name}")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def inverse_sigmoid(y):
    y = np.asarray(y, dtype=np.float64)
    return np.log(y) - np.log1p(-y)


# ---------------------------------------------------------------------------
# Covariance
# ---------------------------------------------------------------------------


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from (w, x, y, z) quaternions.

    The quaternion is normalized first, so any non-zero quaternion is accepted.

    Args:
        q: array of shape (4,) or (N, 4).

    Returns:
        Array of shape (3, 3) or (N, 3, 3).
    """
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise InvalidParameterError("zero-norm quaternion")
    w, x, y, z = np.moveaxis(q / norm, -1, 0)
    rot = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return rot.reshape(q.shape[:-1] + (3, 3))


def rotation_to_quaternion(rot: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quaternion_to_rotation` for proper rotations, w >= 0."""
    rot = np.asarray(rot, dtype=np.float64)
    batched = rot.ndim == 3
    mats = rot if batched else rot[None]
    out = np.empty((mats.shape[0], 4))
    for i, m in enumerate(mats):
        # Shepperd's method: pick the largest diagonal combination for stability
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        cands = np.array([tr, m[0, 0], m[1, 1], m[2, 2]])
        k = int(np.argmax(cands))
        if k == 0:
            s = 2.0 * np.sqrt(1.0 + tr)
            q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif k == 1:
            s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif k == 2:
            s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        q = np.asarray(q)
        q /= np.linalg.norm(q)
        out[i] = q if q[0] >= 0 else -q
    return out if batched else out[0]


def compose_covariance(rotation: np.ndarray, log_scales: np.ndarray) -> np.ndarray:
    """World-space covariance ``O diag(exp(2 log_scales)) O^T``.

    Works on a single primitive ((4,), (3,)) or a batch ((N, 4), (N, 3)). The
    result is exactly symmetric.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    log_scales = np.asarray(log_scales, dtype=np.float64)
    _check_finite("rotation/log_scales", rotation, log_scales)
    rot = quaternion_to_rotation(rotation)
    m = rot * np.exp(log_scales)[..., None, :]
    cov = m @ np.swapaxes(m, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def convolve_gaussians(sigma_a: np.ndarray, sigma_b: np.ndarray) -> np.ndarray:
    """Covariance of the convolution of two Gaussians, which is the sum."""
    sigma_a = np.asarray(sigma_a, dtype=np.float64)
    sigma_b = np.asarray(sigma_b, dtype=np.float64)
    _check_finite("covariance", sigma_a, sigma_b)
    return sigma_a + sigma_b


def regularize_covariance(sigma: np.ndarray, eps: float = COV_EPS) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.float64)
    return sigma + eps * np.eye(sigma.shape[-1])


def eval_gaussian(mean: np.ndarray, cov: np.ndarray, x: np.ndarray) -> float:
    """Unnormalized Gaussian ``exp(-0.5 (x-mean)^T cov^-1 (x-mean))``.

    The covariance is regularized with :data:`COV_EPS` before it is factored.

    Raises:
        NumericDegeneracyError: the regularized covariance is not positive
            definite.
    """
    mean = np.asarray(mean, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    _check_finite("gaussian", mean, cov, x)
    try:
        chol = np.linalg.cholesky(regularize_covariance(cov))
    except np.linalg.LinAlgError as exc:
        raise NumericDegeneracyError("covariance is singular after regularization") from exc
    z = np.linalg.solve(chol, x - mean)
    return float(np.exp(-0.5 * z @ z))


# ---------------------------------------------------------------------------
# Spherical harmonics
# ---------------------------------------------------------------------------


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values for unit directions.

    Args:
        dirs: (..., 3) unit vectors.
        degree: 0 to 3.

    Returns:
        (..., (degree+1)^2) basis values.
    """
    if not 0 <= degree <= MAX_SH_DEGREE:
        raise InvalidParameterError(f"SH degree must be in [0, 3], got {degree}")
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [np.full_like(x, SH_C0)]
    if degree >= 1:
        out += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        out += [
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ]
    return np.stack(out, axis=-1)


def sh_basis_jacobian(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Derivatives of :func:`sh_basis` w.r.t. the (unnormalized) direction components.

    Returns:
        (..., (degree+1)^2, 3) array, entry [k, j] = d basis_k / d dir_j.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    zero = np.zeros_like(x)
    rows = [(zero, zero, zero)]
    if degree >= 1:
        c = SH_C1
        rows += [(zero, zero - c, zero), (zero, zero, zero + c), (zero - c, zero, zero)]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        a = SH_C2
        rows += [
            (a[0] * y, a[0] * x, zero),
            (zero, a[1] * z, a[1] * y),
            (-2 * a[2] * x, -2 * a[2] * y, 4 * a[2] * z),
            (a[3] * z, zero, a[3] * x),
            (2 * a[4] * x, -2 * a[4] * y, zero),
        ]
    if degree >= 3:
        b = SH_C3
        rows += [
            (b[0] * 6 * x * y, b[0] * (3 * xx - 3 * yy), zero),
            (b[1] * y * z, b[1] * x * z, b[1] * x * y),
            (b[2] * -2 * x * y, b[2] * (4 * zz - xx - 3 * yy), b[2] * 8 * y * z),
            (b[3] * -6 * x * z, b[3] * -6 * y * z, b[3] * (6 * zz - 3 * xx - 3 * yy)),
            (b[4] * (4 * zz - 3 * xx - yy), b[4] * -2 * x * y, b[4] * 8 * x * z),
            (b[5] * 2 * x * z, b[5] * -2 * y * z, b[5] * (xx - yy)),
            (b[6] * (3 * xx - 3 * yy), b[6] * -6 * x * y, zero),
        ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def eval_sh_color(sh_coeffs: np.ndarray, view_direction: np.ndarray) -> np.ndarray:
    """View-dependent RGB from SH coefficients.

    Args:
        sh_coeffs: ((L+1)^2, 3) coefficients, or a batch (N, (L+1)^2, 3).
        view_direction: unit vector(s) from the camera towards the primitive,
            shape (3,) or (N, 3).

    Returns:
        RGB of shape (3,) or (N, 3), clamped at zero.
    """
    sh_coeffs = np.asarray(sh_coeffs, dtype=np.float64)
    degree = sh_degree_from_count(sh_coeffs.shape[-2])
    basis = sh_basis(view_direction, degree)
    color = np.einsum("...k,...kc->...c", basis, sh_coeffs) + 0.5
    return np.maximum(color, 0.0)


def rgb_to_sh_dc(rgb) -> np.ndarray:
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


# ---------------------------------------------------------------------------
# Primitive containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Gaussian3D:
    """A single optimizable primitive."""

    position: np.ndarray
    rotation: np.ndarray
    log_scales: np.ndarray
    opacity_logit: float
    sh_coeffs: np.ndarray

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def covariance(self) -> np.ndarray:
        return compose_covariance(self.rotation, self.log_scales)


@dataclass(frozen=True, eq=False)
class GaussianScene:
    """A scene of ``n`` primitives stored as parallel arrays.

    Attributes:
        positions: (N, 3) world positions.
        rotations: (N, 4) quaternions (w, x, y, z); normalized wherever they
            are consumed, so values read from disk are kept verbatim.
        log_scales: (N, 3) log standard deviations.
        opacity_logits: (N,) pre-sigmoid opacities.
        sh_coeffs: (N, (L+1)^2, 3) color coefficients.
    """

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray

    def __post_init__(self):
        n = len(self.positions)
        shapes = {
            "positions": (self.positions, (n, 3)),
            "rotations": (self.rotations, (n, 4)),
            "log_scales": (self.log_scales, (n, 3)),
            "opacity_logits": (self.opacity_logits, (n,)),
        }
        for name, (arr, shape) in shapes.items():
            if np.shape(arr) != shape:
                raise InvalidParameterError(f"{name} has shape {np.shape(arr)}, expected {shape}")
        if self.sh_coeffs.ndim != 3 or self.sh_coeffs.shape[0] != n or self.sh_coeffs.shape[2] != 3:
            raise InvalidParameterError(f"sh_coeffs has shape {self.sh_coeffs.shape}")
        sh_degree_from_count(self.sh_coeffs.shape[1])

    @classmethod
    def create(cls, positions, rotations, log_scales, opacity_logits, sh_coeffs) -> "GaussianScene":
        f64 = lambda a: np.ascontiguousarray(a, dtype=np.float64)  # noqa: E731
        sh = f64(sh_coeffs)
        if sh.ndim == 2:
            sh = sh[:, None, :]
        return cls(f64(positions), f64(rotations), f64(log_scales), f64(opacity_logits).reshape(-1), sh)

    @classmethod
    def empty(cls, sh_degree: int = 0) -> "GaussianScene":
        k = num_sh_coeffs(sh_degree)
        return cls.create(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, k, 3)))

    @classmethod
    def from_primitives(cls, prims) -> "GaussianScene":
        prims = list(prims)
        return cls.create(
            [p.position for p in prims],
            [p.rotation for p in prims],
            [p.log_scales for p in prims],
            [p.opacity_logit for p in prims],
            [p.sh_coeffs for p in prims],
        )

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            self.positions[i].copy(),
            self.rotations[i].copy(),
            self.log_scales[i].copy(),
            float(self.opacity_logits[i]),
            self.sh_coeffs[i].copy(),
        )

    @property
    def sh_degree(self) -> int:
        return sh_degree_from_count(self.sh_coeffs.shape[1])

    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def covariances(self) -> np.ndarray:
        return compose_covariance(self.rotations, self.log_scales)

    def replace(self, **changes) -> "GaussianScene":
        return replace(self, **changes)

    def select(self, index) -> "GaussianScene":
        return GaussianScene.create(
            self.positions[index],
            self.rotations[index],
            self.log_scales[index],
            self.opacity_logits[index],
            self.sh_coeffs[index],
        )

    def with_sh_degree(self, degree: int) -> "GaussianScene":
        """Truncate or zero-pad the SH coefficients to ``degree``."""
        k = num_sh_coeffs(degree)
        cur = self.sh_coeffs.shape[1]
        if k <= cur:
            sh = self.sh_coeffs[:, :k]
        else:
            sh = np.concatenate([self.sh_coeffs, np.zeros((len(self), k - cur, 3))], axis=1)
        return self.replace(sh_coeffs=np.ascontiguousarray(sh))

    def nonfinite_indices(self) -> np.ndarray:
        bad = ~np.isfinite(self.positions).all(1)
        bad |= ~np.isfinite(self.rotations).all(1)
        bad |= ~np.isfinite(self.log_scales).all(1)
        bad |= ~np.isfinite(self.opacity_logits)
        bad |= ~np.isfinite(self.sh_coeffs).all((1, 2))
        return np.flatnonzero(bad)

    def extent(self) -> float:
        """Radius of the positions around their centroid, used as scene scale."""
        if len(self) == 0:
            return 1.0
        c = self.positions.mean(0)
        return float(np.max(np.linalg.norm(self.positions - c, axis=1))) or 1.0


def concat_scenes(scenes) -> GaussianScene:
    scenes = list(scenes)
    return GaussianScene.create(
        np.concatenate([s.positions for s in scenes]),
        np.concatenate([s.rotations for s in scenes]),
        np.concatenate([s.log_scales for s in scenes]),
        np.concatenate([s.opacity_logits for s in scenes]),
        np.concatenate([s.sh_coeffs for s in scenes]),
    )
