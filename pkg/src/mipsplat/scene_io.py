"""Scene, camera and image files.

* Splat PLY: binary little-endian, one float32 vertex record per primitive
  with the property layout written by common Gaussian splatting tools.
* Transforms JSON: NeRF-synthetic style camera file (OpenGL camera axes).
* PNG: 8-bit sRGB on disk, linear float in memory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera
from .errors import InvalidParameterError, ParseError, SchemaError
from .filters import _det3, smoothing_variance
from .gaussians import GaussianScene, inverse_sigmoid, num_sh_coeffs, rotation_to_quaternion, sigmoid
from .sampling import SamplingState

PLY_SH_DEGREE = 3
_N_REST = num_sh_coeffs(PLY_SH_DEGREE) - 1
PLY_PROPERTIES = (
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(3 * _N_REST)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)
_PLY_DTYPE = np.dtype([(name, "<f4") for name in PLY_PROPERTIES])


def _ply_header(n: int) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    lines += [f"property float {name}" for name in PLY_PROPERTIES]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


# ---------------------------------------------------------------------------
# Baking
# ---------------------------------------------------------------------------


def bake_scene(scene: GaussianScene, sampling_state: SamplingState, s3d: float) -> GaussianScene:
    """Fuse the 3D smoothing filter into covariances and opacities.

    The result renders without 3D smoothing exactly as ``scene`` renders with it.
    """
    if s3d is None or s3d == 0:
        return scene
    if len(sampling_state.rates) != len(scene):
        raise InvalidParameterError("sampling state does not match the scene")
    var = smoothing_variance(sampling_state.rates, s3d)
    sigma = scene.covariances()
    reg = sigma + var[:, None, None] * np.eye(3)
    norm = np.minimum(np.sqrt(np.exp(2.0 * scene.log_scales.sum(1)) / _det3(reg)), 1.0)
    evals, evecs = np.linalg.eigh(reg)
    flip = np.linalg.det(evecs) < 0
    evecs[flip, :, 0] *= -1
    opac = sigmoid(scene.opacity_logits) * norm
    return scene.replace(
        rotations=rotation_to_quaternion(evecs),
        log_scales=0.5 * np.log(evals),
        opacity_logits=inverse_sigmoid(opac),
    )


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------


def _parse_header(data: bytes):
    end_marker = b"end_header\n"
    end = data.find(end_marker)
    if not data.startswith(b"ply\n"):
        raise ParseError("missing 'ply' magic", 0)
    if end < 0:
        raise ParseError("missing end_header", len(data))
    offset = 0
    n = None
    props = []
    for raw in data[:end].split(b"\n")[:-1]:
        line = raw.decode("ascii", errors="replace").strip()
        here = offset
        offset += len(raw) + 1
        if line == "ply" or line.startswith("comment") or line.startswith("obj_info"):
            continue
        parts = line.split()
        if parts[0] == "format":
            if parts[1:] != ["binary_little_endian", "1.0"]:
                raise ParseError(f"unsupported format '{line}'", here)
        elif parts[0] == "element":
            if n is not None or len(parts) != 3 or parts[1] != "vertex":
                raise ParseError(f"unexpected element '{line}'", here)
            try:
                n = int(parts[2])
            except ValueError:
                raise ParseError(f"bad vertex count '{parts[2]}'", here) from None
        elif parts[0] == "property":
            if n is None:
                raise ParseError("property before element", here)
            if len(parts) != 3 or parts[1] != "float":
                raise ParseError(f"unsupported property '{line}'", here)
            k = len(props)
            if k >= len(PLY_PROPERTIES) or parts[2] != PLY_PROPERTIES[k]:
                expected = PLY_PROPERTIES[k] if k < len(PLY_PROPERTIES) else "end_header"
                raise ParseError(f"unexpected property '{parts[2]}', expected '{expected}'", here)
            props.append(parts[2])
        else:
            raise ParseError(f"unknown header line '{line}'", here)
    if n is None:
        raise ParseError("no vertex element", end)
    if len(props) != len(PLY_PROPERTIES):
        raise ParseError(f"missing property '{PLY_PROPERTIES[len(props)]}'", end)
    return n, end + len(end_marker)


def load_scene(path) -> GaussianScene:
    """Read a splat PLY file (SH degree 3 in memory).

    Values are kept exactly as stored; quaternions are normalized wherever
    they are used.

    Raises:
        ParseError: malformed header, unknown properties, truncated or
            oversized payload. The message carries the byte offset.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    n, body = _parse_header(data)
    expected = n * _PLY_DTYPE.itemsize
    payload = len(data) - body
    if payload < expected:
        raise ParseError(f"truncated payload: {payload} of {expected} bytes", len(data))
    if payload > expected:
        raise ParseError(f"{payload - expected} trailing bytes after vertex data", body + expected)
    rec = np.frombuffer(data, dtype=_PLY_DTYPE, count=n, offset=body)
    col = lambda names: np.stack([rec[c].astype(np.float64) for c in names], 1)  # noqa: E731
    dc = col([f"f_dc_{i}" for i in range(3)])
    rest = col([f"f_rest_{i}" for i in range(3 * _N_REST)]).reshape(n, 3, _N_REST).transpose(0, 2, 1)
    rotations = col([f"rot_{i}" for i in range(4)])
    if np.any(np.linalg.norm(rotations, axis=1) == 0):
        bad = np.flatnonzero(np.linalg.norm(rotations, axis=1) == 0)
        raise ParseError(f"zero quaternion in vertices {bad.tolist()}", body + int(bad[0]) * _PLY_DTYPE.itemsize)
    return GaussianScene.create(
        col(["x", "y", "z"]),
        rotations,
        col([f"scale_{i}" for i in range(3)]),
        rec["opacity"].astype(np.float64),
        np.concatenate([dc[:, None, :], rest], axis=1),
    )


def save_scene(scene: GaussianScene, path, bake_3d_filter: bool = False,
               sampling_state: SamplingState | None = None, s3d: float | None = None) -> None:
    """Write a splat PLY. Lower SH degrees are zero-padded to degree 3.

    With ``bake_3d_filter`` the 3D smoothing filter (variance ``s3d``, rates
    from ``sampling_state``) is fused into the stored primitives first.
    """
    if bake_3d_filter and s3d:
        if sampling_state is None:
            raise InvalidParameterError("baking needs a sampling state")
        scene = bake_scene(scene, sampling_state, s3d)
    scene = scene.with_sh_degree(PLY_SH_DEGREE)
    n = len(scene)
    rec = np.zeros(n, dtype=_PLY_DTYPE)
    for i, c in enumerate("xyz"):
        rec[c] = scene.positions[:, i]
    for i in range(3):
        rec[f"f_dc_{i}"] = scene.sh_coeffs[:, 0, i]
        rec[f"scale_{i}"] = scene.log_scales[:, i]
    rest = scene.sh_coeffs[:, 1:, :].transpose(0, 2, 1).reshape(n, 3 * _N_REST)
    for i in range(rest.shape[1]):
        rec[f"f_rest_{i}"] = rest[:, i]
    rec["opacity"] = scene.opacity_logits
    for i in range(4):
        rec[f"rot_{i}"] = scene.rotations[:, i]
    with open(path, "wb") as fh:
        fh.write(_ply_header(n))
        fh.write(rec.tobytes())


# ---------------------------------------------------------------------------
# Cameras
# ---------------------------------------------------------------------------

_GL_TO_CV = np.diag([1.0, -1.0, -1.0, 1.0])


def focal_from_fov(fov: float, size: int) -> float:
    return 0.5 * size / np.tan(0.5 * fov)


@dataclass
class CameraRecord:
    file_path: str
    transform_matrix: np.ndarray  # 4x4 camera-to-world, OpenGL axes


@dataclass
class CameraSet:
    """Contents of a transforms-style JSON file."""

    camera_angle_x: float
    frames: list
    width: int
    height: int
    focal_x: float | None = None
    focal_y: float | None = None
    principal_point: tuple | None = None
    base_dir: str = "."
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    def camera(self, i: int) -> Camera:
        fx = self.focal_x if self.focal_x is not None else focal_from_fov(self.camera_angle_x, self.width)
        fy = self.focal_y if self.focal_y is not None else fx
        c2w = self.frames[i].transform_matrix @ _GL_TO_CV
        rot = c2w[:3, :3].T
        return Camera(rot, -rot @ c2w[:3, 3], fx, fy, self.width, self.height,
                      None if self.principal_point is None else np.asarray(self.principal_point))

    def cameras(self) -> list[Camera]:
        return [self.camera(i) for i in range(len(self))]

    def image_path(self, i: int, suffix: str = "") -> str:
        p = self.frames[i].file_path
        if not p.lower().endswith(".png"):
            p += ".png"
        stem = p[:-4] + suffix
        return os.path.normpath(os.path.join(self.base_dir, stem + ".png"))


def _png_size(path: str):
    from PIL import Image

    with Image.open(path) as im:
        return im.size


def load_cameras(path) -> CameraSet:
    """Parse a transforms JSON file.

    Image size comes from ``w``/``h`` keys when present, otherwise from the
    first frame's PNG header.

    Raises:
        SchemaError: missing or malformed fields; ``path`` names the field.
    """
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.pos) from exc
    if not isinstance(doc, dict):
        raise SchemaError("expected an object", "$")
    if "camera_angle_x" not in doc and "fl_x" not in doc:
        raise SchemaError("missing field", "camera_angle_x")
    try:
        angle = float(doc.get("camera_angle_x", 0.0))
    except (TypeError, ValueError):
        raise SchemaError("must be a number", "camera_angle_x") from None
    frames_doc = doc.get("frames")
    if not isinstance(frames_doc, list) or not frames_doc:
        raise SchemaError("must be a non-empty list", "frames")
    frames = []
    for i, fr in enumerate(frames_doc):
        where = f"frames[{i}]"
        if not isinstance(fr, dict):
            raise SchemaError("expected an object", where)
        if not isinstance(fr.get("file_path"), str):
            raise SchemaError("missing or non-string", f"{where}.file_path")
        try:
            mat = np.asarray(fr["transform_matrix"], dtype=np.float64)
        except (KeyError, TypeError, ValueError):
            raise SchemaError("missing or non-numeric", f"{where}.transform_matrix") from None
        if mat.shape != (4, 4) or not np.all(np.isfinite(mat)):
            raise SchemaError("must be a finite 4x4 matrix", f"{where}.transform_matrix")
        rot = mat[:3, :3]
        if abs(np.linalg.det(mat)) < 1e-12 or np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-5:
            raise SchemaError("rotation block must be orthonormal", f"{where}.transform_matrix")
        frames.append(CameraRecord(fr["file_path"], mat))
    if "w" in doc and "h" in doc:
        width, height = int(doc["w"]), int(doc["h"])
    else:
        probe = CameraSet(angle, frames, 1, 1, base_dir=base).image_path(0)
        if not os.path.exists(probe):
            raise SchemaError("image size unknown: no w/h keys and first image missing", "w")
        width, height = _png_size(probe)
    pp = (float(doc["cx"]), float(doc["cy"])) if "cx" in doc and "cy" in doc else None
    known = {"camera_angle_x", "frames", "w", "h", "fl_x", "fl_y", "cx", "cy"}
    camset = CameraSet(
        angle, frames, width, height,
        float(doc["fl_x"]) if "fl_x" in doc else None,
        float(doc["fl_y"]) if "fl_y" in doc else None,
        pp, base, {k: v for k, v in doc.items() if k not in known},
    )
    try:
        camset.cameras()
    except InvalidParameterError as exc:
        raise SchemaError(f"invalid intrinsics: {exc}", "camera_angle_x") from exc
    return camset


def save_cameras(path, cameras, file_paths) -> None:
    """Write cameras (all sharing intrinsics) as a transforms JSON file."""
    cameras = list(cameras)
    c0 = cameras[0]
    frames = []
    for cam, fp in zip(cameras, file_paths):
        c2w_cv = np.eye(4)
        c2w_cv[:3, :3] = cam.rotation.T
        c2w_cv[:3, 3] = cam.center
        frames.append({"file_path": fp, "transform_matrix": (c2w_cv @ _GL_TO_CV).tolist()})
    doc = {
        "camera_angle_x": float(2.0 * np.arctan(0.5 * c0.width / c0.focal_x)),
        "w": c0.width, "h": c0.height,
        "fl_x": c0.focal_x, "fl_y": c0.focal_y,
        "cx": float(c0.principal_point[0]), "cy": float(c0.principal_point[1]),
        "frames": frames,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    x = np.asarray(encoded, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def write_png(path, image: np.ndarray) -> None:
    """Store a linear RGB image as 8-bit sRGB."""
    from PIL import Image

    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidParameterError(f"expected (H, W, 3) image, got {img.shape}")
    data = np.round(srgb_encode(img) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """Load an 8-bit PNG as linear RGB in [0, 1]."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            if im.format != "PNG":
                raise ParseError(f"{path} is not a PNG file", 0)
            data = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, SyntaxError, OSError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise ParseError(f"cannot decode PNG {path}: {exc}") from exc
    return srgb_decode(data)
