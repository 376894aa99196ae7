import json
import os

import numpy as np
import pytest

from _util import front_camera, random_scene
from mipsplat.errors import ParseError, SchemaError
from mipsplat.filters import FilterConfig, ScreenMode
from mipsplat.gaussians import GaussianScene
from mipsplat.rasterizer import render
from mipsplat.sampling import SamplingState
from mipsplat.scene_io import (PLY_PROPERTIES, bake_scene, focal_from_fov, load_cameras, load_scene, read_png,
                               save_cameras, save_scene, srgb_decode, srgb_encode, write_png)
from mipsplat.toy import orbit_cameras

DATA = os.path.join(os.path.dirname(__file__), "data")


def _f32_scene(rng, n=100, sh_degree=3):
    """Random scene whose values are exactly representable in float32."""
    s = random_scene(rng, n, sh_degree=sh_degree)
    cast = lambda a: a.astype(np.float32).astype(np.float64)  # noqa: E731
    return GaussianScene.create(cast(s.positions), cast(s.rotations), cast(s.log_scales),
                                cast(s.opacity_logits), cast(s.sh_coeffs))


# --- PLY -------------------------------------------------------------------------


def test_ply_save_load_field_exact(tmp_path):
    scene = _f32_scene(np.random.default_rng(0))
    save_scene(scene, tmp_path / "a.ply")
    back = load_scene(tmp_path / "a.ply")
    for name in ("positions", "rotations", "log_scales", "opacity_logits", "sh_coeffs"):
        np.testing.assert_array_equal(getattr(back, name), getattr(scene, name))


def test_ply_load_save_bit_identical(tmp_path):
    src = os.path.join(DATA, "reference.ply")
    save_scene(load_scene(src), tmp_path / "b.ply")
    assert (tmp_path / "b.ply").read_bytes() == open(src, "rb").read()


def test_lower_sh_degree_zero_padded(tmp_path):
    scene = _f32_scene(np.random.default_rng(1), 10, sh_degree=1)
    save_scene(scene, tmp_path / "c.ply")
    back = load_scene(tmp_path / "c.ply")
    assert back.sh_degree == 3
    np.testing.assert_array_equal(back.sh_coeffs[:, :4], scene.sh_coeffs)
    assert not back.sh_coeffs[:, 4:].any()


def test_header_layout():
    text = open(os.path.join(DATA, "reference.ply"), "rb").read().split(b"end_header")[0].decode()
    props = [ln.split()[2] for ln in text.splitlines() if ln.startswith("property")]
    assert props == PLY_PROPERTIES
    assert len(props) == 62


def _write(tmp_path, data):
    p = tmp_path / "x.ply"
    p.write_bytes(data)
    return p


def _good_bytes(tmp_path, n=3):
    save_scene(_f32_scene(np.random.default_rng(2), n), tmp_path / "g.ply")
    return (tmp_path / "g.ply").read_bytes()


def test_parse_errors_report_offsets(tmp_path):
    good = _good_bytes(tmp_path)
    body = good.index(b"end_header\n") + len(b"end_header\n")

    with pytest.raises(ParseError) as exc:
        load_scene(_write(tmp_path, b"plx\n" + good[4:]))
    assert exc.value.offset == 0

    truncated = good[:-10]
    with pytest.raises(ParseError) as exc:
        load_scene(_write(tmp_path, truncated))
    assert exc.value.offset == len(truncated)

    with pytest.raises(ParseError) as exc:
        load_scene(_write(tmp_path, good + b"\0\0\0\0"))
    assert exc.value.offset == len(good)
    assert exc.value.offset > body

    swapped = good.replace(b"property float scale_0\nproperty float scale_1",
                           b"property float scale_1\nproperty float scale_0")
    with pytest.raises(ParseError) as exc:
        load_scene(_write(tmp_path, swapped))
    assert swapped[exc.value.offset:].startswith(b"property float scale_1")

    ascii_fmt = good.replace(b"binary_little_endian", b"ascii")
    with pytest.raises(ParseError) as exc:
        load_scene(_write(tmp_path, ascii_fmt))
    assert ascii_fmt[exc.value.offset:].startswith(b"format")

    extra = good.replace(b"property float rot_3\n", b"property float rot_3\nproperty float extra\n")
    with pytest.raises(ParseError):
        load_scene(_write(tmp_path, extra))


def test_comment_lines_accepted(tmp_path):
    good = _good_bytes(tmp_path)
    commented = good.replace(b"ply\n", b"ply\ncomment made elsewhere\n", 1)
    a = load_scene(_write(tmp_path, commented))
    b = load_scene(tmp_path / "g.ply")
    np.testing.assert_array_equal(a.positions, b.positions)


def test_zero_quaternion_rejected(tmp_path):
    scene = _f32_scene(np.random.default_rng(3), 2)
    raw = _good_bytes(tmp_path, 2)
    rec_size = len(PLY_PROPERTIES) * 4
    body = raw.index(b"end_header\n") + len(b"end_header\n")
    data = bytearray(raw)
    data[body + rec_size + 58 * 4: body + 2 * rec_size] = bytes(16)
    with pytest.raises(ParseError) as exc:
        load_scene(_write(tmp_path, bytes(data)))
    assert exc.value.offset == body + rec_size
    assert len(scene) == 2


# --- baking ------------------------------------------------------------------------


def test_bake_with_zero_variance_is_identity(tmp_path):
    scene = _f32_scene(np.random.default_rng(4), 20)
    state = SamplingState.compute(scene.positions, [front_camera()])
    save_scene(scene, tmp_path / "plain.ply")
    save_scene(scene, tmp_path / "baked.ply", bake_3d_filter=True, sampling_state=state, s3d=0.0)
    assert (tmp_path / "plain.ply").read_bytes() == (tmp_path / "baked.ply").read_bytes()


@pytest.mark.parametrize("mode", list(ScreenMode), ids=lambda m: m.value)
def test_baked_render_equals_smoothed_render(mode):
    rng = np.random.default_rng(5)
    scene = random_scene(rng, 60, sh_degree=2, log_scale_range=(-5.0, -1.5))
    cams = orbit_cameras(4, width=64, height=64, focal=80.0)
    state = SamplingState.compute(scene.positions, cams)
    fc = FilterConfig(mode, None, 0.2)
    baked = bake_scene(scene, state, 0.2)
    for cam in cams:
        a = render(scene, cam, fc, state)
        b = render(baked, cam, fc.with_smoothing(0.0), None)
        assert np.max(np.abs(a - b)) < 1e-6


def test_baked_file_matches_in_float32_precision(tmp_path):
    rng = np.random.default_rng(6)
    scene = random_scene(rng, 40, log_scale_range=(-4.0, -1.5))
    cams = orbit_cameras(3, width=48, height=48, focal=60.0)
    state = SamplingState.compute(scene.positions, cams)
    save_scene(scene, tmp_path / "b.ply", bake_3d_filter=True, sampling_state=state, s3d=0.2)
    baked = load_scene(tmp_path / "b.ply")
    fc = FilterConfig.mip_splatting()
    for cam in cams:
        a = render(scene, cam, fc, state)
        b = render(baked, cam, fc.with_smoothing(0.0), None)
        assert np.max(np.abs(a - b)) < 1e-4


# --- cameras -----------------------------------------------------------------------


def _transforms(tmp_path, doc):
    p = tmp_path / "transforms.json"
    p.write_text(json.dumps(doc))
    return p


def _frame(mat=None, path="./r_0"):
    return {"file_path": path, "transform_matrix": (np.eye(4) if mat is None else mat).tolist()}


def test_focal_from_field_of_view(tmp_path):
    assert focal_from_fov(0.6911112, 800) == pytest.approx(1111.11, abs=0.01)
    cs = load_cameras(_transforms(tmp_path, {"camera_angle_x": 0.6911112, "w": 800, "h": 800,
                                             "frames": [_frame()]}))
    assert cs.camera(0).focal_x == pytest.approx(1111.11, abs=0.01)
    assert cs.camera(0).focal_y == cs.camera(0).focal_x


def test_gl_matrix_conversion_matches_raw_projection(tmp_path):
    rng = np.random.default_rng(7)
    c2w = np.eye(4)
    c2w[:3, :3] = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    if np.linalg.det(c2w[:3, :3]) < 0:
        c2w[:3, 0] *= -1
    c2w[:3, 3] = rng.normal(size=3)
    cam = load_cameras(_transforms(tmp_path, {"camera_angle_x": 0.8, "w": 64, "h": 48,
                                              "frames": [_frame(c2w)]})).camera(0)
    f = 0.5 * 64 / np.tan(0.4)
    # raw OpenGL pipeline: camera looks down -z with y up
    w2c = np.linalg.inv(c2w)
    for _ in range(10):
        pc = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), -rng.uniform(1, 5), 1.0])
        world = (c2w @ pc)[:3]
        gl = w2c @ np.append(world, 1.0)
        expected = [32 + f * gl[0] / -gl[2], 24 - f * gl[1] / -gl[2]]
        np.testing.assert_allclose(cam.project(world[None])[0], expected, rtol=1e-10)


def test_image_size_from_first_png(tmp_path):
    write_png(tmp_path / "r_0.png", np.zeros((6, 10, 3)))
    cs = load_cameras(_transforms(tmp_path, {"camera_angle_x": 0.5, "frames": [_frame()]}))
    assert (cs.width, cs.height) == (10, 6)
    assert cs.image_path(0) == str(tmp_path / "r_0.png")
    assert cs.image_path(0, "@2x") == str(tmp_path / "r_0@2x.png")


@pytest.mark.parametrize("doc, path", [
    ({"frames": [_frame()], "w": 4, "h": 4}, "camera_angle_x"),
    ({"camera_angle_x": "wide", "frames": [_frame()], "w": 4, "h": 4}, "camera_angle_x"),
    ({"camera_angle_x": 0.5, "frames": [], "w": 4, "h": 4}, "frames"),
    ({"camera_angle_x": 0.5, "frames": [{"transform_matrix": np.eye(4).tolist()}], "w": 4, "h": 4},
     "frames[0].file_path"),
    ({"camera_angle_x": 0.5, "frames": [_frame(), {"file_path": "x"}], "w": 4, "h": 4},
     "frames[1].transform_matrix"),
    ({"camera_angle_x": 0.5, "frames": [_frame(np.diag([2.0, 1, 1, 1]))], "w": 4, "h": 4},
     "frames[0].transform_matrix"),
    ({"camera_angle_x": 0.5, "frames": [_frame()]}, "w"),
])
def test_schema_errors_name_the_field(tmp_path, doc, path):
    with pytest.raises(SchemaError) as exc:
        load_cameras(_transforms(tmp_path, doc))
    assert exc.value.path == path


def test_invalid_json_is_parse_error(tmp_path):
    p = tmp_path / "t.json"
    p.write_text('{"camera_angle_x": 0.5,')
    with pytest.raises(ParseError):
        load_cameras(p)


def test_camera_save_load_round_trip(tmp_path):
    cams = orbit_cameras(5, width=40, height=30, focal=55.0, seed=9)
    save_cameras(tmp_path / "t.json", cams, [f"./v_{i}" for i in range(5)])
    back = load_cameras(tmp_path / "t.json").cameras()
    pts = np.random.default_rng(8).normal(scale=0.5, size=(20, 3))
    for a, b in zip(cams, back):
        np.testing.assert_allclose(b.rotation, a.rotation, atol=1e-12)
        np.testing.assert_allclose(b.translation, a.translation, atol=1e-12)
        assert (b.focal_x, b.width, b.height) == (a.focal_x, a.width, a.height)
        np.testing.assert_allclose(b.project(pts), a.project(pts), rtol=1e-10)


# --- PNG ---------------------------------------------------------------------------


def test_half_grey_stored_as_188(tmp_path):
    write_png(tmp_path / "g.png", np.full((4, 4, 3), 0.5))
    from PIL import Image
    assert np.all(np.asarray(Image.open(tmp_path / "g.png")) == 188)


def test_png_round_trip_within_quantization(tmp_path):
    img = np.random.default_rng(9).uniform(size=(17, 23, 3))
    write_png(tmp_path / "r.png", img)
    back = read_png(tmp_path / "r.png")
    assert back.shape == img.shape
    assert np.max(np.abs(srgb_encode(back) - srgb_encode(img))) <= 0.5 / 255 + 1e-12
    # a second round trip is exact
    write_png(tmp_path / "r2.png", back)
    np.testing.assert_array_equal(read_png(tmp_path / "r2.png"), back)


def test_srgb_transfer_inverse():
    x = np.linspace(0, 1, 1001)
    np.testing.assert_allclose(srgb_decode(srgb_encode(x)), x, atol=1e-12)


def test_corrupt_png_is_parse_error(tmp_path):
    write_png(tmp_path / "ok.png", np.zeros((8, 8, 3)))
    data = bytearray((tmp_path / "ok.png").read_bytes())
    data[40:48] = b"garbage!"  # inside the IDAT chunk, so the CRC no longer matches
    (tmp_path / "bad.png").write_bytes(bytes(data))
    with pytest.raises(ParseError):
        read_png(tmp_path / "bad.png")
    (tmp_path / "text.png").write_text("not an image")
    with pytest.raises(ParseError):
        read_png(tmp_path / "text.png")
    with pytest.raises(FileNotFoundError):
        read_png(tmp_path / "missing.png")
