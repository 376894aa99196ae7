"""Regenerate the golden render fixtures.

The reference scene and cameras are written to disk once, then every golden
image is produced by the naive all-splat renderer (not the tiled one), so the
goldens are an independent oracle for the tiled path.

    python3 tests/data/make_goldens.py
"""

import os

import numpy as np

from mipsplat.camera import Camera
from mipsplat.filters import FilterConfig
from mipsplat.gaussians import GaussianScene
from mipsplat.rasterizer import render_naive
from mipsplat.sampling import SamplingState
from mipsplat.scene_io import load_cameras, load_scene, save_cameras, save_scene, write_png

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIGS = {
    "mip3d": FilterConfig.mip_splatting(),
    "dilation": FilterConfig.dilation(),
    "ewa3d": FilterConfig.ewa().with_smoothing(0.2),
    "none": FilterConfig.unfiltered(),
}


def build_reference():
    rng = np.random.default_rng(2024)
    n = 40
    opac = rng.uniform(0.4, 0.95, n)
    sh = rng.normal(scale=0.2, size=(n, 16, 3))
    sh[:, 0] = rng.uniform(-1.0, 1.5, (n, 3))
    scene = GaussianScene.create(rng.uniform(-0.8, 0.8, (n, 3)), rng.normal(size=(n, 4)),
                                 rng.uniform(-3.5, -1.5, (n, 3)), np.log(opac / (1 - opac)), sh)
    cams = [Camera.look_at(eye, [0.0, 0.0, 0.0], focal=60.0, width=48, height=40)
            for eye in ([0.0, 0.5, -4.0], [3.0, -0.5, -2.5])]
    save_scene(scene, os.path.join(HERE, "reference.ply"))
    save_cameras(os.path.join(HERE, "reference_cameras.json"), cams, ["./view_0", "./view_1"])


def main():
    build_reference()
    scene = load_scene(os.path.join(HERE, "reference.ply"))
    cams = load_cameras(os.path.join(HERE, "reference_cameras.json")).cameras()
    state = SamplingState.compute(scene.positions, cams)
    for name, fc in CONFIGS.items():
        for i, cam in enumerate(cams):
            img = render_naive(scene, cam, fc, state if fc.smoothing_active else None)
            write_png(os.path.join(HERE, f"golden_{name}_{i}.png"), img)


if __name__ == "__main__":
    main()
