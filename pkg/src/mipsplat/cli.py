"""Command line entry point.

Subcommands::

    mipsplat toy     synthetic dataset (scene, cameras, multi-resolution images)
    mipsplat render  render a scene for every camera of a transforms file
    mipsplat train   fit an initial scene to posed images
    mipsplat sweep   evaluate a scene at several zoom factors
    mipsplat ablate  train and sweep every {3D smoothing on/off} x {screen filter} cell

Exit status: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import scene_io, toy
from .errors import (DimensionMismatchError, DivergenceError, InvalidParameterError, MipSplatError,
                     NonFiniteError, NumericDegeneracyError, ParseError, SchemaError)
from .filters import DEFAULT_SMOOTH3D_VARIANCE, FilterConfig, ScreenMode
from .metrics import box_downsample, psnr, ssim
from .optimizer import TrainConfig, train
from .rasterizer import RenderSettings, rasterize, render
from .sampling import DEFAULT_RECOMPUTE_INTERVAL, SamplingState

logger = logging.getLogger("mipsplat")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
BAKE_TOLERANCE = 1e-6


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Declarative run file (JSON). Command line flags override its values."""

    scene: str | None = None
    cameras: str | None = None
    test_cameras: str | None = None
    train_cameras: str | None = None
    rates: str | None = None
    out: str = "out"
    filter: str = "mip"
    smooth3d: float = DEFAULT_SMOOTH3D_VARIANCE
    screen_variance: float | None = None
    scales: list = field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0])
    zoom: str = "focal"
    seed: int = 0
    bake_check: bool = False
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        try:
            ScreenMode(self.filter)
        except ValueError:
            raise UsageError(f"unknown filter '{self.filter}'") from None
        if self.zoom not in ("focal", "distance"):
            raise UsageError("zoom must be 'focal' or 'distance'")
        if self.smooth3d < 0:
            raise UsageError("smooth3d must be non-negative")
        if not self.scales or any(not s > 0 for s in self.scales):
            raise UsageError("scales must be positive")
        self.scales = [float(s) for s in self.scales]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise UsageError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**d)

    def filter_config(self, screen_mode: str | None = None, smooth3d: float | None = None) -> FilterConfig:
        mode = ScreenMode(screen_mode or self.filter)
        var = self.screen_variance if screen_mode is None else None
        s3d = self.smooth3d if smooth3d is None else smooth3d
        return FilterConfig(mode, var, s3d)

    def train_config(self, filter_config: FilterConfig) -> TrainConfig:
        d = dict(self.train)
        d.setdefault("seed", self.seed)
        d["filter_config"] = filter_config
        return TrainConfig.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(cfg: RunConfig, *names: str) -> None:
    for n in names:
        if getattr(cfg, n) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required")


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def _load_views(camset: scene_io.CameraSet, suffix: str = ""):
    views = []
    for i, cam in enumerate(camset.cameras()):
        img = scene_io.read_png(camset.image_path(i, suffix))
        if img.shape[:2] != (cam.height, cam.width):
            raise DataError(f"{camset.image_path(i, suffix)} is {img.shape[1]}x{img.shape[0]}, "
                            f"camera expects {cam.width}x{cam.height}")
        views.append((cam, img))
    return views


def _sampling_state(cfg: RunConfig, scene, cameras, fc: FilterConfig) -> SamplingState | None:
    """Rates from a saved file, else from the training cameras, else from ``cameras``."""
    if not fc.smoothing_active:
        return None
    if cfg.rates:
        rates = np.load(cfg.rates)
        if rates.shape != (len(scene),):
            raise DataError(f"{cfg.rates} holds {rates.shape} rates for {len(scene)} primitives")
        return SamplingState(rates, DEFAULT_RECOMPUTE_INTERVAL)
    if cfg.train_cameras:
        cameras = scene_io.load_cameras(cfg.train_cameras).cameras()
    return SamplingState.compute(scene.positions, cameras)


def _zoomed(cam, scale: float, mode: str):
    return cam.scaled(scale) if mode == "focal" else cam.moved_along_axis(scale)


def _reference(camset: scene_io.CameraSet, i: int, scale: float, mode: str) -> np.ndarray:
    """Ground truth for view ``i`` at ``scale``."""
    base = camset.image_path(i)
    if scale == 1.0:
        return scene_io.read_png(base)
    if mode == "focal" and scale < 1.0:
        factor = 1.0 / scale
        if abs(factor - round(factor)) > 1e-9:
            raise DataError(f"scale {scale:g} is not 1/integer; cannot box-downsample")
        return box_downsample(scene_io.read_png(base), int(round(factor)))
    tag = f"@{scale:g}x" if mode == "focal" else f"@{scale:g}d"
    path = camset.image_path(i, tag)
    if not os.path.exists(path):
        raise DataError(f"missing ground truth for scale {scale:g}: {path}")
    return scene_io.read_png(path)


def _format_table(rows: list[dict]) -> str:
    lines = [f"{'filter':<16}{'scale':>8}{'psnr':>10}{'ssim':>10}"]
    for r in rows:
        lines.append(f"{r['filter']:<16}{r['scale']:>8g}{r['psnr']:>10.3f}{r['ssim']:>10.4f}")
    return "\n".join(lines) + "\n"


def _write_table(out: str, name: str, rows: list[dict]) -> None:
    with open(os.path.join(out, f"{name}.txt"), "w") as fh:
        fh.write(_format_table(rows))
    _write_json(os.path.join(out, f"{name}.json"), {"rows": rows})


def sweep_scene(scene, camset: scene_io.CameraSet, fc: FilterConfig, state, scales, zoom: str = "focal",
                settings: RenderSettings | None = None) -> list[dict]:
    """PSNR/SSIM of ``scene`` against the references of ``camset`` at each scale."""
    rows = []
    cams = camset.cameras()
    for s in scales:
        ps, ss = [], []
        for i, cam in enumerate(cams):
            ref = _reference(camset, i, s, zoom)
            zc = _zoomed(cam, s, zoom)
            if ref.shape[:2] != (zc.height, zc.width):
                raise DataError(f"reference for view {i} at scale {s:g} has shape {ref.shape[:2]}")
            img = np.clip(render(scene, zc, fc, state, settings), 0.0, 1.0)
            ps.append(psnr(img, ref))
            ss.append(ssim(img, ref))
        rows.append({"filter": fc.label(), "scale": s, "psnr": float(np.mean(ps)),
                     "ssim": float(np.mean(ss)), "psnr_per_view": [float(p) for p in ps]})
    return rows


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_toy(cfg: RunConfig, args) -> None:
    """Synthetic dataset: ground-truth and initial scenes, train/test views."""
    out = cfg.out
    rng_seed = cfg.seed
    if args.kind == "needles":
        gt = toy.make_toy_scene(args.primitives, seed=rng_seed)
    else:
        gt = toy.make_toy_scene(args.primitives, seed=rng_seed, thin_fraction=0.0)
    focal = args.size * 240.0 / 128.0
    splits = {
        "train": toy.orbit_cameras(args.views, focal=focal, width=args.size, height=args.size, seed=rng_seed + 1),
        "test": toy.orbit_cameras(args.test_views, focal=focal, width=args.size, height=args.size,
                                  seed=rng_seed + 2, phase=0.3),
    }
    for split, cams in splits.items():
        d = os.path.join(out, split)
        os.makedirs(d, exist_ok=True)
        names = [f"./r_{i}" for i in range(len(cams))]
        scene_io.save_cameras(os.path.join(d, "transforms.json"), cams, names)
        for i, cam in enumerate(cams):
            scene_io.write_png(os.path.join(d, f"r_{i}.png"), toy.render_ground_truth(gt, cam, args.supersample))
            if split == "test":
                for s in args.zoom_in:
                    img = toy.render_ground_truth(gt, cam.scaled(s), max(1, args.supersample // int(s)))
                    scene_io.write_png(os.path.join(d, f"r_{i}@{s:g}x.png"), img)
    scene_io.save_scene(gt, os.path.join(out, "gt.ply"))
    init = toy.init_from_points(toy.sample_surface_points(gt, args.primitives, rng_seed + 3))
    scene_io.save_scene(init, os.path.join(out, "init.ply"))
    logger.info("wrote toy dataset to %s", out)


def cmd_render(cfg: RunConfig, args) -> None:
    """One PNG and one stats record per camera."""
    _require(cfg, "scene", "cameras")
    scene = scene_io.load_scene(cfg.scene)
    camset = scene_io.load_cameras(cfg.cameras)
    cams = camset.cameras()
    fc = cfg.filter_config()
    state = _sampling_state(cfg, scene, cams, fc)
    os.makedirs(cfg.out, exist_ok=True)
    baked = None
    if cfg.bake_check:
        if state is None:
            raise UsageError("--bake-check needs 3D smoothing enabled")
        baked = scene_io.bake_scene(scene, state, fc.smoothing3d)
    records = []
    for i, cam in enumerate(cams):
        res = rasterize(scene, cam, fc, state)
        name = os.path.splitext(os.path.basename(camset.image_path(i)))[0]
        scene_io.write_png(os.path.join(cfg.out, f"{name}.png"), res.image)
        rec = {k: v for k, v in res.stats.items() if not k.startswith("time_")}
        rec["frame"] = name
        if baked is not None:
            other = render(baked, cam, fc.with_smoothing(0.0))
            err = float(np.max(np.abs(other - res.image)))
            rec["bake_max_abs_diff"] = err
            if not err < BAKE_TOLERANCE:
                raise NumericFailure(f"bake identity violated on {name}: max diff {err:.3e}")
        records.append(rec)
    _write_json(os.path.join(cfg.out, "stats.json"), {"frames": records})


def _train_one(cfg: RunConfig, init, views, fc: FilterConfig, out: str):
    tc = cfg.train_config(fc)
    result = train(init, views, tc, callback=lambda r: logger.info(
        "iter %(iteration)d loss %(loss).4f psnr %(psnr).2f n %(primitives)d", r))
    os.makedirs(out, exist_ok=True)
    scene_io.save_scene(result.scene, os.path.join(out, "scene.ply"))
    np.save(os.path.join(out, "rates.npy"), result.sampling_state.rates)
    if fc.smoothing_active:
        scene_io.save_scene(result.scene, os.path.join(out, "scene_baked.ply"), bake_3d_filter=True,
                            sampling_state=result.sampling_state, s3d=fc.smoothing3d)
    _write_json(os.path.join(out, "trace.json"), {"train_config": tc.to_dict(), "trace": result.trace})
    return result


def cmd_train(cfg: RunConfig, args) -> None:
    _require(cfg, "scene", "cameras")
    init = scene_io.load_scene(cfg.scene)
    views = _load_views(scene_io.load_cameras(cfg.cameras))
    fc = cfg.filter_config()
    result = _train_one(cfg, init, views, fc, cfg.out)
    if cfg.test_cameras:
        # score the scene as stored, so sweep on scene.ply reproduces these numbers
        stored = scene_io.load_scene(os.path.join(cfg.out, "scene.ply"))
        rows = sweep_scene(stored, scene_io.load_cameras(cfg.test_cameras), fc, result.sampling_state,
                           [1.0], cfg.zoom)
        _write_table(cfg.out, "metrics", rows)


def cmd_sweep(cfg: RunConfig, args) -> None:
    """Metric table over zoom factors; ``--filter`` may list several modes."""
    _require(cfg, "scene")
    cams_path = cfg.test_cameras or cfg.cameras
    if cams_path is None:
        raise UsageError("--cameras is required")
    scene = scene_io.load_scene(cfg.scene)
    camset = scene_io.load_cameras(cams_path)
    rows = []
    for mode in args.modes or [cfg.filter]:
        fc = cfg.filter_config(mode if args.modes else None)
        state = _sampling_state(cfg, scene, camset.cameras(), fc)
        rows += sweep_scene(scene, camset, fc, state, cfg.scales, cfg.zoom)
    os.makedirs(cfg.out, exist_ok=True)
    _write_table(cfg.out, "sweep", rows)
    sys.stdout.write(_format_table(rows))


def cmd_ablate(cfg: RunConfig, args) -> None:
    """Train and sweep all eight {3D on/off} x {screen mode} cells."""
    _require(cfg, "scene", "cameras", "test_cameras")
    init = scene_io.load_scene(cfg.scene)
    views = _load_views(scene_io.load_cameras(cfg.cameras))
    camset = scene_io.load_cameras(cfg.test_cameras)
    s3d_on = cfg.smooth3d or DEFAULT_SMOOTH3D_VARIANCE
    rows = []
    for s3d in (s3d_on, 0.0):
        for mode in (ScreenMode.NONE, ScreenMode.DILATION, ScreenMode.EWA, ScreenMode.MIP):
            fc = FilterConfig(mode, None, s3d)
            cell = os.path.join(cfg.out, fc.label())
            try:
                result = _train_one(cfg, init, views, fc, cell)
            except (DivergenceError, NonFiniteError) as exc:
                logger.warning("cell %s failed: %s", fc.label(), exc)
                rows += [{"filter": fc.label(), "scale": s, "psnr": float("nan"), "ssim": float("nan"),
                          "error": str(exc)} for s in cfg.scales]
                continue
            cell_rows = sweep_scene(result.scene, camset, fc, result.sampling_state, cfg.scales, cfg.zoom)
            _write_table(cell, "sweep", cell_rows)
            rows += cell_rows
    _write_table(cfg.out, "ablation", rows)
    sys.stdout.write(_format_table(rows))


COMMANDS = {"toy": cmd_toy, "render": cmd_render, "train": cmd_train, "sweep": cmd_sweep, "ablate": cmd_ablate}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _scales(text: str) -> list[float]:
    try:
        return [float(parse_fraction(t)) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad scale list '{text}'") from None


def parse_fraction(text: str) -> float:
    """Parse ``0.5``, ``1/4`` or ``2``."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run file; flags override its values")
    common.add_argument("--scene", help="splat PLY file")
    common.add_argument("--cameras", help="transforms JSON (training views for train/ablate)")
    common.add_argument("--test-cameras", dest="test_cameras", help="held-out transforms JSON")
    common.add_argument("--train-cameras", dest="train_cameras",
                        help="cameras that define sampling rates (defaults to --cameras)")
    common.add_argument("--rates", help="saved sampling rates (.npy) matching --scene")
    common.add_argument("--out", help="output directory")
    common.add_argument("--filter", help="screen filter: none, dilation, ewa, mip (sweep: comma list)")
    common.add_argument("--smooth3d", type=float, help="3D smoothing variance, 0 disables")
    common.add_argument("--screen-variance", dest="screen_variance", type=float)
    common.add_argument("--scales", type=_scales, help="zoom factors, e.g. 1/4,1/2,1,2,4")
    common.add_argument("--zoom", choices=["focal", "distance"], help="zoom by focal length or camera distance")
    common.add_argument("--seed", type=int)
    common.add_argument("--iterations", type=int, help="training iterations")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="mipsplat", description="Anti-aliased Gaussian splatting on the CPU.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    t = sub.add_parser("toy", parents=[common], help="write a synthetic dataset")
    t.add_argument("--kind", choices=["needles", "blobs"], default="needles")
    t.add_argument("--primitives", type=int, default=200)
    t.add_argument("--views", type=int, default=16)
    t.add_argument("--test-views", dest="test_views", type=int, default=4)
    t.add_argument("--size", type=int, default=128)
    t.add_argument("--supersample", type=int, default=8)
    t.add_argument("--zoom-in", dest="zoom_in", type=_scales, default=[2.0, 4.0])
    r = sub.add_parser("render", parents=[common], help="render every camera")
    r.add_argument("--bake-check", dest="bake_check", action="store_true", default=None,
                   help="also render the baked scene and require identical images")
    sub.add_parser("train", parents=[common], help="fit a scene to posed images")
    sub.add_parser("sweep", parents=[common], help="metrics across zoom factors")
    sub.add_parser("ablate", parents=[common], help="3D smoothing x screen filter grid")
    return parser


def resolve_config(args) -> RunConfig:
    base: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                base = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc.msg})") from exc
        if not isinstance(base, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
    for key in ("scene", "cameras", "test_cameras", "train_cameras", "rates", "out", "smooth3d",
                "screen_variance", "scales", "zoom", "seed", "bake_check"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    args.modes = None
    if args.filter is not None:
        modes = [m.strip() for m in args.filter.split(",") if m.strip()]
        if len(modes) > 1 and args.command != "sweep":
            raise UsageError("several filters are only accepted by sweep")
        base["filter"] = modes[0]
        if len(modes) > 1:
            args.modes = modes
            for m in modes:
                RunConfig(filter=m)
    if args.iterations is not None:
        base.setdefault("train", {})
        base["train"] = dict(base["train"], iterations=args.iterations)
    return RunConfig.from_dict(base)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        cfg.train_config(cfg.filter_config())  # validate nested train keys early
        os.makedirs(cfg.out, exist_ok=True)
        _write_json(os.path.join(cfg.out, f"config.{args.command}.json"), cfg.to_dict())
        COMMANDS[args.command](cfg, args)
    except (UsageError, InvalidParameterError) as exc:
        print(f"mipsplat: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ParseError, SchemaError, DimensionMismatchError, FileNotFoundError,
            IsADirectoryError, PermissionError) as exc:
        print(f"mipsplat: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericFailure, DivergenceError, NonFiniteError, NumericDegeneracyError) as exc:
        print(f"mipsplat: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MipSplatError as exc:
        print(f"mipsplat: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
