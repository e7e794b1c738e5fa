"""Command-line front end.

Subcommands: phantom, layout, project, noise, art, train, transfer, eval,
slices, run. Exit codes: 0 success, 1 usage/config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .art import ArtConfig, art_reconstruct
from .errors import ConfigError, LvtomoError
from .experiments import (
    export_cross_sections,
    layout_for_grid,
    load_config,
    run_experiment,
)
from .geometry import CameraPose
from .grids import load_grid, make_jet_flame, make_randomized_homogeneous, \
    make_turbulent_flame, save_grid
from .metrics import cosine_similarity
from .projection import add_noise, forward_project, load_image, save_image, \
    write_pgm16


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting with its default code 2."""

    def error(self, message):
        raise _UsageError(message)


def _dims(text: str):
    parts = [int(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("dims must be three integers: NX,NY,NZ")
    return tuple(parts)


def _int_list(text: str):
    return [int(x) for x in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lvtomo",
                description="Limited-view emission tomography toolkit")
    p.add_argument("--version", action="version", version=f"lvtomo {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    def common(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help="master seed override")
        sp.add_argument("--out", type=Path, default=None, help="output path")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker processes for projection")

    sp = sub.add_parser("phantom", help="generate a synthetic grid")
    common(sp)
    sp.add_argument("--kind", required=True,
                    choices=["jet", "turbulent", "randomized_homogeneous"])
    sp.add_argument("--dims", type=_dims, default=(30, 140, 30))
    sp.add_argument("--voxel-size", type=float, default=0.5)
    sp.add_argument("--params", type=json.loads, default=None,
                    help="jet analytic fractions as JSON")

    sp = sub.add_parser("layout", help="build a camera layout for a grid")
    common(sp)
    sp.add_argument("--grid", type=Path, required=True)
    sp.add_argument("--views", type=int, required=True)
    sp.add_argument("--start", type=float, default=0.0)
    sp.add_argument("--step", type=float, default=0.0)
    sp.add_argument("--pitch-mode", choices=["constant", "alternating"],
                    default="constant")
    sp.add_argument("--pitch", type=float, default=0.0)
    sp.add_argument("--distance", type=float, default=None)
    sp.add_argument("--distance-range", type=str, default=None,
                    metavar="LO,HI")
    sp.add_argument("--rows", type=int, default=128)
    sp.add_argument("--cols", type=int, default=512)
    sp.add_argument("--focal", type=float, default=50.0)
    sp.add_argument("--fov-margin", type=float, default=1.2)

    sp = sub.add_parser("project", help="forward-project a grid through a layout")
    common(sp)
    sp.add_argument("--grid", type=Path, required=True)
    sp.add_argument("--layout", type=Path, required=True)
    sp.add_argument("--pgm", action="store_true",
                    help="also export 16-bit PGM previews")

    sp = sub.add_parser("noise", help="add Gaussian noise to projections")
    common(sp)
    sp.add_argument("--images", type=Path, required=True,
                    help="directory of .img files")
    sp.add_argument("--fraction", type=float, required=True)
    sp.add_argument("--clamp", action="store_true")

    sp = sub.add_parser("art", help="row-action algebraic reconstruction")
    common(sp)
    sp.add_argument("--images", type=Path, required=True)
    sp.add_argument("--layout", type=Path, required=True)
    sp.add_argument("--grid-template", type=Path, required=True,
                    help="grid giving dims/voxel size/origin")
    sp.add_argument("--truth", type=Path, default=None)
    sp.add_argument("--relaxation", type=float, default=0.2)
    sp.add_argument("--sweeps", type=int, default=50)
    sp.add_argument("--no-clamp", action="store_true")

    sp = sub.add_parser("train", help="co-train voxels and weight encoder")
    common(sp)
    sp.add_argument("--config", type=Path, required=True)

    sp = sub.add_parser("transfer", help="train voxels under a frozen encoder")
    common(sp)
    sp.add_argument("--config", type=Path, required=True)
    sp.add_argument("--encoder", type=Path, default=None,
                    help="WEN1 checkpoint (overrides config)")

    sp = sub.add_parser("eval", help="cosine similarity between two grids")
    common(sp)
    sp.add_argument("--a", type=Path, required=True)
    sp.add_argument("--b", type=Path, required=True)

    sp = sub.add_parser("slices", help="export grid cross-sections as PGM")
    common(sp)
    sp.add_argument("--grid", type=Path, required=True)
    sp.add_argument("--axis", choices=["x", "y", "z"], required=True)
    sp.add_argument("--positions", type=_int_list, required=True)
    sp.add_argument("--ref", type=Path, default=None)

    sp = sub.add_parser("run", help="run a full experiment config")
    common(sp)
    sp.add_argument("--config", type=Path, required=True)

    return p


def _require_out(args, what="output") -> Path:
    if args.out is None:
        raise _UsageError(f"--out is required for this command ({what})")
    return args.out


def _load_view_images(directory: Path):
    files = sorted(Path(directory).glob("*.img"))
    if not files:
        raise ConfigError(f"no .img files in {directory}")
    return [load_image(f) for f in files]


def _load_layout(path: Path):
    doc = json.loads(Path(path).read_text())
    return [CameraPose.from_dict(d) for d in doc["poses"]]


def _project_one(packed):
    grid_path, pose_dict = packed
    grid = load_grid(grid_path)
    pose = CameraPose.from_dict(pose_dict)
    return pose.view_id, forward_project(grid, pose)


def _cmd_phantom(args) -> int:
    out = _require_out(args)
    seed = args.seed if args.seed is not None else 0
    if args.kind == "jet":
        g = make_jet_flame(args.dims, args.voxel_size, args.params)
    elif args.kind == "turbulent":
        g = make_turbulent_flame(args.dims, args.voxel_size, seed)
    else:
        g = make_randomized_homogeneous(args.dims, args.voxel_size, seed)
    save_grid(g, out)
    print(f"wrote {out} dims={g.dims} voxel_size={g.voxel_size}mm")
    return 0


def _cmd_layout(args) -> int:
    out = _require_out(args)
    grid = load_grid(args.grid)
    overrides = {
        "n_views": args.views,
        "view_angle_start_deg": args.start,
        "view_angle_step_deg": args.step,
        "pitch_mode": args.pitch_mode,
        "pitch_deg": args.pitch,
        "rows": args.rows,
        "cols": args.cols,
        "focal_length_mm": args.focal,
        "fov_margin": args.fov_margin,
    }
    if args.distance_range is not None:
        lo, hi = (float(x) for x in args.distance_range.split(","))
        overrides.update(distance_mode="uniform_random",
                         distance_min_mm=lo, distance_max_mm=hi)
    elif args.distance is not None:
        overrides.update(distance_mode="fixed", distance_mm=args.distance)
    layout = layout_for_grid(grid, overrides,
                             args.seed if args.seed is not None else 0)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(
        {"spec": overrides, "poses": [p.to_dict() for p in layout]}, indent=2
    ))
    print(f"wrote {out} with {len(layout)} poses")
    return 0


def _cmd_project(args) -> int:
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    grid = load_grid(args.grid)
    layout = _load_layout(args.layout)
    if args.threads > 1:
        jobs = [(str(args.grid), p.to_dict()) for p in layout]
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = sorted(pool.map(_project_one, jobs), key=lambda r: r[0])
        images = [img for _, img in results]
    else:
        images = [forward_project(grid, p) for p in layout]
    for pose, img in zip(layout, images):
        save_image(img, out / f"view_{pose.view_id:03d}.img")
        if args.pgm:
            write_pgm16(img.pixels, out / f"view_{pose.view_id:03d}.pgm")
    print(f"wrote {len(images)} images to {out}")
    return 0


def _cmd_noise(args) -> int:
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    for i, img in enumerate(_load_view_images(args.images)):
        noisy = add_noise(img, args.fraction, seed + i, clamp=args.clamp)
        save_image(noisy, out / f"view_{noisy.view_id:03d}.img")
    print(f"wrote noisy images to {out}")
    return 0


def _cmd_art(args) -> int:
    out = _require_out(args)
    images = _load_view_images(args.images)
    layout = _load_layout(args.layout)
    template = load_grid(args.grid_template)
    template = template.copy_with(np.zeros(template.dims))
    truth = load_grid(args.truth) if args.truth else None
    cfg = ArtConfig(relaxation=args.relaxation, sweeps=args.sweeps,
                    nonneg_clamp=not args.no_clamp)
    recon, history = art_reconstruct(images, layout, template, cfg,
                                     ground_truth=truth)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_grid(recon, out)
    if truth is not None:
        print(json.dumps({"cosine_similarity": history[-1].cosine_similarity}))
    print(f"wrote {out}")
    return 0


def _run_config(args, force_transfer: bool = False) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if force_transfer:
        enc = getattr(args, "encoder", None)
        if enc is not None:
            if not Path(enc).exists():
                raise ConfigError(f"transfer encoder not found: {enc}")
            cfg = replace(cfg, transfer_encoder=str(enc))
        if cfg.transfer_encoder is None:
            raise _UsageError("transfer needs --encoder or transfer_encoder in config")
        if cfg.train is None:
            raise ConfigError("transfer requires a train section in the config")
    manifest = run_experiment(cfg, args.out)
    print(json.dumps(manifest["final_metrics"], indent=2))
    return 0


def _cmd_eval(args) -> int:
    a = load_grid(args.a)
    b = load_grid(args.b)
    s = cosine_similarity(a, b)
    print(json.dumps({"cosine_similarity": s, "cosine_distance": 1.0 - s}))
    return 0


def _cmd_slices(args) -> int:
    out = _require_out(args)
    grid = load_grid(args.grid)
    ref = load_grid(args.ref) if args.ref else None
    written = export_cross_sections(grid, args.axis, args.positions, out, ref)
    print(f"wrote {len(written)} slices to {out}")
    return 0


_COMMANDS = {
    "phantom": _cmd_phantom,
    "layout": _cmd_layout,
    "project": _cmd_project,
    "noise": _cmd_noise,
    "art": _cmd_art,
    "train": lambda a: _run_config(a),
    "transfer": lambda a: _run_config(a, force_transfer=True),
    "eval": _cmd_eval,
    "slices": _cmd_slices,
    "run": lambda a: _run_config(a),
}


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_help()
        return 1
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except LvtomoError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # unexpected failures are still runtime errors
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli())
