"""Experiment configs, seed derivation, the staged runner, and manifests.

A run executes phantom -> layout -> project -> (noise) -> any of {ART,
co-training, frozen-encoder transfer}, writing every artifact under one output
directory and recording config, derived seeds, final metrics, and a checksum
of every written file in manifest.json. Re-running the same config and master
seed reproduces the manifest's metrics exactly within one build.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .art import ArtConfig, art_reconstruct
from .dataset import build_dataset
from .encoder import load_encoder, save_encoder
from .errors import ConfigError, ParameterError
from .geometry import CameraPose, LayoutSpec, build_layout
from .grids import (
    CylinderSpec,
    VoxelGrid,
    make_jet_flame,
    make_randomized_homogeneous,
    make_turbulent_flame,
    save_grid,
)
from .metrics import cosine_similarity, records_to_csv
from .projection import add_noise, forward_project, save_image, write_pgm16
from .training import TrainConfig, train, transfer_train

SCHEMA = "lvtomo-exp-1"


def derive_seed(master_seed: int, component: str) -> int:
    """sub_seed = master_seed XOR stable-hash(component name).

    The stable hash is the first 8 bytes (little-endian) of
    SHA-256(component), so derivation never depends on the process or Python
    hash randomization.
    """
    digest = hashlib.sha256(component.encode("utf-8")).digest()
    h = int.from_bytes(digest[:8], "little")
    return (int(master_seed) ^ h) & 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class PhantomSpec:
    kind: str = "jet"  # jet | turbulent | randomized_homogeneous
    dims: tuple[int, int, int] = (30, 140, 30)
    voxel_size_mm: float = 0.5
    params: dict | None = None  # jet analytic fractions
    cylinder: dict | None = None  # randomized_homogeneous fill region

    def build(self, seed: int) -> VoxelGrid:
        if self.kind == "jet":
            return make_jet_flame(self.dims, self.voxel_size_mm, self.params)
        if self.kind == "turbulent":
            return make_turbulent_flame(self.dims, self.voxel_size_mm, seed)
        if self.kind == "randomized_homogeneous":
            cyl = CylinderSpec(**self.cylinder) if self.cylinder else None
            return make_randomized_homogeneous(self.dims, self.voxel_size_mm, seed, cyl)
        raise ConfigError(f"unknown phantom kind {self.kind!r}")


@dataclass(frozen=True)
class NoiseSpec:
    fraction: float = 0.1
    clamp: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs; see docs/config-schema.json."""

    master_seed: int = 0
    out_dir: str | None = None
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    layout: dict = field(default_factory=dict)  # LayoutSpec overrides
    noise: NoiseSpec | None = None
    art: ArtConfig | None = None
    train: TrainConfig | None = None
    include_zero_pixels: bool = True
    transfer_encoder: str | None = None  # path to a WEN1 checkpoint
    export_pgm: bool = False
    slices: dict | None = None  # {"axis": "z", "positions": [..]}


def _dataclass_from_dict(cls, d: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**d)


def parse_config(doc: dict) -> ExperimentConfig:
    """Strict parse: unknown keys anywhere are rejected."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    doc = dict(doc)
    schema = doc.pop("schema", None)
    if schema != SCHEMA:
        raise ConfigError(f"config schema must be {SCHEMA!r}, got {schema!r}")
    known = {
        "master_seed", "out_dir", "phantom", "layout", "noise", "art",
        "train", "include_zero_pixels", "transfer_encoder", "export_pgm",
        "slices",
    }
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    phantom = doc.get("phantom", {})
    if "dims" in phantom:
        phantom = dict(phantom)
        phantom["dims"] = tuple(int(x) for x in phantom["dims"])
    cfg = ExperimentConfig(
        master_seed=int(doc.get("master_seed", 0)),
        out_dir=doc.get("out_dir"),
        phantom=_dataclass_from_dict(PhantomSpec, phantom, "phantom"),
        layout=dict(doc.get("layout", {})),
        noise=(
            _dataclass_from_dict(NoiseSpec, doc["noise"], "noise")
            if doc.get("noise") is not None
            else None
        ),
        art=(
            _dataclass_from_dict(ArtConfig, doc["art"], "art")
            if doc.get("art") is not None
            else None
        ),
        train=(
            _dataclass_from_dict(TrainConfig, _coerce_train(doc["train"]), "train")
            if doc.get("train") is not None
            else None
        ),
        include_zero_pixels=bool(doc.get("include_zero_pixels", True)),
        transfer_encoder=doc.get("transfer_encoder"),
        export_pgm=bool(doc.get("export_pgm", False)),
        slices=doc.get("slices"),
    )
    # Layout keys validated against LayoutSpec fields (object_* are derived).
    bad = set(cfg.layout) - set(LayoutSpec.__dataclass_fields__)
    if bad:
        raise ConfigError(f"unknown keys in layout: {sorted(bad)}")
    if cfg.transfer_encoder is not None and cfg.train is None:
        raise ConfigError("transfer_encoder requires a train section")
    return cfg


def _coerce_train(d: dict) -> dict:
    d = dict(d)
    if "encoder_channels" in d:
        d["encoder_channels"] = tuple(int(c) for c in d["encoder_channels"])
    return d


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    cfg = parse_config(json.loads(p.read_text()))
    if cfg.transfer_encoder is not None:
        enc = Path(cfg.transfer_encoder)
        if not enc.is_absolute():
            enc = p.parent / enc
        if not enc.exists():
            raise ConfigError(f"transfer encoder not found: {enc}")
        cfg = replace(cfg, transfer_encoder=str(enc))
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = {"schema": SCHEMA, "master_seed": cfg.master_seed}
    if cfg.out_dir:
        doc["out_dir"] = cfg.out_dir
    doc["phantom"] = asdict(cfg.phantom)
    doc["phantom"]["dims"] = list(cfg.phantom.dims)
    doc["layout"] = dict(cfg.layout)
    doc["noise"] = asdict(cfg.noise) if cfg.noise else None
    doc["art"] = asdict(cfg.art) if cfg.art else None
    if cfg.train:
        t = asdict(cfg.train)
        t["encoder_channels"] = list(cfg.train.encoder_channels)
        doc["train"] = t
    else:
        doc["train"] = None
    doc["include_zero_pixels"] = cfg.include_zero_pixels
    doc["transfer_encoder"] = cfg.transfer_encoder
    doc["export_pgm"] = cfg.export_pgm
    doc["slices"] = cfg.slices
    return doc


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def layout_for_grid(grid: VoxelGrid, overrides: dict, seed: int) -> list[CameraPose]:
    kw = dict(overrides)
    kw.setdefault("seed", seed)
    kw["object_diameter_mm"] = grid.bounding_sphere_diameter()
    kw["object_center_mm"] = tuple(grid.center)
    return build_layout(LayoutSpec(**kw))


def export_cross_sections(grid: VoxelGrid, axis: str, positions, out_dir,
                          reference: VoxelGrid | None = None) -> list[Path]:
    """One max-scaled 16-bit PGM per slice, plus |grid - reference| slices
    when a reference is supplied."""
    ax = {"x": 0, "y": 1, "z": 2}.get(axis)
    if ax is None:
        raise ParameterError(f"axis must be x, y or z, got {axis!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for pos in positions:
        pos = int(pos)
        if not (0 <= pos < grid.dims[ax]):
            raise ParameterError(f"slice {pos} outside axis {axis} of {grid.dims}")
        sl = np.take(grid.values, pos, axis=ax)
        p = out_dir / f"slice_{axis}{pos:04d}.pgm"
        write_pgm16(sl, p)
        written.append(p)
        if reference is not None:
            ref = np.take(reference.values, pos, axis=ax)
            d = out_dir / f"diff_{axis}{pos:04d}.pgm"
            write_pgm16(np.abs(sl.astype(np.float64) - ref.astype(np.float64)), d)
            written.append(d)
    return written


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Writer:
    """Tracks every file a run writes so the manifest can checksum them."""

    def __init__(self, root: Path):
        self.root = root
        self.paths: list[Path] = []

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(p)
        return p

    def track(self, paths) -> None:
        self.paths.extend(paths)

    def file_records(self) -> list[dict]:
        return [
            {
                "path": str(p.relative_to(self.root)),
                "sha256": _sha256(p),
                "bytes": p.stat().st_size,
            }
            for p in self.paths
        ]


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Execute the configured stages; returns the manifest dict.

    Any stage error is recorded in the manifest (status "error") and
    re-raised for the caller to map to an exit code.
    """
    root = Path(out_dir or cfg.out_dir or "run-output")
    root.mkdir(parents=True, exist_ok=True)
    w = _Writer(root)
    seeds = {
        name: derive_seed(cfg.master_seed, name)
        for name in ("phantom", "layout", "dataset", "noise", "train", "art",
                     "transfer")
    }
    manifest = {
        "schema": SCHEMA,
        "config": config_to_dict(cfg),
        "seeds": seeds,
        "final_metrics": {},
        "status": "ok",
    }
    t_start = time.perf_counter()
    try:
        _run_stages(cfg, w, seeds, manifest)
    except Exception as exc:
        manifest["status"] = "error"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["files"] = w.file_records()
        (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
        raise
    manifest["wall_s"] = round(time.perf_counter() - t_start, 3)
    manifest["files"] = w.file_records()
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def _run_stages(cfg: ExperimentConfig, w: _Writer, seeds: dict, manifest: dict):
    truth = cfg.phantom.build(seeds["phantom"])
    save_grid(truth, w.path("truth.vxg"))

    layout = layout_for_grid(truth, cfg.layout, seeds["layout"])
    w.path("layout.json").write_text(
        json.dumps({"spec": cfg.layout, "poses": [p.to_dict() for p in layout]},
                   indent=2)
    )

    images = [forward_project(truth, pose) for pose in layout]
    for pose, img in zip(layout, images):
        save_image(img, w.path(f"images/view_{pose.view_id:03d}.img"))
        if cfg.export_pgm:
            write_pgm16(img.pixels, w.path(f"images/view_{pose.view_id:03d}.pgm"))

    work_images = images
    if cfg.noise is not None:
        work_images = [
            add_noise(img, cfg.noise.fraction, seeds["noise"] + i, cfg.noise.clamp)
            for i, img in enumerate(images)
        ]
        for pose, img in zip(layout, work_images):
            save_image(img, w.path(f"noisy/view_{pose.view_id:03d}.img"))

    if cfg.art is not None:
        recon, history = art_reconstruct(
            work_images, layout, truth.copy_with(np.zeros(truth.dims)),
            cfg.art, ground_truth=truth,
        )
        save_grid(recon, w.path("art/recon.vxg"))
        lines = ["sweep,sum_squared_residual,cosine_similarity"]
        for h in history:
            lines.append(f"{h.sweep},{h.sum_squared_residual!r},{h.cosine_similarity!r}")
        w.path("art/history.csv").write_text("\n".join(lines) + "\n")
        manifest["final_metrics"]["art_cosine_similarity"] = history[-1].cosine_similarity

    if cfg.train is not None:
        dataset = build_dataset(
            truth, layout, work_images,
            include_zero_pixels=cfg.include_zero_pixels, seed=seeds["dataset"],
        )
        if cfg.transfer_encoder is not None:
            encoder = load_encoder(cfg.transfer_encoder)
            state, records = transfer_train(
                encoder, dataset, cfg.train, ground_truth=truth,
                seed=seeds["transfer"],
            )
            stage = "transfer"
        else:
            state, records = train(
                dataset, cfg.train, ground_truth=truth, seed=seeds["train"]
            )
            stage = "train"
        recon = state.to_grid(truth)
        save_grid(recon, w.path(f"{stage}/recon.vxg"))
        w.path(f"{stage}/metrics.csv").write_text(records_to_csv(records))
        if stage == "train":
            save_encoder(
                state.encoder, w.path("train/encoder.wen"),
                provenance={
                    "phantom": cfg.phantom.kind,
                    "master_seed": cfg.master_seed,
                    "epochs": cfg.train.epochs,
                },
            )
        final = records[-1]
        manifest["final_metrics"][f"{stage}_loss"] = final.loss
        manifest["final_metrics"][f"{stage}_cosine_similarity"] = final.cosine_similarity
        if final.cosine_similarity is not None:
            manifest["final_metrics"][f"{stage}_cosine_distance"] = (
                final.cosine_distance
            )
        last = recon
    else:
        last = truth

    if cfg.slices is not None:
        written = export_cross_sections(
            last, cfg.slices.get("axis", "z"), cfg.slices.get("positions", []),
            w.root / "slices", reference=truth if last is not truth else None,
        )
        w.track(written)
