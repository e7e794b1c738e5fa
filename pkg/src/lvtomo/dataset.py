"""Per-ray training inputs: normalized hit features, zero padding, datasets.

Each retained pixel contributes one padded input: a 6 x N feature block whose
first three rows are the impacted voxel indices and last three rows the
segment midpoints, both mapped affinely into [-1, 1], with columns beyond the
true hit count n exactly zero. N is the maximum hit count over the dataset,
so no ray is ever truncated.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, FormatError, ParameterError
from .geometry import CameraPose, pixel_rays_bulk
from .grids import VoxelGrid
from .projection import Image
from .tracing import ImpactSequence, trace_rays_bulk

PAD_INDEX = -1  # sentinel flat index for padded entries

_RDS_MAGIC = b"RDS1"


def normalize_features(seq: ImpactSequence, grid: VoxelGrid) -> np.ndarray:
    """6 x n feature block for one ray: rows 0-2 indices, rows 3-5 seg points,
    each mapped into [-1, 1] (index 0 -> -1, dim-1 -> +1; box min -> -1)."""
    if seq.n == 0:
        raise ParameterError("cannot featurize an empty impact sequence")
    dims = np.asarray(grid.dims, dtype=np.float64)
    span = np.maximum(dims - 1.0, 1.0)
    idx_feat = 2.0 * seq.indices.astype(np.float64) / span[None, :] - 1.0
    idx_feat[:, dims == 1] = 0.0
    center = grid.center
    half = 0.5 * grid.extent
    pt_feat = (seq.seg_points - center[None, :]) / half[None, :]
    return np.concatenate([idx_feat.T, pt_feat.T], axis=0)


@dataclass
class PaddedInput:
    """One ray's fixed-capacity training record.

    features -- (6, N); columns beyond n are exactly zero
    indices  -- (N,) flat voxel indices, PAD_INDEX beyond n
    n        -- true hit count
    target   -- recorded pixel intensity
    """

    features: np.ndarray
    indices: np.ndarray
    n: int
    target: float
    pixel_id: tuple[int, int, int] = (-1, -1, -1)

    @property
    def capacity(self) -> int:
        return self.features.shape[1]


def pad_sequence(features: np.ndarray, indices: np.ndarray, n: int, N: int,
                 target: float = 0.0,
                 pixel_id: tuple[int, int, int] = (-1, -1, -1)) -> PaddedInput:
    """Zero-extend a 6 x n block to 6 x N; padded index slots get PAD_INDEX."""
    if n > N:
        raise CapacityError(f"sequence length {n} exceeds capacity {N}")
    feats = np.zeros((6, N), dtype=np.float64)
    idx = np.full(N, PAD_INDEX, dtype=np.int64)
    if n:
        feats[:, :n] = features[:, :n]
        idx[:n] = np.asarray(indices, dtype=np.int64)[:n]
    return PaddedInput(feats, idx, n, float(target), pixel_id)


@dataclass
class RayDataset:
    """Columnar store of padded inputs over all retained pixels of all views.

    features -- (R, 6, N) float32
    indices  -- (R, N) int32, PAD_INDEX in padded slots
    n        -- (R,) int32 true hit counts
    targets  -- (R,) float64 recorded pixel intensities
    pixel_ids-- (R, 3) int32 (view, row, col)
    """

    N: int
    features: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)
    n: np.ndarray = field(repr=False)
    targets: np.ndarray = field(repr=False)
    pixel_ids: np.ndarray = field(repr=False)
    grid_dims: tuple[int, int, int] = (0, 0, 0)
    per_view_counts: list[tuple[int, int]] = field(default_factory=list)
    seed: int = 0

    def __len__(self) -> int:
        return len(self.targets)

    def __getitem__(self, i: int) -> PaddedInput:
        return PaddedInput(
            self.features[i].astype(np.float64),
            self.indices[i].astype(np.int64),
            int(self.n[i]),
            float(self.targets[i]),
            tuple(int(x) for x in self.pixel_ids[i]),
        )


def build_dataset(
    grid_template: VoxelGrid,
    layout: list[CameraPose],
    images: list[Image],
    include_zero_pixels: bool = True,
    seed: int = 0,
) -> RayDataset:
    """One padded input per retained pixel, target = recorded pixel intensity.

    Rays that miss the grid (n = 0) are always dropped; with
    include_zero_pixels=False, pixels recording exactly 0 are dropped too.
    Rays are assembled in (view, row, col) order, then shuffled once with the
    given seed; regeneration from the same inputs is identical.
    """
    if len(layout) != len(images):
        raise ParameterError(
            f"{len(layout)} poses but {len(images)} images"
        )
    nx, ny, _ = grid_template.dims
    dims = np.asarray(grid_template.dims, dtype=np.float64)
    span = np.maximum(dims - 1.0, 1.0)
    center = grid_template.center
    half = 0.5 * grid_template.extent

    feats_parts, idx_parts, n_parts, tgt_parts, pid_parts = [], [], [], [], []
    per_view_counts = []
    n_max = 0
    for pose, image in zip(layout, images):
        if (image.rows, image.cols) != (pose.rows, pose.cols):
            raise ParameterError(
                f"view {pose.view_id}: image {image.rows}x{image.cols} "
                f"does not match detector {pose.rows}x{pose.cols}"
            )
        origin, dirs = pixel_rays_bulk(pose)
        sweep = trace_rays_bulk(origin, dirs, grid_template)
        counts = sweep.counts
        targets = image.pixels.ravel()
        keep = counts > 0
        if not include_zero_pixels:
            keep &= targets != 0.0
        kept_rays = np.nonzero(keep)[0]
        per_view_counts.append((pose.view_id, len(kept_rays)))
        if len(kept_rays) == 0:
            continue
        n_view = counts[kept_rays].astype(np.int32)
        n_max = max(n_max, int(n_view.max()))

        hit_keep = keep[sweep.ray_id]
        ray_id = sweep.ray_id[hit_keep]
        ijk = sweep.ijk[hit_keep].astype(np.int64)
        t_mid = sweep.t_mid[hit_keep]
        seg_pts = origin[None, :] + t_mid[:, None] * dirs[ray_id]

        # Normalized features for every kept hit, flat.
        f_idx = 2.0 * ijk / span[None, :] - 1.0
        f_idx[:, dims == 1] = 0.0
        f_pt = (seg_pts - center[None, :]) / half[None, :]
        flat_vox = ijk[:, 0] + ijk[:, 1] * nx + ijk[:, 2] * (nx * ny)

        # Column position of each hit within its ray.
        new_ray = np.ones(len(ray_id), dtype=bool)
        new_ray[1:] = ray_id[1:] != ray_id[:-1]
        run_starts = np.nonzero(new_ray)[0]
        col_pos = np.arange(len(ray_id)) - np.repeat(
            run_starts, np.diff(np.append(run_starts, len(ray_id)))
        )
        row_pos = np.searchsorted(kept_rays, ray_id)

        feats = np.zeros((len(kept_rays), 6, int(n_view.max())), dtype=np.float32)
        idx = np.full((len(kept_rays), int(n_view.max())), PAD_INDEX, dtype=np.int32)
        feats[row_pos, 0:3, col_pos] = f_idx.astype(np.float32)
        feats[row_pos, 3:6, col_pos] = f_pt.astype(np.float32)
        idx[row_pos, col_pos] = flat_vox.astype(np.int32)

        rr = kept_rays // pose.cols
        cc = kept_rays % pose.cols
        pids = np.stack(
            [np.full(len(kept_rays), pose.view_id, dtype=np.int32),
             rr.astype(np.int32), cc.astype(np.int32)], axis=1
        )
        feats_parts.append(feats)
        idx_parts.append(idx)
        n_parts.append(n_view)
        tgt_parts.append(targets[kept_rays].astype(np.float64))
        pid_parts.append(pids)

    total = sum(len(t) for t in tgt_parts)
    if total == 0:
        return RayDataset(
            0,
            np.zeros((0, 6, 0), np.float32),
            np.zeros((0, 0), np.int32),
            np.zeros(0, np.int32),
            np.zeros(0, np.float64),
            np.zeros((0, 3), np.int32),
            grid_template.dims,
            per_view_counts,
            seed,
        )

    features = np.zeros((total, 6, n_max), dtype=np.float32)
    indices = np.full((total, n_max), PAD_INDEX, dtype=np.int32)
    at = 0
    for f, ix in zip(feats_parts, idx_parts):
        features[at : at + len(f), :, : f.shape[2]] = f
        indices[at : at + len(f), : ix.shape[1]] = ix
        at += len(f)
    n_arr = np.concatenate(n_parts)
    targets = np.concatenate(tgt_parts)
    pixel_ids = np.concatenate(pid_parts)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(total)
    return RayDataset(
        n_max,
        features[perm],
        indices[perm],
        n_arr[perm],
        targets[perm],
        pixel_ids[perm],
        grid_template.dims,
        per_view_counts,
        seed,
    )


# ---------------------------------------------------------------------------
# RDS1 cache: magic "RDS1", u32-LE header length, JSON {N, count, grid_dims},
# then per-ray records (n: i32, indices: N x i32, features: 6N x f32,
# target: f64), little-endian.
# ---------------------------------------------------------------------------


def save_dataset(ds: RayDataset, path) -> None:
    header = json.dumps(
        {"N": ds.N, "count": len(ds), "grid_dims": list(ds.grid_dims)}
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_RDS_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for i in range(len(ds)):
            f.write(struct.pack("<i", int(ds.n[i])))
            f.write(ds.indices[i].astype("<i4").tobytes())
            f.write(ds.features[i].astype("<f4").tobytes())
            f.write(struct.pack("<d", float(ds.targets[i])))


def load_dataset(path) -> RayDataset:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _RDS_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {_RDS_MAGIC!r}", 0)
    (hlen,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    N = int(header["N"])
    count = int(header["count"])
    grid_dims = tuple(int(d) for d in header["grid_dims"])
    rec = 4 + 4 * N + 4 * 6 * N + 8
    off = 8 + hlen
    if len(data) - off != rec * count:
        raise FormatError(
            f"payload is {len(data) - off} bytes, {count} records require {rec * count}",
            off,
        )
    features = np.zeros((count, 6, N), np.float32)
    indices = np.zeros((count, N), np.int32)
    n = np.zeros(count, np.int32)
    targets = np.zeros(count, np.float64)
    for i in range(count):
        base = off + i * rec
        (n[i],) = struct.unpack_from("<i", data, base)
        indices[i] = np.frombuffer(data, "<i4", N, base + 4)
        features[i] = np.frombuffer(data, "<f4", 6 * N, base + 4 + 4 * N).reshape(6, N)
        (targets[i],) = struct.unpack_from("<d", data, base + 4 + 4 * N + 24 * N)
    return RayDataset(
        N, features, indices, n, targets,
        np.full((count, 3), -1, np.int32), grid_dims, [], 0,
    )
