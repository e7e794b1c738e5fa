"""Classic algebraic reconstruction (row-action Kaczmarz with relaxation).

Rays are processed one at a time; the per-ray weights are the intersection
segment lengths, recomputed from geometry and cached in compressed sparse
form, so the full weight matrix never exists in memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ReconstructionError
from .geometry import CameraPose, pixel_rays_bulk
from .grids import VoxelGrid
from .projection import Image
from .tracing import trace_rays_bulk


@dataclass(frozen=True)
class ArtConfig:
    relaxation: float = 0.2
    sweeps: int = 50
    nonneg_clamp: bool = True
    ray_order: str = "sequential"  # or "shuffle"
    seed: int = 0

    def validate(self):
        if not (0 < self.relaxation < 2):
            raise ParameterError(f"relaxation must be in (0, 2), got {self.relaxation}")
        if self.sweeps < 1:
            raise ParameterError("sweeps must be >= 1")
        if self.ray_order not in ("sequential", "shuffle"):
            raise ParameterError(f"unknown ray order {self.ray_order!r}")


@dataclass
class ArtSweepRecord:
    sweep: int
    sum_squared_residual: float
    cosine_similarity: float | None


def _gather_rows(images: list[Image], layout: list[CameraPose], grid: VoxelGrid):
    """Sparse system rows in (view, row, col) order: flat voxel ids, weights,
    prefix offsets, and measured pixel values. Rays with no hits are dropped."""
    if len(images) != len(layout):
        raise ParameterError(f"{len(images)} images but {len(layout)} poses")
    nx, ny, _ = grid.dims
    ids_parts, w_parts, count_parts, b_parts = [], [], [], []
    for pose, image in zip(layout, images):
        if (image.rows, image.cols) != (pose.rows, pose.cols):
            raise ParameterError(
                f"view {pose.view_id}: image {image.rows}x{image.cols} "
                f"does not match detector {pose.rows}x{pose.cols}"
            )
        origin, dirs = pixel_rays_bulk(pose)
        sweep = trace_rays_bulk(origin, dirs, grid)
        keep = sweep.counts > 0
        hit_keep = keep[sweep.ray_id]
        ijk = sweep.ijk[hit_keep].astype(np.int64)
        ids_parts.append(ijk[:, 0] + ijk[:, 1] * nx + ijk[:, 2] * (nx * ny))
        w_parts.append(sweep.seg_len[hit_keep])
        count_parts.append(sweep.counts[keep])
        b_parts.append(image.pixels.ravel()[keep])
    counts = np.concatenate(count_parts) if count_parts else np.zeros(0, np.int64)
    if counts.sum() == 0:
        raise ReconstructionError("no ray intersects the grid")
    offsets = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return (
        np.concatenate(ids_parts),
        np.concatenate(w_parts),
        offsets,
        np.concatenate(b_parts),
    )


def art_reconstruct(
    images: list[Image],
    layout: list[CameraPose],
    grid_template: VoxelGrid,
    config: ArtConfig = ArtConfig(),
    ground_truth: VoxelGrid | None = None,
):
    """Row-action reconstruction starting from all-zero voxels.

    Per ray i with weights w and pixel p: v <- v + lambda * (p - w.v) * w / |w|^2,
    optionally clamped non-negative after each update. Returns the
    reconstructed grid and per-sweep records (residual measured before each
    ray's own update; cosine similarity when ground truth is supplied).
    """
    config.validate()
    ids, weights, offsets, b = _gather_rows(images, layout, grid_template)
    n_rays = len(b)
    denom = np.zeros(n_rays)
    for r in range(n_rays):
        w = weights[offsets[r] : offsets[r + 1]]
        denom[r] = float(w @ w)

    v = np.zeros(grid_template.n_voxels, dtype=np.float64)
    truth = None
    if ground_truth is not None:
        truth = ground_truth.flat_values().astype(np.float64)
        truth_norm = float(np.linalg.norm(truth))

    rng = np.random.default_rng(config.seed)
    lam = config.relaxation
    history = []
    for sweep_i in range(config.sweeps):
        order = (
            rng.permutation(n_rays) if config.ray_order == "shuffle" else range(n_rays)
        )
        ssr = 0.0
        for r in order:
            if denom[r] == 0.0:
                continue
            lo, hi = offsets[r], offsets[r + 1]
            rid = ids[lo:hi]
            w = weights[lo:hi]
            cur = v[rid]
            resid = b[r] - w @ cur
            ssr += resid * resid
            cur += (lam * resid / denom[r]) * w
            if config.nonneg_clamp:
                np.maximum(cur, 0.0, out=cur)
            v[rid] = cur
        sim = None
        if truth is not None:
            den = truth_norm * float(np.linalg.norm(v))
            sim = float(np.dot(truth, v) / den) if den > 0 else 0.0
        history.append(ArtSweepRecord(sweep_i, float(ssr), sim))
    out = grid_template.copy_with(v.reshape(grid_template.dims, order="F"))
    return out, history
