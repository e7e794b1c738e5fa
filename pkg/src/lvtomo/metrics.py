"""Reconstruction quality metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError, ShapeError
from .grids import VoxelGrid


def _as_flat(a) -> np.ndarray:
    if isinstance(a, VoxelGrid):
        return a.flat_values().astype(np.float64)
    return np.asarray(a, dtype=np.float64).ravel()


def cosine_similarity(grid_a, grid_b) -> float:
    """S = (a . b) / (|a| |b|) over flattened grids, float64 accumulation."""
    a = _as_flat(grid_a)
    b = _as_flat(grid_b)
    if a.shape != b.shape:
        raise ShapeError(f"operand sizes differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise MetricError("cosine similarity undefined for a zero-norm operand")
    return float(np.dot(a, b) / (na * nb))


def cosine_distance(grid_a, grid_b) -> float:
    return 1.0 - cosine_similarity(grid_a, grid_b)


@dataclass(frozen=True)
class MetricRecord:
    """One logged training/reconstruction measurement.

    cosine_distance is always exactly 1 - cosine_similarity as computed here.
    """

    epoch: int
    step: int
    loss: float
    cosine_similarity: float | None
    lr_voxel: float
    lr_encoder: float
    wall_ms: float

    @property
    def cosine_distance(self) -> float | None:
        if self.cosine_similarity is None:
            return None
        return 1.0 - self.cosine_similarity


CSV_HEADER = "epoch,step,loss,cosine_similarity,lr_voxel,lr_encoder,wall_ms"


def records_to_csv(records) -> str:
    lines = [CSV_HEADER]
    for r in records:
        sim = "" if r.cosine_similarity is None else repr(r.cosine_similarity)
        lines.append(
            f"{r.epoch},{r.step},{r.loss!r},{sim},{r.lr_voxel!r},{r.lr_encoder!r},{r.wall_ms!r}"
        )
    return "\n".join(lines) + "\n"
