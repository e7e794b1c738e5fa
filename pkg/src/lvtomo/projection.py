"""Reference projections, noise injection, and image persistence.

A clean projection of pixel (row, col) is the segment-length-weighted sum of
voxel intensities along that pixel's reversing ray: sum(seg_len * value) over
the impacting voxels. Units are voxel intensity times millimeters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError
from .geometry import CameraPose, pixel_rays_bulk
from .grids import VoxelGrid
from .tracing import trace_rays_bulk

_IMG_MAGIC = b"IMG1"


@dataclass
class Image:
    """2D projection: rows x cols pixel intensities for one view."""

    view_id: int
    rows: int
    cols: int
    pixels: np.ndarray = field(repr=False)
    pose_summary: dict | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64).reshape(
            self.rows, self.cols
        )
        if not np.all(np.isfinite(self.pixels)):
            raise ParameterError("image pixels must be finite")


def forward_project(grid: VoxelGrid, pose: CameraPose) -> Image:
    """Project the grid onto the pose's detector; rays missing the grid give 0."""
    origin, dirs = pixel_rays_bulk(pose)
    sweep = trace_rays_bulk(origin, dirs, grid)
    v = grid.flat_values().astype(np.float64)
    nx, ny, _ = grid.dims
    flat = (
        sweep.ijk[:, 0].astype(np.int64)
        + sweep.ijk[:, 1].astype(np.int64) * nx
        + sweep.ijk[:, 2].astype(np.int64) * nx * ny
    )
    acc = np.bincount(
        sweep.ray_id, weights=sweep.seg_len * v[flat], minlength=pose.rows * pose.cols
    )
    return Image(
        view_id=pose.view_id,
        rows=pose.rows,
        cols=pose.cols,
        pixels=acc.reshape(pose.rows, pose.cols),
        pose_summary=pose.to_dict(),
    )


def add_noise(image: Image, fraction: float, seed, clamp: bool = False) -> Image:
    """Add i.i.d. Gaussian noise with std = fraction * max(image) per pixel.

    No clamping by default so the noise statistics fed to every reconstruction
    method are identical; clamp=True zeroes negative pixels afterwards.
    """
    if fraction < 0:
        raise ParameterError(f"noise fraction must be >= 0, got {fraction}")
    if image.pixels.size == 0:
        raise ParameterError("cannot add noise to an empty image")
    if fraction == 0:
        noisy = image.pixels.copy()
    else:
        rng = np.random.default_rng(seed)
        std = fraction * float(image.pixels.max())
        noisy = image.pixels + rng.normal(0.0, std, size=image.pixels.shape)
    if clamp:
        noisy = np.maximum(noisy, 0.0)
    return Image(image.view_id, image.rows, image.cols, noisy, image.pose_summary)


# ---------------------------------------------------------------------------
# IMG1 format: magic "IMG1", u32-LE header length, UTF-8 JSON header
# {view_id, rows, cols, pose summary}, then rows*cols little-endian float32,
# row-major.
# ---------------------------------------------------------------------------


def save_image(image: Image, path) -> None:
    header = json.dumps(
        {
            "view_id": image.view_id,
            "rows": image.rows,
            "cols": image.cols,
            "pose": image.pose_summary,
        }
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_IMG_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(image.pixels.astype("<f4").tobytes())


def load_image(path) -> Image:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _IMG_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {_IMG_MAGIC!r}", 0)
    if len(data) < 8:
        raise FormatError("truncated header length field", 4)
    (hlen,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + hlen:
        raise FormatError("truncated JSON header", 8)
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
        rows, cols = int(header["rows"]), int(header["cols"])
        view_id = int(header["view_id"])
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"invalid JSON header: {exc}", 8) from exc
    off = 8 + hlen
    expected = rows * cols * 4
    if len(data) - off != expected:
        raise FormatError(
            f"payload is {len(data) - off} bytes, {rows}x{cols} requires {expected}",
            off,
        )
    pixels = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=off)
    return Image(view_id, rows, cols, pixels.reshape(rows, cols).astype(np.float64),
                 header.get("pose"))


def write_pgm16(array2d: np.ndarray, path) -> None:
    """16-bit binary PGM, max-scaled (all-zero input stays all-zero)."""
    a = np.asarray(array2d, dtype=np.float64)
    if a.ndim != 2:
        raise ParameterError(f"PGM export needs a 2D array, got shape {a.shape}")
    m = a.max()
    scaled = np.zeros_like(a) if m <= 0 else np.clip(a, 0, None) / m * 65535.0
    data = np.round(scaled).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{a.shape[1]} {a.shape[0]}\n65535\n".encode("ascii"))
        f.write(data.tobytes())
