"""Voxel grids, synthetic emission phantoms, and the .vxg binary format.

A grid is a box of cubic voxels. Values are stored as float32 (the on-disk
precision); reductions elsewhere in the package accumulate in float64.
Voxel (i, j, k) has flat index i + j*nx + k*nx*ny (x varies fastest).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError

_VXG_MAGIC = b"VXG1"


@dataclass
class VoxelGrid:
    """3D scalar intensity field with physical geometry metadata.

    dims       -- (nx, ny, nz) voxel counts, y is the vertical axis
    voxel_size -- edge length of the cubic voxels, millimeters
    origin     -- world position of the grid's min corner, millimeters
    values     -- (nx, ny, nz) float32 array of non-negative intensities
    """

    dims: tuple[int, int, int]
    voxel_size: float
    origin: np.ndarray
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        _check_dims(self.dims)
        if not self.voxel_size > 0:
            raise ParameterError(f"voxel_size must be > 0, got {self.voxel_size}")
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.shape != tuple(self.dims):
            raise ParameterError(
                f"values shape {self.values.shape} != dims {self.dims}"
            )

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def extent(self) -> np.ndarray:
        """Physical edge lengths of the box, millimeters."""
        return np.asarray(self.dims, dtype=np.float64) * self.voxel_size

    @property
    def center(self) -> np.ndarray:
        """World coordinates of the box center."""
        return self.origin + 0.5 * self.extent

    def flat_values(self) -> np.ndarray:
        """Values flattened x-fastest: element i + j*nx + k*nx*ny is voxel (i,j,k)."""
        return self.values.ravel(order="F")

    def flat_index(self, i, j, k):
        nx, ny, _ = self.dims
        return i + j * nx + k * (nx * ny)

    def bounding_sphere_diameter(self) -> float:
        """Diameter of the sphere circumscribing the grid box, millimeters."""
        return float(np.linalg.norm(self.extent))

    def copy_with(self, values: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(self.dims, self.voxel_size, self.origin.copy(), values)


def centered_origin(dims, voxel_size) -> np.ndarray:
    """Origin placing the grid's center at the world origin."""
    return -0.5 * np.asarray(dims, dtype=np.float64) * voxel_size


def empty_grid(dims, voxel_size, origin=None) -> VoxelGrid:
    if origin is None:
        origin = centered_origin(dims, voxel_size)
    return VoxelGrid(tuple(dims), voxel_size, origin, np.zeros(dims, np.float32))


def _check_dims(dims):
    if len(dims) != 3 or any(int(d) != d or d < 1 for d in dims):
        raise ParameterError(f"dims must be three integers >= 1, got {dims!r}")


def _check_fraction(name, value):
    if not (0 < value <= 1):
        raise ParameterError(f"{name} must be in (0, 1], got {value}")


def _radial_coords(dims):
    """Distance of each voxel center from the vertical axis, in voxel units."""
    nx, ny, nz = dims
    xi = np.arange(nx) - (nx - 1) / 2.0
    zk = np.arange(nz) - (nz - 1) / 2.0
    return np.sqrt(xi[:, None] ** 2 + zk[None, :] ** 2)  # (nx, nz)


def make_jet_flame(
    dims,
    voxel_size,
    params: dict | None = None,
) -> VoxelGrid:
    """Deterministic axisymmetric hollow-cone phantom, max value 1.

    The field is env(y) * exp(-(r - r0(y))^2 / (2 sigma^2)) about the vertical
    axis. r0 is zero up to the envelope peak and widens linearly above it, so
    the global maximum sits exactly on the axis at the peak height. Values are
    zero outside the bounding cylinder of radius min(nx, nz)/2 voxels.

    params keys (all fractions in (0, 1]):
      core_radius_fraction  -- cone radius at the top, as a fraction of the
                               cylinder radius (default 0.55)
      axial_peak_fraction   -- height of the envelope peak as a fraction of ny
                               (default 0.35)
      radial_sigma_fraction -- Gaussian shell width / cylinder radius
                               (default 0.18)
    """
    _check_dims(dims)
    if not voxel_size > 0:
        raise ParameterError(f"voxel_size must be > 0, got {voxel_size}")
    p = {
        "core_radius_fraction": 0.55,
        "axial_peak_fraction": 0.35,
        "radial_sigma_fraction": 0.18,
    }
    if params:
        unknown = set(params) - set(p)
        if unknown:
            raise ParameterError(f"unknown jet flame params: {sorted(unknown)}")
        p.update(params)
    for k, v in p.items():
        _check_fraction(k, v)

    nx, ny, nz = dims
    r_cyl = min(nx, nz) / 2.0  # bounding cylinder radius, voxel units
    r = _radial_coords(dims)  # (nx, nz)
    y = np.arange(ny, dtype=np.float64)
    y_frac = y / max(ny - 1, 1)
    y_peak = p["axial_peak_fraction"]

    # Cone radius: 0 at/below the peak height, widening linearly to
    # core_radius_fraction * r_cyl at the top.
    rise = np.clip((y_frac - y_peak) / max(1.0 - y_peak, 1e-9), 0.0, None)
    r0 = p["core_radius_fraction"] * r_cyl * rise  # (ny,)

    # Smooth axial envelope: asymmetric Gaussian, value 1 at the peak.
    sig_lo = max(y_peak / 2.0, 1e-9)
    sig_hi = max((1.0 - y_peak) / 1.8, 1e-9)
    env = np.where(
        y_frac <= y_peak,
        np.exp(-0.5 * ((y_frac - y_peak) / sig_lo) ** 2),
        np.exp(-0.5 * ((y_frac - y_peak) / sig_hi) ** 2),
    )  # (ny,)

    sigma = p["radial_sigma_fraction"] * r_cyl
    shell = np.exp(
        -0.5 * ((r[:, None, :] - r0[None, :, None]) / sigma) ** 2
    )  # (nx, ny, nz)
    vals = env[None, :, None] * shell
    vals = np.where(r[:, None, :] > r_cyl, 0.0, vals)

    m = vals.max()
    if m > 0:
        vals = vals / m
    return VoxelGrid(tuple(dims), voxel_size, centered_origin(dims, voxel_size), vals)


def _lattice_noise(dims, seed, lattice=8):
    """Seeded value noise: random values on a coarse lattice, trilinearly
    interpolated to the grid. Returns values in [0, 1]."""
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0.0, 1.0, size=(lattice, lattice, lattice))
    out = np.empty(dims, dtype=np.float64)
    axes = []
    for n in dims:
        t = np.linspace(0.0, lattice - 1.0, n)
        i0 = np.minimum(t.astype(np.int64), lattice - 2)
        axes.append((i0, t - i0))
    (ix, fx), (iy, fy), (iz, fz) = axes
    fx = fx[:, None, None]
    fy = fy[None, :, None]
    fz = fz[None, None, :]

    def corner(dx, dy, dz):
        return coarse[np.ix_(ix + dx, iy + dy, iz + dz)]

    out = (
        corner(0, 0, 0) * (1 - fx) * (1 - fy) * (1 - fz)
        + corner(1, 0, 0) * fx * (1 - fy) * (1 - fz)
        + corner(0, 1, 0) * (1 - fx) * fy * (1 - fz)
        + corner(0, 0, 1) * (1 - fx) * (1 - fy) * fz
        + corner(1, 1, 0) * fx * fy * (1 - fz)
        + corner(1, 0, 1) * fx * (1 - fy) * fz
        + corner(0, 1, 1) * (1 - fx) * fy * fz
        + corner(1, 1, 1) * fx * fy * fz
    )
    return out


def make_turbulent_flame(dims, voxel_size, seed) -> VoxelGrid:
    """Disordered, asymmetric phantom: the jet base field modulated by seeded
    lattice noise, thresholded at 5% of the maximum, renormalized to max 1."""
    base = make_jet_flame(dims, voxel_size).values.astype(np.float64)
    noise = _lattice_noise(tuple(dims), seed)
    vals = base * (0.5 + noise)
    m = vals.max()
    vals[vals < 0.05 * m] = 0.0
    m = vals.max()
    if m > 0:
        vals = vals / m
    return VoxelGrid(tuple(dims), voxel_size, centered_origin(dims, voxel_size), vals)


@dataclass(frozen=True)
class CylinderSpec:
    """Vertical-axis cylinder in voxel coordinates (centers at index + 0.5)."""

    center_x: float
    center_z: float
    radius: float
    y_lo: int
    y_hi: int  # exclusive

    @staticmethod
    def inscribed(dims, radius_fraction: float = 1.0) -> "CylinderSpec":
        """Largest vertical cylinder fitting the grid cross-section."""
        nx, ny, nz = dims
        return CylinderSpec(nx / 2.0, nz / 2.0, radius_fraction * min(nx, nz) / 2.0, 0, ny)

    def mask(self, dims) -> np.ndarray:
        nx, ny, nz = dims
        xi = np.arange(nx) + 0.5 - self.center_x
        zk = np.arange(nz) + 0.5 - self.center_z
        radial = xi[:, None] ** 2 + zk[None, :] ** 2 <= self.radius**2
        inside = np.zeros(dims, dtype=bool)
        inside[:, self.y_lo : self.y_hi, :] = radial[:, None, :]
        return inside

    def validate(self, dims):
        nx, ny, nz = dims
        if not (0 <= self.y_lo < self.y_hi <= ny):
            raise ParameterError(f"cylinder y range [{self.y_lo}, {self.y_hi}) outside grid")
        if self.radius <= 0:
            raise ParameterError("cylinder radius must be > 0")
        if (
            self.center_x - self.radius < 0
            or self.center_x + self.radius > nx
            or self.center_z - self.radius < 0
            or self.center_z + self.radius > nz
        ):
            raise ParameterError("cylinder does not fit inside the grid cross-section")


def make_randomized_homogeneous(
    dims, voxel_size, seed, fill_region: CylinderSpec | None = None
) -> VoxelGrid:
    """Independent uniform [0.2, 1.0] values inside the cylinder, 0 outside.

    The default region is the full inscribed cylinder — the volume where the
    flame phantoms live — so a transferred encoder sees training signal in
    every voxel it will later have to weight.
    """
    _check_dims(dims)
    if fill_region is None:
        fill_region = CylinderSpec.inscribed(tuple(dims))
    fill_region.validate(tuple(dims))
    inside = fill_region.mask(tuple(dims))
    rng = np.random.default_rng(seed)
    vals = np.zeros(dims, dtype=np.float64)
    vals[inside] = rng.uniform(0.2, 1.0, size=int(inside.sum()))
    return VoxelGrid(tuple(dims), voxel_size, centered_origin(dims, voxel_size), vals)


# ---------------------------------------------------------------------------
# .vxg persistence: magic "VXG1", u32-LE header length, UTF-8 JSON header
# {"dims":[nx,ny,nz],"voxel_size_mm":f,"origin_mm":[x,y,z]}, then nx*ny*nz
# little-endian IEEE 754 32-bit floats, x-fastest.
# ---------------------------------------------------------------------------


def save_grid(grid: VoxelGrid, path) -> None:
    header = json.dumps(
        {
            "dims": list(grid.dims),
            "voxel_size_mm": grid.voxel_size,
            "origin_mm": list(map(float, grid.origin)),
        }
    ).encode("utf-8")
    payload = grid.values.ravel(order="F").astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(_VXG_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(payload)


def load_grid(path) -> VoxelGrid:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _VXG_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {_VXG_MAGIC!r}", 0)
    if len(data) < 8:
        raise FormatError("truncated header length field", 4)
    (hlen,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + hlen:
        raise FormatError("truncated JSON header", 8)
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
        dims = tuple(int(d) for d in header["dims"])
        voxel_size = float(header["voxel_size_mm"])
        origin = np.asarray(header["origin_mm"], dtype=np.float64)
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"invalid JSON header: {exc}", 8) from exc
    _check_dims(dims)
    payload_off = 8 + hlen
    expected = dims[0] * dims[1] * dims[2] * 4
    actual = len(data) - payload_off
    if actual != expected:
        raise FormatError(
            f"payload is {actual} bytes, dims {dims} require {expected}",
            payload_off,
        )
    flat = np.frombuffer(data, dtype="<f4", count=dims[0] * dims[1] * dims[2], offset=payload_off)
    values = flat.reshape(dims, order="F").copy()
    return VoxelGrid(dims, voxel_size, origin, values)
