"""Camera layouts and per-pixel reversing rays (pinhole model).

World frame: y is the vertical axis (the long axis of the reconstruction
domain), x and z span the horizontal plane. The view angle rotates the camera
around y; the pitch angle elevates it above the horizontal.

Detector convention: the image's longer dimension carries the world-vertical
axis. When cols >= rows the camera is rolled 90 degrees so the domain's long
axis runs along the image width; intrinsics are derived so the grid's bounding
sphere spans (1/fov_margin) of that longer dimension. This keeps every voxel
resolved by multiple pixels at any configured distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

WORLD_UP = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class CameraPose:
    """One pinhole view: where the camera sits and how it maps pixels to rays."""

    view_angle_deg: float
    pitch_angle_deg: float
    distance_mm: float
    look_at: np.ndarray
    rows: int
    cols: int
    focal_length_mm: float
    pixel_pitch_mm: float
    view_id: int = 0

    def __post_init__(self):
        if not self.distance_mm > 0:
            raise ParameterError(f"distance must be > 0, got {self.distance_mm}")
        if self.rows < 1 or self.cols < 1:
            raise ParameterError("rows and cols must be >= 1")
        if not (self.focal_length_mm > 0 and self.pixel_pitch_mm > 0):
            raise ParameterError("focal_length and pixel_pitch must be > 0")
        if abs(self.pitch_angle_deg) >= 90.0:
            raise ParameterError("pitch angle must lie in (-90, 90) degrees")
        object.__setattr__(
            self, "look_at", np.asarray(self.look_at, dtype=np.float64).reshape(3)
        )

    @property
    def position(self) -> np.ndarray:
        """Pinhole position in world coordinates."""
        th = math.radians(self.view_angle_deg)
        ph = math.radians(self.pitch_angle_deg)
        direction = np.array(
            [math.cos(ph) * math.cos(th), math.sin(ph), math.cos(ph) * math.sin(th)]
        )
        return self.look_at + self.distance_mm * direction

    def basis(self):
        """(forward, u_axis, v_axis): optical axis plus the in-plane detector
        axes for the col and row pixel coordinates respectively."""
        forward = self.look_at - self.position
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, WORLD_UP)
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            raise ParameterError("optical axis parallel to the vertical axis")
        right = right / nr
        cam_up = np.cross(right, forward)
        if self.cols >= self.rows:
            # Rolled: image width tracks the world-vertical axis.
            return forward, cam_up, right
        return forward, right, cam_up

    def to_dict(self) -> dict:
        return {
            "view_id": self.view_id,
            "view_angle_deg": self.view_angle_deg,
            "pitch_angle_deg": self.pitch_angle_deg,
            "distance_mm": self.distance_mm,
            "look_at_mm": list(map(float, self.look_at)),
            "rows": self.rows,
            "cols": self.cols,
            "focal_length_mm": self.focal_length_mm,
            "pixel_pitch_mm": self.pixel_pitch_mm,
        }

    @staticmethod
    def from_dict(d: dict) -> "CameraPose":
        return CameraPose(
            view_angle_deg=float(d["view_angle_deg"]),
            pitch_angle_deg=float(d["pitch_angle_deg"]),
            distance_mm=float(d["distance_mm"]),
            look_at=np.asarray(d["look_at_mm"], dtype=np.float64),
            rows=int(d["rows"]),
            cols=int(d["cols"]),
            focal_length_mm=float(d["focal_length_mm"]),
            pixel_pitch_mm=float(d["pixel_pitch_mm"]),
            view_id=int(d.get("view_id", 0)),
        )


@dataclass(frozen=True)
class Ray:
    """Reversing ray from a pixel through the aperture into the scene."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3)
        )
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ParameterError("ray direction must be unit length (within 1e-12)")
        object.__setattr__(self, "direction", d)


def pixel_ray(pose: CameraPose, row: int, col: int) -> Ray:
    """Ray from the pinhole through the center of detector pixel (row, col),
    mirrored through the aperture (virtual image plane in front)."""
    if not (0 <= row < pose.rows) or not (0 <= col < pose.cols):
        raise ParameterError(
            f"pixel ({row}, {col}) outside detector {pose.rows}x{pose.cols}"
        )
    forward, u_axis, v_axis = pose.basis()
    u_off = (col - (pose.cols - 1) / 2.0) * pose.pixel_pitch_mm
    v_off = (row - (pose.rows - 1) / 2.0) * pose.pixel_pitch_mm
    d = pose.focal_length_mm * forward + u_off * u_axis + v_off * v_axis
    d = d / np.linalg.norm(d)
    return Ray(pose.position, d)


def pixel_rays_bulk(pose: CameraPose):
    """(origin, directions): directions is (rows*cols, 3), pixel-major by
    (row, col). Vectorized equivalent of pixel_ray over the whole detector."""
    forward, u_axis, v_axis = pose.basis()
    rr, cc = np.meshgrid(
        np.arange(pose.rows, dtype=np.float64),
        np.arange(pose.cols, dtype=np.float64),
        indexing="ij",
    )
    u_off = (cc.ravel() - (pose.cols - 1) / 2.0) * pose.pixel_pitch_mm
    v_off = (rr.ravel() - (pose.rows - 1) / 2.0) * pose.pixel_pitch_mm
    d = (
        pose.focal_length_mm * forward[None, :]
        + u_off[:, None] * u_axis[None, :]
        + v_off[:, None] * v_axis[None, :]
    )
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return pose.position.copy(), d


@dataclass(frozen=True)
class LayoutSpec:
    """Parametric multi-view camera arrangement.

    pitch_mode     -- "constant" (every view at pitch_deg) or "alternating"
                      (+pitch_deg, -pitch_deg, ...)
    distance_mode  -- "fixed" (distance_mm) or "uniform_random"
                      (distance_min_mm..distance_max_mm, seeded)
    object_diameter_mm / object_center_mm describe the grid being imaged;
    pixel pitch is derived so the bounding sphere spans (1/fov_margin) of the
    longer detector dimension at each pose's distance.
    """

    n_views: int
    view_angle_start_deg: float = 0.0
    view_angle_step_deg: float = 0.0
    pitch_mode: str = "constant"
    pitch_deg: float = 0.0
    distance_mode: str = "fixed"
    distance_mm: float = 5800.0
    distance_min_mm: float = 5500.0
    distance_max_mm: float = 6500.0
    seed: int = 0
    rows: int = 128
    cols: int = 512
    focal_length_mm: float = 50.0
    fov_margin: float = 1.2
    object_diameter_mm: float = 73.0
    object_center_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def validate(self):
        if self.n_views < 1:
            raise ParameterError(f"n_views must be >= 1, got {self.n_views}")
        for name in ("view_angle_start_deg", "view_angle_step_deg"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if self.pitch_mode not in ("constant", "alternating"):
            raise ParameterError(f"unknown pitch_mode {self.pitch_mode!r}")
        if self.distance_mode not in ("fixed", "uniform_random"):
            raise ParameterError(f"unknown distance_mode {self.distance_mode!r}")
        if self.distance_mode == "uniform_random" and not (
            0 < self.distance_min_mm <= self.distance_max_mm
        ):
            raise ParameterError("need 0 < distance_min <= distance_max")
        if self.distance_mode == "fixed" and not self.distance_mm > 0:
            raise ParameterError("distance must be > 0")
        if self.rows < 1 or self.cols < 1:
            raise ParameterError("rows and cols must be >= 1")
        if not (self.fov_margin >= 1.0 and self.focal_length_mm > 0):
            raise ParameterError("fov_margin must be >= 1 and focal_length > 0")
        if not self.object_diameter_mm > 0:
            raise ParameterError("object_diameter must be > 0")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["object_center_mm"] = list(self.object_center_mm)
        return d

    @staticmethod
    def from_dict(d: dict) -> "LayoutSpec":
        d = dict(d)
        if "object_center_mm" in d:
            d["object_center_mm"] = tuple(d["object_center_mm"])
        known = set(LayoutSpec.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown layout keys: {sorted(unknown)}")
        return LayoutSpec(**d)


def derive_pixel_pitch(spec: LayoutSpec, distance_mm: float) -> float:
    """Pitch putting the object's bounding sphere across (1/fov_margin) of the
    longer detector dimension at the given distance."""
    n_long = max(spec.rows, spec.cols)
    return (
        spec.fov_margin
        * spec.object_diameter_mm
        * spec.focal_length_mm
        / (distance_mm * n_long)
    )


def build_layout(spec: LayoutSpec) -> list[CameraPose]:
    """Poses at view_angle_start + k*step with the configured pitch pattern
    and distances; random distances are deterministic given spec.seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    poses = []
    for k in range(spec.n_views):
        angle = spec.view_angle_start_deg + k * spec.view_angle_step_deg
        if spec.pitch_mode == "constant":
            pitch = spec.pitch_deg
        else:
            pitch = spec.pitch_deg if k % 2 == 0 else -spec.pitch_deg
        if spec.distance_mode == "fixed":
            dist = spec.distance_mm
        else:
            dist = float(rng.uniform(spec.distance_min_mm, spec.distance_max_mm))
        poses.append(
            CameraPose(
                view_angle_deg=angle,
                pitch_angle_deg=pitch,
                distance_mm=dist,
                look_at=np.asarray(spec.object_center_mm, dtype=np.float64),
                rows=spec.rows,
                cols=spec.cols,
                focal_length_mm=spec.focal_length_mm,
                pixel_pitch_mm=derive_pixel_pitch(spec, dist),
                view_id=k,
            )
        )
    return poses
