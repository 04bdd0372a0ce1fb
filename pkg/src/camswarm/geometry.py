"""Angular math for the camera array.

Conventions, used everywhere in this package:

* Angles are degrees at every interface.
* Yaw is a compass bearing of the camera's optical axis: 0 = magnetic
  north, 90 = east, in [0, 360).
* Relative yaw (vs the host device) is wrapped to (-180, 180].
* Display yaw is the negated relative yaw: a right-facing device sits in
  the left part of the array, so visualizations mirror the sign.
* World frame: x east, y north, z up, meters.  Image frame: u right,
  v down, pixels, origin at the top-left; principal point at the image
  center.  Cameras are modeled level (pitch = roll = 0); the compass and
  guidance math only involves yaw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(Exception):
    pass


class ValidationError(GeometryError):
    """A value object violates its declared invariants."""


class ProjectionError(GeometryError):
    """Target geometry is not fully in front of the camera."""


class DegenerateInput(GeometryError):
    """Input admits no meaningful answer (collinear corners, zero mean...)."""


class InsufficientDevices(GeometryError):
    """Too few devices for the requested spacing metric."""


# --- yaw arithmetic ---------------------------------------------------------


def wrap_angle(a: float) -> float:
    """Wrap an angle into (-180, 180].  370 -> 10, -190 -> 170, -180 -> 180."""
    r = math.fmod(a, 360.0)
    if r > 180.0:
        r -= 360.0
    elif r <= -180.0:
        r += 360.0
    return r


def wrap_bearing(a: float) -> float:
    """Wrap an angle into [0, 360)."""
    return a % 360.0


def relative_yaw(device_yaw_vs_north: float, host_yaw_vs_north: float) -> float:
    """Device yaw relative to the host, wrapped to (-180, 180]."""
    return wrap_angle(device_yaw_vs_north - host_yaw_vs_north)


def circular_mean(angles_deg) -> float:
    """Direction of the mean unit vector, in (-180, 180].

    Ill-defined when the angles cancel (mean resultant near zero); the
    arctangent of (0, 0) degrades to 0 in that case.
    """
    rad = np.deg2rad(np.asarray(list(angles_deg), dtype=float))
    return wrap_angle(math.degrees(math.atan2(np.sin(rad).mean(), np.cos(rad).mean())))


@dataclass(frozen=True)
class OrientationFrame:
    """One device's yaw reading and its host-relative derivations."""

    device: int
    yaw_vs_north: float  # [0, 360)
    rel_yaw: float  # (-180, 180]; 0 for the host itself
    display_yaw: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "display_yaw", -self.rel_yaw)

    @classmethod
    def against_host(cls, device: int, yaw_vs_north: float,
                     host_yaw_vs_north: float) -> "OrientationFrame":
        return cls(device, wrap_bearing(yaw_vs_north),
                   relative_yaw(yaw_vs_north, host_yaw_vs_north))


def compass_placement(observer: OrientationFrame, other: OrientationFrame) -> float:
    """Screen bearing of `other` on `observer`'s compass, in [0, 360).

    The target sits at the compass center and the observer is pinned at the
    south end (180); peers land at 180 + display(other) - display(observer).
    """
    return wrap_bearing(180.0 + other.display_yaw - observer.display_yaw)


# --- virtual pinhole camera and planar target -------------------------------


@dataclass(frozen=True)
class CameraModel:
    position: tuple[float, float, float]  # world meters
    yaw: float  # bearing of the optical axis, degrees
    focal_px: float
    width: int
    height: int

    def __post_init__(self):
        if not self.focal_px > 0:
            raise ValidationError(f"focal length must be positive, got {self.focal_px}")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("image size must be positive")

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array(
            [[self.focal_px, 0.0, self.width / 2.0],
             [0.0, self.focal_px, self.height / 2.0],
             [0.0, 0.0, 1.0]]
        )

    def world_to_camera(self) -> tuple[np.ndarray, np.ndarray]:
        """Rotation (rows: right, down, forward) and position for level pose."""
        s, c = math.sin(math.radians(self.yaw)), math.cos(math.radians(self.yaw))
        r = np.array([[c, -s, 0.0], [0.0, 0.0, -1.0], [s, c, 0.0]])
        return r, np.asarray(self.position, dtype=float)


@dataclass(frozen=True)
class PlanarTarget:
    """Upright rectangle: width runs horizontal, height along world up."""

    center: tuple[float, float, float]
    normal: tuple[float, float, float]  # unit; must not be vertical
    width: float
    height: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValidationError("target normal is the zero vector")
        object.__setattr__(self, "normal", tuple(n / norm))
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("target extent must be positive")

    def corners(self) -> np.ndarray:
        """4x3 world corners, ordered TL, TR, BR, BL seen against the normal."""
        n = np.asarray(self.normal)
        up = np.array([0.0, 0.0, 1.0])
        h_axis = np.cross(up, n)
        h_norm = np.linalg.norm(h_axis)
        if h_norm < 1e-12:
            raise DegenerateInput("target plane is horizontal; no upright frame")
        h_axis /= h_norm
        v_axis = np.cross(n, h_axis)  # equals up for horizontal normals
        c = np.asarray(self.center)
        half_w, half_h = self.width / 2.0, self.height / 2.0
        return np.array(
            [c - half_w * h_axis + half_h * v_axis,
             c + half_w * h_axis + half_h * v_axis,
             c + half_w * h_axis - half_h * v_axis,
             c - half_w * h_axis - half_h * v_axis]
        )

    @property
    def aspect(self) -> float:
        return self.width / self.height


@dataclass(frozen=True)
class ProjectedTarget:
    """Pinhole image of a planar target: corner pixels and their hull."""

    corners_px: tuple[tuple[float, float], ...]
    bbox_px: tuple[float, float, float, float]  # u0, v0, u1, v1
    norm_box: tuple[float, float, float, float]  # cx, cy, w, h in [0,1] viewport units

    @property
    def size_px(self) -> float:
        """Scalar object size: sqrt of the bbox area."""
        u0, v0, u1, v1 = self.bbox_px
        return math.sqrt((u1 - u0) * (v1 - v0))


def project_target(cam: CameraModel, target: PlanarTarget) -> ProjectedTarget:
    """Project the target rectangle; every corner must have positive depth."""
    rot, pos = cam.world_to_camera()
    cam_pts = (target.corners() - pos) @ rot.T
    if np.any(cam_pts[:, 2] <= 0):
        raise ProjectionError("target corner at or behind the camera plane")
    u = cam.focal_px * cam_pts[:, 0] / cam_pts[:, 2] + cam.width / 2.0
    v = cam.focal_px * cam_pts[:, 1] / cam_pts[:, 2] + cam.height / 2.0
    u0, u1, v0, v1 = u.min(), u.max(), v.min(), v.max()
    norm_box = (
        (u0 + u1) / 2.0 / cam.width,
        (v0 + v1) / 2.0 / cam.height,
        (u1 - u0) / cam.width,
        (v1 - v0) / cam.height,
    )
    corners = tuple((float(a), float(b)) for a, b in zip(u, v))
    return ProjectedTarget(corners, (float(u0), float(v0), float(u1), float(v1)), norm_box)


# --- plane angle recovery (measurement oracle) ------------------------------


def _reject_degenerate(pts: np.ndarray) -> None:
    scale = max(np.linalg.norm(pts[i] - pts[j]) for i in range(4) for j in range(i + 1, 4))
    if scale < 1e-9:
        raise DegenerateInput("duplicate corners")
    for i in range(4):
        for j in range(i + 1, 4):
            if np.linalg.norm(pts[i] - pts[j]) < 1e-9 * scale:
                raise DegenerateInput("duplicate corners")
    idx = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]
    for a, b, c in idx:
        p, q = pts[b] - pts[a], pts[c] - pts[a]
        if abs(p[0] * q[1] - p[1] * q[0]) < 1e-9 * scale * scale:
            raise DegenerateInput("collinear corners")


def _similarity_normalization(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centroid = pts.mean(axis=0)
    mean_dist = np.linalg.norm(pts - centroid, axis=1).mean()
    s = math.sqrt(2.0) / mean_dist
    t = np.array([[s, 0.0, -s * centroid[0]],
                  [0.0, s, -s * centroid[1]],
                  [0.0, 0.0, 1.0]])
    return t, (pts - centroid) * s


def _homography_dlt(plane_pts: np.ndarray, image_pts: np.ndarray) -> np.ndarray:
    """Direct linear transform from 4 correspondences, similarity-normalized."""
    t_plane, p = _similarity_normalization(plane_pts)
    t_img, q = _similarity_normalization(image_pts)
    rows = []
    for (x, y), (u, v) in zip(p, q):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
    _, _, vt = np.linalg.svd(np.array(rows))
    h_hat = vt[-1].reshape(3, 3)
    return np.linalg.inv(t_img) @ h_hat @ t_plane


def recover_plane_angle(corners_px, rect_aspect: float, cam: CameraModel) -> float:
    """Angle between the target's normal and the optical axis, in [0, 90].

    Fits the homography from the canonical rectangle (aspect x 1, centered)
    to the given image corners (TL, TR, BR, BL), strips the intrinsics,
    orthonormalizes the first two rotation columns, and takes their cross
    product as the plane normal.  Sign fixed so the target depth is
    positive, which also breaks the decomposition tie toward the smaller
    angle.
    """
    pts = np.asarray(corners_px, dtype=float)
    if pts.shape != (4, 2):
        raise DegenerateInput(f"need 4 corners, got shape {pts.shape}")
    _reject_degenerate(pts)
    half_a = rect_aspect / 2.0
    canonical = np.array(
        [[-half_a, -0.5], [half_a, -0.5], [half_a, 0.5], [-half_a, 0.5]]
    )
    h = _homography_dlt(canonical, pts)
    h_metric = np.linalg.inv(cam.intrinsics) @ h
    h1, h2, h3 = h_metric[:, 0], h_metric[:, 1], h_metric[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    if lam * h3[2] < 0:  # target center must sit in front of the camera
        lam = -lam
    r1, r2 = lam * h1, lam * h2
    approx = np.column_stack([r1, r2, np.cross(r1, r2)])
    u, _, vt = np.linalg.svd(approx)
    rot = u @ vt
    if np.linalg.det(rot) < 0:
        rot = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    normal_z = abs(rot[2, 2])
    return math.degrees(math.acos(min(1.0, max(0.0, normal_z))))


# --- guide-box fit and spacing metrics --------------------------------------


@dataclass(frozen=True)
class GuideBox:
    """Normalized viewport rectangle, origin top-left, fully inside [0,1]^2."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValidationError(f"guide box has empty extent: {self.w}x{self.h}")
        if (self.cx - self.w / 2 < -1e-9 or self.cx + self.w / 2 > 1 + 1e-9
                or self.cy - self.h / 2 < -1e-9 or self.cy + self.h / 2 > 1 + 1e-9):
            raise ValidationError("guide box exceeds the unit viewport")


# Fit thresholds: size within +-10%, centers within 0.05 viewport units.
FIT_SIZE_RATIO_BAND = (0.9, 1.1)
FIT_CENTER_OFFSET_MAX = 0.05


@dataclass(frozen=True)
class GuideFit:
    size_ratio: float
    center_offset: float
    satisfied: bool


def _box4(box) -> tuple[float, float, float, float]:
    if isinstance(box, GuideBox):
        return box.cx, box.cy, box.w, box.h
    cx, cy, w, h = box
    return cx, cy, w, h


def guide_fit(observed_box, guide, *,
              size_band: tuple[float, float] = FIT_SIZE_RATIO_BAND,
              center_max: float = FIT_CENTER_OFFSET_MAX) -> GuideFit:
    """How well an observed (normalized) bbox matches the guiding box."""
    ocx, ocy, ow, oh = _box4(observed_box)
    gcx, gcy, gw, gh = _box4(guide)
    size_ratio = math.sqrt((ow * oh) / (gw * gh))
    center_offset = math.hypot(ocx - gcx, ocy - gcy)
    satisfied = size_band[0] <= size_ratio <= size_band[1] and center_offset <= center_max
    return GuideFit(size_ratio, center_offset, satisfied)


@dataclass(frozen=True)
class SpacingMetrics:
    gaps: tuple[float, ...]
    angle_rsd: float


def spacing_metrics(rel_yaws) -> SpacingMetrics:
    """Uniformity of the array's angular layout.

    Sorts the relative yaws and takes the n-1 consecutive gaps (arc model:
    the wrap-around gap is not a camera pair).  angle_rsd is the population
    standard deviation of the gaps divided by their mean.
    """
    yaws = sorted(float(y) for y in rel_yaws)
    if len(yaws) < 3:
        raise InsufficientDevices(f"need at least 3 devices, got {len(yaws)}")
    gaps = tuple(b - a for a, b in zip(yaws, yaws[1:]))
    mean = sum(gaps) / len(gaps)
    if mean == 0:
        raise DegenerateInput("all devices at the same yaw")
    var = sum((g - mean) ** 2 for g in gaps) / len(gaps)
    return SpacingMetrics(gaps, math.sqrt(var) / mean)


def size_rsd(object_px_sizes) -> float:
    """Population std over mean of per-device object sizes (pixels)."""
    sizes = [float(s) for s in object_px_sizes]
    if len(sizes) < 2:
        raise DegenerateInput(f"need at least 2 sizes, got {len(sizes)}")
    if any(s <= 0 for s in sizes):
        raise DegenerateInput("object sizes must be positive")
    mean = sum(sizes) / len(sizes)
    var = sum((s - mean) ** 2 for s in sizes) / len(sizes)
    return math.sqrt(var) / mean
