"""Pinhole cameras, rigid poses, rays and forward depth-image warping.

Conventions used throughout the package:

* poses are camera-to-world 4x4 matrices, right-handed;
* the camera looks down +z, image x grows to the right and y grows down;
* pixel ``(u, v)`` (integer column/row) has its center at ``(u + 0.5, v + 0.5)``
  in continuous image coordinates, which is what ``project``/``unproject`` use;
* depth maps store camera-frame z (not distance along the ray).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._accel import njit
from .errors import BehindCameraError, DomainError

DEPTH_TIE_EPS = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width < 2 or self.height < 2:
            raise DomainError(f"image must be at least 2x2, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_deg: float) -> "CameraIntrinsics":
        f = 0.5 * width / math.tan(math.radians(fov_x_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def rotation_yaw_pitch(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    """Rotation turning the camera by ``yaw`` about world y, then ``pitch`` about its x.

    Positive yaw turns the optical axis toward +x, positive pitch toward -y (up).
    """
    a, b = math.radians(yaw_deg), math.radians(pitch_deg)
    ry = np.array([[math.cos(a), 0.0, math.sin(a)], [0.0, 1.0, 0.0], [-math.sin(a), 0.0, math.cos(a)]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, math.cos(b), -math.sin(b)], [0.0, math.sin(b), math.cos(b)]])
    return ry @ rx


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-to-world rigid transform."""

    transform: np.ndarray

    def __post_init__(self):
        m = np.array(self.transform, dtype=np.float64)
        if m.shape != (4, 4):
            raise DomainError(f"pose must be 4x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise DomainError("pose contains non-finite values")
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) >= 1e-6 or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise DomainError("pose rotation block is not a proper rotation")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise DomainError("pose last row must be [0, 0, 0, 1]")
        m.setflags(write=False)
        object.__setattr__(self, "transform", m)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(4))

    @classmethod
    def from_rotation_translation(cls, rotation, translation) -> "Pose":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @classmethod
    def from_yaw_pitch(cls, yaw_deg: float, pitch_deg: float = 0.0, center=(0.0, 0.0, 0.0)) -> "Pose":
        return cls.from_rotation_translation(rotation_yaw_pitch(yaw_deg, pitch_deg), center)

    @property
    def rotation(self) -> np.ndarray:
        return self.transform[:3, :3]

    @property
    def center(self) -> np.ndarray:
        return self.transform[:3, 3]

    @property
    def optical_axis(self) -> np.ndarray:
        return self.transform[:3, 2]

    def inverse_matrix(self) -> np.ndarray:
        """World-to-camera matrix, computed from the rigid structure."""
        inv = np.eye(4)
        rt = self.rotation.T
        inv[:3, :3] = rt
        inv[:3, 3] = -rt @ self.center
        return inv

    def angle_to(self, other: "Pose") -> float:
        """Angle in degrees between the two optical axes."""
        c = float(np.clip(self.optical_axis @ other.optical_axis, -1.0, 1.0))
        return math.degrees(math.acos(c))

    def __eq__(self, other):
        return isinstance(other, Pose) and np.array_equal(self.transform, other.transform)

    def __hash__(self):
        return hash(self.transform.tobytes())


def relative_transform(source: Pose, target: Pose) -> np.ndarray:
    """Matrix mapping source-camera coordinates to target-camera coordinates."""
    return target.inverse_matrix() @ source.transform


@dataclass(eq=False)
class ViewRecord:
    image: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    pose: Pose
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        shape = self.intrinsics.shape
        if self.image.shape != shape + (3,) or self.depth.shape != shape or self.mask.shape != shape:
            raise DomainError(
                f"record arrays {self.image.shape}/{self.depth.shape}/{self.mask.shape} "
                f"do not match intrinsics {shape}"
            )
        if np.any(self.depth[self.mask] <= 0):
            raise DomainError("depth must be positive wherever the mask is set")

    @property
    def shape(self) -> tuple[int, int]:
        return self.intrinsics.shape

    def copy(self) -> "ViewRecord":
        return ViewRecord(self.image.copy(), self.depth.copy(), self.mask.copy(), self.pose, self.intrinsics)


@dataclass
class ViewDatabase:
    records: list = field(default_factory=list)
    origin_index: int = 0

    def __post_init__(self):
        if not self.records:
            raise DomainError("a view database needs at least one record")
        k = self.records[0].intrinsics
        if any(r.intrinsics != k for r in self.records):
            raise DomainError("all records must share the same intrinsics")
        if not self.records[self.origin_index].mask.all():
            raise DomainError("the origin record must be fully valid")

    @property
    def origin(self) -> ViewRecord:
        return self.records[self.origin_index]

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.records[0].intrinsics

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, record: ViewRecord) -> None:
        if record.intrinsics != self.intrinsics:
            raise DomainError("record intrinsics differ from the database")
        self.records.append(record)


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise DomainError("ray direction must be a unit vector")
        if not (0 <= self.t_near < self.t_far):
            raise DomainError(f"invalid ray bounds [{self.t_near}, {self.t_far}]")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t):
        return self.origin + np.multiply.outer(t, self.direction)


def unproject(pixel, depth: float, K: CameraIntrinsics) -> np.ndarray:
    """Lift continuous image coordinates ``(u, v)`` at camera depth ``depth``."""
    if not depth > 0:
        raise DomainError(f"depth must be positive, got {depth}")
    u, v = pixel
    if not (math.isfinite(u) and math.isfinite(v)):
        raise DomainError("pixel coordinates must be finite")
    return depth * np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])


def project(point, K: CameraIntrinsics) -> tuple[tuple[float, float], float]:
    """Pinhole projection of a camera-frame point; returns ``((u, v), z)``."""
    x, y, z = (float(c) for c in point)
    if not z > 0:
        raise BehindCameraError(f"point has z={z}")
    return (K.fx * x / z + K.cx, K.fy * y / z + K.cy), z


def pixel_directions(K: CameraIntrinsics, pose: Pose) -> np.ndarray:
    """Unit world-frame directions through every pixel center, shape (H, W, 3)."""
    u = (np.arange(K.width) + 0.5 - K.cx) / K.fx
    v = (np.arange(K.height) + 0.5 - K.cy) / K.fy
    cam = np.stack(np.broadcast_arrays(u[None, :], v[:, None], 1.0), axis=-1)
    return _unit_world(cam, pose.rotation)


def _unit_world(cam: np.ndarray, R: np.ndarray) -> np.ndarray:
    # elementwise so a single ray and a whole image round identically
    world = cam[..., 0:1] * R[:, 0] + cam[..., 1:2] * R[:, 1] + cam[..., 2:3] * R[:, 2]
    return world / np.sqrt(world[..., 0:1] ** 2 + world[..., 1:2] ** 2 + world[..., 2:3] ** 2)


def z_to_ray_distance(K: CameraIntrinsics) -> np.ndarray:
    """Per-pixel factor converting camera z to distance along the pixel ray."""
    u = (np.arange(K.width) + 0.5 - K.cx) / K.fx
    v = (np.arange(K.height) + 0.5 - K.cy) / K.fy
    return np.sqrt(1.0 + u[None, :] ** 2 + v[:, None] ** 2)


def camera_ray(pixel, view, t_near: float, t_far: float) -> Ray:
    """Ray from the camera center through the center of integer pixel ``(u, v)``."""
    u, v = pixel
    K = view.intrinsics
    if not (0 <= u < K.width and 0 <= v < K.height):
        raise DomainError(f"pixel {pixel} outside {K.width}x{K.height} image")
    d_cam = np.array([(u + 0.5 - K.cx) / K.fx, (v + 0.5 - K.cy) / K.fy, 1.0])
    return Ray(view.pose.center.copy(), _unit_world(d_cam, view.pose.rotation), t_near, t_far)


@njit
def _splat_nb(depth, mask, rel, fx, fy, cx, cy, out_h, out_w):
    h, w = depth.shape
    zbuf = np.full((out_h, out_w), np.inf)
    src = np.full((out_h, out_w), -1, dtype=np.int64)
    for v in range(h):
        for u in range(w):
            if not mask[v, u]:
                continue
            z = depth[v, u]
            x = z * (u + 0.5 - cx) / fx
            y = z * (v + 0.5 - cy) / fy
            tx = rel[0, 0] * x + rel[0, 1] * y + rel[0, 2] * z + rel[0, 3]
            ty = rel[1, 0] * x + rel[1, 1] * y + rel[1, 2] * z + rel[1, 3]
            tz = rel[2, 0] * x + rel[2, 1] * y + rel[2, 2] * z + rel[2, 3]
            if tz <= 0.0:
                continue
            iu = math.floor(fx * tx / tz + cx)
            iv = math.floor(fy * ty / tz + cy)
            if iu < 0 or iu >= out_w or iv < 0 or iv >= out_h:
                continue
            # rows are visited in index order, so an equal depth keeps the lower index
            if tz < zbuf[iv, iu] - 1e-9:
                zbuf[iv, iu] = tz
                src[iv, iu] = v * w + u
    return zbuf, src


def _splat_np(depth, mask, rel, fx, fy, cx, cy, out_h, out_w):
    h, w = depth.shape
    vv, uu = np.nonzero(mask)
    z = depth[vv, uu]
    x = z * (uu + 0.5 - cx) / fx
    y = z * (vv + 0.5 - cy) / fy
    tx = rel[0, 0] * x + rel[0, 1] * y + rel[0, 2] * z + rel[0, 3]
    ty = rel[1, 0] * x + rel[1, 1] * y + rel[1, 2] * z + rel[1, 3]
    tz = rel[2, 0] * x + rel[2, 1] * y + rel[2, 2] * z + rel[2, 3]
    zbuf = np.full((out_h, out_w), np.inf)
    src = np.full((out_h, out_w), -1, dtype=np.int64)
    front = tz > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        iu = np.floor(fx * tx / tz + cx)
        iv = np.floor(fy * ty / tz + cy)
    keep = front & (iu >= 0) & (iu < out_w) & (iv >= 0) & (iv < out_h)
    if not keep.any():
        return zbuf, src
    tgt = (iv[keep] * out_w + iu[keep]).astype(np.int64)
    tz = tz[keep]
    sidx = (vv * w + uu)[keep].astype(np.int64)
    zmin = np.full(out_h * out_w, np.inf)
    np.minimum.at(zmin, tgt, tz)
    near = tz < zmin[tgt] + DEPTH_TIE_EPS
    best = np.full(out_h * out_w, np.iinfo(np.int64).max)
    np.minimum.at(best, tgt[near], sidx[near])
    hit = best != np.iinfo(np.int64).max
    src.reshape(-1)[hit] = best[hit]
    zflat = zbuf.reshape(-1)
    won = near & (best[tgt] == sidx)
    zflat[tgt[won]] = tz[won]
    return zbuf, src


def splat_indices(source: ViewRecord, target_pose: Pose, target_intrinsics: CameraIntrinsics | None = None):
    """Z-buffered forward splat; returns per-target-pixel (depth, flat source index or -1)."""
    from . import _accel

    K = source.intrinsics
    Kt = target_intrinsics or K
    rel = relative_transform(source.pose, target_pose)
    fn = _splat_nb if _accel.USE_NUMBA else _splat_np
    return fn(
        np.ascontiguousarray(source.depth), np.ascontiguousarray(source.mask), rel,
        K.fx, K.fy, K.cx, K.cy, Kt.height, Kt.width,
    )


def crack_pixels(mask: np.ndarray) -> np.ndarray:
    """Unmasked pixels whose gap is exactly one pixel wide horizontally or vertically."""
    m = np.pad(mask, 1, constant_values=False)
    horiz = m[1:-1, :-2] & m[1:-1, 2:]
    vert = m[:-2, 1:-1] & m[2:, 1:-1]
    return ~mask & (horiz | vert)


def fill_cracks(image: np.ndarray, depth: np.ndarray, mask: np.ndarray):
    """Fill one-pixel cracks with the median of the masked 3x3 neighbourhood."""
    cracks = crack_pixels(mask)
    if not cracks.any():
        return image, depth, mask
    h, w = mask.shape
    stack = np.concatenate([image, depth[..., None]], axis=-1)
    padded = np.pad(stack, ((1, 1), (1, 1), (0, 0)))
    pmask = np.pad(mask, 1, constant_values=False)
    vv, uu = np.nonzero(cracks)
    neigh = np.stack([padded[vv + dv, uu + du] for dv in range(3) for du in range(3)], axis=1)
    nmask = np.stack([pmask[vv + dv, uu + du] for dv in range(3) for du in range(3)], axis=1)
    neigh = np.where(nmask[..., None], neigh, np.nan)
    filled = np.nanmedian(neigh, axis=1)
    image, depth, mask = image.copy(), depth.copy(), mask.copy()
    image[vv, uu] = filled[:, :3]
    depth[vv, uu] = filled[:, 3]
    mask[vv, uu] = True
    return image, depth, mask


def warp_view(source: ViewRecord, target_pose: Pose, fill_cracks_pass: bool = True) -> ViewRecord:
    """Forward-warp ``source`` into ``target_pose`` with nearest-pixel splatting.

    Collisions are resolved by a z-buffer (nearest wins, ties go to the lower
    row-major source index).  The returned mask marks pixels that received at
    least one splat, plus filled one-pixel cracks when ``fill_cracks_pass``.
    """
    K = source.intrinsics
    zbuf, src = splat_indices(source, target_pose)
    mask = src >= 0
    image = np.zeros(K.shape + (3,))
    depth = np.zeros(K.shape)
    flat_img = source.image.reshape(-1, 3)
    image[mask] = flat_img[src[mask]]
    depth[mask] = zbuf[mask]
    if fill_cracks_pass:
        image, depth, mask = fill_cracks(image, depth, mask)
    return ViewRecord(image, depth, mask, target_pose, K)


def _symmetric_grid(half_range: float, n: int) -> np.ndarray:
    if n == 1 or half_range == 0:
        return np.zeros(1)
    grid = np.linspace(-half_range, half_range, n)
    # mirror the upper half so the grid is exactly symmetric and its odd center is exactly 0
    half = n // 2
    grid[n - half:] = -grid[:half][::-1]
    if n % 2:
        grid[half] = 0.0
    return grid


def generate_pose_ring(
    center: Sequence[float], n_views: int, yaw_range_deg: float, pitch_range_deg: float = 0.0
) -> list[Pose]:
    """Outward-looking poses at ``center`` on a regular yaw/pitch lattice.

    The lattice spans ``[-yaw_range, +yaw_range]`` (and likewise for pitch,
    three rows when pitch is non-zero) with an odd number of columns so that
    the identity orientation is always present.  Poses are returned ordered by
    angular distance from the identity, ties by yaw then pitch, so the first
    pose is always the identity orientation.
    """
    if n_views < 1:
        raise DomainError("n_views must be >= 1")
    pitches = _symmetric_grid(abs(pitch_range_deg), 3)
    n_yaw = math.ceil(n_views / len(pitches))
    n_yaw += 1 - n_yaw % 2
    yaws = _symmetric_grid(abs(yaw_range_deg), n_yaw)
    if len(yaws) * len(pitches) < n_views:
        raise DomainError(f"a zero angular range cannot hold {n_views} distinct poses")
    lattice = []
    for yaw in yaws:
        for pitch in pitches:
            axis = rotation_yaw_pitch(yaw, pitch)[:, 2]
            angle = math.degrees(math.acos(min(1.0, max(-1.0, axis[2]))))
            lattice.append((round(angle, 9), yaw != 0 or pitch != 0, yaw, pitch))
    lattice.sort()
    return [Pose.from_yaw_pitch(y, p, center) for _, _, y, p in lattice[:n_views]]


def interleaved_poses(center: Sequence[float], n_train: int, yaw_range_deg: float, n_eval: int) -> list[Pose]:
    """Held-out poses at yaw midpoints of the training lattice, nearest the identity first."""
    n_yaw = n_train + 1 - n_train % 2
    yaws = _symmetric_grid(abs(yaw_range_deg), n_yaw)
    mids = sorted(((y0 + y1) / 2 for y0, y1 in zip(yaws[:-1], yaws[1:])), key=lambda y: (abs(y), y))
    if n_eval > len(mids):
        raise DomainError(f"only {len(mids)} interleaved poses exist")
    return [Pose.from_yaw_pitch(y, 0.0, center) for y in mids[:n_eval]]
