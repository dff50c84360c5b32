"""Procedural ground-truth scenes: colored boxes and spheres inside a room shell.

A scene is rasterised once into a :class:`VoxelRadianceField`; its renderer
below is a separate, deliberately plain numpy implementation used as the
oracle for completion and for checking the field renderer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .errors import DomainError, StateError
from .field import VoxelRadianceField, sample_points
from .geometry import CameraIntrinsics, Pose, ViewRecord, pixel_directions, z_to_ray_distance

EMPTY_DENSITY = -12.0  # softplus(-12) ~ 6e-6
SOLID_DENSITY = 30.0
_COLOR_CLIP = 1e-4


@dataclass(frozen=True)
class Primitive:
    kind: str  # "box" | "sphere" | "shell"
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # half extents; for spheres size[0] is the radius
    color: tuple[float, float, float]
    checker: float = 0.0  # checker period in scene units; 0 disables the pattern

    def signed_distance(self, p: np.ndarray) -> np.ndarray:
        q = p - np.asarray(self.center)
        if self.kind == "sphere":
            return np.linalg.norm(q, axis=-1) - self.size[0]
        d = np.abs(q) - np.asarray(self.size)
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
        box = outside + np.minimum(d.max(axis=-1), 0.0)
        if self.kind == "box":
            return box
        if self.kind == "shell":
            # solid everywhere outside the inner box: negative of the inner-box distance
            return -box
        raise DomainError(f"unknown primitive kind {self.kind!r}")

    def color_at(self, p: np.ndarray) -> np.ndarray:
        base = np.broadcast_to(np.asarray(self.color, dtype=np.float64), p.shape)
        if self.checker <= 0:
            return base
        parity = np.floor(p / self.checker).astype(np.int64).sum(axis=-1) % 2
        return base * np.where(parity == 0, 1.0, 0.6)[..., None]


@dataclass(frozen=True)
class SceneSpec:
    """Either explicit ``primitives`` or counts for seeded random placement."""

    primitives: tuple = ()
    n_boxes: int = 3
    n_spheres: int = 2
    room: bool = True
    resolution: int = 32
    bbox_min: tuple = (-1.0, -1.0, -1.0)
    bbox_max: tuple = (1.0, 1.0, 1.0)
    wall_thickness: float = 0.2


@dataclass(eq=False)
class SyntheticScene:
    field: VoxelRadianceField
    primitives: tuple
    seed: int
    spec: SceneSpec
    intrinsics: CameraIntrinsics = dc_field(default_factory=lambda: CameraIntrinsics.from_fov(64, 64, 60.0))
    t_near: float = 0.05

    @property
    def t_far(self) -> float:
        return default_t_far(self.field)

    def render(self, pose: Pose, intrinsics: CameraIntrinsics | None = None, n_samples: int = 256,
               background=(0.0, 0.0, 0.0)):
        """Reference midpoint-quadrature render; returns (image, ray depth, final T)."""
        K = intrinsics or self.intrinsics
        dirs = pixel_directions(K, pose)
        edges = np.linspace(self.t_near, self.t_far, n_samples + 1)
        t = 0.5 * (edges[:-1] + edges[1:])
        delta = np.append(np.diff(t), self.t_far - t[-1])
        img = np.zeros(K.shape + (3,))
        depth = np.zeros(K.shape)
        final = np.zeros(K.shape)
        bg = np.asarray(background, dtype=np.float64)
        for row in range(K.height):
            pts = pose.center + t[None, :, None] * dirs[row][:, None, :]
            sigma, color = sample_points(self.field, pts)
            optical = sigma * delta
            acc = np.concatenate([np.zeros((K.width, 1)), np.cumsum(optical, axis=1)], axis=1)
            trans = np.exp(-acc)
            w = trans[:, :-1] - trans[:, 1:]
            img[row] = (w[..., None] * color).sum(axis=1) + trans[:, -1:] * bg
            depth[row] = (w * t).sum(axis=1)
            final[row] = trans[:, -1]
        return img, depth, final

    def render_view(self, pose: Pose, intrinsics: CameraIntrinsics | None = None, n_samples: int = 256) -> ViewRecord:
        """Fully valid ground-truth record with camera-z depth."""
        K = intrinsics or self.intrinsics
        img, ray_depth, final = self.render(pose, K, n_samples)
        hit = np.maximum(1.0 - final, 1e-6)
        z = (ray_depth / hit) / z_to_ray_distance(K)
        z = np.clip(z, self.t_near, None)
        return ViewRecord(np.clip(img, 0.0, 1.0), z, np.ones(K.shape, dtype=bool), pose, K)


def default_t_far(fld: VoxelRadianceField) -> float:
    """Half the box diagonal: reaches every corner from a camera at the box center."""
    return 0.5 * fld.diagonal()


def _random_primitives(rng: np.random.Generator, spec: SceneSpec) -> list[Primitive]:
    prims = []
    kinds = ["box"] * spec.n_boxes + ["sphere"] * spec.n_spheres
    for i, kind in enumerate(kinds):
        yaw = math.radians(-70 + 140 * (i + rng.uniform(0.2, 0.8)) / max(len(kinds), 1))
        pitch = math.radians(rng.uniform(-15, 15))
        dist = rng.uniform(0.5, 0.7)
        center = (
            dist * math.sin(yaw) * math.cos(pitch),
            -dist * math.sin(pitch),
            dist * math.cos(yaw) * math.cos(pitch),
        )
        size = tuple(rng.uniform(0.08, 0.18, 3)) if kind == "box" else (rng.uniform(0.1, 0.18),) * 3
        hue = rng.uniform(0, 1)
        color = tuple(0.15 + 0.8 * (0.5 + 0.5 * np.cos(2 * np.pi * (hue + np.array([0, 1 / 3, 2 / 3])))))
        prims.append(Primitive(kind, center, size, color))
    return prims


def _room(spec: SceneSpec, rng: np.random.Generator) -> Primitive:
    half = (np.asarray(spec.bbox_max) - np.asarray(spec.bbox_min)) / 2 - spec.wall_thickness
    center = (np.asarray(spec.bbox_max) + np.asarray(spec.bbox_min)) / 2
    color = tuple(rng.uniform(0.45, 0.85, 3))
    return Primitive("shell", tuple(center), tuple(half), color, checker=0.25)


def make_synthetic_scene(seed: int = 0, spec: SceneSpec | None = None) -> SyntheticScene:
    """Rasterise a seeded scene into a ground-truth voxel field.

    Occupancy is anti-aliased over one voxel from the primitives' signed
    distances.  Each node takes the color of the closest primitive, so colors
    do not bleed toward black at surfaces.
    """
    spec = spec or SceneSpec()
    rng = np.random.default_rng(seed)
    prims = list(spec.primitives) if spec.primitives else _random_primitives(rng, spec)
    if spec.room:
        prims.append(_room(spec, rng))
    if not prims:
        raise DomainError("scene spec contains no primitives")

    res = spec.resolution
    bmin, bmax = np.asarray(spec.bbox_min, float), np.asarray(spec.bbox_max, float)
    axes = [np.linspace(bmin[a], bmax[a], res) for a in range(3)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    voxel = float(np.min((bmax - bmin) / (res - 1)))

    dists = np.stack([p.signed_distance(nodes) for p in prims])
    nearest = np.argmin(dists, axis=0)
    coverage = np.clip(0.5 - dists.min(axis=0) / voxel, 0.0, 1.0)
    density = EMPTY_DENSITY + coverage * (SOLID_DENSITY - EMPTY_DENSITY)
    color = np.zeros(nodes.shape)
    for k, p in enumerate(prims):
        sel = nearest == k
        color[sel] = p.color_at(nodes[sel])
    c = np.clip(color, _COLOR_CLIP, 1 - _COLOR_CLIP)
    color_pre = np.log(c) - np.log1p(-c)
    fld = VoxelRadianceField(density, color_pre, bmin, bmax)
    return SyntheticScene(fld, tuple(prims), seed, spec)


class SceneOracle:
    """Lookup of ground-truth renders for poses of registered synthetic scenes."""

    def __init__(self, scene: SyntheticScene | None = None, n_samples: int = 256):
        self._scene = scene
        self.n_samples = n_samples
        self._cache: dict = {}

    @property
    def scene(self) -> SyntheticScene:
        if self._scene is None:
            raise StateError("oracle has no scene registered")
        return self._scene

    def ground_truth(self, pose: Pose, intrinsics: CameraIntrinsics) -> ViewRecord:
        key = (pose.transform.tobytes(), intrinsics)
        if key not in self._cache:
            self._cache[key] = self.scene.render_view(pose, intrinsics, self.n_samples)
        return self._cache[key]
