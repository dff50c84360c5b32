"""Dense voxel radiance field and its differentiable volume renderer.

The renderer is the standard emission-absorption quadrature::

    alpha_i = 1 - exp(-sigma_i * delta_i)
    T_i     = prod_{j<i} (1 - alpha_j)
    w_i     = T_i * alpha_i
    C       = sum_i w_i c_i + T_N * background
    D       = sum_i w_i t_i

with ``delta_i = t_{i+1} - t_i`` and ``delta_last = t_far - t_last``.  The
backward pass is the exact reverse-mode derivative of that discrete sum,
including softplus/sigmoid activations and trilinear interpolation weights.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import _accel
from ._accel import njit
from .errors import DomainError, StateError
from .geometry import CameraIntrinsics, Pose, Ray, pixel_directions

DEFAULT_SAMPLES = 64


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


@dataclass(eq=False)
class VoxelRadianceField:
    """Pre-activation density (Dx, Dy, Dz) and color (Dx, Dy, Dz, 3) grids over a box.

    Grid node ``(i, j, k)`` sits at ``bbox_min + (i, j, k) / (D - 1) * extent``.
    """

    density_grid: np.ndarray
    color_grid: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray

    def __post_init__(self):
        self.density_grid = np.ascontiguousarray(self.density_grid, dtype=np.float64)
        self.color_grid = np.ascontiguousarray(self.color_grid, dtype=np.float64)
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64).reshape(3)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64).reshape(3)
        d = self.density_grid.shape
        if len(d) != 3 or min(d) < 2:
            raise DomainError(f"density grid must be 3-D with every dim >= 2, got {d}")
        if self.color_grid.shape != d + (3,):
            raise DomainError(f"color grid shape {self.color_grid.shape} does not match {d}")
        if not np.all(self.bbox_min < self.bbox_max):
            raise DomainError("bbox_min must be < bbox_max componentwise")

    @classmethod
    def constant(cls, resolution, bbox_min, bbox_max, density: float = 0.0, color=0.0) -> "VoxelRadianceField":
        res = (resolution,) * 3 if np.isscalar(resolution) else tuple(resolution)
        c = np.broadcast_to(np.asarray(color, dtype=np.float64), (3,))
        return cls(np.full(res, float(density)), np.broadcast_to(c, res + (3,)).copy(), bbox_min, bbox_max)

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.density_grid.shape

    @property
    def n_params(self) -> int:
        return self.density_grid.size + self.color_grid.size

    def copy(self) -> "VoxelRadianceField":
        return VoxelRadianceField(
            self.density_grid.copy(), self.color_grid.copy(), self.bbox_min.copy(), self.bbox_max.copy()
        )

    def packed(self) -> np.ndarray:
        """Density and color stacked into one (Dx, Dy, Dz, 4) array for the kernels."""
        return np.ascontiguousarray(np.concatenate([self.density_grid[..., None], self.color_grid], axis=-1))

    def node_position(self, index) -> np.ndarray:
        d = np.array(self.resolution) - 1
        return self.bbox_min + np.asarray(index) / d * (self.bbox_max - self.bbox_min)

    def diagonal(self) -> float:
        return float(np.linalg.norm(self.bbox_max - self.bbox_min))


# ---------------------------------------------------------------------------
# trilinear lookup


def _grid_coords(points, bmin, bmax, res):
    """Continuous grid coordinates, lower corner indices and fractions (numpy path)."""
    res = np.asarray(res)
    g = (points - bmin) / (bmax - bmin) * (res - 1)
    inside = np.all((points >= bmin) & (points <= bmax), axis=-1)
    i0 = np.clip(np.floor(g), 0, res - 2).astype(np.int64)
    f = g - i0
    return inside, i0, f


def _trilerp_np(grid, i0, f):
    """Trilinear blend of ``grid`` (Dx, Dy, Dz, C) at corner indices ``i0`` / fractions ``f``."""
    out = 0.0
    for dx in (0, 1):
        wx = f[..., 0] if dx else 1.0 - f[..., 0]
        for dy in (0, 1):
            wy = f[..., 1] if dy else 1.0 - f[..., 1]
            for dz in (0, 1):
                wz = f[..., 2] if dz else 1.0 - f[..., 2]
                val = grid[i0[..., 0] + dx, i0[..., 1] + dy, i0[..., 2] + dz]
                out = out + (wx * wy * wz)[..., None] * val
    return out


def sample_points(fld: VoxelRadianceField, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised activated (sigma, color) at points of shape (..., 3)."""
    points = np.asarray(points, dtype=np.float64)
    inside, i0, f = _grid_coords(points, fld.bbox_min, fld.bbox_max, fld.resolution)
    pre = _trilerp_np(fld.packed(), i0, f)
    sigma = np.where(inside, softplus(pre[..., 0]), 0.0)
    color = np.where(inside[..., None], sigmoid(pre[..., 1:]), 0.0)
    return sigma, color


def sample_field(fld: VoxelRadianceField, point) -> tuple[float, np.ndarray]:
    """Activated density and color at one point; (0, 0) outside the box."""
    sigma, color = sample_points(fld, np.asarray(point, dtype=np.float64).reshape(1, 3))
    return float(sigma[0]), color[0]


# ---------------------------------------------------------------------------
# sample placement


def sample_t_values(t_near, t_far, n_rays: int, n_samples: int, stratified: bool = False, rng=None):
    """Midpoints (or jittered positions) of ``n_samples`` equal bins per ray."""
    if n_samples < 2:
        raise DomainError("n_samples must be >= 2")
    t_near = np.broadcast_to(np.asarray(t_near, dtype=np.float64), (n_rays,))
    t_far = np.broadcast_to(np.asarray(t_far, dtype=np.float64), (n_rays,))
    if stratified:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        offs = rng.random((n_rays, n_samples))
    else:
        offs = np.full((n_rays, n_samples), 0.5)
    width = (t_far - t_near) / n_samples
    return t_near[:, None] + (np.arange(n_samples) + offs) * width[:, None]


def sample_deltas(t_values, t_far):
    t_far = np.broadcast_to(np.asarray(t_far, dtype=np.float64), t_values.shape[:1])
    return np.concatenate([np.diff(t_values, axis=1), (t_far - t_values[:, -1])[:, None]], axis=1)


# ---------------------------------------------------------------------------
# kernels


@njit
def _forward_nb(grid, bmin, bmax, origins, dirs, t_vals, deltas, bg):
    n_rays, n_s = t_vals.shape
    dx, dy, dz = grid.shape[0], grid.shape[1], grid.shape[2]
    sig = np.zeros((n_rays, n_s))
    rgb = np.zeros((n_rays, n_s, 3))
    alpha = np.zeros((n_rays, n_s))
    trans = np.ones((n_rays, n_s + 1))
    weights = np.zeros((n_rays, n_s))
    inside = np.zeros((n_rays, n_s), dtype=np.bool_)
    out_rgb = np.zeros((n_rays, 3))
    out_depth = np.zeros(n_rays)
    sx = (dx - 1) / (bmax[0] - bmin[0])
    sy = (dy - 1) / (bmax[1] - bmin[1])
    sz = (dz - 1) / (bmax[2] - bmin[2])
    for r in range(n_rays):
        t_cur = 1.0
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        accd = 0.0
        for i in range(n_s):
            t = t_vals[r, i]
            px = origins[r, 0] + t * dirs[r, 0]
            py = origins[r, 1] + t * dirs[r, 1]
            pz = origins[r, 2] + t * dirs[r, 2]
            s = 0.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            if (bmin[0] <= px <= bmax[0]) and (bmin[1] <= py <= bmax[1]) and (bmin[2] <= pz <= bmax[2]):
                inside[r, i] = True
                gx = (px - bmin[0]) * sx
                gy = (py - bmin[1]) * sy
                gz = (pz - bmin[2]) * sz
                ix = min(max(int(math.floor(gx)), 0), dx - 2)
                iy = min(max(int(math.floor(gy)), 0), dy - 2)
                iz = min(max(int(math.floor(gz)), 0), dz - 2)
                fx = gx - ix
                fy = gy - iy
                fz = gz - iz
                a = 0.0
                b0 = 0.0
                b1 = 0.0
                b2 = 0.0
                for cx in range(2):
                    wx = fx if cx else 1.0 - fx
                    for cy in range(2):
                        wy = fy if cy else 1.0 - fy
                        for cz in range(2):
                            wz = fz if cz else 1.0 - fz
                            wgt = wx * wy * wz
                            a += wgt * grid[ix + cx, iy + cy, iz + cz, 0]
                            b0 += wgt * grid[ix + cx, iy + cy, iz + cz, 1]
                            b1 += wgt * grid[ix + cx, iy + cy, iz + cz, 2]
                            b2 += wgt * grid[ix + cx, iy + cy, iz + cz, 3]
                s = max(a, 0.0) + math.log1p(math.exp(-abs(a)))
                c0 = 1.0 / (1.0 + math.exp(-b0))
                c1 = 1.0 / (1.0 + math.exp(-b1))
                c2 = 1.0 / (1.0 + math.exp(-b2))
            al = -math.expm1(-s * deltas[r, i])
            w = t_cur * al
            sig[r, i] = s
            rgb[r, i, 0] = c0
            rgb[r, i, 1] = c1
            rgb[r, i, 2] = c2
            alpha[r, i] = al
            weights[r, i] = w
            acc0 += w * c0
            acc1 += w * c1
            acc2 += w * c2
            accd += w * t
            t_cur = t_cur * (1.0 - al)
            trans[r, i + 1] = t_cur
        out_rgb[r, 0] = acc0 + t_cur * bg[0]
        out_rgb[r, 1] = acc1 + t_cur * bg[1]
        out_rgb[r, 2] = acc2 + t_cur * bg[2]
        out_depth[r] = accd
    return sig, rgb, alpha, trans, weights, inside, out_rgb, out_depth


def _forward_np(grid, bmin, bmax, origins, dirs, t_vals, deltas, bg):
    n_rays, n_s = t_vals.shape
    pts = origins[:, None, :] + t_vals[..., None] * dirs[:, None, :]
    inside, i0, f = _grid_coords(pts, bmin, bmax, grid.shape[:3])
    pre = _trilerp_np(grid, i0, f)
    sig = np.where(inside, softplus(pre[..., 0]), 0.0)
    rgb = np.where(inside[..., None], sigmoid(pre[..., 1:]), 0.0)
    alpha = -np.expm1(-sig * deltas)
    trans = np.ones((n_rays, n_s + 1))
    trans[:, 1:] = np.cumprod(1.0 - alpha, axis=1)
    weights = trans[:, :-1] * alpha
    out_rgb = np.einsum("rs,rsc->rc", weights, rgb) + trans[:, -1:] * bg
    out_depth = np.einsum("rs,rs->r", weights, t_vals)
    return sig, rgb, alpha, trans, weights, inside, out_rgb, out_depth


@njit
def _backward_nb(t_vals, deltas, sig, rgb, trans, weights, inside, g_rgb, g_depth, g_trans, bg):
    n_rays, n_s = t_vals.shape
    g_sig = np.zeros((n_rays, n_s))
    g_col = np.zeros((n_rays, n_s, 3))
    for r in range(n_rays):
        t_last = trans[r, n_s]
        tail = t_last * (g_rgb[r, 0] * bg[0] + g_rgb[r, 1] * bg[1] + g_rgb[r, 2] * bg[2])
        suffix = 0.0
        for k in range(n_s - 1, -1, -1):
            v = (
                g_rgb[r, 0] * rgb[r, k, 0]
                + g_rgb[r, 1] * rgb[r, k, 1]
                + g_rgb[r, 2] * rgb[r, k, 2]
                + g_depth[r] * t_vals[r, k]
            )
            d_tau = trans[r, k + 1] * v - suffix - tail
            suffix += weights[r, k] * v
            tail += g_trans[r, k] * trans[r, k]
            if inside[r, k]:
                g_sig[r, k] = d_tau * deltas[r, k] * (-math.expm1(-sig[r, k]))
                w = weights[r, k]
                for c in range(3):
                    cc = rgb[r, k, c]
                    g_col[r, k, c] = g_rgb[r, c] * w * cc * (1.0 - cc)
    return g_sig, g_col


def _backward_np(t_vals, deltas, sig, rgb, trans, weights, inside, g_rgb, g_depth, g_trans, bg):
    v = np.einsum("rc,rsc->rs", g_rgb, rgb) + g_depth[:, None] * t_vals
    wv = weights * v
    # suffix sums over i > k
    after = np.cumsum(wv[:, ::-1], axis=1)[:, ::-1] - wv
    gt = g_trans * trans[:, :-1]
    gt_after = np.cumsum(gt[:, ::-1], axis=1)[:, ::-1] - gt
    tail = trans[:, -1] * (g_rgb @ bg)
    d_tau = trans[:, 1:] * v - after - tail[:, None] - gt_after
    g_sig = np.where(inside, d_tau * deltas * (-np.expm1(-sig)), 0.0)
    g_col = np.where(inside[..., None], g_rgb[:, None, :] * weights[..., None] * rgb * (1.0 - rgb), 0.0)
    return g_sig, g_col


@njit
def _scatter_nb(grad, bmin, bmax, origins, dirs, t_vals, inside, g_sig, g_col):
    n_rays, n_s = t_vals.shape
    dx, dy, dz = grad.shape[0], grad.shape[1], grad.shape[2]
    sx = (dx - 1) / (bmax[0] - bmin[0])
    sy = (dy - 1) / (bmax[1] - bmin[1])
    sz = (dz - 1) / (bmax[2] - bmin[2])
    for r in range(n_rays):
        for i in range(n_s):
            if not inside[r, i]:
                continue
            t = t_vals[r, i]
            gx = (origins[r, 0] + t * dirs[r, 0] - bmin[0]) * sx
            gy = (origins[r, 1] + t * dirs[r, 1] - bmin[1]) * sy
            gz = (origins[r, 2] + t * dirs[r, 2] - bmin[2]) * sz
            ix = min(max(int(math.floor(gx)), 0), dx - 2)
            iy = min(max(int(math.floor(gy)), 0), dy - 2)
            iz = min(max(int(math.floor(gz)), 0), dz - 2)
            fx = gx - ix
            fy = gy - iy
            fz = gz - iz
            for cx in range(2):
                wx = fx if cx else 1.0 - fx
                for cy in range(2):
                    wy = fy if cy else 1.0 - fy
                    for cz in range(2):
                        wz = fz if cz else 1.0 - fz
                        wgt = wx * wy * wz
                        grad[ix + cx, iy + cy, iz + cz, 0] += wgt * g_sig[r, i]
                        grad[ix + cx, iy + cy, iz + cz, 1] += wgt * g_col[r, i, 0]
                        grad[ix + cx, iy + cy, iz + cz, 2] += wgt * g_col[r, i, 1]
                        grad[ix + cx, iy + cy, iz + cz, 3] += wgt * g_col[r, i, 2]


def _scatter_np(grad, bmin, bmax, origins, dirs, t_vals, inside, g_sig, g_col):
    pts = origins[:, None, :] + t_vals[..., None] * dirs[:, None, :]
    _, i0, f = _grid_coords(pts, bmin, bmax, grad.shape[:3])
    i0, f = i0[inside], f[inside]
    vals = np.concatenate([g_sig[inside][:, None], g_col[inside]], axis=1)
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                idx = (i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz)
                np.add.at(grad, idx, (wx * wy * wz)[:, None] * vals)


def _kernels():
    if _accel.USE_NUMBA:
        return _forward_nb, _backward_nb, _scatter_nb
    return _forward_np, _backward_np, _scatter_np


# ---------------------------------------------------------------------------
# public rendering API


@dataclass
class RaySampleSet:
    """Per-sample quantities of a batch of rays, shape (R, S) or (R, S, 3).

    ``transmittances`` has S + 1 columns: column ``i`` is T_i before sample
    ``i`` and the last column is the final transmittance T_N.
    """

    origins: np.ndarray
    directions: np.ndarray
    t_values: np.ndarray
    deltas: np.ndarray
    sigmas: np.ndarray
    colors: np.ndarray
    alphas: np.ndarray
    transmittances: np.ndarray
    weights: np.ndarray
    inside: np.ndarray

    @property
    def n_rays(self) -> int:
        return self.t_values.shape[0]

    def ray(self, index: int) -> "RaySampleSet":
        s = slice(index, index + 1)
        return RaySampleSet(*(getattr(self, f)[s] for f in self.__dataclass_fields__))


@dataclass
class RenderResult:
    """Rendered color (R, 3), ray-distance depth (R,) and final transmittance (R,)."""

    color: np.ndarray
    depth: np.ndarray
    final_transmittance: np.ndarray
    background: np.ndarray
    samples: RaySampleSet | None = dc_field(default=None, repr=False)


def march_rays(
    fld: VoxelRadianceField,
    origins,
    directions,
    t_near,
    t_far,
    n_samples: int = DEFAULT_SAMPLES,
    stratified: bool = False,
    rng=None,
    background=(0.0, 0.0, 0.0),
) -> RenderResult:
    """Render a batch of rays, keeping every per-sample quantity."""
    origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
    directions = np.ascontiguousarray(np.atleast_2d(directions), dtype=np.float64)
    n = origins.shape[0]
    t_vals = sample_t_values(t_near, t_far, n, n_samples, stratified, rng)
    deltas = sample_deltas(t_vals, t_far)
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    forward, _, _ = _kernels()
    sig, rgb, alpha, trans, weights, inside, out_rgb, out_depth = forward(
        fld.packed(), fld.bbox_min, fld.bbox_max, origins, directions, t_vals, deltas, bg
    )
    samples = RaySampleSet(origins, directions, t_vals, deltas, sig, rgb, alpha, trans, weights, inside)
    return RenderResult(out_rgb, out_depth, trans[:, -1].copy(), bg, samples)


def march_ray(fld: VoxelRadianceField, ray: Ray, n_samples: int = DEFAULT_SAMPLES,
              stratified: bool = False, rng_seed=None) -> RaySampleSet:
    return march_rays(fld, ray.origin, ray.direction, ray.t_near, ray.t_far,
                      n_samples, stratified, rng_seed).samples


def render_ray(fld: VoxelRadianceField, ray: Ray, n_samples: int = DEFAULT_SAMPLES,
               background=(0.0, 0.0, 0.0), stratified: bool = False, rng_seed=None) -> RenderResult:
    """Render one ray; result arrays keep a leading axis of length 1."""
    return march_rays(fld, ray.origin, ray.direction, ray.t_near, ray.t_far,
                      n_samples, stratified, rng_seed, background)


def render_rays_backward(
    fld: VoxelRadianceField,
    result: RenderResult,
    grad_color=None,
    grad_depth=None,
    grad_transmittance=None,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Accumulate d(loss)/d(pre-activation grids) for a rendered ray batch.

    Args:
        result: forward output with retained samples.
        grad_color: upstream gradient on colors, (R, 3).
        grad_depth: upstream gradient on depths, (R,).
        grad_transmittance: upstream gradient on the per-sample T_i, (R, S).
        out: optional (Dx, Dy, Dz, 4) buffer (density then rgb) to add into.

    Returns:
        The packed gradient buffer.
    """
    s = result.samples
    if s is None:
        raise StateError("render result has no retained samples")
    n, n_s = s.t_values.shape
    g_rgb = np.zeros((n, 3)) if grad_color is None else np.ascontiguousarray(grad_color, dtype=np.float64).reshape(n, 3)
    g_depth = np.zeros(n) if grad_depth is None else np.ascontiguousarray(grad_depth, dtype=np.float64).reshape(n)
    g_trans = (np.zeros((n, n_s)) if grad_transmittance is None
               else np.ascontiguousarray(grad_transmittance, dtype=np.float64).reshape(n, n_s))
    if out is None:
        out = np.zeros(fld.resolution + (4,))
    _, backward, scatter = _kernels()
    g_sig, g_col = backward(s.t_values, s.deltas, s.sigmas, s.colors, s.transmittances, s.weights,
                            s.inside, g_rgb, g_depth, g_trans, result.background)
    scatter(out, fld.bbox_min, fld.bbox_max, s.origins, s.directions, s.t_values, s.inside, g_sig, g_col)
    return out


def render_ray_backward(fld: VoxelRadianceField, result: RenderResult, grad_color=None,
                        grad_depth=None, grad_transmittance=None) -> tuple[np.ndarray, np.ndarray]:
    """Gradients on (density_grid, color_grid) for a single rendered ray."""
    g = render_rays_backward(fld, result, grad_color, grad_depth, grad_transmittance)
    return g[..., 0].copy(), g[..., 1:].copy()


def render_image(
    fld: VoxelRadianceField,
    pose: Pose,
    intrinsics: CameraIntrinsics,
    n_samples: int = DEFAULT_SAMPLES,
    background=(0.0, 0.0, 0.0),
    t_near: float = 0.0,
    t_far: float | None = None,
    chunk: int = 8192,
):
    """Render every pixel center; returns (image, ray-distance depth, final transmittance)."""
    if t_far is None:
        t_far = fld.diagonal()
    h, w = intrinsics.shape
    dirs = pixel_directions(intrinsics, pose).reshape(-1, 3)
    origins = np.broadcast_to(pose.center, dirs.shape)
    img = np.empty((h * w, 3))
    depth = np.empty(h * w)
    trans = np.empty(h * w)
    for start in range(0, h * w, chunk):
        sl = slice(start, start + chunk)
        res = march_rays(fld, origins[sl], dirs[sl], t_near, t_far, n_samples, False, None, background)
        img[sl], depth[sl], trans[sl] = res.color, res.depth, res.final_transmittance
    return img.reshape(h, w, 3), depth.reshape(h, w), trans.reshape(h, w)


# ---------------------------------------------------------------------------
# checkpoint I/O  (layout documented in docs/FORMATS.md)

FIELD_MAGIC = b"S123FLD\x00"
FIELD_VERSION = 1
_FIELD_HEADER = struct.Struct("<8sI3I6d")


def field_to_bytes(fld: VoxelRadianceField) -> bytes:
    dx, dy, dz = fld.resolution
    header = _FIELD_HEADER.pack(FIELD_MAGIC, FIELD_VERSION, dx, dy, dz, *fld.bbox_min, *fld.bbox_max)
    # x-fastest: transpose so that C-order raveling walks x first
    dens = np.ascontiguousarray(fld.density_grid.transpose(2, 1, 0)).astype("<f4")
    col = np.ascontiguousarray(fld.color_grid.transpose(3, 2, 1, 0)).astype("<f4")
    return header + dens.tobytes() + col.tobytes()


def field_from_bytes(data: bytes) -> VoxelRadianceField:
    if len(data) < _FIELD_HEADER.size:
        raise DomainError("field checkpoint truncated")
    magic, version, dx, dy, dz, *bbox = _FIELD_HEADER.unpack_from(data)
    if magic != FIELD_MAGIC:
        raise DomainError("not a field checkpoint")
    if version != FIELD_VERSION:
        raise DomainError(f"unsupported field checkpoint version {version}")
    n = dx * dy * dz
    body = np.frombuffer(data, dtype="<f4", offset=_FIELD_HEADER.size)
    if body.size != 4 * n:
        raise DomainError("field checkpoint size does not match its header")
    dens = body[:n].reshape(dz, dy, dx).transpose(2, 1, 0)
    col = body[n:].reshape(3, dz, dy, dx).transpose(3, 2, 1, 0)
    return VoxelRadianceField(dens.astype(np.float64), col.astype(np.float64), bbox[:3], bbox[3:])


def save_field(fld: VoxelRadianceField, path) -> None:
    Path(path).write_bytes(field_to_bytes(fld))


def load_field(path) -> VoxelRadianceField:
    return field_from_bytes(Path(path).read_bytes())
