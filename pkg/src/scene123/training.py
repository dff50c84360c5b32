"""Losses, the patch discriminator and the radiance-field optimisation loop."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError, OptimizationError
from .field import RaySampleSet, VoxelRadianceField, march_rays, render_image, render_rays_backward
from .geometry import ViewDatabase, pixel_directions, z_to_ray_distance
from .optim import Adam


@dataclass
class LossWeights:
    depth: float = 0.005
    transmittance: float = 0.001
    dist: float = 0.001

    def __post_init__(self):
        if min(self.depth, self.transmittance, self.dist) < 0:
            raise DomainError("loss weights must be non-negative")


@dataclass
class LossReport:
    rgb: float = 0.0
    depth: float = 0.0
    transmittance: float = 0.0
    dist: float = 0.0


def total_loss(parts: LossReport, weights: LossWeights) -> float:
    vals = (parts.rgb, parts.depth, parts.transmittance, parts.dist)
    if not all(math.isfinite(v) for v in vals):
        raise OptimizationError(f"non-finite loss term in {parts}")
    return parts.rgb + weights.depth * parts.depth + weights.transmittance * parts.transmittance + weights.dist * parts.dist


def _masked_mse(a, b, mask):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch {a.shape} vs {b.shape}")
    mask = np.ones(a.shape[:2] if a.ndim == 3 else a.shape, dtype=bool) if mask is None else np.asarray(mask, bool)
    if not mask.any():
        raise DataError("loss mask is empty")
    return float(np.mean((a[mask] - b[mask]) ** 2))


def rgb_loss(rendered, target, mask=None) -> float:
    """Mean squared error over the masked pixels (and all channels)."""
    return _masked_mse(rendered, target, mask)


def depth_loss(rendered_depth, aligned_depth, mask=None) -> float:
    return _masked_mse(rendered_depth, aligned_depth, mask)


@dataclass
class TransmittanceMask:
    """Per-ray expected termination distance and which side of it is penalised.

    ``literal`` penalises T before the expected depth, ``corrected`` after it.
    """

    expected_depth: np.ndarray
    mode: str = "corrected"

    def __post_init__(self):
        self.expected_depth = np.atleast_1d(np.asarray(self.expected_depth, dtype=np.float64))
        if np.any(self.expected_depth <= 0):
            raise DomainError("expected depth must be positive")
        if self.mode not in ("literal", "corrected"):
            raise DomainError(f"unknown transmittance mode {self.mode!r}")

    def indicator(self, t_values: np.ndarray) -> np.ndarray:
        z = self.expected_depth[:, None]
        return (t_values < z) if self.mode == "literal" else (t_values > z)


def transmittance_loss(samples: RaySampleSet, mask_spec: TransmittanceMask, with_grad: bool = False):
    """Mean over rays of the L2 norm of ``T_i * m(t_i)``.

    With ``with_grad`` also returns d(loss)/d(T_i), shape (R, S).
    """
    trans = samples.transmittances[:, :-1]
    m = mask_spec.indicator(samples.t_values)
    masked = trans * m
    norms = np.sqrt((masked**2).sum(axis=1))
    loss = float(norms.mean())
    if not with_grad:
        return loss
    safe = np.where(norms > 0, norms, 1.0)
    grad = np.where(norms[:, None] > 0, masked / safe[:, None], 0.0) / trans.shape[0]
    return loss, grad


# ---------------------------------------------------------------------------
# discriminator


def _lrelu(x, slope):
    return np.where(x > 0, x, slope * x)


@dataclass
class Discriminator:
    """MLP on flattened 32x32x3 crops: 3072 -> 256 -> 64 -> 1 with leaky ReLU."""

    params: dict
    r1_gamma: float = 10.0
    slope: float = 0.2
    crop_size: int = 32
    optimizer: Adam | None = field(default=None, repr=False)

    @classmethod
    def init(cls, seed: int = 0, crop_size: int = 32, hidden=(256, 64), r1_gamma: float = 10.0,
             zero_last: bool = True) -> "Discriminator":
        rng = np.random.default_rng(seed)
        n_in = crop_size * crop_size * 3
        h1, h2 = hidden
        params = {
            "w1": rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, h1)),
            "b1": np.zeros(h1),
            "w2": rng.normal(0.0, np.sqrt(2.0 / h1), (h1, h2)),
            "b2": np.zeros(h2),
            "w3": np.zeros((h2, 1)) if zero_last else rng.normal(0.0, np.sqrt(1.0 / h2), (h2, 1)),
            "b3": np.zeros(1),
        }
        return cls(params, r1_gamma, crop_size=crop_size)

    def _prep(self, crops):
        x = np.asarray(crops, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != (self.crop_size, self.crop_size, 3):
            raise DomainError(f"discriminator expects {self.crop_size}x{self.crop_size}x3 crops, got {x.shape[1:]}")
        return 2.0 * x.reshape(x.shape[0], -1) - 1.0

    def _forward(self, x):
        p = self.params
        a1 = x @ p["w1"] + p["b1"]
        h1 = _lrelu(a1, self.slope)
        a2 = h1 @ p["w2"] + p["b2"]
        h2 = _lrelu(a2, self.slope)
        return (h2 @ p["w3"] + p["b3"])[:, 0], (x, a1, h1, a2, h2)

    def logits(self, crops) -> np.ndarray:
        return self._forward(self._prep(crops))[0]

    def _slopes(self, a):
        return np.where(a > 0, 1.0, self.slope)

    def _param_grads(self, cache, d_logit):
        p = self.params
        x, a1, h1, a2, h2 = cache
        g = {"w3": h2.T @ d_logit[:, None], "b3": np.array([d_logit.sum()])}
        d2 = (d_logit[:, None] @ p["w3"].T) * self._slopes(a2)
        g["w2"], g["b2"] = h1.T @ d2, d2.sum(axis=0)
        d1 = (d2 @ p["w2"].T) * self._slopes(a1)
        g["w1"], g["b1"] = x.T @ d1, d1.sum(axis=0)
        return g, d1

    def input_gradient(self, crops) -> np.ndarray:
        """d logit / d crop for every crop, same shape as ``crops`` (batched)."""
        x = self._prep(crops)
        _, cache = self._forward(x)
        _, d1 = self._param_grads(cache, np.ones(x.shape[0]))
        return (2.0 * d1 @ self.params["w1"].T).reshape((x.shape[0],) + (self.crop_size, self.crop_size, 3))

    def r1_penalty(self, crops, with_grad: bool = False):
        """``gamma / 2 * mean ||d logit / d crop||^2`` and optionally its parameter gradients.

        Leaky-ReLU slopes are piecewise constant, so the second-order terms
        reduce to products of the layer matrices.
        """
        p = self.params
        x = self._prep(crops)
        _, (x, a1, h1, a2, h2) = self._forward(x)
        s1, s2 = self._slopes(a1), self._slopes(a2)
        v = s2 * p["w3"][:, 0]  # (B, 64)
        u = s1 * (v @ p["w2"].T)  # (B, 256)
        g = u @ p["w1"].T  # d logit / d (2x - 1)
        b = x.shape[0]
        pen = float(self.r1_gamma / 2.0 * 4.0 * np.mean((g**2).sum(axis=1)))
        if not with_grad:
            return pen
        big_g = 4.0 * self.r1_gamma * g / b
        grads = {k: np.zeros_like(val) for k, val in p.items()}
        grads["w1"] = big_g.T @ u
        d_u = big_g @ p["w1"]
        y = d_u * s1
        grads["w2"] = y.T @ v
        d_v = y @ p["w2"]
        grads["w3"] = (d_v * s2).sum(axis=0)[:, None]
        return pen, grads


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def discriminator_loss(disc: Discriminator, real_batch, fake_batch, with_grad: bool = False):
    real_x, fake_x = disc._prep(real_batch), disc._prep(fake_batch)
    lr_, cache_r = disc._forward(real_x)
    lf_, cache_f = disc._forward(fake_x)
    logistic = float(_softplus(-lr_).mean() + _softplus(lf_).mean())
    if not with_grad:
        return logistic + disc.r1_penalty(real_batch)
    g_r, _ = disc._param_grads(cache_r, -_sigmoid(-lr_) / len(lr_))
    g_f, _ = disc._param_grads(cache_f, _sigmoid(lf_) / len(lf_))
    pen, g_pen = disc.r1_penalty(real_batch, with_grad=True)
    grads = {k: g_r[k] + g_f[k] + g_pen[k] for k in g_r}
    return logistic + pen, grads


def discriminator_step(disc: Discriminator, real_batch, fake_batch, lr: float = 2e-3):
    """One Adam step on the logistic loss plus R1 on real crops; returns (loss, disc)."""
    if len(real_batch) == 0 or len(fake_batch) == 0:
        raise DataError("discriminator step needs non-empty real and fake batches")
    loss, grads = discriminator_loss(disc, real_batch, fake_batch, with_grad=True)
    if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise OptimizationError("non-finite discriminator loss")
    if disc.optimizer is None:
        disc.optimizer = Adam(disc.params, lr=lr, betas=(0.0, 0.99))
    disc.optimizer.step(grads)
    return loss, disc


def generator_adversarial_loss(disc: Discriminator, rendered_crops):
    """Non-saturating generator loss ``mean softplus(-D(crop))`` and d loss / d pixels."""
    crops = np.asarray(rendered_crops, dtype=np.float64)
    if crops.ndim == 3:
        crops = crops[None]
    logits = disc.logits(crops)
    loss = float(_softplus(-logits).mean())
    d_logit = -_sigmoid(-logits) / len(logits)
    grad = disc.input_gradient(crops) * d_logit[:, None, None, None]
    return loss, grad


def discriminator_accuracy(disc: Discriminator, real_batch, fake_batch) -> float:
    lr_, lf_ = disc.logits(real_batch), disc.logits(fake_batch)
    return float((np.sum(lr_ > 0) + np.sum(lf_ < 0)) / (len(lr_) + len(lf_)))


# ---------------------------------------------------------------------------
# support set


@dataclass
class SupportSet:
    images: list
    source: str = "files"

    def __post_init__(self):
        if not self.images:
            raise DataError("support set is empty")
        shape = np.shape(self.images[0])
        if any(np.shape(im) != shape for im in self.images):
            raise DataError("support images must share dimensions")

    @classmethod
    def from_directory(cls, directory) -> "SupportSet":
        from .io import read_png_directory

        return cls(read_png_directory(directory), "files")


def random_crop_origins(rng, shape, size, n):
    h, w = shape
    if h < size or w < size:
        raise DomainError(f"image {h}x{w} smaller than crop {size}")
    return [(int(rng.integers(h - size + 1)), int(rng.integers(w - size + 1))) for _ in range(n)]


def sample_crops(rng, images, size, n) -> np.ndarray:
    out = []
    for _ in range(n):
        im = images[rng.integers(len(images))]
        (y, x), = random_crop_origins(rng, im.shape[:2], size, 1)
        out.append(im[y:y + size, x:x + size])
    return np.stack(out)


# ---------------------------------------------------------------------------
# field optimisation


@dataclass
class TrainConfig:
    iters: int = 2000
    batch_rays: int = 4096
    n_samples: int = 64
    lr: float = 0.02
    betas: tuple = (0.9, 0.99)
    weights: LossWeights = field(default_factory=LossWeights)
    t_near: float = 0.05
    t_far: float = 1.7320508075688772
    background: tuple = (0.0, 0.0, 0.0)
    transmittance_mode: str = "corrected"
    disc_every: int = 10
    crops_per_render: int = 4
    crop_size: int = 32
    disc_lr: float = 2e-3
    log_every: int = 100
    seed: int = 0


def psnr(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return 99.0
    return float(min(99.0, 10.0 * math.log10(1.0 / mse)))


class _RayPool:
    """Every valid pixel of every record, flattened for uniform ray sampling."""

    def __init__(self, database: ViewDatabase):
        origins, dirs, colors, dists = [], [], [], []
        for rec in database.records:
            m = rec.mask
            d = pixel_directions(rec.intrinsics, rec.pose)[m]
            dirs.append(d)
            origins.append(np.broadcast_to(rec.pose.center, d.shape))
            colors.append(rec.image[m])
            dists.append((rec.depth * z_to_ray_distance(rec.intrinsics))[m])
        self.origins = np.ascontiguousarray(np.concatenate(origins))
        self.dirs = np.ascontiguousarray(np.concatenate(dirs))
        self.colors = np.concatenate(colors)
        self.dists = np.concatenate(dists)

    def __len__(self):
        return len(self.dirs)


class FieldTrainer:
    """Stateful optimiser for a field; keeps Adam moments and RNG across bursts."""

    def __init__(self, fld: VoxelRadianceField, config: TrainConfig, disc: Discriminator | None = None,
                 support: SupportSet | None = None):
        self.field = fld
        self.cfg = config
        self.disc = disc
        self.support = support
        self.rng = np.random.default_rng(config.seed)
        # separate stream so enabling the adversarial term leaves ray sampling unchanged
        self.adv_rng = np.random.default_rng([config.seed, 1])
        self.params = {"grid": fld.packed()}
        self.opt = Adam(self.params, lr=config.lr, betas=config.betas)
        self.iteration = 0
        self.log: list[dict] = []
        self.last_dist = 0.0
        self.last_disc = None

    def _sync_field(self):
        g = self.params["grid"]
        self.field.density_grid = np.ascontiguousarray(g[..., 0])
        self.field.color_grid = np.ascontiguousarray(g[..., 1:])

    def _adversarial(self, database: ViewDatabase, grad: np.ndarray) -> float:
        """Render crops at a random database pose, update D, add the generator gradient."""
        cfg = self.cfg
        rec = database.records[self.adv_rng.integers(len(database))]
        K = rec.intrinsics
        size = cfg.crop_size
        dirs_all = pixel_directions(K, rec.pose)
        corners = random_crop_origins(self.adv_rng, K.shape, size, cfg.crops_per_render)
        dirs = np.concatenate([dirs_all[y:y + size, x:x + size].reshape(-1, 3) for y, x in corners])
        origins = np.broadcast_to(rec.pose.center, dirs.shape)
        res = march_rays(self.field, origins, dirs, cfg.t_near, cfg.t_far, cfg.n_samples, True, self.adv_rng,
                         cfg.background)
        crops = res.color.reshape(len(corners), size, size, 3)
        real = sample_crops(self.adv_rng, self.support.images, size, len(corners))
        self.last_disc, _ = discriminator_step(self.disc, real, np.clip(crops, 0.0, 1.0), cfg.disc_lr)
        loss, pix_grad = generator_adversarial_loss(self.disc, crops)
        render_rays_backward(self.field, res, cfg.weights.dist * pix_grad.reshape(-1, 3), out=grad)
        return loss

    def run(self, database: ViewDatabase, iters: int, probe=None) -> list[dict]:
        """Run ``iters`` steps on rays drawn uniformly from the database's valid pixels."""
        cfg = self.cfg
        if iters <= 0:
            return []
        pool = _RayPool(database)
        if len(pool) == 0:
            raise DataError("database has no valid pixels")
        use_gan = cfg.weights.dist > 0 and self.disc is not None and self.support is not None
        new_log = []
        for _ in range(iters):
            self.iteration += 1
            idx = self.rng.integers(len(pool), size=min(cfg.batch_rays, len(pool)))
            res = march_rays(self.field, pool.origins[idx], pool.dirs[idx], cfg.t_near, cfg.t_far,
                             cfg.n_samples, True, self.rng, cfg.background)
            n = len(idx)
            diff = res.color - pool.colors[idx]
            l_rgb = float(np.mean(diff**2))
            ddiff = res.depth - pool.dists[idx]
            l_depth = float(np.mean(ddiff**2))
            tmask = TransmittanceMask(np.maximum(pool.dists[idx], 1e-6), cfg.transmittance_mode)
            l_t, g_t = transmittance_loss(res.samples, tmask, with_grad=True)
            grad = render_rays_backward(
                self.field, res,
                grad_color=2.0 * diff / (3 * n),
                grad_depth=cfg.weights.depth * 2.0 * ddiff / n,
                grad_transmittance=cfg.weights.transmittance * g_t,
            )
            if use_gan and self.iteration % cfg.disc_every == 0:
                self.last_dist = self._adversarial(database, grad)
            parts = LossReport(l_rgb, l_depth, l_t, self.last_dist if use_gan else 0.0)
            tot = total_loss(parts, cfg.weights) if all(map(math.isfinite, asdict(parts).values())) else math.nan
            if not math.isfinite(tot) or not np.all(np.isfinite(grad)):
                self.log.append({"iteration": self.iteration, "error": "non-finite loss"})
                raise OptimizationError(f"non-finite loss at iteration {self.iteration}")
            self.opt.step({"grid": grad})
            self._sync_field()
            if self.iteration % cfg.log_every == 0:
                rec = {"iteration": self.iteration, "rgb": l_rgb, "depth": l_depth, "transmittance": l_t,
                       "dist": parts.dist, "total": tot, "disc": self.last_disc}
                if probe is not None:
                    img, _, _ = render_image(self.field, probe.pose, probe.intrinsics, cfg.n_samples,
                                             cfg.background, cfg.t_near, cfg.t_far)
                    rec["probe_psnr"] = psnr(img, probe.image)
                new_log.append(rec)
        self.log.extend(new_log)
        return new_log


def optimize_field(fld: VoxelRadianceField, database: ViewDatabase, disc: Discriminator | None = None,
                   support: SupportSet | None = None, config: TrainConfig | None = None):
    """Optimise ``fld`` in place for ``config.iters`` steps; returns (field, log records)."""
    cfg = config or TrainConfig()
    trainer = FieldTrainer(fld, cfg, disc, support)
    trainer.run(database, cfg.iters, probe=database.origin)
    return fld, trainer.log


def init_field(resolution, bbox_min, bbox_max, density: float = -2.0, color: float = 0.0) -> VoxelRadianceField:
    return VoxelRadianceField.constant(resolution, bbox_min, bbox_max, density, color)


def write_log(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
