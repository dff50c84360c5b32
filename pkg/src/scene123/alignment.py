"""Two-stage alignment of an independently estimated depth map to a rendered one.

Stage one recovers a mean scale ``s`` from distances between unprojected
point pairs and an offset ``delta`` from the scaled depths.  Stage two fits a
small per-pixel residual MLP on the overlap and applies it everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateError, DomainError, OptimizationError
from .geometry import CameraIntrinsics
from .optim import Adam

PAIR_EPS = 1e-9


@dataclass
class DepthPair:
    d_estimated: np.ndarray
    d_rendered: np.ndarray
    overlap_mask: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        self.d_estimated = np.asarray(self.d_estimated, dtype=np.float64)
        self.d_rendered = np.asarray(self.d_rendered, dtype=np.float64)
        self.overlap_mask = np.asarray(self.overlap_mask, dtype=bool)
        shape = self.intrinsics.shape
        if not (self.d_estimated.shape == self.d_rendered.shape == self.overlap_mask.shape == shape):
            raise DomainError("depth maps, mask and intrinsics disagree on shape")


@dataclass
class GlobalAlignment:
    scale: float
    offset: float
    m_pairs: int
    seed: int
    pairs_used: int = 0


@dataclass
class AlignConfig:
    m_pairs: int = 512
    seed: int = 0
    iters: int = 200
    lr: float = 1e-3
    hidden: int = 32
    checkpoint_every: int = 20


def _points(depth_values, vv, uu, K: CameraIntrinsics):
    x = (uu + 0.5 - K.cx) / K.fx
    y = (vv + 0.5 - K.cy) / K.fy
    return depth_values[:, None] * np.stack([x, y, np.ones_like(x)], axis=1)


def global_align(pair: DepthPair, m_pairs: int = 512, seed: int = 0):
    """Mean scale and offset from ``m_pairs`` seeded overlap samples.

    Returns ``(GlobalAlignment, s * D_E + delta)``.
    """
    vv, uu = np.nonzero(pair.overlap_mask)
    if vv.size < 2:
        raise DataError("global alignment needs at least two overlap pixels")
    if m_pairs < 2:
        raise DomainError("m_pairs must be >= 2")
    rng = np.random.default_rng(seed)
    pick = rng.permutation(vv.size)[:m_pairs]
    vv, uu = vv[pick], uu[pick]
    K = pair.intrinsics
    x_r = _points(pair.d_rendered[vv, uu], vv, uu, K)
    x_e = _points(pair.d_estimated[vv, uu], vv, uu, K)
    num = np.linalg.norm(x_r[:-1] - x_r[1:], axis=1)
    den = np.linalg.norm(x_e[:-1] - x_e[1:], axis=1)
    ok = den >= PAIR_EPS
    if not ok.any():
        raise DegenerateError("every sampled pair has coincident estimated points")
    s = float(np.mean(num[ok] / den[ok]))
    delta = float(np.mean(x_r[:, 2] - s * x_e[:, 2]))
    result = GlobalAlignment(s, delta, int(vv.size), seed, int(ok.sum()))
    return result, s * pair.d_estimated + delta


@dataclass
class LocalAligner:
    """Residual map ``d -> d + gain * scale * (mlp(x) + x @ w0)`` on ``x = (u/W, v/H, (d - center) / scale)``.

    The linear shortcut ``w0`` carries affine leftovers of the global stage;
    it and the last MLP layer start at zero, so a fresh aligner is the identity.
    """

    params: dict
    center: float = 0.0
    scale: float = 1.0
    gain: float = 10.0  # residual units per normalised depth std; lets lr 1e-3 cover real offsets
    history: list = field(default_factory=list)

    @property
    def out_scale(self) -> float:
        return self.gain * self.scale

    @classmethod
    def identity(cls, hidden: int = 32, seed: int = 0) -> "LocalAligner":
        rng = np.random.default_rng(seed)
        params = {
            "w1": rng.normal(0.0, 1.0 / np.sqrt(3), (3, hidden)),
            "b1": np.zeros(hidden),
            "w2": rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, hidden)),
            "b2": np.zeros(hidden),
            "w3": np.zeros((hidden, 1)),
            "b3": np.zeros(1),
            "w0": np.zeros((3, 1)),
        }
        return cls(params)

    def _inputs(self, depth, K: CameraIntrinsics, vv=None, uu=None):
        if vv is None:
            vv, uu = np.indices(depth.shape).reshape(2, -1)
            d = depth.reshape(-1)
        else:
            d = depth[vv, uu]
        return np.stack([uu / K.width, vv / K.height, (d - self.center) / self.scale], axis=1), d

    def _forward(self, x):
        p = self.params
        a1 = np.tanh(x @ p["w1"] + p["b1"])
        a2 = np.tanh(a1 @ p["w2"] + p["b2"])
        return (a2 @ p["w3"] + x @ p["w0"] + p["b3"])[:, 0], (x, a1, a2)

    def _backward(self, cache, d_res):
        p = self.params
        x, a1, a2 = cache
        g = {"w3": a2.T @ d_res[:, None], "b3": np.array([d_res.sum()]), "w0": x.T @ d_res[:, None]}
        d2 = (d_res[:, None] @ p["w3"].T) * (1.0 - a2**2)
        g["w2"], g["b2"] = a1.T @ d2, d2.sum(axis=0)
        d1 = (d2 @ p["w2"].T) * (1.0 - a1**2)
        g["w1"], g["b1"] = x.T @ d1, d1.sum(axis=0)
        return g

    def apply(self, depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
        x, d = self._inputs(depth, K)
        res, _ = self._forward(x)
        return (d + self.out_scale * res).reshape(depth.shape)


def _masked_rms(a, b, mask):
    return float(np.sqrt(np.mean((a[mask] - b[mask]) ** 2)))


def _refit_readout(aligner: LocalAligner, x, wanted) -> None:
    """Least-squares refit of the linear output layer on fixed hidden features."""
    p = aligner.params
    _, (_, _, a2) = aligner._forward(x)
    design = np.hstack([a2, x, np.ones((x.shape[0], 1))])
    if design.shape[0] < 4 * design.shape[1]:
        return  # too few overlap pixels to pin the readout down
    theta, *_ = np.linalg.lstsq(design, wanted, rcond=None)
    h = a2.shape[1]
    p["w3"], p["w0"], p["b3"] = theta[:h, None], theta[h:h + 3, None], theta[h + 3:]


def local_align(d_global: np.ndarray, pair: DepthPair, aligner: LocalAligner | None = None,
                iters: int = 200, lr: float = 1e-3, checkpoint_every: int = 20) -> np.ndarray:
    """Fit the residual MLP on the overlap by Adam and apply it to the full map.

    The best parameters seen (by masked RMS) are kept, then the linear
    readout is refit by least squares on the overlap; the result is never
    worse than ``d_global`` there.  ``aligner.history`` records the
    best-so-far masked RMS at every checkpoint.

    Raises:
        OptimizationError: when the loss exceeds ten times its initial value;
            the exception's ``fallback`` attribute holds ``d_global``.
    """
    aligner = aligner or LocalAligner.identity()
    mask = pair.overlap_mask
    if mask.sum() < 1:
        raise DataError("local alignment needs overlap pixels")
    K = pair.intrinsics
    vals = d_global[mask]
    aligner.center = float(vals.mean())
    aligner.scale = float(max(vals.std(), 1e-3 * max(abs(aligner.center), 1.0)))
    vv, uu = np.nonzero(mask)
    x, d = aligner._inputs(d_global, K, vv, uu)
    target = pair.d_rendered[vv, uu]
    opt = Adam(aligner.params, lr=lr)

    def evaluate():
        res, cache = aligner._forward(x)
        err = d + aligner.out_scale * res - target
        return float(np.mean(err**2)), err, cache

    loss0, err, cache = evaluate()
    best_loss = loss0
    best = {k: v.copy() for k, v in aligner.params.items()}
    aligner.history = [float(np.sqrt(loss0))]
    for it in range(1, iters + 1):
        d_res = 2.0 * err * aligner.out_scale / err.size
        opt.step(aligner._backward(cache, d_res))
        loss, err, cache = evaluate()
        if not np.isfinite(loss) or loss > 10.0 * max(loss0, 1e-30):
            aligner.params.update(best)
            exc = OptimizationError(f"local alignment diverged at iteration {it} (loss {loss:.3g} vs {loss0:.3g})")
            exc.fallback = d_global.copy()
            raise exc
        if loss < best_loss:
            best_loss = loss
            best = {k: v.copy() for k, v in aligner.params.items()}
        if it % checkpoint_every == 0 or it == iters:
            aligner.history.append(float(np.sqrt(best_loss)))
    aligner.params.update(best)
    _refit_readout(aligner, x, (target - d) / aligner.out_scale)
    refit_loss = evaluate()[0]
    if refit_loss < best_loss:
        aligner.history.append(float(np.sqrt(refit_loss)))
    else:
        aligner.params.update(best)
    out = aligner.apply(d_global, K)
    if _masked_rms(out, pair.d_rendered, mask) > _masked_rms(d_global, pair.d_rendered, mask):
        return d_global.copy()
    return out


def align_depth(pair: DepthPair, config: AlignConfig | None = None) -> tuple[np.ndarray, dict]:
    """Global then local alignment; returns the aligned map and a small report."""
    cfg = config or AlignConfig()
    glob, d_global = global_align(pair, cfg.m_pairs, cfg.seed)
    aligner = LocalAligner.identity(cfg.hidden, cfg.seed)
    aborted = False
    try:
        d_hat = local_align(d_global, pair, aligner, cfg.iters, cfg.lr, cfg.checkpoint_every)
    except OptimizationError as exc:
        d_hat, aborted = exc.fallback, True
    m = pair.overlap_mask
    report = {
        "scale": glob.scale,
        "offset": glob.offset,
        "pairs_used": glob.pairs_used,
        "residual_initial": _masked_rms(pair.d_estimated, pair.d_rendered, m),
        "residual_global": _masked_rms(d_global, pair.d_rendered, m),
        "residual_local": _masked_rms(d_hat, pair.d_rendered, m),
        "aborted": aborted,
    }
    return d_hat, report
