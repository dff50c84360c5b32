"""Hole completion for warped views.

The learned completer is a deliberately small masked autoencoder:

* 8x8 RGB patches are embedded linearly into ``n_q``-dim tokens; tokens of
  patches with missing pixels start from a learned mask token plus a harmonic
  interpolation of the visible tokens around them;
* every token is snapped to its nearest codebook entry (straight-through);
* the continuous tokens query the codebook with one cross-attention block;
* a linear decoder maps ``[quantized token, attended codebook value]`` back to
  pixels.

:func:`oracle_complete` is the test backend that copies ground truth from a
synthetic scene instead.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DataError, DomainError, StateError
from .geometry import ViewDatabase, ViewRecord
from .optim import Adam


@dataclass
class Codebook:
    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2 or self.entries.shape[0] < 1:
            raise DomainError("codebook must be a non-empty (N, n_q) matrix")
        if not np.all(np.isfinite(self.entries)):
            raise DomainError("codebook entries must be finite")

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


@dataclass
class FeatureMap:
    features: np.ndarray  # (h, w, c)
    patch_size: int = 8


@dataclass
class AttentionParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    @property
    def d_k(self) -> int:
        return self.w_q.shape[1]


# ---------------------------------------------------------------------------
# quantisation and attention


def nearest_codes(vectors: np.ndarray, entries: np.ndarray, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Index of the nearest entry for each row of ``vectors``; ties go to the lowest index.

    Distances are evaluated as explicit squared differences (not the expanded
    dot-product form) so exact ties stay exact.
    """
    n = vectors.shape[0]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for s in range(0, n, chunk):
        diff = vectors[s:s + chunk, None, :] - entries[None, :, :]
        d2 = np.einsum("nkc,nkc->nk", diff, diff)
        idx[s:s + chunk] = np.argmin(d2, axis=1)
        dist[s:s + chunk] = d2[np.arange(d2.shape[0]), idx[s:s + chunk]]
    return idx, dist


def quantize(features, codebook: Codebook):
    """Replace each feature vector by its nearest codebook entry.

    Returns ``(z_q, indices)`` with the same container type as the input
    (``FeatureMap`` or bare ``(..., c)`` array).
    """
    fmap = features if isinstance(features, FeatureMap) else None
    z = np.asarray(fmap.features if fmap else features, dtype=np.float64)
    if z.shape[-1] != codebook.dim:
        raise DomainError(f"feature dim {z.shape[-1]} != codebook dim {codebook.dim}")
    flat = z.reshape(-1, z.shape[-1])
    idx, _ = nearest_codes(flat, codebook.entries)
    zq = codebook.entries[idx].reshape(z.shape)
    idx = idx.reshape(z.shape[:-1])
    if fmap is not None:
        return FeatureMap(zq, fmap.patch_size), idx
    return zq, idx


def _softmax(x):
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def codebook_attention(queries, codebook: Codebook, params: AttentionParams, return_weights: bool = False):
    """Cross-attention of token queries over the codebook: ``softmax(Q K^T / sqrt(d_k)) V``."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[1] != params.w_q.shape[0] or codebook.dim != params.w_k.shape[0]:
        raise DomainError("query/codebook dims do not match the projections")
    q = queries @ params.w_q
    k = codebook.entries @ params.w_k
    v = codebook.entries @ params.w_v
    attn = _softmax(q @ k.T / np.sqrt(params.d_k))
    out = attn @ v
    return (out, attn) if return_weights else out


# ---------------------------------------------------------------------------
# harmonic interpolation


def _grid_laplacian(h: int, w: int) -> sp.csr_matrix:
    n = h * w
    idx = np.arange(n).reshape(h, w)
    rows, cols = [], []
    for a, b in ((idx[:, :-1], idx[:, 1:]), (idx[:-1, :], idx[1:, :])):
        rows += [a.ravel(), b.ravel()]
        cols += [b.ravel(), a.ravel()]
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    adj = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    return (sp.diags(np.asarray(adj.sum(axis=1)).ravel()) - adj).tocsr()


def harmonic_operator(known: np.ndarray) -> np.ndarray:
    """Dense matrix A with ``values[unknown] = A @ values[known]`` solving Laplace's equation.

    4-connected grid, known cells as Dirichlet data.  Unknown cells with no
    path to a known cell get zero rows.
    """
    known = np.asarray(known, dtype=bool)
    kf = known.ravel()
    n_unknown = int((~kf).sum())
    if kf.sum() == 0:
        return np.zeros((n_unknown, 0))
    lap = _grid_laplacian(*known.shape).toarray()
    l_uu = lap[np.ix_(~kf, ~kf)]
    l_uk = lap[np.ix_(~kf, kf)]
    # isolated unknown components make l_uu singular; lstsq yields the min-norm (zero) answer there
    sol, *_ = np.linalg.lstsq(l_uu, -l_uk, rcond=None)
    return sol


def harmonic_fill(values: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Fill unknown pixels of a (H, W) or (H, W, C) map by a sparse Laplace solve."""
    known = np.asarray(known, dtype=bool)
    out = np.array(values, dtype=np.float64, copy=True)
    if known.all():
        return out
    if not known.any():
        raise DataError("harmonic fill needs at least one known value")
    h, w = known.shape
    lap = _grid_laplacian(h, w)
    kf = known.ravel()
    l_uu = lap[~kf][:, ~kf].tocsc()
    l_uk = lap[~kf][:, kf]
    flat = out.reshape(h * w, -1)
    # a tiny diagonal shift keeps components without known neighbours solvable (they fall to 0)
    l_uu = l_uu + sp.identity(l_uu.shape[0], format="csc") * 1e-12
    rhs = -(l_uk @ flat[kf])
    flat[~kf] = spla.spsolve(l_uu, rhs).reshape(-1, flat.shape[1])
    return flat.reshape(out.shape)


# ---------------------------------------------------------------------------
# patches


def to_patches(image: np.ndarray, p: int) -> np.ndarray:
    h, w, c = image.shape
    return image.reshape(h // p, p, w // p, p, c).transpose(0, 2, 1, 3, 4).reshape(h // p, w // p, p * p * c)


def from_patches(tokens: np.ndarray, p: int, c: int = 3) -> np.ndarray:
    th, tw, _ = tokens.shape
    return tokens.reshape(th, tw, p, p, c).transpose(0, 2, 1, 3, 4).reshape(th * p, tw * p, c)


# ---------------------------------------------------------------------------
# model


@dataclass
class CompleterConfig:
    patch_size: int = 8
    n_codes: int = 2048
    code_dim: int = 16
    d_k: int = 16
    use_attention: bool = True
    steps: int = 400
    lr: float = 3e-3
    batch: int = 8
    crop: int = 32
    mask_ratio: float = 0.5
    visible_weight: float = 0.5
    commitment: float = 0.25
    dead_code_every: int = 100
    seed: int = 0


_PARAM_ORDER = ("codebook", "w_e", "b_e", "mask_token", "w_q", "w_k", "w_v", "w_d", "b_d")


@dataclass
class CompleterModel:
    params: dict
    patch_size: int = 8
    use_attention: bool = True
    report: dict = field(default_factory=dict)

    @classmethod
    def init(cls, cfg: CompleterConfig, rng: np.random.Generator) -> "CompleterModel":
        p_dim = 3 * cfg.patch_size**2
        c, dk = cfg.code_dim, cfg.d_k
        params = {
            "codebook": rng.normal(0.0, 0.1, (cfg.n_codes, c)),
            "w_e": rng.normal(0.0, 1.0 / np.sqrt(p_dim), (p_dim, c)),
            "b_e": np.zeros(c),
            "mask_token": np.zeros(c),
            "w_q": rng.normal(0.0, 1.0 / np.sqrt(c), (c, dk)),
            "w_k": rng.normal(0.0, 1.0 / np.sqrt(c), (c, dk)),
            "w_v": rng.normal(0.0, 1.0 / np.sqrt(c), (c, dk)),
            "w_d": rng.normal(0.0, 1.0 / np.sqrt(c + dk), (c + dk, p_dim)),
            "b_d": np.full(p_dim, 0.5),
        }
        return cls(params, cfg.patch_size, cfg.use_attention)

    @property
    def codebook(self) -> Codebook:
        return Codebook(self.params["codebook"])

    @property
    def attention(self) -> AttentionParams:
        return AttentionParams(self.params["w_q"], self.params["w_k"], self.params["w_v"])

    # -- one token grid ----------------------------------------------------

    def forward(self, patches: np.ndarray, visible: np.ndarray) -> dict:
        """Run one (th, tw) token grid; returns a cache holding every intermediate."""
        pr = self.params
        th, tw, p_dim = patches.shape
        vis = visible.ravel()
        x = patches.reshape(-1, p_dim)
        op = harmonic_operator(visible)
        z = np.empty((th * tw, pr["w_e"].shape[1]))
        z_vis = x[vis] @ pr["w_e"] + pr["b_e"]
        z[vis] = z_vis
        z[~vis] = pr["mask_token"] + op @ z_vis
        idx, _ = nearest_codes(z, pr["codebook"])
        zq = pr["codebook"][idx]
        if self.use_attention:
            su, attn = codebook_attention(z, self.codebook, self.attention, return_weights=True)
        else:
            su, attn = np.zeros((z.shape[0], pr["w_q"].shape[1])), None
        h = np.concatenate([zq, su], axis=1)
        out = h @ pr["w_d"] + pr["b_d"]
        return dict(x=x, vis=vis, op=op, z=z, idx=idx, zq=zq, su=su, attn=attn, h=h, out=out)

    def backward(self, cache: dict, d_out: np.ndarray, d_z_extra: np.ndarray, d_codebook_extra: np.ndarray) -> dict:
        pr = self.params
        c = pr["w_e"].shape[1]
        grads = {k: np.zeros_like(v) for k, v in pr.items()}
        grads["w_d"] = cache["h"].T @ d_out
        grads["b_d"] = d_out.sum(axis=0)
        d_h = d_out @ pr["w_d"].T
        d_z = d_h[:, :c] + d_z_extra  # straight-through past the quantiser
        grads["codebook"] += d_codebook_extra
        if self.use_attention:
            z, attn = cache["z"], cache["attn"]
            d_su = d_h[:, c:]
            e = pr["codebook"]
            scale = 1.0 / np.sqrt(pr["w_q"].shape[1])
            q, k, v = z @ pr["w_q"], e @ pr["w_k"], e @ pr["w_v"]
            d_attn = d_su @ v.T
            d_v = attn.T @ d_su
            d_s = attn * (d_attn - (d_attn * attn).sum(axis=1, keepdims=True)) * scale
            d_q = d_s @ k
            d_k = d_s.T @ q
            grads["w_q"] = z.T @ d_q
            grads["w_k"] = e.T @ d_k
            grads["w_v"] = e.T @ d_v
            grads["codebook"] += d_k @ pr["w_k"].T + d_v @ pr["w_v"].T
            d_z = d_z + d_q @ pr["w_q"].T
        vis = cache["vis"]
        d_mask = d_z[~vis]
        grads["mask_token"] = d_mask.sum(axis=0)
        d_zvis = d_z[vis] + cache["op"].T @ d_mask
        grads["w_e"] = cache["x"][vis].T @ d_zvis
        grads["b_e"] = d_zvis.sum(axis=0)
        return grads

    def loss_and_grads(self, patches, visible, cfg: CompleterConfig):
        """Masked reconstruction + codebook/commitment losses for one crop."""
        cache = self.forward(patches, visible)
        vis = cache["vis"]
        diff = cache["out"] - cache["x"]
        n_tok, p_dim = diff.shape
        wts = np.where(vis, cfg.visible_weight / max(vis.sum(), 1), 1.0 / max((~vis).sum(), 1))
        rec = float((wts[:, None] * diff**2).sum() / p_dim)
        d_out = 2.0 * wts[:, None] * diff / p_dim
        z, zq = cache["z"], cache["zq"]
        gap = z - zq
        vq = float((gap**2).mean())
        d_z_commit = 2.0 * cfg.commitment * gap / gap.size
        d_cb = np.zeros_like(self.params["codebook"])
        np.add.at(d_cb, cache["idx"], -2.0 * gap / gap.size)
        grads = self.backward(cache, d_out, d_z_commit, d_cb)
        return rec + (1.0 + cfg.commitment) * vq, rec, grads, cache

    def reconstruct(self, image: np.ndarray, valid: np.ndarray) -> np.ndarray:
        """Decoder output for the whole image (padded to a patch multiple)."""
        p = self.patch_size
        h, w, _ = image.shape
        ph, pw = -h % p, -w % p
        img = np.pad(np.where(valid[..., None], image, 0.0), ((0, ph), (0, pw), (0, 0)))
        val = np.pad(valid, ((0, ph), (0, pw)), constant_values=False)
        patches = to_patches(img, p)
        visible = to_patches(val[..., None].astype(float), p).min(axis=-1) > 0
        cache = self.forward(patches, visible)
        out = from_patches(cache["out"].reshape(patches.shape), p)
        return np.clip(out[:h, :w], 0.0, 1.0)

    # -- checkpoint -----------------------------------------------------------

    _MAGIC = b"S123MAE\x00"
    _HEADER = struct.Struct("<8sI6I")

    def to_bytes(self) -> bytes:
        pr = self.params
        n, c = pr["codebook"].shape
        header = self._HEADER.pack(self._MAGIC, 1, self.patch_size, n, c, pr["w_q"].shape[1],
                                   pr["w_e"].shape[0], int(self.use_attention))
        return header + b"".join(np.ascontiguousarray(pr[k], dtype="<f4").tobytes() for k in _PARAM_ORDER)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompleterModel":
        magic, version, p, n, c, dk, p_dim, use_attn = cls._HEADER.unpack_from(data)
        if magic != cls._MAGIC or version != 1:
            raise DomainError("not a version-1 completer checkpoint")
        shapes = {
            "codebook": (n, c), "w_e": (p_dim, c), "b_e": (c,), "mask_token": (c,), "w_q": (c, dk),
            "w_k": (c, dk), "w_v": (c, dk), "w_d": (c + dk, p_dim), "b_d": (p_dim,),
        }
        off = cls._HEADER.size
        params = {}
        for k in _PARAM_ORDER:
            size = int(np.prod(shapes[k]))
            params[k] = np.frombuffer(data, "<f4", size, off).reshape(shapes[k]).astype(np.float64)
            off += 4 * size
        if off != len(data):
            raise DomainError("completer checkpoint size does not match its header")
        return cls(params, p, bool(use_attn))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CompleterModel":
        return cls.from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# training


def _random_visibility(rng, th, tw, ratio):
    n = th * tw
    n_mask = int(np.clip(round(ratio * n), 1, n - 1))
    if rng.random() < 0.5:
        # contiguous band from one side, like a warp hole
        vis = np.ones((th, tw), dtype=bool)
        width = max(1, min(tw - 1, round(ratio * tw)))
        side = rng.integers(4)
        if side == 0:
            vis[:, :width] = False
        elif side == 1:
            vis[:, tw - width:] = False
        elif side == 2:
            vis[: max(1, min(th - 1, round(ratio * th))), :] = False
        else:
            vis[th - max(1, min(th - 1, round(ratio * th))):, :] = False
        return vis
    flat = np.ones(n, dtype=bool)
    flat[rng.permutation(n)[:n_mask]] = False
    return flat.reshape(th, tw)


def train_codebook(views: ViewDatabase | list, config: CompleterConfig | None = None):
    """Fit codebook and completer on randomly masked crops of fully valid views.

    Returns ``(codebook, model)``; ``model.report`` holds the loss history.
    """
    cfg = config or CompleterConfig()
    records = list(views.records if isinstance(views, ViewDatabase) else views)
    sources = [r.image for r in records if r.mask.all()]
    if not sources:
        raise DataError("no fully valid view to train the completer on")
    p = cfg.patch_size
    crop = min(cfg.crop, *(min(s.shape[:2]) // p * p for s in sources))
    if crop < 2 * p:
        raise DataError(f"views too small for {p}px patches")
    rng = np.random.default_rng(cfg.seed)
    model = CompleterModel.init(cfg, rng)
    opt = Adam(model.params, lr=cfg.lr)
    last_used = np.zeros(cfg.n_codes, dtype=np.int64)
    history = []
    for step in range(1, cfg.steps + 1):
        total = None
        loss_sum = rec_sum = 0.0
        encodings = []
        for _ in range(cfg.batch):
            src = sources[rng.integers(len(sources))]
            y0 = rng.integers(src.shape[0] - crop + 1)
            x0 = rng.integers(src.shape[1] - crop + 1)
            patches = to_patches(src[y0:y0 + crop, x0:x0 + crop], p)
            vis = _random_visibility(rng, crop // p, crop // p, cfg.mask_ratio)
            loss, rec, grads, cache = model.loss_and_grads(patches, vis, cfg)
            loss_sum += loss
            rec_sum += rec
            last_used[cache["idx"]] = step
            encodings.append(cache["z"])
            if total is None:
                total = grads
            else:
                for k in total:
                    total[k] += grads[k]
        for k in total:
            total[k] /= cfg.batch
        opt.step(total)
        history.append((loss_sum / cfg.batch, rec_sum / cfg.batch))
        if cfg.dead_code_every and step % cfg.dead_code_every == 0:
            dead = np.nonzero(step - last_used >= cfg.dead_code_every)[0]
            if dead.size:
                pool = np.concatenate(encodings)
                model.params["codebook"][dead] = pool[rng.integers(len(pool), size=dead.size)]
                opt.m["codebook"][dead] = 0.0
                opt.v["codebook"][dead] = 0.0
                last_used[dead] = step
    model.report = {
        "final_loss": history[-1][0],
        "final_reconstruction": history[-1][1],
        "history": history,
        "crop": crop,
    }
    return model.codebook, model


# ---------------------------------------------------------------------------
# completion


def fill_depth(depth: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Harmonic inpainting of depth from the valid pixels; valid pixels untouched."""
    filled = harmonic_fill(depth, mask)
    filled[mask] = depth[mask]
    return np.maximum(filled, np.min(depth[mask]) if mask.any() else 1e-6)


def complete_view(view: ViewRecord, model: CompleterModel) -> ViewRecord:
    """Fill invalid pixels with the completer's decoder output and harmonic depth."""
    if view.mask.all():
        return view
    if not view.mask.any():
        raise DataError("cannot complete a view without valid pixels")
    decoded = model.reconstruct(view.image, view.mask)
    image = np.where(view.mask[..., None], view.image, decoded)
    depth = fill_depth(view.depth, view.mask)
    return ViewRecord(image, depth, np.ones_like(view.mask), view.pose, view.intrinsics)


def mean_fill(view: ViewRecord) -> ViewRecord:
    """Baseline completion: holes take the mean valid color and harmonic depth."""
    if view.mask.all():
        return view
    if not view.mask.any():
        raise DataError("cannot complete a view without valid pixels")
    mean = view.image[view.mask].mean(axis=0)
    image = np.where(view.mask[..., None], view.image, mean)
    return ViewRecord(image, fill_depth(view.depth, view.mask), np.ones_like(view.mask), view.pose, view.intrinsics)


def oracle_complete(view: ViewRecord, scene_oracle) -> ViewRecord:
    """Fill invalid pixels (color and depth) from the synthetic scene's ground truth."""
    if view.mask.all():
        return view
    if scene_oracle is None:
        raise StateError("no scene oracle available")
    truth = scene_oracle.ground_truth(view.pose, view.intrinsics)
    m = view.mask
    image = np.where(m[..., None], view.image, truth.image)
    depth = np.where(m, view.depth, truth.depth)
    return ViewRecord(image, depth, np.ones_like(m), view.pose, view.intrinsics)
