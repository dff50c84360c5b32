"""End-to-end orchestration: initial database, progressive completion, training, evaluation."""

from __future__ import annotations

import configparser
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .alignment import AlignConfig, DepthPair, align_depth
from .completion import CompleterConfig, complete_view, mean_fill, oracle_complete, train_codebook
from .errors import ConfigError, DataError, DegenerateError, Scene123Error, StageError
from .field import VoxelRadianceField, render_image, save_field
from .geometry import (
    CameraIntrinsics,
    Pose,
    ViewDatabase,
    ViewRecord,
    generate_pose_ring,
    interleaved_poses,
    warp_view,
    z_to_ray_distance,
)
from .io import read_pfm, read_png, read_pose_document, write_pfm, write_png
from .synthetic import SceneOracle, SceneSpec, SyntheticScene, default_t_far, make_synthetic_scene
from .training import (
    Discriminator,
    FieldTrainer,
    LossWeights,
    SupportSet,
    TrainConfig,
    init_field,
    psnr,
    write_log,
)

SCHEMA_VERSION = 1
BACKENDS = ("oracle", "toy-mae", "mean", "none")

# (section, key) for every config field; the dataclass default is the documented default
_SECTIONS = {
    "input": ("mode", "image", "depth", "poses", "support_dir"),
    "camera": ("width", "height", "fov"),
    "poses": ("n_views", "yaw_range", "pitch_range", "n_eval", "n_support"),
    "field": ("resolution", "n_samples", "t_near", "t_far", "init_density"),
    "completion": ("backend", "use_attention", "completer_steps", "n_codes"),
    "training": ("burst_iters", "final_iters", "batch_rays", "lr", "lambda_depth", "lambda_t", "lambda_dist",
                 "transmittance_mode", "disc_every", "log_every"),
    "alignment": ("m_pairs", "align_iters", "align_lr", "confidence", "agreement"),
    "run": ("seed", "out"),
}


@dataclass
class PipelineConfig:
    mode: str = "synthetic"  # synthetic | files
    image: str = ""
    depth: str = ""
    poses: str = ""  # pose document; its first frame is the input view
    support_dir: str = ""
    width: int = 64
    height: int = 64
    fov: float = 60.0
    n_views: int = 8
    yaw_range: float = 60.0
    pitch_range: float = 0.0
    n_eval: int = 4
    n_support: int = 16
    resolution: int = 32
    n_samples: int = 64
    t_near: float = 0.05
    t_far: float = 0.0  # 0 selects half the scene box diagonal
    init_density: float = -2.0
    backend: str = "oracle"
    use_attention: bool = True
    completer_steps: int = 1500
    n_codes: int = 2048
    burst_iters: int = 500
    final_iters: int = 2000
    batch_rays: int = 4096
    lr: float = 0.02
    lambda_depth: float = 0.005
    lambda_t: float = 0.001
    lambda_dist: float = 0.001
    transmittance_mode: str = "corrected"
    disc_every: int = 10
    log_every: int = 100
    m_pairs: int = 512
    align_iters: int = 200
    align_lr: float = 1e-3
    confidence: float = 0.1  # overlap pixels need rendered final transmittance below this
    agreement: float = 0.05  # ... and a rendered depth within this fraction of the warped depth
    seed: int = 0
    out: str = "out"

    def validate(self) -> "PipelineConfig":
        if self.mode not in ("synthetic", "files"):
            raise ConfigError(f"input mode must be 'synthetic' or 'files', got {self.mode!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"completion backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.transmittance_mode not in ("literal", "corrected"):
            raise ConfigError(f"unknown transmittance mode {self.transmittance_mode!r}")
        counts = ("width", "height", "n_views", "n_eval", "n_support", "resolution", "n_samples", "completer_steps",
                  "n_codes", "burst_iters", "final_iters", "batch_rays", "disc_every", "log_every", "m_pairs",
                  "align_iters")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_samples < 2 or self.resolution < 2:
            raise ConfigError("n_samples and resolution must be >= 2")
        for name in ("lambda_depth", "lambda_t", "lambda_dist"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.agreement <= 0:
            raise ConfigError("agreement must be positive")
        if self.lr <= 0 or self.align_lr <= 0 or self.t_near <= 0 or self.t_far < 0 or not 0 < self.fov < 180:
            raise ConfigError("lr, align_lr, t_near and fov must be positive, t_far non-negative")
        if self.mode == "files":
            for name in ("image", "depth", "poses"):
                path = getattr(self, name)
                if not path or not Path(path).is_file():
                    raise ConfigError(f"input file {name}={path!r} does not exist")
        if self.support_dir and not Path(self.support_dir).is_dir():
            raise ConfigError(f"support_dir {self.support_dir!r} is not a directory")
        if self.mode == "files" and not self.support_dir and self.lambda_dist > 0:
            raise ConfigError("lambda_dist > 0 with file input needs support_dir")
        return self

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "PipelineConfig":
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values = {}
        known = {key: sec for sec, keys in _SECTIONS.items() for key in keys}
        for sec in parser.sections():
            if sec not in _SECTIONS:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, raw in parser.items(sec):
                if known.get(key) != sec:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                values[key] = raw
        values.update(overrides or {})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        types = {f.name: type(f.default) for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kw[key] = _coerce(key, raw, types[key])
        return cls(**kw).validate()

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for sec, keys in _SECTIONS.items():
            parser[sec] = {k: _format(getattr(self, k)) for k in keys}
        from io import StringIO

        buf = StringIO()
        parser.write(buf)
        return buf.getvalue()

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.width, self.height, self.fov)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_depth, self.lambda_t, self.lambda_dist)


def _coerce(key, raw, kind):
    if not isinstance(raw, str):
        if kind is float and isinstance(raw, int):
            return float(raw)
        if isinstance(raw, kind):
            return raw
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}")
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def _format(value) -> str:
    return ("true" if value else "false") if isinstance(value, bool) else str(value)


# ---------------------------------------------------------------------------
# inputs


@dataclass
class PipelineInput:
    origin: ViewRecord
    scene: SyntheticScene | None
    support: SupportSet | None
    t_far: float
    bbox_min: tuple
    bbox_max: tuple


def synthetic_support(scene: SyntheticScene, K: CameraIntrinsics, cfg: PipelineConfig) -> SupportSet:
    """Ground-truth renders along a denser yaw sweep, standing in for a generated video."""
    yaws = np.linspace(-cfg.yaw_range - 15.0, cfg.yaw_range + 15.0, cfg.n_support)
    oracle = SceneOracle(scene)
    return SupportSet([oracle.ground_truth(Pose.from_yaw_pitch(y), K).image for y in yaws], "synthetic")


def load_input(cfg: PipelineConfig) -> PipelineInput:
    if cfg.mode == "synthetic":
        scene = make_synthetic_scene(cfg.seed, SceneSpec(resolution=cfg.resolution))
        K = cfg.intrinsics
        origin = SceneOracle(scene).ground_truth(Pose.identity(), K)
        t_far = cfg.t_far or scene.t_far
        support = SupportSet.from_directory(cfg.support_dir) if cfg.support_dir else synthetic_support(scene, K, cfg)
        return PipelineInput(origin, scene, support, t_far, scene.spec.bbox_min, scene.spec.bbox_max)
    K, poses = read_pose_document(cfg.poses)
    image = read_png(cfg.image)
    depth = read_pfm(cfg.depth).astype(np.float64)
    if not poses:
        raise DataError(f"{cfg.poses}: no frames")
    if image.shape[:2] != K.shape or depth.shape != K.shape:
        raise DataError("input image, depth and intrinsics disagree on shape")
    if not np.all(np.isfinite(depth)) or np.any(depth <= 0):
        raise DataError("input depth must be finite and positive everywhere")
    origin = ViewRecord(image, depth, np.ones(K.shape, bool), poses[0], K)
    # scene box: a cube around the camera that contains every input point
    reach = float(np.max(depth * z_to_ray_distance(K))) * 1.05
    c = poses[0].center
    bmin, bmax = tuple(c - reach), tuple(c + reach)
    support = SupportSet.from_directory(cfg.support_dir) if cfg.support_dir else None
    return PipelineInput(origin, None, support, cfg.t_far or math.sqrt(3) * reach, bmin, bmax)


def training_poses(cfg: PipelineConfig, origin: Pose) -> list[Pose]:
    return generate_pose_ring(origin.center, cfg.n_views, cfg.yaw_range, cfg.pitch_range)


def eval_poses(cfg: PipelineConfig, origin: Pose) -> list[Pose]:
    return interleaved_poses(origin.center, cfg.n_views, cfg.yaw_range, cfg.n_eval)


def _same_pose(a: Pose, b: Pose) -> bool:
    return bool(np.allclose(a.transform, b.transform, atol=1e-12))


def build_initial_database(origin: ViewRecord, poses: list[Pose]) -> ViewDatabase:
    """The input view followed by its forward warp to every other pose (holes left invalid)."""
    if not origin.mask.all():
        raise DataError("the input view must be fully valid")
    records = [origin]
    for pose in poses:
        if not _same_pose(pose, origin.pose):
            records.append(warp_view(origin, pose))
    return ViewDatabase(records, 0)


# ---------------------------------------------------------------------------
# completion backends


class Completer:
    """Uniform front for the completion backends; ``none`` returns the view untouched."""

    def __init__(self, backend: str, scene: SyntheticScene | None, model=None):
        self.backend = backend
        self.oracle = SceneOracle(scene) if scene is not None else None
        self.model = model

    @classmethod
    def build(cls, cfg: PipelineConfig, inp: PipelineInput) -> "Completer":
        model = None
        if cfg.backend == "toy-mae":
            sources = [inp.origin]
            if inp.support is not None:
                K = inp.origin.intrinsics
                sources += [ViewRecord(im, np.ones(K.shape), np.ones(K.shape, bool), Pose.identity(), K)
                            for im in inp.support.images if im.shape[:2] == K.shape]
            # whole-view crops and wide masks: warp holes cover 30-75% of a view
            ccfg = CompleterConfig(n_codes=cfg.n_codes, use_attention=cfg.use_attention,
                                   steps=cfg.completer_steps, crop=max(cfg.width, cfg.height), mask_ratio=0.7,
                                   seed=cfg.seed)
            _, model = train_codebook(sources, ccfg)
        elif cfg.backend == "oracle" and inp.scene is None:
            raise ConfigError("oracle completion needs synthetic input")
        return cls(cfg.backend, inp.scene, model)

    def __call__(self, view: ViewRecord) -> ViewRecord:
        if self.backend == "oracle":
            return oracle_complete(view, self.oracle)
        if self.backend == "toy-mae":
            return complete_view(view, self.model)
        if self.backend == "mean":
            return mean_fill(view)
        return view


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    eval_psnr: list = field(default_factory=list)
    completion_mse: list = field(default_factory=list)
    alignment: list = field(default_factory=list)
    loss_curve: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    failed_stage: str | None = None

    @property
    def mean_psnr(self) -> float | None:
        vals = [v["psnr"] for v in self.eval_psnr if v.get("psnr") is not None]
        return float(np.mean(vals)) if vals else None

    def document(self) -> dict:
        """The persisted metrics object; wall-clock timings are kept out so reruns compare equal."""
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "eval": self.eval_psnr,
            "mean_psnr": self.mean_psnr,
            "completion_mse": self.completion_mse,
            "alignment": self.alignment,
            "loss_curve": self.loss_curve,
            "failed_stage": self.failed_stage,
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(self.document(), indent=2, sort_keys=True) + "\n")
        (out / "timings.json").write_text(json.dumps(self.timings, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# orchestration


def make_trainer(cfg: PipelineConfig, fld: VoxelRadianceField, inp: PipelineInput) -> FieldTrainer:
    tcfg = TrainConfig(
        iters=cfg.final_iters, batch_rays=cfg.batch_rays, n_samples=cfg.n_samples, lr=cfg.lr, weights=cfg.weights,
        t_near=cfg.t_near, t_far=inp.t_far, transmittance_mode=cfg.transmittance_mode, disc_every=cfg.disc_every,
        log_every=cfg.log_every, seed=cfg.seed,
    )
    disc = Discriminator.init(seed=cfg.seed) if inp.support is not None else None
    return FieldTrainer(fld, tcfg, disc, inp.support)


def rendered_z(fld, pose, K, cfg: PipelineConfig, t_far: float):
    """Field render at ``pose`` with depth converted to camera z; returns (image, z, final T)."""
    img, dist, final = render_image(fld, pose, K, cfg.n_samples, t_near=cfg.t_near, t_far=t_far)
    z = dist / np.maximum(1.0 - final, 1e-6) / z_to_ray_distance(K)
    return img, z, final


def merge_confident(warped: ViewRecord, rendered, confidence: float) -> ViewRecord:
    """Fill the warp's holes with field-rendered pixels whose final transmittance is below ``confidence``."""
    img, z, final = rendered
    take = ~warped.mask & (final < confidence) & np.isfinite(z) & (z > 0)
    if not take.any():
        return warped
    image = np.where(take[..., None], np.clip(img, 0.0, 1.0), warped.image)
    depth = np.where(take, z, warped.depth)
    return ViewRecord(image, depth, warped.mask | take, warped.pose, warped.intrinsics)


def alignment_overlap(warped: ViewRecord, rendered, cfg: PipelineConfig) -> np.ndarray:
    """Warped pixels where the field is opaque and its depth agrees with the known (warped) depth.

    Early in the progressive loop the field can match colors with depth far
    in front of the true surface; fitting to such pixels would pull correct
    depth toward the field's error.
    """
    _, z, final = rendered
    close = np.abs(z - warped.depth) <= cfg.agreement * warped.depth
    return warped.mask & (final < cfg.confidence) & np.isfinite(z) & close


def reconcile_depth(completed: ViewRecord, overlap: np.ndarray, z_rendered: np.ndarray, cfg: PipelineConfig):
    """Align the completed depth estimate to the field's rendered depth on ``overlap``."""
    info = {"overlap": int(overlap.sum())}
    if overlap.sum() < 2:
        info["skipped"] = "overlap"
        return completed, info
    acfg = AlignConfig(m_pairs=cfg.m_pairs, seed=cfg.seed, iters=cfg.align_iters, lr=cfg.align_lr)
    try:
        d_hat, report = align_depth(DepthPair(completed.depth, z_rendered, overlap, completed.intrinsics), acfg)
    except DegenerateError:
        info["skipped"] = "degenerate"
        return completed, info
    info.update(report)
    d_hat = np.clip(d_hat, cfg.t_near, None)
    return ViewRecord(completed.image, d_hat, completed.mask, completed.pose, completed.intrinsics), info


def run_pipeline(cfg: PipelineConfig, write_outputs: bool = True) -> MetricsReport:
    """Full progressive pipeline; raises StageError (with a partial report) on any stage failure."""
    cfg.validate()
    report = MetricsReport(config=asdict(cfg))
    out = Path(cfg.out)
    stage = "input"
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        report.timings[name] = now - clock
        clock = now

    try:
        inp = load_input(cfg)
        K = inp.origin.intrinsics
        lap("input")

        stage = "init"
        poses = training_poses(cfg, inp.origin.pose)
        s0 = build_initial_database(inp.origin, poses)
        lap("init")

        stage = "completion-model"
        completer = Completer.build(cfg, inp)
        lap("completion_model")

        stage = "progressive"
        fld = init_field(cfg.resolution, inp.bbox_min, inp.bbox_max, density=cfg.init_density)
        trainer = make_trainer(cfg, fld, inp)
        db = ViewDatabase([inp.origin], 0)
        trainer.run(db, cfg.burst_iters, probe=inp.origin)
        oracle = SceneOracle(inp.scene) if inp.scene is not None else None
        for warped in s0.records[1:]:
            rendered = rendered_z(fld, warped.pose, K, cfg, inp.t_far)
            known = merge_confident(warped, rendered, cfg.confidence)
            if not known.mask.any():
                raise DataError(f"view {len(db)} has neither warped nor confidently rendered pixels")
            completed = completer(known)
            if oracle is not None and not known.mask.all() and completed.mask.all():
                truth = oracle.ground_truth(warped.pose, K)
                holes = ~known.mask
                report.completion_mse.append(float(np.mean((completed.image[holes] - truth.image[holes]) ** 2)))
            if completed.mask.all():
                overlap = alignment_overlap(warped, rendered, cfg)
                completed, info = reconcile_depth(completed, overlap, rendered[1], cfg)
            else:
                info = {"skipped": "incomplete"}
            report.alignment.append(info)
            db.append(completed)
            trainer.run(db, cfg.burst_iters, probe=inp.origin)
        lap("progressive")

        stage = "final"
        trainer.run(db, cfg.final_iters, probe=inp.origin)
        report.loss_curve = trainer.log
        lap("final")

        stage = "eval"
        if write_outputs:
            out.mkdir(parents=True, exist_ok=True)
            save_field(fld, out / "field.s123")
            write_log(trainer.log, out / "train_log.ndjson")
            (out / "eval").mkdir(exist_ok=True)
        for i, pose in enumerate(eval_poses(cfg, inp.origin.pose)):
            img, z, _ = rendered_z(fld, pose, K, cfg, inp.t_far)
            entry = {"view": i, "pose": pose.transform.reshape(-1).tolist(), "psnr": None}
            if oracle is not None:
                entry["psnr"] = psnr(np.clip(img, 0, 1), oracle.ground_truth(pose, K).image)
            report.eval_psnr.append(entry)
            if write_outputs:
                write_png(out / "eval" / f"view_{i:03d}.png", img)
                write_pfm(out / "eval" / f"depth_{i:03d}.pfm", z.astype(np.float32))
        lap("eval")
    except ConfigError:
        raise
    except (Scene123Error, ValueError, np.linalg.LinAlgError) as exc:
        report.failed_stage = stage
        if write_outputs:
            report.write(out)
        raise StageError(stage, exc, report) from exc
    if write_outputs:
        report.write(out)
    return report


def ablation_configs(base: PipelineConfig) -> dict[str, PipelineConfig]:
    """The full learned pipeline and the three single-component removals."""
    full = replace(base, backend="toy-mae", use_attention=True)
    return {
        "full": full,
        "no_completion": replace(full, backend="none"),
        "quantize_only": replace(full, use_attention=False),
        "no_dist": replace(full, lambda_dist=0.0),
    }


# ---------------------------------------------------------------------------
# database directories (used by the stage-wise CLI)


def save_database(db: ViewDatabase, directory) -> None:
    """Views as ``view_NNN.png``, ``depth_NNN.pfm``, ``mask_NNN.png`` plus ``poses.json``; origin first."""
    from .io import write_mask, write_pose_document

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    order = [db.origin_index] + [i for i in range(len(db)) if i != db.origin_index]
    for n, i in enumerate(order):
        rec = db.records[i]
        write_png(out / f"view_{n:03d}.png", rec.image)
        write_pfm(out / f"depth_{n:03d}.pfm", np.where(rec.mask, rec.depth, 0.0).astype(np.float32))
        write_mask(out / f"mask_{n:03d}.png", rec.mask)
    write_pose_document(out / "poses.json", db.intrinsics, [db.records[i].pose for i in order])


def load_database(directory) -> ViewDatabase:
    from .io import read_mask

    d = Path(directory)
    if not (d / "poses.json").is_file():
        raise DataError(f"{d}: not a view database (poses.json missing)")
    K, poses = read_pose_document(d / "poses.json")
    records = []
    for n, pose in enumerate(poses):
        mask = read_mask(d / f"mask_{n:03d}.png")
        depth = read_pfm(d / f"depth_{n:03d}.pfm").astype(np.float64)
        depth = np.where(mask, depth, 1.0)
        records.append(ViewRecord(read_png(d / f"view_{n:03d}.png"), depth, mask, pose, K))
    return ViewDatabase(records, 0)
