"""Command line entry point: ``scene123 <command> [--config FILE] [--seed N] [--out DIR]``.

Exit status is 0 on success, 1 for configuration errors and 2 when a stage fails.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .errors import ConfigError, Scene123Error, StageError

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _config(args) -> pl.PipelineConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    if args.config:
        return pl.PipelineConfig.from_file(args.config, overrides)
    return pl.PipelineConfig.from_mapping(overrides)


def cmd_synth(cfg):
    from .field import save_field
    from .io import write_pose_document

    if cfg.mode != "synthetic":
        raise ConfigError("synth needs mode=synthetic")
    inp = pl.load_input(cfg)
    out = Path(cfg.out)
    (out / "input").mkdir(parents=True, exist_ok=True)
    pl.write_png(out / "input" / "image.png", inp.origin.image)
    pl.write_pfm(out / "input" / "depth.pfm", inp.origin.depth.astype(np.float32))
    poses = pl.training_poses(cfg, inp.origin.pose)
    write_pose_document(out / "input" / "poses.json", inp.origin.intrinsics, poses)
    (out / "support").mkdir(exist_ok=True)
    for i, im in enumerate(inp.support.images):
        pl.write_png(out / "support" / f"frame_{i:03d}.png", im)
    save_field(inp.scene.field, out / "scene.s123")
    return f"wrote input view, {len(poses)} poses and {len(inp.support.images)} support frames to {out}"


def cmd_init(cfg):
    inp = pl.load_input(cfg)
    db = pl.build_initial_database(inp.origin, pl.training_poses(cfg, inp.origin.pose))
    pl.save_database(db, Path(cfg.out) / "s0")
    return f"initial database with {len(db)} views"


def cmd_complete(cfg):
    out = Path(cfg.out)
    inp = pl.load_input(cfg)
    s0 = out / "s0"
    db = pl.load_database(s0) if s0.is_dir() else pl.build_initial_database(
        inp.origin, pl.training_poses(cfg, inp.origin.pose))
    completer = pl.Completer.build(cfg, inp)
    if completer.model is not None:
        completer.model.save(out / "completer.s123")
    done = pl.ViewDatabase([completer(r) for r in db.records], 0)
    pl.save_database(done, out / "completed")
    return f"completed {len(done) - 1} views with backend {cfg.backend}"


def cmd_optimize(cfg):
    from .field import save_field
    from .training import write_log

    out = Path(cfg.out)
    src = out / "completed" if (out / "completed").is_dir() else out / "s0"
    db = pl.load_database(src)
    inp = pl.load_input(cfg)
    fld = pl.init_field(cfg.resolution, inp.bbox_min, inp.bbox_max, density=cfg.init_density)
    trainer = pl.make_trainer(cfg, fld, inp)
    trainer.run(db, cfg.final_iters, probe=db.origin)
    save_field(fld, out / "field.s123")
    write_log(trainer.log, out / "train_log.ndjson")
    last = trainer.log[-1] if trainer.log else {}
    return f"trained {cfg.final_iters} iterations on {src.name}; last probe psnr {last.get('probe_psnr')}"


def cmd_render(cfg):
    from .field import load_field

    out = Path(cfg.out)
    fld = load_field(out / "field.s123")
    inp = pl.load_input(cfg)
    (out / "renders").mkdir(exist_ok=True)
    poses = pl.eval_poses(cfg, inp.origin.pose)
    for i, pose in enumerate(poses):
        img, z, _ = pl.rendered_z(fld, pose, inp.origin.intrinsics, cfg, inp.t_far)
        pl.write_png(out / "renders" / f"view_{i:03d}.png", img)
        pl.write_pfm(out / "renders" / f"depth_{i:03d}.pfm", z.astype(np.float32))
    return f"rendered {len(poses)} evaluation views"


def cmd_eval(cfg):
    from .io import read_png

    out = Path(cfg.out)
    inp = pl.load_input(cfg)
    if inp.scene is None:
        raise ConfigError("eval needs synthetic input (ground truth)")
    oracle = pl.SceneOracle(inp.scene)
    report = pl.MetricsReport(config=pl.asdict(cfg))
    for i, pose in enumerate(pl.eval_poses(cfg, inp.origin.pose)):
        path = out / "renders" / f"view_{i:03d}.png"
        if not path.is_file():
            raise pl.DataError(f"{path} missing; run 'render' first")
        truth = oracle.ground_truth(pose, inp.origin.intrinsics).image
        report.eval_psnr.append({"view": i, "pose": pose.transform.reshape(-1).tolist(),
                                 "psnr": pl.psnr(read_png(path), truth)})
    report.write(out)
    return f"mean eval psnr {report.mean_psnr:.2f} dB over {len(report.eval_psnr)} views"


def cmd_run(cfg):
    report = pl.run_pipeline(cfg)
    return f"mean eval psnr {report.mean_psnr} over {len(report.eval_psnr)} views; outputs in {cfg.out}"


COMMANDS = {
    "synth": (cmd_synth, "make the synthetic scene, input view, poses and support frames"),
    "init": (cmd_init, "warp the input view to every training pose"),
    "complete": (cmd_complete, "fill the warped views' holes"),
    "optimize": (cmd_optimize, "train the radiance field on the completed views"),
    "render": (cmd_render, "render the held-out evaluation poses"),
    "eval": (cmd_eval, "PSNR of the renders against ground truth"),
    "run": (cmd_run, "the full progressive pipeline"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file (INI sections)")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--out", help="output directory, overrides [run] out")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    parser = _Parser(prog="scene123", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, help=help_text, parents=[common])
    sub.add_parser("config", help="print the effective configuration", parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "config":
            print(cfg.to_ini(), end="")
            return EXIT_OK
        message = COMMANDS[args.command][0](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"{exc}", file=sys.stderr)
        return EXIT_STAGE
    except (Scene123Error, OSError, ValueError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(message)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
