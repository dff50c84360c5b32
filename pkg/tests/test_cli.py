import json
import subprocess
import sys

import pytest

from scene123.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main

TINY = ["--set", "width=32", "--set", "height=32", "--set", "n_views=3", "--set", "yaw_range=30",
        "--set", "n_eval=2", "--set", "n_support=4", "--set", "resolution=12", "--set", "n_samples=16",
        "--set", "burst_iters=10", "--set", "final_iters=20", "--set", "batch_rays=128", "--set", "log_every=10",
        "--set", "completer_steps=10", "--set", "n_codes=32", "--set", "align_iters=10"]


def test_config_prints_ini(capsys):
    assert main(["config", "--seed", "5"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "[run]" in out and "seed = 5" in out


def test_bad_config_exit_code(tmp_path, capsys):
    (tmp_path / "c.ini").write_text("[poses]\nn_views = -2\n")
    assert main(["run", "--config", str(tmp_path / "c.ini")]) == EXIT_CONFIG
    assert main(["run", "--set", "nonsense"]) == EXIT_CONFIG
    assert main(["run", "--set", "warp_speed=9"]) == EXIT_CONFIG


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as info:
        main(["teleport"])
    assert info.value.code == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        main(["run", "--seed", "x"])
    assert info.value.code == EXIT_CONFIG


def test_stage_failure_exit_code(tmp_path, capsys):
    # rendering before anything was optimised has no field checkpoint to read
    assert main(["render", "--out", str(tmp_path), *TINY]) == EXIT_STAGE


def test_stagewise_commands(tmp_path, capsys):
    out = str(tmp_path / "o")
    for cmd in ("synth", "init", "complete", "optimize", "render", "eval"):
        assert main([cmd, "--out", out, "--set", "backend=mean", *TINY]) == EXIT_OK, cmd
    assert (tmp_path / "o" / "input" / "depth.pfm").is_file()
    assert (tmp_path / "o" / "s0" / "poses.json").is_file()
    assert (tmp_path / "o" / "completed" / "mask_001.png").is_file()
    doc = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert len(doc["eval"]) == 2


def test_entry_point_runs(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "scene123.cli", "run", "--out", str(tmp_path), *TINY],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_OK, proc.stderr
    assert "mean eval psnr" in proc.stdout
    assert (tmp_path / "metrics.json").is_file()
