"""Time the hot kernels with numba on and off.

Runs itself once per backend in a subprocess (the switch is read at import
time) and prints a small table:

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat):
    fn()  # warm-up; also triggers JIT compilation
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def measure(repeat):
    from scene123 import backend
    from scene123.field import march_rays, render_rays_backward
    from scene123.geometry import CameraIntrinsics, Pose, warp_view
    from scene123.synthetic import make_synthetic_scene

    scene = make_synthetic_scene(0)
    K = CameraIntrinsics.from_fov(128, 128, 60)
    view = scene.render_view(Pose.identity(), K, n_samples=64)
    rng = np.random.default_rng(0)
    n = 4096
    origins = np.zeros((n, 3))
    dirs = rng.normal(size=(n, 3))
    dirs[:, 2] = np.abs(dirs[:, 2]) + 1.0
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    fld = scene.field
    res = march_rays(fld, origins, dirs, 0.05, scene.t_far, 64, True, 1)
    g = rng.normal(size=(n, 3))
    return {
        "backend": backend(),
        "warp 128x128": _best(lambda: warp_view(view, Pose.from_yaw_pitch(20)), repeat),
        "render 4096x64": _best(lambda: march_rays(fld, origins, dirs, 0.05, scene.t_far, 64, True, 1), repeat),
        "backward 4096x64": _best(lambda: render_rays_backward(fld, res, g), repeat),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(measure(args.repeat)))
        return
    rows = []
    for flag in ("0", "1"):
        env = dict(os.environ, SCENE123_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                             env=env, capture_output=True, text=True, check=True)
        rows.append(json.loads(out.stdout.strip().splitlines()[-1]))
    nb, np_ = rows
    print(f"{'kernel':<20}{'numba s':>10}{'numpy s':>10}{'speedup':>9}")
    for key in nb:
        if key == "backend":
            continue
        print(f"{key:<20}{nb[key]:>10.4f}{np_[key]:>10.4f}{np_[key] / nb[key]:>8.1f}x")
    if nb["backend"] != "numba":
        print("numba is not installed; both columns used numpy")


if __name__ == "__main__":
    main()
