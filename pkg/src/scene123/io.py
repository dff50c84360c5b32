"""File formats: PFM depth, 8-bit PNG color, JSON pose/intrinsics documents."""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, DomainError
from .geometry import CameraIntrinsics, Pose


def write_pfm(path, data: np.ndarray) -> None:
    """Single-channel little-endian PFM, rows stored bottom-to-top as the format requires."""
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise DomainError("PFM writer only handles single-channel maps")
    h, w = arr.shape
    body = np.ascontiguousarray(np.flipud(arr).astype("<f4"))
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(body.tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise DataError(f"{path}: not a PFM file")
        dims = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", fh.readline())
        if dims is None:
            raise DataError(f"{path}: malformed PFM header")
        w, h = int(dims.group(1)), int(dims.group(2))
        scale = float(fh.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if kind == b"PF" else 1
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != w * h * channels:
        raise DataError(f"{path}: PFM payload size mismatch")
    shape = (h, w, 3) if channels == 3 else (h, w)
    data = np.flipud(data.reshape(shape)).astype(np.float32)
    return data


def write_png(path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, optimize=False)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_pose_document(path, intrinsics: CameraIntrinsics, poses: list[Pose]) -> None:
    doc = {
        "fx": intrinsics.fx,
        "fy": intrinsics.fy,
        "cx": intrinsics.cx,
        "cy": intrinsics.cy,
        "width": intrinsics.width,
        "height": intrinsics.height,
        "frames": [p.transform.reshape(-1).tolist() for p in poses],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_pose_document(path) -> tuple[CameraIntrinsics, list[Pose]]:
    doc = json.loads(Path(path).read_text())
    try:
        K = CameraIntrinsics(float(doc["fx"]), float(doc["fy"]), float(doc["cx"]), float(doc["cy"]),
                             int(doc["width"]), int(doc["height"]))
        frames = doc["frames"]
    except KeyError as exc:
        raise DataError(f"{path}: missing key {exc}") from None
    poses = []
    for i, f in enumerate(frames):
        if len(f) != 16:
            raise DataError(f"{path}: frame {i} has {len(f)} values, expected 16")
        poses.append(Pose(np.asarray(f, dtype=np.float64).reshape(4, 4)))
    return K, poses


def read_png_directory(directory) -> list[np.ndarray]:
    """All PNGs of a directory in lexicographic filename order."""
    files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise DataError(f"{directory}: no PNG files")
    return [read_png(p) for p in files]


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8), mode="L").save(path)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128
