import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scene123.errors import DataError, DomainError
from scene123.geometry import CameraIntrinsics, Pose
from scene123.io import (read_mask, read_pfm, read_png, read_png_directory, read_pose_document,
                         write_mask, write_pfm, write_png, write_pose_document)

finite32 = st.floats(-1e6, 1e6, width=32, allow_nan=False)


@given(arrays(np.float32, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=finite32))
def test_pfm_round_trip_bit_exact(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("pfm") / "d.pfm"
    write_pfm(path, data)
    np.testing.assert_array_equal(read_pfm(path), data)


def test_pfm_rows_bottom_up(tmp_path):
    write_pfm(tmp_path / "d.pfm", np.array([[1.0, 2.0], [3.0, 4.0]]))
    raw = (tmp_path / "d.pfm").read_bytes()
    body = np.frombuffer(raw[raw.index(b"-1.0\n") + 5:], "<f4")
    np.testing.assert_array_equal(body, [3, 4, 1, 2])


def test_pfm_rejects(tmp_path):
    with pytest.raises(DomainError):
        write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 3)))
    (tmp_path / "bad.pfm").write_bytes(b"P6\n1 1\n255\n")
    with pytest.raises(DataError):
        read_pfm(tmp_path / "bad.pfm")
    (tmp_path / "short.pfm").write_bytes(b"Pf\n2 2\n-1.0\n" + b"\0" * 8)
    with pytest.raises(DataError):
        read_pfm(tmp_path / "short.pfm")


def test_png_quantizes_to_255ths(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3)) / 255.0
    write_png(tmp_path / "a.png", img)
    np.testing.assert_array_equal(read_png(tmp_path / "a.png"), img)
    write_png(tmp_path / "b.png", np.full((2, 2, 3), 1.7))
    assert read_png(tmp_path / "b.png").max() == 1.0


def test_png_directory_order(tmp_path):
    for name, v in (("b.png", 0.0), ("a.png", 1.0)):
        write_png(tmp_path / name, np.full((2, 2, 3), v))
    first, second = read_png_directory(tmp_path)
    assert first.max() == 1.0 and second.max() == 0.0
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(DataError):
        read_png_directory(empty)


def test_pose_document_round_trip(tmp_path):
    K = CameraIntrinsics(50.0, 51.0, 31.5, 30.0, 64, 60)
    poses = [Pose.identity(), Pose.from_yaw_pitch(20, -5, (0.1, 0.2, 0.3))]
    write_pose_document(tmp_path / "p.json", K, poses)
    K2, poses2 = read_pose_document(tmp_path / "p.json")
    assert K2 == K and poses2 == poses


def test_pose_document_errors(tmp_path):
    (tmp_path / "a.json").write_text('{"fx": 1}')
    with pytest.raises(DataError):
        read_pose_document(tmp_path / "a.json")
    (tmp_path / "b.json").write_text('{"fx": 1, "fy": 1, "cx": 1, "cy": 1, "width": 4, "height": 4,'
                                     ' "frames": [[1, 0, 0]]}')
    with pytest.raises(DataError):
        read_pose_document(tmp_path / "b.json")


@given(arrays(bool, st.tuples(st.integers(2, 8), st.integers(2, 8))))
def test_mask_round_trip(tmp_path_factory, mask):
    path = tmp_path_factory.mktemp("m") / "m.png"
    write_mask(path, mask)
    np.testing.assert_array_equal(read_mask(path), mask)
