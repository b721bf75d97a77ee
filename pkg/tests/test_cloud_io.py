import struct

import numpy as np
import pytest

from scanreg.cloud_io import (
    Scan,
    ScanFormatError,
    TrajectoryRecord,
    read_scan,
    read_trajectory,
    write_raw_f32x4,
    write_scan_ply,
    write_trajectory,
)
from scanreg.geometry import Pose

from conftest import random_pose


ASCII_PLY = """ply
format ascii 1.0
element vertex 3
property float x
property float y
property float z
end_header
0 0 0
1 0 0
0 1 0
"""


def test_read_ascii_ply(tmp_path):
    path = tmp_path / "three.ply"
    path.write_text(ASCII_PLY)
    scan = read_scan(path, "ply-ascii")
    assert len(scan) == 3
    np.testing.assert_allclose(scan.xyz[1], [1, 0, 0])


def test_read_empty_raw(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    scan = read_scan(path, "raw-f32x4")
    assert len(scan) == 0


def test_raw_f32x4_hand_decoded(tmp_path):
    # two points, byte-level oracle via struct packing
    values = [1.5, -2.25, 3.0, 10.0, 0.125, 4.5, -6.0, 20.0]
    raw = struct.pack("<8f", *values)
    assert len(raw) == 32
    path = tmp_path / "two.bin"
    path.write_bytes(raw)
    scan = read_scan(path, "raw-f32x4")
    assert len(scan) == 2
    np.testing.assert_allclose(scan.xyz[0], [1.5, -2.25, 3.0])
    np.testing.assert_allclose(scan.xyz[1], [0.125, 4.5, -6.0])
    np.testing.assert_allclose(scan.intensity, [10.0, 20.0])


def test_raw_truncated_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * 20)
    with pytest.raises(ScanFormatError, match="multiple of 16"):
        read_scan(path, "raw-f32x4")


def test_nan_coordinates_rejected_with_index(tmp_path):
    data = np.zeros((3, 4), dtype="<f4")
    data[2, 1] = np.nan
    path = tmp_path / "nan.bin"
    path.write_bytes(data.tobytes())
    with pytest.raises(ScanFormatError, match="point 2"):
        read_scan(path, "raw-f32x4")


def test_ply_truncated_payload(tmp_path):
    truncated = ASCII_PLY.rsplit("\n", 2)[0]  # drop last vertex row
    path = tmp_path / "trunc.ply"
    path.write_text(truncated)
    with pytest.raises(ScanFormatError, match="truncated"):
        read_scan(path, "ply-ascii")


def test_ply_bad_header(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text("not a ply\n")
    with pytest.raises(ScanFormatError):
        read_scan(path, "ply-ascii")


def test_ply_binary_roundtrip_with_ring(tmp_path):
    rng = np.random.default_rng(0)
    scan = Scan(rng.normal(size=(64, 3)), intensity=rng.random(64),
                ring=rng.integers(0, 16, 64), timestamp=1.25)
    path = tmp_path / "rt.ply"
    write_scan_ply(path, scan, binary=True)
    back = read_scan(path, "ply-binary-le", timestamp=1.25)
    np.testing.assert_allclose(back.xyz, scan.xyz, atol=0)
    np.testing.assert_allclose(back.intensity, scan.intensity, atol=1e-7)
    np.testing.assert_array_equal(back.ring, scan.ring)


def test_raw_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    scan = Scan(rng.normal(size=(10, 3)).astype(np.float32), intensity=np.ones(10))
    path = tmp_path / "rt.bin"
    write_raw_f32x4(path, scan)
    back = read_scan(path, "raw-f32x4")
    np.testing.assert_allclose(back.xyz, scan.xyz, atol=1e-7)


def test_trajectory_identity_line(tmp_path):
    path = tmp_path / "traj.tum"
    write_trajectory([TrajectoryRecord(0.0, Pose.identity())], path)
    assert path.read_text().splitlines()[0] == "0.000000000 0 0 0 0 0 0 1"


def test_trajectory_roundtrip_100_random(tmp_path):
    rng = np.random.default_rng(2)
    records = [TrajectoryRecord(0.1 * i, random_pose(rng, max_trans=8.0))
               for i in range(100)]
    path = tmp_path / "traj.tum"
    write_trajectory(records, path)
    back = read_trajectory(path)
    assert len(back) == 100
    worst = 0.0
    for a, b in zip(records, back):
        worst = max(worst, np.abs(a.pose.trans - b.pose.trans).max())
        # quaternion sign is preserved by the writer
        worst = max(worst, np.abs(a.pose.quat - b.pose.quat).max())
        worst = max(worst, abs(a.timestamp - b.timestamp))
    assert worst < 1e-8


def test_trajectory_empty_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_trajectory([], tmp_path / "empty.tum")
