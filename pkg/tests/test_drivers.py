import json
import struct

import numpy as np
import pytest
from PIL import Image

from app.analysis.geometry import CameraIntrinsics, PointCloud, PoseSE3
from app.core.errors import IoFailure, MalformedFile, MalformedScan
from app.core.structures import EMPTY_INDEX, FlowField, LidarImage, TrajectoryFile
from app.drivers.binary_codec import load_flow, load_lidar_image, save_flow, save_lidar_image
from app.drivers.kitti import (
    load_image, load_intrinsics, load_labels, load_scan, load_trajectory, save_intrinsics, save_scan,
    save_trajectory,
)
from app.drivers.ply import export_ply, read_ply


# ── Velodyne scans ──────────────────────────────────────────────────────

def test_scan_records(tmp_path):
    path = tmp_path / "000000.bin"
    np.array([[1.0, 2.0, 3.0, 0.5], [-4.0, 0.25, 8.0, 1.0]], dtype="<f4").tofile(path)
    cloud = load_scan(path)
    np.testing.assert_array_equal(cloud.points, [[1.0, 2.0, 3.0], [-4.0, 0.25, 8.0]])
    np.testing.assert_array_equal(cloud.intensity, [0.5, 1.0])


def test_scan_sizes(tmp_path):
    path = tmp_path / "scan.bin"
    path.write_bytes(b"\x00" * 16)
    assert len(load_scan(path)) == 1
    path.write_bytes(b"\x00" * 17)
    with pytest.raises(MalformedScan):
        load_scan(path)


def test_scan_with_nan_is_malformed(tmp_path):
    path = tmp_path / "scan.bin"
    np.array([[np.nan, 0.0, 0.0, 0.0]], dtype="<f4").tofile(path)
    with pytest.raises(MalformedScan):
        load_scan(path)


def test_scan_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    cloud = PointCloud(rng.uniform(-50, 50, (100, 3)).astype(np.float32), rng.uniform(0, 1, 100))
    save_scan(cloud, tmp_path / "out" / "scan.bin")
    back = load_scan(tmp_path / "out" / "scan.bin")
    np.testing.assert_array_equal(back.points, cloud.points)
    np.testing.assert_allclose(back.intensity, cloud.intensity, atol=1e-7)


def test_missing_scan(tmp_path):
    with pytest.raises(IoFailure):
        load_scan(tmp_path / "nope.bin")


# ── Labels ──────────────────────────────────────────────────────────────

def test_labels_keep_semantic_bits(tmp_path):
    path = tmp_path / "000000.label"
    np.array([40, (7 << 16) | 252, 0], dtype="<u4").tofile(path)
    assert load_labels(path).tolist() == [40, 252, 0]


def test_labels_size_check(tmp_path):
    path = tmp_path / "bad.label"
    path.write_bytes(b"\x00" * 6)
    with pytest.raises(MalformedFile):
        load_labels(path)


# ── Trajectories ────────────────────────────────────────────────────────

ROW = "1 0 0 {x} 0 1 0 0 0 0 1 0"


def test_trajectory_without_timestamps(tmp_path):
    path = tmp_path / "poses.txt"
    path.write_text("\n".join(ROW.format(x=i) for i in range(3)) + "\n")
    traj = load_trajectory(path)
    assert traj.timestamps.tolist() == [0.0, 1.0, 2.0]
    assert [p.translation[0] for p in traj.poses] == [0.0, 1.0, 2.0]


def test_trajectory_with_timestamps(tmp_path):
    path = tmp_path / "poses.txt"
    path.write_text("# stamp + 3x4\n0.5 " + ROW.format(x=1) + "\n\n0.75 " + ROW.format(x=2) + "\n")
    traj = load_trajectory(path)
    assert traj.timestamps.tolist() == [0.5, 0.75]
    assert len(traj) == 2


@pytest.mark.parametrize("body", [
    "1 2 3\n",
    ROW.format(x="abc") + "\n",
    "1 " + ROW.format(x=0) + "\n1 " + ROW.format(x=1) + "\n",
    "2 0 0 0 0 1 0 0 0 0 1 0\n",
])
def test_malformed_trajectory(tmp_path, body):
    path = tmp_path / "poses.txt"
    path.write_text(body)
    with pytest.raises(MalformedFile):
        load_trajectory(path)


def test_trajectory_round_trip(tmp_path):
    poses = [PoseSE3.from_euler("xyz", [i, 2 * i, -i], translation=(i, 0.5, -2.0)) for i in range(5)]
    traj = TrajectoryFile(np.array([0.1, 0.2, 0.35, 0.4, 1.0]), poses)
    for stamped in (True, False):
        path = tmp_path / f"traj_{stamped}.txt"
        save_trajectory(traj, path, with_timestamps=stamped)
        back = load_trajectory(path)
        for a, b in zip(poses, back.poses):
            np.testing.assert_allclose(b.matrix, a.matrix, atol=1e-12)
        if stamped:
            np.testing.assert_array_equal(back.timestamps, traj.timestamps)


# ── Intrinsics and images ───────────────────────────────────────────────

def test_intrinsics_round_trip(tmp_path):
    K = CameraIntrinsics(fx=718.856, fy=718.856, cx=607.19, cy=185.22, width=1241, height=376)
    save_intrinsics(K, tmp_path / "K.json", frame="robot-x-forward")
    back, frame = load_intrinsics(tmp_path / "K.json")
    assert back == K
    assert frame == "robot-x-forward"


def test_intrinsics_default_frame(tmp_path):
    path = tmp_path / "K.json"
    path.write_text(json.dumps({"fx": 100, "fy": 100, "cx": 50, "cy": 40, "width": 100, "height": 80}))
    _, frame = load_intrinsics(path)
    assert frame == "pinhole-z-forward"


@pytest.mark.parametrize("body", [
    "{not json",
    json.dumps({"fx": -1, "fy": 100, "cx": 50, "cy": 40, "width": 100, "height": 80}),
    json.dumps({"fx": 100, "fy": 100, "cx": 500, "cy": 40, "width": 100, "height": 80}),
    json.dumps({"fx": 100, "fy": 100, "cx": 50, "cy": 40, "width": 100, "height": 80, "frame": "fisheye"}),
])
def test_bad_intrinsics(tmp_path, body):
    path = tmp_path / "K.json"
    path.write_text(body)
    with pytest.raises(MalformedFile):
        load_intrinsics(path)


def test_image_is_rgb(tmp_path):
    gray = np.arange(12, dtype=np.uint8).reshape(3, 4)
    Image.fromarray(gray).save(tmp_path / "img.png")
    rgb = load_image(tmp_path / "img.png")
    assert rgb.shape == (3, 4, 3)
    np.testing.assert_array_equal(rgb[..., 1], gray)


def test_bad_image(tmp_path):
    (tmp_path / "img.png").write_bytes(b"not a png")
    with pytest.raises(IoFailure):
        load_image(tmp_path / "img.png")


# ── LIMG / FLOW containers ──────────────────────────────────────────────

def _lidar_image() -> LidarImage:
    depth = np.zeros((2, 3))
    index = np.full((2, 3), EMPTY_INDEX, dtype=np.int64)
    depth[0, 1], index[0, 1] = 4.5, 17
    depth[1, 2], index[1, 2] = 12.25, 3
    uv = np.full((2, 3, 2), np.nan)
    uv[0, 1], uv[1, 2] = [1.2, -0.1], [1.9, 1.3]
    return LidarImage(depth, index, uv)


def test_lidar_image_layout(tmp_path):
    path = tmp_path / "frame.limg"
    save_lidar_image(_lidar_image(), path)
    blob = path.read_bytes()
    assert blob[:4] == b"LIMG"
    assert struct.unpack_from("<II", blob, 4) == (3, 2)
    assert len(blob) == 12 + 6 * 4 + 6 * 4
    assert struct.unpack_from("<I", blob, 12 + 24)[0] == 0xFFFFFFFF


def test_lidar_image_reload(tmp_path):
    image = _lidar_image()
    save_lidar_image(image, tmp_path / "frame.limg")
    back = load_lidar_image(tmp_path / "frame.limg")
    np.testing.assert_array_equal(back.depth, image.depth)
    np.testing.assert_array_equal(back.source_index, image.source_index)
    assert np.all(np.isnan(back.uv))


def test_flow_layout_and_reload(tmp_path):
    shape = (2, 2)
    flow = FlowField(np.array([[1.5, 0.0], [-2.0, 0.0]]), np.array([[0.25, 0.0], [3.0, 0.0]]),
                     np.full(shape, 0.5), np.full(shape, 2.0), np.array([[True, False], [True, False]]))
    path = tmp_path / "frame.flow"
    save_flow(flow, path)
    blob = path.read_bytes()
    assert blob[:4] == b"FLOW"
    assert len(blob) == 12 + 17 * 4

    back = load_flow(path)
    for name in ("du", "dv", "sigma_u", "sigma_v", "valid"):
        np.testing.assert_array_equal(getattr(back, name), getattr(flow, name))


def test_container_errors(tmp_path):
    save_lidar_image(_lidar_image(), tmp_path / "frame.limg")
    with pytest.raises(MalformedFile):
        load_flow(tmp_path / "frame.limg")

    blob = (tmp_path / "frame.limg").read_bytes()
    (tmp_path / "short.limg").write_bytes(blob[:-3])
    with pytest.raises(MalformedFile):
        load_lidar_image(tmp_path / "short.limg")

    (tmp_path / "tiny.limg").write_bytes(b"LIM")
    with pytest.raises(MalformedFile):
        load_lidar_image(tmp_path / "tiny.limg")

    with pytest.raises(IoFailure):
        load_flow(tmp_path / "missing.flow")


# ── PLY ─────────────────────────────────────────────────────────────────

def test_ply_uncolored(tmp_path):
    cloud = PointCloud([[0.1, 0.2, 0.3], [1.0, -2.0, 3.5]])
    export_ply(cloud, tmp_path / "map.ply")
    text = (tmp_path / "map.ply").read_text()
    assert "format ascii" in text
    assert "element vertex 2" in text
    assert "red" not in text
    back = read_ply(tmp_path / "map.ply")
    np.testing.assert_allclose(back.points, cloud.points, atol=1e-6)
    assert back.colors is None


def test_ply_colored(tmp_path):
    cloud = PointCloud([[0.0, 0.0, 1.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]],
                       colors=[[255, 0, 0], [9, 9, 9], [0, 0, 255]], color_mask=[True, False, True])
    export_ply(cloud, tmp_path / "all.ply")
    assert "property uchar red" in (tmp_path / "all.ply").read_text()
    back = read_ply(tmp_path / "all.ply")
    assert back.colors.tolist() == [[255, 0, 0], [0, 0, 0], [0, 0, 255]]

    export_ply(cloud, tmp_path / "colored.ply", colored_only=True)
    back = read_ply(tmp_path / "colored.ply")
    np.testing.assert_array_equal(back.points, [[0.0, 0.0, 1.0], [2.0, 2.0, 2.0]])
    assert back.colors.tolist() == [[255, 0, 0], [0, 0, 255]]


def test_ply_errors(tmp_path):
    (tmp_path / "bad.ply").write_text("not a ply\n")
    with pytest.raises(MalformedFile):
        read_ply(tmp_path / "bad.ply")
    (tmp_path / "bin.ply").write_text("ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(MalformedFile):
        read_ply(tmp_path / "bin.ply")
    with pytest.raises(IoFailure):
        read_ply(tmp_path / "missing.ply")


def test_ply_empty_cloud_is_refused(tmp_path):
    with pytest.raises(IoFailure):
        export_ply(PointCloud(np.empty((0, 3))), tmp_path / "empty.ply")
    cloud = PointCloud([[0.0, 0.0, 1.0]], colors=[[1, 2, 3]], color_mask=[False])
    with pytest.raises(IoFailure):
        export_ply(cloud, tmp_path / "none_colored.ply", colored_only=True)
