"""
Little-endian binary containers.

LIMG: b"LIMG", u32 width, u32 height, f32[H*W] depth, u32[H*W] source index (0xFFFFFFFF = empty)
FLOW: b"FLOW", u32 width, u32 height, f32[H*W] du, dv, sigma_u, sigma_v, u8[H*W] valid
All grids are row-major.
"""
import os
import struct

import numpy as np

from app.core.errors import IoFailure, MalformedFile
from app.core.structures import EMPTY_INDEX, FlowField, LidarImage

LIMG_MAGIC = b"LIMG"
FLOW_MAGIC = b"FLOW"
_HEADER = struct.Struct("<4sII")
_EMPTY_U32 = 0xFFFFFFFF


def _read(path, magic: bytes):
    if not os.path.isfile(path):
        raise IoFailure(f"File not found: {path}")
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise MalformedFile(f"{path}: truncated header")
    tag, width, height = _HEADER.unpack_from(blob)
    if tag != magic:
        raise MalformedFile(f"{path}: bad magic {tag!r}, expected {magic!r}")
    return blob[_HEADER.size:], width, height


def _write(path, payload: bytes):
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "wb") as f:
            f.write(payload)
    except OSError as e:
        raise IoFailure(f"Cannot write {path}: {e}") from e


def save_lidar_image(image: LidarImage, path):
    H, W = image.shape
    index = np.where(image.source_index == EMPTY_INDEX, _EMPTY_U32, image.source_index).astype("<u4")
    payload = (_HEADER.pack(LIMG_MAGIC, W, H)
               + image.depth.astype("<f4").tobytes()
               + index.tobytes())
    _write(path, payload)


def load_lidar_image(path) -> LidarImage:
    """Sub-pixel projections are not stored; see projection.restore_subpixel."""
    body, W, H = _read(path, LIMG_MAGIC)
    n = W * H
    if len(body) != 8 * n:
        raise MalformedFile(f"{path}: payload of {len(body)} bytes for a {W}x{H} image")
    depth = np.frombuffer(body, dtype="<f4", count=n).astype(np.float64).reshape(H, W)
    raw = np.frombuffer(body, dtype="<u4", count=n, offset=4 * n).astype(np.int64).reshape(H, W)
    index = np.where(raw == _EMPTY_U32, EMPTY_INDEX, raw)
    return LidarImage(depth, index, np.full((H, W, 2), np.nan))


def save_flow(flow: FlowField, path):
    H, W = flow.shape
    grids = [flow.du, flow.dv, flow.sigma_u, flow.sigma_v]
    payload = _HEADER.pack(FLOW_MAGIC, W, H)
    payload += b"".join(np.asarray(g).astype("<f4").tobytes() for g in grids)
    payload += np.asarray(flow.valid).astype(np.uint8).tobytes()
    _write(path, payload)


def load_flow(path) -> FlowField:
    body, W, H = _read(path, FLOW_MAGIC)
    n = W * H
    if len(body) != 17 * n:
        raise MalformedFile(f"{path}: payload of {len(body)} bytes for a {W}x{H} flow field")
    grids = [np.frombuffer(body, dtype="<f4", count=n, offset=4 * n * k).astype(np.float64).reshape(H, W)
             for k in range(4)]
    valid = np.frombuffer(body, dtype=np.uint8, count=n, offset=16 * n).reshape(H, W).astype(bool)
    return FlowField(*grids, valid)
