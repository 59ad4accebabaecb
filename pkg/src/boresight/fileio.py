"""File formats: MDF1 depth frames, label grids, ASCII PLY point clouds.

MDF1 layout (little-endian):
    magic "MDF1" (4 bytes)
    u32 width, u32 height
    f32 fx, fy, cx, cy
    u64 timestamp_us, u64 sequence
    width*height f32 depths in meters, row-major

The label file reuses the same header followed by width*height u8 labels.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, DepthFrame

FRAME_MAGIC = b"MDF1"
_HEADER = struct.Struct("<4sIIffffQQ")


class FormatError(ValueError):
    """Raised on malformed frame, label, or PLY input."""


def frame_to_bytes(frame: DepthFrame) -> bytes:
    intr = frame.intrinsics
    header = _HEADER.pack(
        FRAME_MAGIC,
        intr.width,
        intr.height,
        intr.fx,
        intr.fy,
        intr.cx,
        intr.cy,
        frame.timestamp_us,
        frame.sequence,
    )
    return header + frame.depth.astype("<f4").tobytes()


def frame_from_bytes(data: bytes) -> DepthFrame:
    if len(data) < _HEADER.size:
        raise FormatError(f"frame blob too short: {len(data)} bytes")
    magic, width, height, fx, fy, cx, cy, ts, seq = _HEADER.unpack_from(data)
    if magic != FRAME_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {FRAME_MAGIC!r}")
    expected = _HEADER.size + width * height * 4
    if len(data) != expected:
        raise FormatError(f"frame blob length {len(data)}, expected {expected}")
    depth = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    intr = CameraIntrinsics(width=width, height=height, fx=fx, fy=fy, cx=cx, cy=cy)
    return DepthFrame(
        intrinsics=intr,
        timestamp_us=ts,
        sequence=seq,
        depth=depth.reshape(height, width),
    )


def write_frame(path: str | Path, frame: DepthFrame) -> None:
    Path(path).write_bytes(frame_to_bytes(frame))


def read_frame(path: str | Path) -> DepthFrame:
    return frame_from_bytes(Path(path).read_bytes())


def write_labels(path: str | Path, frame: DepthFrame, labels: np.ndarray) -> None:
    """Write a per-pixel u8 label grid with the frame's header."""
    labels = np.asarray(labels, dtype=np.uint8)
    if labels.shape != frame.depth.shape:
        raise FormatError("label grid shape does not match frame")
    intr = frame.intrinsics
    header = _HEADER.pack(
        FRAME_MAGIC,
        intr.width,
        intr.height,
        intr.fx,
        intr.fy,
        intr.cx,
        intr.cy,
        frame.timestamp_us,
        frame.sequence,
    )
    Path(path).write_bytes(header + labels.tobytes())


def read_labels(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("label file too short")
    magic, width, height, *_ = _HEADER.unpack_from(data)
    if magic != FRAME_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    expected = _HEADER.size + width * height
    if len(data) != expected:
        raise FormatError(f"label file length {len(data)}, expected {expected}")
    grid = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
    return grid.reshape(height, width).copy()


def write_ply(path: str | Path, cloud: np.ndarray) -> None:
    """ASCII PLY with float x, y, z vertex properties only."""
    pts = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    body = "\n".join(f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in pts)
    text = "\n".join(lines)
    if body:
        text += "\n" + body
    Path(path).write_text(text + "\n")


def read_ply(path: str | Path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError("not a PLY file")
    n_vertices = None
    header_end = None
    for i, line in enumerate(lines[1:], start=1):
        tokens = line.split()
        if tokens[:2] == ["element", "vertex"]:
            n_vertices = int(tokens[2])
        elif tokens[:1] == ["end_header"]:
            header_end = i
            break
    if n_vertices is None or header_end is None:
        raise FormatError("PLY header missing vertex element or end_header")
    rows = lines[header_end + 1 : header_end + 1 + n_vertices]
    if len(rows) != n_vertices:
        raise FormatError(f"PLY body has {len(rows)} rows, header declares {n_vertices}")
    if n_vertices == 0:
        return np.zeros((0, 3))
    out = np.array([[float(v) for v in row.split()[:3]] for row in rows], dtype=np.float64)
    return out
