"""Depth-frame handling, back-projection and rigid-transform algebra.

Conventions used throughout the package:

* A point cloud is a float64 ndarray of shape (N, 3), units meters.
* Depth frames store the pinhole z-depth per pixel (the camera-frame z
  coordinate of the surface point, not the Euclidean ray length).
* Invalid depth is encoded as 0.0; anything beyond ``MAX_RANGE_M`` is
  treated as invalid and clamped to 0.
* Camera frame: x right, y down, z forward (into the scene).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

MAX_RANGE_M = 20.0

VALID_MEDIAN_WINDOWS = (3, 5, 7)


class DegenerateGeometryError(ValueError):
    """Raised when a geometric fit has too few or degenerate inputs."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera model, zero distortion."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1x1, got {self.width}x{self.height}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class DepthFrame:
    """One depth image: z-depth grid plus intrinsics and stream metadata.

    ``depth`` has shape (height, width), float64, meters. 0.0 marks an
    invalid pixel.
    """

    intrinsics: CameraIntrinsics
    timestamp_us: int
    sequence: int
    depth: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError(
                f"depth grid shape {d.shape} does not match intrinsics "
                f"{self.intrinsics.height}x{self.intrinsics.width}"
            )
        if not np.all(np.isfinite(d)):
            raise ValueError("depth grid contains non-finite values")
        if np.any(d < 0):
            raise ValueError("depth values must be >= 0")
        d = np.where(d > MAX_RANGE_M, 0.0, d)
        object.__setattr__(self, "depth", d)

    @property
    def valid_mask(self) -> np.ndarray:
        return self.depth > 0.0


def as_cloud(points) -> np.ndarray:
    """Coerce to an (N, 3) float64 cloud, rejecting non-finite coordinates."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point cloud contains non-finite coordinates")
    return pts


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) rotation + translation. ``rotation`` is 3x3 row-major orthonormal."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def check(self, tol: float = 1e-9) -> "RigidTransform":
        """Validate the orthonormality and determinant invariants."""
        r = self.rotation
        if not np.allclose(r.T @ r, np.eye(3), atol=tol):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > max(tol, 1e-9):
            raise ValueError("rotation determinant is not +1")
        return self

    def apply(self, cloud: np.ndarray) -> np.ndarray:
        """p' = R p + t, per point."""
        pts = as_cloud(cloud)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Returns the transform applying ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    @staticmethod
    def rotation_about_z(angle_rad: float) -> "RigidTransform":
        c, s = np.cos(angle_rad), np.sin(angle_rad)
        return RigidTransform(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), np.zeros(3))


def rotation_angle_deg(r: np.ndarray) -> float:
    """Geodesic rotation angle of a 3x3 rotation matrix, in degrees."""
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def median_filter(frame: DepthFrame, window: int) -> DepthFrame:
    """Median-filter a depth frame, ignoring invalid (zero) pixels.

    Each output pixel is the median of the valid pixels in the
    window x window neighborhood centered on it (the pixel itself
    included). Pixels with no valid neighbor stay invalid.
    """
    if window not in VALID_MEDIAN_WINDOWS:
        raise ValueError(f"window must be one of {VALID_MEDIAN_WINDOWS}, got {window}")
    h, w = frame.depth.shape
    half = window // 2
    padded = np.full((h + 2 * half, w + 2 * half), np.nan)
    padded[half : half + h, half : half + w] = np.where(frame.depth > 0, frame.depth, np.nan)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (window, window))
    flat = windows.reshape(h, w, window * window)
    with np.errstate(all="ignore"):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", category=RuntimeWarning)
            med = np.nanmedian(flat, axis=2)
    med = np.where(np.isnan(med), 0.0, med)
    return replace(frame, depth=med)


def occlusion_mask(frame: DepthFrame, jump_threshold: float) -> np.ndarray:
    """Flag pixels on depth discontinuities or invalid pixels.

    A pixel is flagged when the absolute depth difference to any valid
    4-neighbor exceeds ``jump_threshold``. Comparisons against invalid
    neighbors are skipped; invalid pixels are always flagged themselves.
    """
    if jump_threshold <= 0:
        raise ValueError("jump_threshold must be positive")
    d = frame.depth
    valid = d > 0
    mask = ~valid

    def flag_pairs(a_slice, b_slice):
        both = valid[a_slice] & valid[b_slice]
        jump = both & (np.abs(d[a_slice] - d[b_slice]) > jump_threshold)
        mask[a_slice] |= jump
        mask[b_slice] |= jump

    flag_pairs(np.s_[:, :-1], np.s_[:, 1:])  # horizontal neighbors
    flag_pairs(np.s_[:-1, :], np.s_[1:, :])  # vertical neighbors
    return mask


def backproject(frame: DepthFrame, mask: np.ndarray | None = None) -> np.ndarray:
    """Back-project valid, unmasked pixels to camera-frame 3D points.

    x = (u - cx) z / fx,  y = (v - cy) z / fy,  z = depth.
    ``mask`` marks pixels to exclude (true = excluded).
    """
    intr = frame.intrinsics
    keep = frame.valid_mask
    if mask is not None:
        if mask.shape != frame.depth.shape:
            raise ValueError("mask shape does not match frame")
        keep = keep & ~mask
    v, u = np.nonzero(keep)
    z = frame.depth[v, u]
    x = (u - intr.cx) * z / intr.fx
    y = (v - intr.cy) * z / intr.fy
    return np.column_stack([x, y, z])


def voxel_downsample(cloud: np.ndarray, voxel: float) -> np.ndarray:
    """One centroid per occupied voxel; voxel keys by floor(coord / voxel).

    Output is ordered by voxel key, so it is deterministic and independent
    of the input point order.
    """
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    pts = as_cloud(cloud)
    if len(pts) == 0:
        return pts
    keys = np.floor(pts / voxel).astype(np.int64)
    # lexicographic group-by on the integer keys
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    keys_sorted = keys[order]
    pts_sorted = pts[order]
    boundary = np.ones(len(pts), dtype=bool)
    boundary[1:] = np.any(keys_sorted[1:] != keys_sorted[:-1], axis=1)
    starts = np.nonzero(boundary)[0]
    sums = np.add.reduceat(pts_sorted, starts, axis=0)
    counts = np.diff(np.append(starts, len(pts)))
    return sums / counts[:, None]


def estimate_rigid_from_correspondences(
    src: np.ndarray, dst: np.ndarray, pairs: np.ndarray | None = None
) -> RigidTransform:
    """Least-squares SE(3) fit: minimizes sum ||R src + t - dst||^2.

    ``pairs`` is an (M, 2) array of (src index, dst index); when omitted,
    src[i] corresponds to dst[i]. Reflections are rejected by flipping the
    sign of the smallest singular direction (determinant guard).
    """
    src = as_cloud(src)
    dst = as_cloud(dst)
    if pairs is not None:
        pairs = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
        a = src[pairs[:, 0]]
        b = dst[pairs[:, 1]]
    else:
        if len(src) != len(dst):
            raise ValueError("src and dst must have equal length without explicit pairs")
        a, b = src, dst
    if len(a) < 3:
        raise DegenerateGeometryError(f"need >= 3 correspondences, got {len(a)}")
    ca = a.mean(axis=0)
    cb = b.mean(axis=0)
    a0 = a - ca
    b0 = b - cb
    # collinear/degenerate source configurations leave rotation unconstrained
    sv = np.linalg.svd(a0, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1.0):
        raise DegenerateGeometryError("correspondences are collinear or coincident")
    h = a0.T @ b0
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = cb - r @ ca
    return RigidTransform(r, t)
