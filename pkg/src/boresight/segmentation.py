"""Scene segmentation: table-plane removal and patient/bore cluster split.

The table is found by seeded RANSAC plane fitting and removed; the
remaining points are grouped by single-linkage clustering, and the bore
cluster is identified by how well its geometry fits a cylinder of the
known bore radius.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import DegenerateGeometryError, as_cloud


class SegmentationError(RuntimeError):
    """Base class for segmentation failures."""


class NoPlaneFoundError(SegmentationError):
    """RANSAC found no plane with at least 3 inliers."""


class SegmentationFailedError(SegmentationError):
    """Scene could not be split into patient and bore clusters."""


@dataclass(frozen=True)
class Plane:
    """Oriented plane {p : normal . p = offset}, normal is unit length."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            raise ValueError("plane normal must be nonzero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    def distances(self, cloud: np.ndarray) -> np.ndarray:
        return np.abs(as_cloud(cloud) @ self.normal - self.offset)

    def oriented_toward(self, point) -> "Plane":
        """Flip so the normal points toward ``point``."""
        side = np.asarray(point, dtype=np.float64) @ self.normal - self.offset
        if side < 0:
            return Plane(-self.normal, -self.offset)
        return self


@dataclass(frozen=True)
class SegmentationConfig:
    ransac_iterations: int = 500
    ransac_threshold_m: float = 0.01
    cluster_radius_m: float = 0.05
    cluster_min_points: int = 50
    bore_radius_m: float = 0.35
    seed: int = 0


@dataclass(frozen=True)
class SegmentationOutput:
    table_inliers: np.ndarray  # indices into the input cloud
    patient: np.ndarray
    bore: np.ndarray
    plane: Plane = field(repr=False, default=None)


def _fit_plane_lsq(points: np.ndarray) -> Plane:
    """Least-squares plane through points (smallest principal direction)."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if len(s) < 3 or s[1] <= 1e-12 * max(s[0], 1.0):
        raise DegenerateGeometryError("points are collinear; plane is underdetermined")
    normal = vt[2]
    return Plane(normal, normal @ centroid)


def ransac_plane(
    cloud: np.ndarray,
    dist_threshold: float,
    max_iterations: int = 500,
    seed: int = 0,
) -> tuple[Plane, np.ndarray]:
    """Best RANSAC plane, least-squares refit over its inliers.

    Scoring is by inlier count with ties broken by lower mean inlier
    distance. Deterministic for a fixed seed.
    """
    pts = as_cloud(cloud)
    n = len(pts)
    if n < 3:
        raise DegenerateGeometryError(f"plane fit needs >= 3 points, got {n}")
    if dist_threshold <= 0:
        raise ValueError("dist_threshold must be positive")
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")

    rng = np.random.default_rng(seed)
    triplets = rng.integers(0, n, size=(max_iterations, 3))
    a = pts[triplets[:, 0]]
    b = pts[triplets[:, 1]]
    c = pts[triplets[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    ok = norms > 1e-12
    best_count = -1
    best_mean = np.inf
    best = None

    chunk = 128
    for start in range(0, max_iterations, chunk):
        end = min(start + chunk, max_iterations)
        idx = np.nonzero(ok[start:end])[0] + start
        if len(idx) == 0:
            continue
        nrm = normals[idx] / norms[idx, None]
        off = np.einsum("ij,ij->i", nrm, a[idx])
        dists = np.abs(pts @ nrm.T - off)  # (n, m)
        inl = dists <= dist_threshold
        counts = inl.sum(axis=0)
        with np.errstate(invalid="ignore"):
            means = np.where(counts > 0, (dists * inl).sum(axis=0) / np.maximum(counts, 1), np.inf)
        for j in range(len(idx)):
            cnt, mean = int(counts[j]), float(means[j])
            if cnt > best_count or (cnt == best_count and mean < best_mean):
                best_count, best_mean = cnt, mean
                best = (nrm[j], off[j])

    if best is None or best_count < 3:
        raise NoPlaneFoundError(f"best plane has {max(best_count, 0)} inliers")

    plane = Plane(best[0], best[1])
    inliers = np.nonzero(plane.distances(pts) <= dist_threshold)[0]
    plane = _fit_plane_lsq(pts[inliers])
    inliers = np.nonzero(plane.distances(pts) <= dist_threshold)[0]
    if len(inliers) < 3:
        raise NoPlaneFoundError(f"refit plane has {len(inliers)} inliers")
    return plane, inliers


def remove_plane(cloud: np.ndarray, plane: Plane, dist_threshold: float) -> np.ndarray:
    """Points farther than ``dist_threshold`` from the plane, order preserved."""
    pts = as_cloud(cloud)
    if len(pts) == 0:
        return pts
    return pts[plane.distances(pts) > dist_threshold]


def euclidean_clusters(
    cloud: np.ndarray, link_radius: float, min_points: int = 1
) -> list[np.ndarray]:
    """Single-linkage connected components of the link_radius neighbor graph.

    Components smaller than ``min_points`` are dropped. Clusters come back
    in descending size order, ties broken by ascending centroid x.
    """
    if link_radius <= 0:
        raise ValueError("link_radius must be positive")
    pts = as_cloud(cloud)
    n = len(pts)
    if n == 0:
        return []
    tree = cKDTree(pts)
    pairs = tree.query_pairs(r=link_radius, output_type="ndarray")
    if len(pairs):
        data = np.ones(len(pairs), dtype=np.int8)
        adj = coo_matrix((data, (pairs[:, 0], pairs[:, 1])), shape=(n, n))
        _, labels = connected_components(adj, directed=False)
    else:
        labels = np.arange(n)
    clusters = []
    for lab in np.unique(labels):
        members = np.nonzero(labels == lab)[0]
        if len(members) >= min_points:
            clusters.append(pts[members])
    clusters.sort(key=lambda c: (-len(c), c.mean(axis=0)[0]))
    return clusters


def _bore_fit_residual(cluster: np.ndarray, bore_radius: float, seed: int) -> float:
    """Median |radial distance - bore_radius| about an estimated bore axis.

    The axis direction is the cluster's dominant RANSAC plane normal (the
    face annulus for a real bore cluster); the axis anchor is the circle-fit
    center of those planar inliers. The residual is taken over the
    off-plane remainder (the shell for a bore), which is sharply near zero
    only for true bore geometry.
    """
    try:
        plane, inliers = ransac_plane(cluster, dist_threshold=0.01, max_iterations=100, seed=seed)
    except SegmentationError:
        return np.inf
    ring = cluster[inliers]
    # in-plane basis
    n = plane.normal
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    xy = np.column_stack([ring @ e1, ring @ e2])
    # algebraic (Kasa) circle fit for the ring center
    a_mat = np.column_stack([2.0 * xy, np.ones(len(xy))])
    b_vec = np.einsum("ij,ij->i", xy, xy)
    sol, *_ = np.linalg.lstsq(a_mat, b_vec, rcond=None)
    center = sol[0] * e1 + sol[1] * e2 + plane.offset * n
    # distances of cluster points from the axis line (center, direction n)
    rel = cluster - center
    axial = rel @ n
    radial = np.linalg.norm(rel - np.outer(axial, n), axis=1)
    mask = np.ones(len(cluster), dtype=bool)
    mask[inliers] = False
    sample = radial[mask] if mask.sum() >= 20 else radial
    return float(np.median(np.abs(sample - bore_radius)))


def segment_scene(cloud: np.ndarray, config: SegmentationConfig) -> SegmentationOutput:
    """Table removal + clustering + bore/patient labeling.

    Raises SegmentationFailedError when fewer than two clusters survive,
    which maps to the calibration retry prompt.
    """
    pts = as_cloud(cloud)
    if len(pts) == 0:
        raise SegmentationFailedError("empty scene cloud")
    plane, inliers = ransac_plane(
        pts,
        dist_threshold=config.ransac_threshold_m,
        max_iterations=config.ransac_iterations,
        seed=config.seed,
    )
    remainder = remove_plane(pts, plane, config.ransac_threshold_m)
    clusters = euclidean_clusters(
        remainder, link_radius=config.cluster_radius_m, min_points=config.cluster_min_points
    )
    if len(clusters) < 2:
        raise SegmentationFailedError(
            f"need at least 2 clusters after table removal, found {len(clusters)}"
        )
    candidates = clusters[:4]  # residual scoring on the largest few only
    residuals = [
        _bore_fit_residual(c, config.bore_radius_m, seed=config.seed + 1) for c in candidates
    ]
    bore_idx = int(np.argmin(residuals))
    others = [c for i, c in enumerate(clusters) if i != bore_idx]
    return SegmentationOutput(
        table_inliers=inliers,
        patient=others[0],
        bore=candidates[bore_idx],
        plane=plane,
    )
