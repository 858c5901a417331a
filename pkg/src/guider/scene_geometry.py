"""
Depth reprojection, multi-view cloud fusion, support-plane removal and
object clustering.

Points are ``(N, 3)`` float64 arrays in meters. Camera frame follows the
pinhole convention (Z along the optical axis, u to the right, v down).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .errors import ConfigError, GeometryError, InputError, ProjectionError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigError("principal point must lie inside the image")

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for an image resampled by ``factor`` (pixel-center convention)."""
        return CameraIntrinsics(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=(self.cx + 0.5) * factor - 0.5,
            cy=(self.cy + 0.5) * factor - 0.5,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
        )


@dataclass
class PointCloud:
    points: np.ndarray
    frame: str = "camera"
    normals: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise InputError("point cloud contains non-finite coordinates")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.points):
                raise InputError("normals and points differ in length")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ConfigError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64).reshape(-1, 3) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)


@dataclass(frozen=True)
class Box3D:
    lo: tuple[float, float, float] = (-1.0, -1.0, 0.0)
    hi: tuple[float, float, float] = (1.0, 1.0, 1.5)

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points).reshape(-1, 3)
        return np.all((p >= np.asarray(self.lo)) & (p <= np.asarray(self.hi)), axis=1)


@dataclass
class Cluster:
    members: np.ndarray
    centroid: np.ndarray


@dataclass
class PlaneFit:
    coeffs: np.ndarray  # (a, b, c, d), unit normal
    inlier_count: int


def reproject_depth(depth: np.ndarray, intr: CameraIntrinsics, return_pixels: bool = False):
    """Back-project every valid depth pixel through the pinhole model.

    Zero, negative and NaN depths are skipped. With ``return_pixels`` the
    ``(N, 2)`` array of (u, v) pixel coordinates is returned alongside.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (intr.height, intr.width):
        raise InputError(f"depth shape {depth.shape} does not match intrinsics {(intr.height, intr.width)}")
    v, u = np.nonzero(np.isfinite(depth) & (depth > 0))
    z = depth[v, u]
    X = (u - intr.cx) / intr.fx * z
    Y = (v - intr.cy) / intr.fy * z
    cloud = PointCloud(np.column_stack([X, Y, z]), frame="camera")
    if return_pixels:
        return cloud, np.column_stack([u, v])
    return cloud


def project_centroid(c, intr: CameraIntrinsics) -> tuple[float, float]:
    X, Y, Z = (float(v) for v in c)
    if not Z > 0:
        raise ProjectionError(f"cannot project point with Z={Z}")
    return intr.fx * X / Z + intr.cx, intr.fy * Y / Z + intr.cy


def transform_and_band_filter(
    cloud: PointCloud,
    T: RigidTransform,
    z_band: tuple[float, float] = (0.3, 2.0),
    frame: str = "base",
) -> PointCloud:
    """Map points through ``T``; keep those whose camera-frame Z lies in ``z_band``."""
    z = cloud.points[:, 2]
    keep = (z >= z_band[0]) & (z <= z_band[1])
    return PointCloud(T.apply(cloud.points[keep]), frame=frame)


def voxel_downsample(points: np.ndarray, leaf: float) -> np.ndarray:
    """One centroid per occupied ``leaf``-sized cube, ordered by voxel key."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return points.copy()
    keys = np.floor(points / leaf).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, points)
    return sums / counts[:, None]


def merge_scan(
    views: list[tuple[PointCloud, RigidTransform]],
    d_min: float = 0.30,
    workspace: Box3D | None = None,
    leaf: float = 0.01,
) -> PointCloud:
    """Fuse scan viewpoints into one voxelized base-frame cloud."""
    if not views:
        raise InputError("merge_scan needs at least one view")
    workspace = workspace or Box3D()
    parts = []
    for cloud, T in views:
        p = cloud.points[np.linalg.norm(cloud.points, axis=1) >= d_min]
        p = T.apply(p)
        parts.append(p[workspace.contains(p)])
    merged = voxel_downsample(np.concatenate(parts, axis=0), leaf)
    if len(merged) == 0:
        log.warning("merge_scan produced an empty cloud")
    return PointCloud(merged, frame="base")


def _canonical_plane(n: np.ndarray, d: float) -> np.ndarray:
    for comp in (n[2], n[1], n[0]):
        if abs(comp) > 1e-12:
            if comp < 0:
                n, d = -n, -d
            break
    return np.array([n[0], n[1], n[2], d])


def fit_plane_ransac(
    cloud: PointCloud,
    dist_thresh: float = 0.0085,
    iters: int = 2000,
    inlier_remove: float = 0.005,
    seed: int = 0,
    downsample: float | None = 0.002,
) -> tuple[PlaneFit, PointCloud]:
    """Dominant plane by 3-point RANSAC; returns the fit and the off-plane residual.

    Hypotheses are scored by inlier count within ``dist_thresh``; the first
    hypothesis with the maximal count wins, so a fixed seed is reproducible.
    """
    pts = cloud.points
    if downsample:
        pts = voxel_downsample(pts, downsample)
    if len(pts) < 3:
        raise GeometryError("plane fit needs at least 3 points")
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1.0):
        raise GeometryError("points are collinear; no unique plane")

    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(pts), size=(iters, 3))
    a, b, c = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    valid = norms > 1e-12
    normals[valid] /= norms[valid, None]
    offsets = -np.einsum("ij,ij->i", normals, a)

    counts = np.full(iters, -1, dtype=np.int64)
    chunk = max(1, int(4_000_000 // max(len(pts), 1)))
    for s in range(0, iters, chunk):
        sl = slice(s, min(s + chunk, iters))
        dist = np.abs(pts @ normals[sl].T + offsets[sl])
        counts[sl] = np.where(valid[sl], (dist <= dist_thresh).sum(axis=0), -1)
    best = int(np.argmax(counts))
    if counts[best] < 0:
        raise GeometryError("every RANSAC hypothesis was degenerate")
    coeffs = _canonical_plane(normals[best], offsets[best])
    signed = pts @ coeffs[:3] + coeffs[3]
    residual = PointCloud(pts[np.abs(signed) > inlier_remove], frame=cloud.frame)
    return PlaneFit(coeffs, int(counts[best])), residual


def canonicalize_normals(normals: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Flip so n_z > 0; when n_z ~ 0 use n_y, then n_x, as the tie-break."""
    n = np.array(normals, dtype=np.float64, copy=True)
    flip = np.zeros(len(n), dtype=bool)
    undecided = np.ones(len(n), dtype=bool)
    for axis in (2, 1, 0):
        comp = n[:, axis]
        decided = undecided & (np.abs(comp) > eps)
        flip |= decided & (comp < 0)
        undecided &= ~decided
    n[flip] *= -1
    return n


def estimate_normals(cloud: PointCloud, radius: float = 0.005, k_nn: int = 5) -> np.ndarray:
    """Per-point normal from the smallest-eigenvalue direction of the local covariance.

    Neighbourhood: up to ``k_nn`` nearest points (the query point included)
    within ``radius``. Fewer than 3 points gives the (0, 0, 1) fallback.
    """
    pts = cloud.points
    if len(pts) == 0:
        raise InputError("cannot estimate normals of an empty cloud")
    out = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
    k = min(k_nn, len(pts))
    tree = cKDTree(pts)
    dist, idx = tree.query(pts, k=k, distance_upper_bound=radius)
    if k == 1:
        return out
    ok = np.isfinite(dist)
    nvalid = ok.sum(axis=1)
    rows = np.nonzero(nvalid >= 3)[0]
    if len(rows):
        safe_idx = np.where(ok, idx, 0)[rows]
        nb = pts[safe_idx]
        w = ok[rows].astype(np.float64)[..., None]
        mean = (nb * w).sum(axis=1) / nvalid[rows, None]
        diff = (nb - mean[:, None, :]) * w
        cov = np.einsum("nki,nkj->nij", diff, diff)
        _, vecs = np.linalg.eigh(cov)
        out[rows] = vecs[:, :, 0]
    return canonicalize_normals(out)


def _density_labels(feats: np.ndarray, eps: float, min_samples: int) -> np.ndarray:
    """Core/border/noise labelling on canonically ordered features; -1 is noise."""
    n = len(feats)
    tree = cKDTree(feats)
    pairs = tree.query_pairs(eps, output_type="ndarray")
    deg = np.ones(n, dtype=np.int64)
    if len(pairs):
        np.add.at(deg, pairs[:, 0], 1)
        np.add.at(deg, pairs[:, 1], 1)
    core = deg >= min_samples
    labels = np.full(n, -1, dtype=np.int64)
    if not core.any():
        return labels
    cp = pairs[core[pairs[:, 0]] & core[pairs[:, 1]]] if len(pairs) else np.zeros((0, 2), int)
    graph = sparse.coo_matrix((np.ones(len(cp)), (cp[:, 0], cp[:, 1])), shape=(n, n))
    _, comp = csgraph.connected_components(graph, directed=False)
    labels[core] = comp[core]
    border = np.nonzero(~core)[0]
    if len(border):
        core_idx = np.nonzero(core)[0]
        ctree = cKDTree(feats[core_idx])
        d, j = ctree.query(feats[border], k=1, distance_upper_bound=eps)
        hit = np.isfinite(d)
        labels[border[hit]] = labels[core_idx[j[hit]]]
    return labels


def cluster_objects(
    cloud: PointCloud,
    normals: np.ndarray | None = None,
    alpha: float = 0.1,
    min_cluster_size: int = 15,
    eps: float = 0.02,
    min_samples: int = 5,
) -> list[Cluster]:
    """Density clustering in the feature space [x, y, z, a*nx, a*ny, a*nz].

    A point is a core point when at least ``min_samples`` points (itself
    included) lie within ``eps``; clusters are connected core points plus
    border points attached to their nearest core. Clusters smaller than
    ``min_cluster_size`` become noise. Centroids use positions only.

    Points are sorted canonically before clustering so the result does not
    depend on input order; clusters come back ordered by their smallest
    member in that canonical order.
    """
    pts = cloud.points
    if len(pts) == 0:
        return []
    if normals is None:
        normals = estimate_normals(cloud)
    feats = np.hstack([pts, alpha * np.asarray(normals, dtype=np.float64)])
    order = np.lexsort(feats.T[::-1])
    labels_sorted = _density_labels(feats[order], eps, min_samples)

    clusters: list[Cluster] = []
    seen: dict[int, int] = {}
    for lab in labels_sorted:
        if lab >= 0 and lab not in seen:
            seen[lab] = len(seen)
    for lab in seen:
        members = np.sort(order[labels_sorted == lab])
        if len(members) < min_cluster_size:
            continue
        clusters.append(Cluster(members=members, centroid=pts[members].mean(axis=0)))
    return clusters


def cluster_prompts(
    depth: np.ndarray,
    intr: CameraIntrinsics,
    z_band: tuple[float, float] = (0.3, 2.0),
    seed: int = 0,
    **ransac_kw,
) -> list[tuple[float, float]]:
    """Depth image to image-plane prompt points: reproject, band-filter, drop plane, cluster, project."""
    cloud = reproject_depth(depth, intr)
    cloud = transform_and_band_filter(cloud, RigidTransform(), z_band, frame="camera")
    if len(cloud) < 3:
        return []
    _, residual = fit_plane_ransac(cloud, seed=seed, **ransac_kw)
    if len(residual) == 0:
        return []
    clusters = cluster_objects(residual, estimate_normals(residual))
    prompts = []
    for c in clusters:
        try:
            prompts.append(project_centroid(c.centroid, intr))
        except ProjectionError:
            continue
    return prompts


def rotation_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return Rz @ Ry @ Rx
