"""
Parallel-jaw grasp feasibility on 2D object masks.

Three tests, each producing an image mask:

- bounding box: short side of the min-area rectangle fits the jaw opening
- morphological: a disk of the jaw half-aperture erodes the mask away
- advanced: some contour point pair admits a finger rectangle that is
  solidly inside the object with free space past both ends

Image points are (x, y) = (column, row) in pixels; pixel (r, c) covers the
square [c - 0.5, c + 0.5) x [r - 0.5, r + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InputError

_EIGHT = np.ones((3, 3), dtype=bool)
_SPAN_STEP = 0.5
_BISECT_ITERS = 40


@dataclass(frozen=True)
class GripperSpec:
    r: float = 0.0425
    finger_width: float = 0.00825
    clearance_extension: float = 0.002
    cov_main_min: float = 0.99
    cov_extra_max: float = 0.95
    d_skip: float = 1.0

    def validate(self) -> None:
        if not (self.r > 0 and self.finger_width > 0 and self.clearance_extension >= 0):
            raise ConfigError("gripper r and finger_width must be > 0, extension >= 0")
        if not (0 < self.cov_main_min <= 1 and 0 < self.cov_extra_max <= 1):
            raise ConfigError("coverage thresholds must lie in (0, 1]")
        if self.d_skip < 0:
            raise ConfigError("grasp.d_skip must be >= 0")


@dataclass
class ObjectMask2D:
    mask: np.ndarray
    z_obj: float
    fx: float

    def __post_init__(self) -> None:
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.mask.any():
            raise InputError("object mask is empty")
        if not (self.z_obj > 0 and self.fx > 0):
            raise InputError("object depth and focal length must be positive")

    @property
    def gamma(self) -> float:
        """Meters per pixel at the object's depth."""
        return self.z_obj / self.fx


@dataclass
class OrientedRect:
    center: np.ndarray
    axis: np.ndarray  # unit vector along ``length``
    length: float
    height: float

    def corners(self) -> np.ndarray:
        u = self.axis
        v = np.array([-u[1], u[0]])
        hl, hh = self.length / 2, self.height / 2
        return np.array([self.center + su * hl * u + sv * hh * v for su, sv in ((-1, -1), (1, -1), (1, 1), (-1, 1))])


@dataclass
class GraspCandidate:
    p_a: np.ndarray
    p_b: np.ndarray
    midpoint: np.ndarray
    normal: np.ndarray
    clearance_px: float
    cov_main: float = 0.0
    cov_extra: float = 0.0
    feasible: bool = False
    main_rect: OrientedRect | None = None
    clear_rect: OrientedRect | None = None

    def to_record(self) -> dict:
        return {
            "p_A": [float(v) for v in self.p_a],
            "p_B": [float(v) for v in self.p_b],
            "delta_perp_px": float(self.clearance_px),
            "cov_main": float(self.cov_main),
            "cov_extra": float(self.cov_extra),
            "feasible": bool(self.feasible),
        }


@dataclass
class ObjectFeasibility:
    bbox: bool
    morph: bool
    adv: bool
    rect_size_px: tuple[float, float]
    gamma: float
    candidates: list[GraspCandidate] = field(default_factory=list)
    rect_mask: np.ndarray | None = None


@dataclass
class FeasibilityMasks:
    bbox: np.ndarray
    morph: np.ndarray
    adv_obj: np.ndarray
    adv_rect: np.ndarray

    @classmethod
    def empty(cls, shape) -> "FeasibilityMasks":
        return cls(*(np.zeros(shape, dtype=bool) for _ in range(4)))

    @classmethod
    def all_ones(cls, shape) -> "FeasibilityMasks":
        return cls(*(np.ones(shape, dtype=bool) for _ in range(4)))

    def ordered(self) -> list[tuple[str, np.ndarray]]:
        return [("bbox", self.bbox), ("morph", self.morph), ("adv_obj", self.adv_obj), ("adv_rect", self.adv_rect)]


# ---------------------------------------------------------------------------
# 2D geometry helpers


def round_half_away(x, decimals: int = 0):
    scale = 10.0**decimals
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) * scale + 0.5) / scale


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; CCW vertices without collinear points."""
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def mask_points(mask: np.ndarray) -> np.ndarray:
    r, c = np.nonzero(mask)
    return np.column_stack([c, r]).astype(np.float64)


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    inner = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(2, 1), border_value=0)
    return mask & ~inner


def min_area_rect(points: np.ndarray) -> OrientedRect:
    """Minimum-area enclosing rectangle via rotating calipers over hull edges."""
    hull = convex_hull(points)
    if len(hull) == 0:
        raise InputError("no points")
    if len(hull) == 1:
        return OrientedRect(hull[0].copy(), np.array([1.0, 0.0]), 0.0, 0.0)
    if len(hull) == 2:
        d = hull[1] - hull[0]
        L = float(np.hypot(*d))
        return OrientedRect(hull.mean(axis=0), d / L, L, 0.0)
    best = None
    for i in range(len(hull)):
        e = hull[(i + 1) % len(hull)] - hull[i]
        u = e / np.hypot(*e)
        v = np.array([-u[1], u[0]])
        pu, pv = hull @ u, hull @ v
        area = (pu.max() - pu.min()) * (pv.max() - pv.min())
        if best is None or area < best[0] - 1e-12:
            best = (area, u, v, pu.min(), pu.max(), pv.min(), pv.max())
    _, u, v, u0, u1, v0, v1 = best
    center = u * (u0 + u1) / 2 + v * (v0 + v1) / 2
    return OrientedRect(center, u, float(u1 - u0), float(v1 - v0))


def mask_min_area_rect(mask: np.ndarray) -> OrientedRect:
    """Min-area rectangle around the pixel squares (not centers) of a mask."""
    edge = mask_points(boundary_pixels(mask))
    offs = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])
    corners = (edge[:, None, :] + offs[None, :, :]).reshape(-1, 2)
    return min_area_rect(corners)


def disk_kernel(radius_px: float) -> np.ndarray:
    R = max(1, int(round_half_away(radius_px)))
    ii, jj = np.mgrid[-R : R + 1, -R : R + 1]
    return ii * ii + jj * jj <= R * R


def jaw_radius_px(grip: GripperSpec, gamma: float) -> int:
    return max(1, int(round_half_away(grip.r / gamma)))


def erode_disk(mask: np.ndarray, radius_px: float) -> np.ndarray:
    return ndimage.binary_erosion(mask, structure=disk_kernel(radius_px), border_value=0)


# ---------------------------------------------------------------------------
# the three tests


def bbox_feasible(obj: ObjectMask2D, grip: GripperSpec) -> tuple[bool, OrientedRect]:
    rect = mask_min_area_rect(obj.mask)
    short_m = min(rect.length, rect.height) * obj.gamma
    return bool(short_m <= 2 * grip.r), rect


def morph_feasible(obj: ObjectMask2D, grip: GripperSpec) -> tuple[bool, np.ndarray]:
    eroded = erode_disk(obj.mask, grip.r / obj.gamma)
    return (not eroded.any()), eroded


def _inside(mask: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Mask value of the pixel containing each (x, y); False outside the image."""
    col = np.floor(pts[..., 0] + 0.5).astype(np.int64)
    row = np.floor(pts[..., 1] + 0.5).astype(np.int64)
    h, w = mask.shape
    ok = (row >= 0) & (row < h) & (col >= 0) & (col < w)
    out = np.zeros(ok.shape, dtype=bool)
    out[ok] = mask[row[ok], col[ok]]
    return out


def _ray_pixels(shape, start: np.ndarray, direction: np.ndarray, reach: float) -> tuple[np.ndarray, np.ndarray]:
    """Pixels a ray passes through, in order, by exact grid-line crossing.

    Zero-length visits (the ray passing exactly through a pixel corner) are
    dropped.
    """
    ts = [np.array([0.0, reach])]
    for axis in (0, 1):
        if abs(direction[axis]) > 1e-15:
            lines = np.arange(-1, shape[1 - axis] + 1) + 0.5
            t = (lines - start[axis]) / direction[axis]
            ts.append(t[(t > 0) & (t < reach)])
    t = np.unique(np.concatenate(ts))
    mid = 0.5 * (t[:-1] + t[1:])
    pts = start[None, :] + mid[:, None] * direction[None, :]
    return np.floor(pts[:, 0] + 0.5).astype(np.int64), np.floor(pts[:, 1] + 0.5).astype(np.int64)


def _first_hit(mask: np.ndarray, start: np.ndarray, direction: np.ndarray):
    """Walk from ``start`` along ``direction``; the last pixel of the first in-mask run.

    The start pixel counts as part of the run when it is in the mask. None
    if the ray meets no mask pixel or the run reaches past the image edge.
    """
    h, w = mask.shape
    cols, rows = _ray_pixels(mask.shape, start, direction, math.hypot(h, w) + 2)
    # the pixel containing the start, even when the ray leaves it from a corner
    cols = np.r_[math.floor(start[0] + 0.5), cols]
    rows = np.r_[math.floor(start[1] + 0.5), rows]
    inb = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    vals = np.zeros(len(cols), dtype=bool)
    vals[inb] = mask[rows[inb], cols[inb]]
    hit = np.nonzero(vals)[0]
    if len(hit) == 0:
        return None
    after = np.nonzero(~vals[hit[0] :])[0]
    if len(after) == 0:
        return None
    k = hit[0] + after[0] - 1
    return np.array([cols[k], rows[k]], dtype=np.float64)


def opposite_corners(mask: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    centroid = mask_points(mask).mean(axis=0)
    out = []
    for v in vertices:
        d = centroid - v
        n = math.hypot(*d)
        if n < 1e-9:
            continue
        hit = _first_hit(mask, centroid, d / n)
        if hit is not None:
            out.append(hit)
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def candidate_points(mask: np.ndarray, grip: GripperSpec, gamma: float) -> np.ndarray:
    """Hull vertices of the mask, of each erosion survivor, plus ray-cast opposite corners.

    Deduplicated after rounding to two decimals, sorted by (x, y).
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros((0, 2))
    hull = convex_hull(mask_points(boundary_pixels(mask)))
    parts = [hull]
    eroded = erode_disk(mask, grip.r / gamma)
    if eroded.any():
        labels, n = ndimage.label(eroded, structure=_EIGHT)
        for k in range(1, n + 1):
            parts.append(convex_hull(mask_points(boundary_pixels(labels == k))))
    parts.append(opposite_corners(mask, hull))
    pts = round_half_away(np.concatenate(parts, axis=0), 2)
    return np.unique(pts, axis=0)


def _spans(mask: np.ndarray, mids: np.ndarray, normals: np.ndarray, max_len: float) -> tuple[np.ndarray, np.ndarray]:
    """In-mask extent along +n and -n from each midpoint.

    Coarse march at half-pixel steps, then bisection on the first exit,
    reporting the inside end of the final bracket. Returns
    (t_plus, t_minus); NaN where the midpoint is outside the mask or where
    the mask continues beyond ``max_len``.
    """
    P = len(mids)
    t_pos = np.full(P, np.nan)
    t_neg = np.full(P, np.nan)
    if P == 0:
        return t_pos, t_neg
    start_in = _inside(mask, mids)
    K = int(math.ceil(max_len / _SPAN_STEP)) + 2
    ts = _SPAN_STEP * np.arange(1, K + 1)
    for sign, out in ((1.0, t_pos), (-1.0, t_neg)):
        d = sign * normals
        samples = mids[:, None, :] + ts[None, :, None] * d[:, None, :]
        vals = _inside(mask, samples)
        exited = ~vals
        has_exit = exited.any(axis=1)
        k = np.argmax(exited, axis=1)
        ok = start_in & has_exit
        lo = np.where(k > 0, ts[np.maximum(k - 1, 0)], 0.0)
        hi = ts[k]
        for _ in range(_BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            inside = _inside(mask, mids + mid[:, None] * d)
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        # the inside bound: the span never reaches past the exit point
        out[ok] = lo[ok]
    return t_pos, t_neg


def rect_pixels(rect: OrientedRect) -> np.ndarray:
    """Integer (x, y) pixel centers strictly inside the rectangle.

    Centers on the boundary are excluded: at 45 degrees the rectangle ends
    on pixel corners and whole rows of neighbouring centers sit exactly on
    its edge, where an inclusive test would flip on rounding noise.
    """
    c = rect.corners()
    x0, y0 = np.floor(c.min(axis=0)).astype(int) - 1
    x1, y1 = np.ceil(c.max(axis=0)).astype(int) + 1
    xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    p = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
    u = rect.axis
    v = np.array([-u[1], u[0]])
    rel = p - rect.center
    tol = 1e-9
    keep = (np.abs(rel @ u) < rect.length / 2 - tol) & (np.abs(rel @ v) < rect.height / 2 - tol)
    return p[keep]


def rect_coverage(mask: np.ndarray, rect: OrientedRect) -> tuple[float, np.ndarray]:
    pix = rect_pixels(rect)
    if len(pix) == 0:
        return 0.0, pix
    return float(_inside(mask, pix).mean()), pix


def _merge_close_midpoints(mids: np.ndarray, d_skip: float) -> np.ndarray:
    """Indices of pairs kept after dropping any pair whose midpoint is within ``d_skip`` of a kept one."""
    if d_skip <= 0:
        return np.arange(len(mids))
    buckets: dict[tuple[int, int], list[int]] = {}
    kept = []
    for i, m in enumerate(mids):
        bx, by = int(math.floor(m[0] / d_skip)), int(math.floor(m[1] / d_skip))
        close = False
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for j in buckets.get((bx + dx, by + dy), ()):
                    if math.hypot(m[0] - mids[j][0], m[1] - mids[j][1]) < d_skip:
                        close = True
                        break
                if close:
                    break
            if close:
                break
        if not close:
            kept.append(i)
            buckets.setdefault((bx, by), []).append(i)
    return np.array(kept, dtype=np.int64)


def evaluate_pairs(
    S: np.ndarray,
    mask: np.ndarray,
    grip: GripperSpec,
    gamma: float,
    d_skip: float | None = None,
) -> tuple[list[GraspCandidate], bool, np.ndarray]:
    """Test every unordered candidate pair; returns (candidates, object feasible, rect mask).

    ``candidates`` lists the pairs that passed the opening check, in
    deterministic pair order, with their coverage verdicts.
    """
    mask = np.asarray(mask, dtype=bool)
    d_skip = grip.d_skip if d_skip is None else d_skip
    rect_mask = np.zeros(mask.shape, dtype=bool)
    S = np.unique(np.asarray(S, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(S) < 2:
        return [], False, rect_mask
    ia, ib = np.triu_indices(len(S), k=1)
    A, B = S[ia], S[ib]
    mids = 0.5 * (A + B)
    keep = _merge_close_midpoints(mids, d_skip)
    A, B, mids = A[keep], B[keep], mids[keep]

    n = np.column_stack([-(B[:, 1] - A[:, 1]), B[:, 0] - A[:, 0]])
    n /= np.linalg.norm(n, axis=1)[:, None]
    max_len = 2 * grip.r / gamma
    t_pos, t_neg = _spans(mask, mids, n, max_len)
    span = t_pos + t_neg
    fits = np.isfinite(span) & (span > 0) & (span <= max_len)

    height = grip.finger_width / gamma
    extra = grip.clearance_extension / gamma
    out: list[GraspCandidate] = []
    feasible_any = False
    for i in np.nonzero(fits)[0]:
        center = mids[i] + n[i] * (t_pos[i] - t_neg[i]) / 2
        main = OrientedRect(center, n[i], float(span[i]), height)
        clear = OrientedRect(center, n[i], float(span[i]) + extra, height)
        cov_main, main_pix = rect_coverage(mask, main)
        cov_extra, _ = rect_coverage(mask, clear)
        ok = cov_main >= grip.cov_main_min and cov_extra < grip.cov_extra_max
        out.append(
            GraspCandidate(A[i], B[i], mids[i], n[i], float(span[i]), cov_main, cov_extra, ok, main, clear)
        )
        if ok:
            feasible_any = True
            xy = main_pix.astype(np.int64)
            inb = (xy[:, 0] >= 0) & (xy[:, 0] < mask.shape[1]) & (xy[:, 1] >= 0) & (xy[:, 1] < mask.shape[0])
            rect_mask[xy[inb, 1], xy[inb, 0]] = True
    return out, feasible_any, rect_mask


def assess_object(obj: ObjectMask2D, grip: GripperSpec) -> ObjectFeasibility:
    bbox_ok, rect = bbox_feasible(obj, grip)
    morph_ok, _ = morph_feasible(obj, grip)
    S = candidate_points(obj.mask, grip, obj.gamma)
    cands, adv_ok, rect_mask = evaluate_pairs(S, obj.mask, grip, obj.gamma)
    return ObjectFeasibility(
        bbox=bbox_ok,
        morph=morph_ok,
        adv=adv_ok,
        rect_size_px=(rect.length, rect.height),
        gamma=obj.gamma,
        candidates=cands,
        rect_mask=rect_mask,
    )


def median_depth(mask: np.ndarray, depth: np.ndarray) -> float | None:
    z = np.asarray(depth, dtype=np.float64)[mask]
    z = z[np.isfinite(z) & (z > 0)]
    if len(z) == 0:
        return None
    return float(np.median(z))


def feasibility_masks(
    object_masks: list[np.ndarray],
    depth: np.ndarray,
    fx: float,
    grip: GripperSpec | None = None,
) -> tuple[FeasibilityMasks, list[ObjectFeasibility | None]]:
    """Run all three tests per object mask and paint the four image-level masks.

    Objects without any valid depth are skipped (reported as None).
    """
    grip = grip or GripperSpec()
    shape = np.asarray(depth).shape
    masks = FeasibilityMasks.empty(shape)
    reports: list[ObjectFeasibility | None] = []
    for m in object_masks:
        m = np.asarray(m, dtype=bool)
        z = median_depth(m, depth) if m.any() else None
        if z is None:
            reports.append(None)
            continue
        rep = assess_object(ObjectMask2D(m, z, fx), grip)
        reports.append(rep)
        if rep.bbox:
            masks.bbox |= m
        if rep.morph:
            masks.morph |= m
        if rep.adv:
            masks.adv_obj |= m
            masks.adv_rect |= rep.rect_mask
    return masks, reports
