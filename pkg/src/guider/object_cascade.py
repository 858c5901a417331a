"""
Pixel probability cascade and connected-object pooling.

Stage order is fixed: centre bias, the four feasibility masks
(bbox, morph, adv_obj, adv_rect), depth weighting, flooring. Pooling then
turns the floored field into ranked object proposals with initial scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InputError
from .grasp_feasibility import FeasibilityMasks
from .scene_geometry import CameraIntrinsics

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class CascadeParams:
    sigma_c: float = 240.0
    lambda_in: float = 1.2
    lambda_out: float = 0.4
    alpha_depth: float = 1.5
    z0: float = 1.0
    depth_apply_threshold: float = 0.3
    floor_eps: float = 0.01
    tau_l: float = 0.01
    n_min: int = 10
    g_min: float = 0.5
    g_max: float = 0.7
    tau_rs: float = 0.05
    otsu_bins: int = 64

    def validate(self) -> None:
        if not self.lambda_out < 1.0 < self.lambda_in:
            raise ConfigError("need cascade.lambda_out < 1 < cascade.lambda_in")
        if not 0.0 < self.g_min < self.g_max <= 1.0:
            raise ConfigError("need 0 < cascade.g_min < cascade.g_max <= 1")
        if self.lambda_out <= 0:
            raise ConfigError("cascade.lambda_out must be > 0")
        if not (self.sigma_c > 0 and self.alpha_depth >= 0 and self.z0 > 0):
            raise ConfigError("cascade.sigma_c and cascade.z0 must be > 0, alpha_depth >= 0")
        if not (0 < self.floor_eps < 1 and 0 <= self.tau_l <= 1 and self.n_min >= 1 and self.otsu_bins >= 2):
            raise ConfigError("cascade floor/pool parameters out of range")


@dataclass
class ObjectProposal:
    id: int
    pixels: np.ndarray  # (N, 2) of (row, col)
    centroid: np.ndarray  # camera frame, meters
    g: float
    g_raw: float
    pixel_count: int
    label: str = ""

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "g": float(self.g),
            "g_raw": float(self.g_raw),
            "centroid_xyz": [float(v) for v in self.centroid],
            "pixels": int(self.pixel_count),
        }


@dataclass
class CascadeResult:
    final: np.ndarray
    evident: np.ndarray
    stages: list[tuple[str, np.ndarray]] = field(default_factory=list)


def centre_weight(intr: CameraIntrinsics, params: CascadeParams) -> np.ndarray:
    v, u = np.mgrid[0 : intr.height, 0 : intr.width]
    r2 = (u - intr.cx) ** 2 + (v - intr.cy) ** 2
    return np.exp(-r2 / (2.0 * params.sigma_c**2))


def centre_bias(P: np.ndarray, intr: CameraIntrinsics, params: CascadeParams) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (intr.height, intr.width):
        raise InputError("probability image does not match intrinsics")
    return centre_weight(intr, params) * P


def apply_mask(P: np.ndarray, M: np.ndarray, params: CascadeParams) -> np.ndarray:
    factor = np.where(np.asarray(M, dtype=bool), params.lambda_in, params.lambda_out)
    return np.clip(P * factor, 0.0, 1.0)


def depth_weight(P: np.ndarray, zbuffer: np.ndarray, params: CascadeParams) -> np.ndarray:
    """Multiply by exp(-alpha (z - z0)^2) where P exceeds the threshold and depth is known."""
    z = np.asarray(zbuffer, dtype=np.float64)
    apply = (P > params.depth_apply_threshold) & np.isfinite(z) & (z > 0)
    out = P.copy()
    out[apply] = P[apply] * np.exp(-params.alpha_depth * (z[apply] - params.z0) ** 2)
    return out


def floor_probs(P: np.ndarray, evident: np.ndarray, params: CascadeParams) -> np.ndarray:
    """Raise positive-evidence pixels to at least ``floor_eps``; others stay at their value."""
    out = P.copy()
    out[evident] = np.maximum(P[evident], params.floor_eps)
    return out


def run_cascade(
    P0: np.ndarray,
    masks: FeasibilityMasks,
    zbuffer: np.ndarray,
    intr: CameraIntrinsics,
    params: CascadeParams | None = None,
) -> CascadeResult:
    params = params or CascadeParams()
    stages = [("saliency", np.asarray(P0, dtype=np.float64))]
    P = centre_bias(P0, intr, params)
    evident = P0 > 0
    evident |= P > 0
    stages.append(("centre", P))
    for name, M in masks.ordered():
        P = apply_mask(P, M, params)
        evident |= P > 0
        stages.append((name, P))
    P = depth_weight(P, zbuffer, params)
    evident |= P > 0
    stages.append(("depth", P))
    P = floor_probs(P, evident, params)
    stages.append(("floor", P))
    return CascadeResult(final=P, evident=evident, stages=stages)


def otsu_threshold(values: np.ndarray, bins: int = 64) -> float | None:
    """Between-class-variance maximizing threshold; None for (near-)uniform input."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= 1e-12:
        return None
    hist, edges = np.histogram(values, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)[:-1].astype(np.float64)
    w1 = hist.sum() - w0
    s0 = np.cumsum(hist * centers)[:-1]
    s1 = (hist * centers).sum() - s0
    with np.errstate(invalid="ignore", divide="ignore"):
        between = w0 * w1 * (s0 / w0 - s1 / w1) ** 2
    between = np.where((w0 > 0) & (w1 > 0), between, -1.0)
    k = int(np.argmax(between))
    if between[k] < 0:
        return None
    return float(edges[k + 1])


def _rank_rescale(raw: list[float], sizes: list[int], firsts: list[int], params: CascadeParams) -> list[float]:
    """Linear rank spacing over [g_min, g_max] for scores above tau_rs; others keep raw."""
    out = list(raw)
    q = [i for i, g in enumerate(raw) if g > params.tau_rs]
    if not q:
        return out
    # ascending: lower score, then smaller size, then later row-major start ranks lower
    q.sort(key=lambda i: (raw[i], sizes[i], -firsts[i]))
    k = len(q)
    for rank, i in enumerate(q):
        out[i] = params.g_max if k == 1 else params.g_min + (params.g_max - params.g_min) * rank / (k - 1)
    return out


def pool_objects(
    P_star: np.ndarray,
    zbuffer: np.ndarray,
    intr: CameraIntrinsics,
    params: CascadeParams | None = None,
) -> list[ObjectProposal]:
    """Connected components of the floored field to scored object proposals.

    Proposals are returned best-first; ``id`` is the position in that order.
    """
    params = params or CascadeParams()
    P_star = np.asarray(P_star, dtype=np.float64)
    z = np.asarray(zbuffer, dtype=np.float64)
    fg = P_star >= params.tau_l
    labels, n = ndimage.label(fg, structure=_EIGHT)
    comps = []
    for k in range(1, n + 1):
        rows, cols = np.nonzero(labels == k)
        if len(rows) < params.n_min:
            continue
        vals = P_star[rows, cols]
        thr = otsu_threshold(vals, params.otsu_bins)
        if thr is not None:
            keep = vals >= thr
            rows, cols, vals = rows[keep], cols[keep], vals[keep]
        zs = z[rows, cols]
        zs = zs[np.isfinite(zs) & (zs > 0)]
        if len(zs) == 0:
            continue
        zc = float(np.median(zs))
        u, v = float(cols.mean()), float(rows.mean())
        centroid = np.array([(u - intr.cx) / intr.fx * zc, (v - intr.cy) / intr.fy * zc, zc])
        first = int(rows[0] * P_star.shape[1] + cols[0])
        comps.append((np.column_stack([rows, cols]), centroid, float(vals.min()), first))
    if not comps:
        return []
    raw = [c[2] for c in comps]
    g = _rank_rescale(raw, [len(c[0]) for c in comps], [c[3] for c in comps], params)
    order = sorted(range(len(comps)), key=lambda i: (-g[i], -raw[i], -len(comps[i][0]), comps[i][3]))
    return [
        ObjectProposal(
            id=rank,
            pixels=comps[i][0],
            centroid=comps[i][1],
            g=g[i],
            g_raw=raw[i],
            pixel_count=len(comps[i][0]),
        )
        for rank, i in enumerate(order)
    ]


def score_image(G_shape: tuple[int, int], proposals: list[ObjectProposal]) -> np.ndarray:
    """The pooled mask where every object pixel carries its object's score."""
    G = np.zeros(G_shape)
    for p in proposals:
        G[p.pixels[:, 0], p.pixels[:, 1]] = p.g
    return G
