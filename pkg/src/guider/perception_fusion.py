"""Saliency thresholding, instance-mask filtering and two-detector agreement fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

FUSED_NONE = 0.0
FUSED_ONE = 0.6
FUSED_BOTH = 0.9


@dataclass
class InstanceMask:
    mask: np.ndarray
    confidence: float
    prompt: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        self.mask = np.asarray(self.mask).astype(bool)
        if not 0.0 <= self.confidence <= 1.0:
            raise InputError(f"mask confidence {self.confidence} outside [0, 1]")


@dataclass
class FusedSaliency:
    P: np.ndarray
    zbuffer: np.ndarray  # NaN where absent

    @property
    def salient(self) -> np.ndarray:
        return self.P > 0


def stretch_saliency(S: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.size == 0:
        raise InputError("empty saliency map")
    lo, hi = S.min(), S.max()
    return (S - lo) / (hi - lo + eps)


def normalize_and_threshold(S: np.ndarray, tau: float = 0.9, eps: float = 1e-8) -> np.ndarray:
    """Min-max stretch with an epsilon guard, then keep pixels strictly above ``tau``."""
    return stretch_saliency(S, eps) > tau


def filter_masks(
    masks: list[InstanceMask],
    shape: tuple[int, int],
    max_area_frac: float = 0.25,
    tau_conf: float = 0.4,
) -> list[InstanceMask]:
    """Drop masks covering more than ``max_area_frac`` of the image or below ``tau_conf``."""
    limit = max_area_frac * shape[0] * shape[1]
    kept = []
    for m in masks:
        if m.mask.shape != tuple(shape):
            raise InputError(f"mask shape {m.mask.shape} does not match image {shape}")
        if m.mask.sum() > limit or m.confidence < tau_conf:
            continue
        kept.append(m)
    return kept


def filter_and_merge_masks(
    masks: list[InstanceMask],
    shape: tuple[int, int],
    max_area_frac: float = 0.25,
    tau_conf: float = 0.4,
) -> np.ndarray:
    merged = np.zeros(shape, dtype=bool)
    for m in filter_masks(masks, shape, max_area_frac, tau_conf):
        merged |= m.mask
    return merged


def fuse_2d(B: np.ndarray, F: np.ndarray, depth: np.ndarray | None = None) -> FusedSaliency:
    """Agreement weighting: 0 if neither mask fires, 0.6 for one, 0.9 for both.

    ``depth`` (meters) feeds the z-buffer at salient pixels; invalid depths
    (non-finite or <= 0) leave the entry absent (NaN) without touching P.
    """
    B = np.asarray(B, dtype=bool)
    F = np.asarray(F, dtype=bool)
    if B.shape != F.shape:
        raise InputError("saliency masks are not co-registered")
    votes = B.astype(np.int8) + F.astype(np.int8)
    P = np.choose(votes, [FUSED_NONE, FUSED_ONE, FUSED_BOTH]).astype(np.float64)
    z = np.full(B.shape, np.nan)
    if depth is not None:
        depth = np.asarray(depth, dtype=np.float64)
        if depth.shape != B.shape:
            raise InputError("depth is not co-registered with the masks")
        ok = (P > 0) & np.isfinite(depth) & (depth > 0)
        z[ok] = depth[ok]
    return FusedSaliency(P=P, zbuffer=z)
