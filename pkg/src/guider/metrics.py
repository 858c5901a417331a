"""
Timeline metrics and the exact paired signed-rank test.

A timeline is a sequence of (t, predicted target) samples; each prediction
holds until the next sample (piecewise constant) and the timeline is cut
at the contact/command instant.
"""

from __future__ import annotations

from collections.abc import Hashable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import InputError

HOLD_S = 0.5
_TIME_EPS = 1e-9
MAX_WILCOXON_N = 20


@dataclass
class MetricResult:
    rtcp: float | None
    stability: float
    first_confident_time: float | None
    first_correct_time: float | None


@dataclass
class WilcoxonResult:
    n: int
    w_plus: float
    w_minus: float
    p_two: float
    p_one: float
    r_bs: float
    alternative: str


def _segments(times: Sequence[float], preds: Sequence[Hashable], contact_t: float):
    """(start, end, pred) pieces clipped to [times[0], contact_t]."""
    t = np.asarray(times, dtype=np.float64)
    if len(t) == 0:
        raise InputError("timeline is empty")
    if len(t) != len(preds):
        raise InputError("timeline times and predictions differ in length")
    if np.any(np.diff(t) < 0):
        raise InputError("timeline timestamps must be non-decreasing")
    if contact_t < t[0]:
        raise InputError(f"contact time {contact_t} precedes timeline start {t[0]}")
    out = []
    for i in range(len(t)):
        start = float(t[i])
        if start >= contact_t:
            break
        end = float(t[i + 1]) if i + 1 < len(t) else contact_t
        end = min(end, contact_t)
        if end > start:
            out.append((start, end, preds[i]))
    return out


def _runs(segments, target):
    """Maximal intervals during which the prediction equals ``target``."""
    runs = []
    for start, end, pred in segments:
        if pred != target:
            continue
        if runs and abs(runs[-1][1] - start) <= _TIME_EPS:
            runs[-1][1] = end
        else:
            runs.append([start, end])
    return runs


def first_confident_time(times, preds, target, contact_t: float, hold: float = HOLD_S) -> float | None:
    for start, end in _runs(_segments(times, preds, contact_t), target):
        if end - start >= hold - _TIME_EPS:
            return start
    return None


def rtcp(times, preds, target, contact_t: float, hold: float = HOLD_S) -> float | None:
    """Remaining time from the first sustained correct top-ranking to contact; None if never."""
    t_star = first_confident_time(times, preds, target, contact_t, hold)
    return None if t_star is None else contact_t - t_star


def first_correct_time(times, preds, target, contact_t: float) -> float | None:
    runs = _runs(_segments(times, preds, contact_t), target)
    return runs[0][0] if runs else None


def stability(times, preds, target, contact_t: float) -> float:
    """Percent of the time from the first correct instant to contact spent correct."""
    segs = _segments(times, preds, contact_t)
    runs = _runs(segs, target)
    if not runs:
        return 0.0
    t0 = runs[0][0]
    span = contact_t - t0
    if span <= 0:
        return 100.0
    wrong = sum(e - s for s, e, pred in segs if s >= t0 and pred != target)
    if wrong == 0:
        return 100.0
    return float(min(100.0, max(0.0, 100.0 * (span - wrong) / span)))


def evaluate(times, preds, target, contact_t: float, hold: float = HOLD_S) -> MetricResult:
    t_star = first_confident_time(times, preds, target, contact_t, hold)
    return MetricResult(
        rtcp=None if t_star is None else contact_t - t_star,
        stability=stability(times, preds, target, contact_t),
        first_confident_time=t_star,
        first_correct_time=first_correct_time(times, preds, target, contact_t),
    )


def aggregate(values) -> tuple[float, float]:
    """Median and unscaled median absolute deviation."""
    x = np.asarray(list(values), dtype=np.float64)
    if x.size == 0:
        raise InputError("cannot aggregate an empty sample")
    med = float(np.median(x))
    return med, float(np.median(np.abs(x - med)))


def _signed_rank_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """counts[s] = number of sign patterns whose positive doubled-rank sum is s."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_exact(x, y=None, alternative: str = "greater") -> WilcoxonResult:
    """Exact paired signed-rank test on d = x - y.

    Zero differences are dropped, tied magnitudes share their mean rank, and
    the null distribution of W+ is the exact count over all 2^n sign
    assignments (computed by convolution over doubled ranks).
    ``alternative`` picks the one-tailed direction: "greater" tests
    W+ large, "less" tests W+ small.
    """
    if alternative not in ("greater", "less"):
        raise InputError(f"alternative must be 'greater' or 'less', got {alternative!r}")
    d = np.asarray(x, dtype=np.float64)
    if y is not None:
        d = d - np.asarray(y, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return WilcoxonResult(0, 0.0, 0.0, 1.0, 1.0, 0.0, alternative)
    if n > MAX_WILCOXON_N:
        raise InputError(f"exact test supports at most {MAX_WILCOXON_N} nonzero pairs, got {n}")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    doubled = np.rint(2 * ranks).astype(np.int64)
    counts = _signed_rank_counts(doubled)
    obs = int(round(2 * w_plus))
    denom = 2.0**n
    p_greater = float(counts[obs:].sum() / denom)
    p_less = float(counts[: obs + 1].sum() / denom)
    p_one = p_greater if alternative == "greater" else p_less
    p_two = min(1.0, 2.0 * min(p_greater, p_less))
    r_bs = (w_plus - w_minus) / (w_plus + w_minus)
    return WilcoxonResult(n, w_plus, w_minus, p_two, p_one, r_bs, alternative)
