"""
Heatmap rendering to binary PPM (P6).

Colormap (absolute scale, values clipped to [0, 1]), linear between stops:

    0.00 black (0, 0, 0)
    0.25 blue  (0, 0, 255)
    0.50 red   (255, 0, 0)
    0.75 yellow(255, 255, 0)
    1.00 white (255, 255, 255)

A unique maximum is marked with a pure green pixel (0, 255, 0). One
legend row sweeping the colormap from 0 (left) to 1 (right) is appended
below the field. Row 0 of the field is the top image row.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .codecs import header_tokens
from .errors import InputError

STOPS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
COLORS = np.array(
    [[0, 0, 0], [0, 0, 255], [255, 0, 0], [255, 255, 0], [255, 255, 255]],
    dtype=np.float64,
)
PEAK_COLOR = (0, 255, 0)


def colorize(field: np.ndarray) -> np.ndarray:
    v = np.clip(np.nan_to_num(np.asarray(field, dtype=np.float64)), 0.0, 1.0)
    rgb = np.stack([np.interp(v, STOPS, COLORS[:, k]) for k in range(3)], axis=-1)
    return np.floor(rgb + 0.5).astype(np.uint8)


def unique_peak(field: np.ndarray) -> tuple[int, int] | None:
    f = np.asarray(field, dtype=np.float64)
    m = np.nanmax(f)
    hits = np.argwhere(f == m)
    return (int(hits[0][0]), int(hits[0][1])) if len(hits) == 1 else None


def heatmap_image(field: np.ndarray) -> np.ndarray:
    f = np.asarray(field, dtype=np.float64)
    if f.ndim != 2 or f.size == 0:
        raise InputError("heatmap needs a nonempty 2D field")
    img = colorize(f)
    peak = unique_peak(f)
    if peak is not None:
        img[peak] = PEAK_COLOR
    w = f.shape[1]
    ramp = np.linspace(0.0, 1.0, w) if w > 1 else np.zeros(1)
    legend = colorize(ramp[None, :])
    return np.concatenate([img, legend], axis=0)


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise InputError(f"{path}: not a binary PPM")
    (_, w, h, _), off = header_tokens(data, 4, path)
    w, h = int(w), int(h)
    return np.frombuffer(data[off : off + w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def render_heatmap(field: np.ndarray, out_path) -> None:
    write_ppm(out_path, heatmap_image(field))
