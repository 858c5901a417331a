"""
File formats: binary PGM (P5, 8/16-bit), ASCII PLY, JSON-lines, raw float32
dumps with a JSON shape sidecar, and flat ``key=value`` text.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import LoadError


def header_tokens(data: bytes, count: int, path) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    toks: list[bytes] = []
    i = 0
    n = len(data)
    while len(toks) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise LoadError("truncated header", path)
        toks.append(data[i:j])
        i = j
    return toks, i + 1  # exactly one whitespace byte follows maxval


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM needs a 2D array")
    if img.dtype == np.uint8:
        maxval, body = 255, img.tobytes()
    elif img.dtype == np.uint16:
        maxval, body = 65535, img.astype(">u2").tobytes()
    else:
        raise ValueError(f"PGM supports uint8/uint16, got {img.dtype}")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + body)


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise LoadError("not a binary PGM (P5)", path, 1)
    (_, w, h, maxval), off = header_tokens(data, 4, path)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise LoadError(f"bad PGM header: {exc}", path, 1) from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise LoadError("PGM dimensions or maxval out of range", path, 1)
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    need = w * h * dtype.itemsize
    body = data[off : off + need]
    if len(body) != need:
        raise LoadError(f"PGM body has {len(body)} bytes, expected {need}", path)
    img = np.frombuffer(body, dtype=dtype).reshape(h, w)
    return img.astype(np.uint8 if maxval < 256 else np.uint16)


def unit_to_u8(field: np.ndarray) -> np.ndarray:
    """Values in [0, 1] to 0..255 (round half up, clipped)."""
    f = np.clip(np.nan_to_num(np.asarray(field, dtype=np.float64)), 0.0, 1.0)
    return np.floor(f * 255.0 + 0.5).astype(np.uint8)


def u8_to_unit(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) / 255.0


def depth_to_mm(depth_m: np.ndarray) -> np.ndarray:
    """Meters to 16-bit millimetres; invalid or out-of-range depth becomes 0."""
    d = np.asarray(depth_m, dtype=np.float64)
    ok = np.isfinite(d) & (d > 0) & (d * 1000.0 < 65535.5)
    out = np.zeros(d.shape, dtype=np.uint16)
    out[ok] = np.floor(d[ok] * 1000.0 + 0.5).astype(np.uint16)
    return out


def mm_to_depth(img: np.ndarray) -> np.ndarray:
    d = np.asarray(img, dtype=np.float64) / 1000.0
    d[d <= 0] = np.nan
    return d


def _f32(v) -> str:
    return repr(float(np.float32(v)))


def write_ply(path, points: np.ndarray, normals: np.ndarray | None = None) -> None:
    pts = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    props = ["x", "y", "z"]
    cols = [pts]
    if normals is not None:
        props += ["nx", "ny", "nz"]
        cols.append(np.asarray(normals, dtype=np.float32).reshape(-1, 3))
    table = np.hstack(cols)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(table)}"]
    lines += [f"property float {p}" for p in props]
    lines.append("end_header")
    lines += [" ".join(_f32(v) for v in row) for row in table]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> tuple[np.ndarray, np.ndarray | None]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise LoadError("missing 'ply' magic", path, 1)
    count = None
    props: list[str] = []
    body_start = None
    for i, raw in enumerate(lines[1:], start=2):
        parts = raw.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1:2] != ["ascii"]:
                raise LoadError("only ASCII PLY is supported", path, i)
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise LoadError(f"unsupported element {parts[1]!r}", path, i)
            count = int(parts[2])
        elif parts[0] == "property":
            props.append(parts[-1])
        elif parts[0] == "end_header":
            body_start = i
            break
        else:
            raise LoadError(f"unexpected header line {raw!r}", path, i)
    if body_start is None or count is None:
        raise LoadError("incomplete PLY header", path)
    if props[:3] != ["x", "y", "z"]:
        raise LoadError("PLY vertices must start with x y z", path)
    rows = []
    for k in range(count):
        lineno = body_start + 1 + k
        if lineno - 1 >= len(lines):
            raise LoadError(f"expected {count} vertices, found {k}", path, lineno)
        vals = lines[lineno - 1].split()
        if len(vals) != len(props):
            raise LoadError(f"expected {len(props)} values", path, lineno)
        try:
            rows.append([np.float32(v) for v in vals])
        except ValueError as exc:
            raise LoadError(str(exc), path, lineno) from None
    table = np.array(rows, dtype=np.float32).reshape(-1, len(props))
    normals = table[:, 3:6] if props[3:6] == ["nx", "ny", "nz"] else None
    return table[:, :3], normals


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, allow_nan=False) + "\n")


def read_jsonl(path, required: tuple[str, ...] = ()) -> list[dict]:
    out = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise LoadError(f"invalid JSON: {exc.msg}", path, lineno) from None
            if not isinstance(rec, dict):
                raise LoadError("each line must be a JSON object", path, lineno)
            missing = [k for k in required if k not in rec]
            if missing:
                raise LoadError(f"missing field(s) {', '.join(missing)}", path, lineno)
            rec["_line"] = lineno
            out.append(rec)
    return out


def write_raw_f32(path, array: np.ndarray) -> None:
    """Row-major float32 bytes plus a ``.json`` sidecar with the shape."""
    a = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    path = Path(path)
    path.write_bytes(a.tobytes())
    Path(str(path) + ".json").write_text(json.dumps({"dtype": "float32", "order": "C", "shape": list(a.shape)}))


def read_raw_f32(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    a = np.frombuffer(path.read_bytes(), dtype="<f4")
    shape = tuple(meta["shape"])
    if a.size != math.prod(shape):
        raise LoadError(f"raw dump holds {a.size} values, sidecar says {shape}", path)
    return a.reshape(shape).astype(np.float32)


def parse_kv(text: str, path=None) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments ignored; duplicates rejected."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise LoadError(f"expected key=value, got {raw.strip()!r}", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise LoadError("empty key", path, lineno)
        if key in out:
            raise LoadError(f"duplicate key {key!r}", path, lineno)
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(), path)


def write_kv(path, items: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in items.items()))
