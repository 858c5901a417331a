"""
Session logs and their replay through the full pipeline.

A session log is a directory::

    manifest.json      phases, ground truth, file references, camera pose
    base.jsonl         base odometry  {t, frame, x, y, z, vx, vy, vz}
    tcp.jsonl          TCP odometry   {t, frame, x, y, z, vx, vy, vz}
    grid.pgm/.txt      occupancy grid + sidecar (resolution, origin, gray levels)
    saliency.pgm       8-bit saliency map
    masks.jsonl        {mask_file, confidence, prompt_u, prompt_v[, label]}
    depth.pgm          16-bit depth in millimetres (0 = invalid)
    intrinsics.txt     fx, fy, cx, cy, width, height
    scan.ply           optional merged scan cloud

Navigation samples drive the layered belief map; manipulation samples
drive the per-object evolution. Both produce piecewise-constant
prediction timelines that the metrics consume.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from .codecs import (
    mm_to_depth,
    read_jsonl,
    read_kv,
    read_pgm,
    read_ply,
    u8_to_unit,
)
from .config import Config
from .eef_evolution import EefState, EefTracker, ObjectBelief, estimate_derivatives, ranking
from .errors import GuiderError, LoadError
from .grasp_feasibility import FeasibilityMasks, ObjectFeasibility, feasibility_masks
from .nav_belief import (
    FREE,
    OCCUPIED,
    UNKNOWN,
    BaseOdometry,
    NavBeliefState,
    OccupancyGrid,
    combined_belief,
    init_base_layer,
    nav_step,
    predicted_area,
)
from .object_cascade import CascadeResult, ObjectProposal, pool_objects, run_cascade
from .perception_fusion import InstanceMask, filter_masks, fuse_2d, normalize_and_threshold
from .rng import sub_seed
from .scene_geometry import (
    CameraIntrinsics,
    PointCloud,
    RigidTransform,
    cluster_objects,
    estimate_normals,
    fit_plane_ransac,
)

log = logging.getLogger(__name__)

FORMAT = "guider-session/1"
STREAM_FIELDS = ("t", "frame", "x", "y", "z", "vx", "vy", "vz")
NO_PREDICTION = ""

GRAY_FREE = 254
GRAY_UNKNOWN = 205
GRAY_OCCUPIED = 0


@dataclass
class Region:
    name: str
    polygon: np.ndarray  # (N, 2) world x, y

    def contains(self, x, y) -> np.ndarray:
        """Even-odd point-in-polygon test (vectorized over points)."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        P = self.polygon
        for i in range(len(P)):
            x1, y1 = P[i]
            x2, y2 = P[(i + 1) % len(P)]
            crosses = (y1 > y) != (y2 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (x < xi)
        return inside


@dataclass
class Stream:
    t: np.ndarray
    xyz: np.ndarray
    vel: np.ndarray
    frame: str


@dataclass
class Phase:
    t_start: float
    t_end: float
    event_t: float
    target: str
    redirect_t: float | None = None
    target_pixel: tuple[float, float] | None = None


@dataclass
class SessionLog:
    root: Path
    manifest: dict
    nav: Phase | None = None
    manip: Phase | None = None
    grid: OccupancyGrid | None = None
    regions: list[Region] = field(default_factory=list)
    base: Stream | None = None
    tcp: Stream | None = None
    intrinsics: CameraIntrinsics | None = None
    cam_to_base: RigidTransform | None = None
    saliency: np.ndarray | None = None
    masks: list[InstanceMask] = field(default_factory=list)
    mask_labels: list[str] = field(default_factory=list)
    depth: np.ndarray | None = None
    scan: np.ndarray | None = None


@dataclass
class TimelineRow:
    t: float
    predicted: str
    value: float
    probs: list[float]


@dataclass
class PhaseMetrics:
    phase: str
    target: str
    event_t: float
    result: M.MetricResult
    redirect_t: float | None = None
    post_redirect_stability: float | None = None
    switch_latency: float | None = None
    flip_back: bool | None = None


@dataclass
class Perception:
    fused_P: np.ndarray
    zbuffer: np.ndarray
    feasibility: FeasibilityMasks
    reports: list[ObjectFeasibility | None]
    cascade: CascadeResult
    proposals: list[ObjectProposal]


@dataclass
class ReplayResult:
    nav_timeline: list[TimelineRow] = field(default_factory=list)
    nav_labels: list[str] = field(default_factory=list)
    manip_timeline: list[TimelineRow] = field(default_factory=list)
    manip_labels: list[str] = field(default_factory=list)
    eef_trace: list[tuple] = field(default_factory=list)
    metrics: list[PhaseMetrics] = field(default_factory=list)
    nav_state: NavBeliefState | None = None
    perception: Perception | None = None


# ---------------------------------------------------------------------------
# loading


def _req(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise LoadError(f"{where}: missing required key {key!r}")
    return d[key]


def _float(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise LoadError(f"{where}: expected a finite number, got {v!r}")
    return float(v)


def read_grid(pgm_path, meta_path) -> OccupancyGrid:
    meta = read_kv(meta_path)
    try:
        res = float(meta["resolution"])
        origin = (float(meta["origin_x"]), float(meta["origin_y"]))
        occ_max = int(meta.get("occupied_max", 50))
        free_min = int(meta.get("free_min", 250))
    except KeyError as exc:
        raise LoadError(f"missing key {exc.args[0]}", meta_path) from None
    except ValueError as exc:
        raise LoadError(str(exc), meta_path) from None
    gray = read_pgm(pgm_path).astype(np.int32)
    cells = np.full(gray.shape, UNKNOWN, dtype=np.int8)
    cells[gray <= occ_max] = OCCUPIED
    cells[gray >= free_min] = FREE
    # image row 0 is the top (largest y); grid row 0 is the smallest y
    return OccupancyGrid(cells[::-1].copy(), resolution=res, origin=origin)


def grid_to_gray(grid: OccupancyGrid) -> np.ndarray:
    gray = np.full(grid.cells.shape, GRAY_UNKNOWN, dtype=np.uint8)
    gray[grid.cells == FREE] = GRAY_FREE
    gray[grid.cells == OCCUPIED] = GRAY_OCCUPIED
    return gray[::-1].copy()


def read_stream(path) -> Stream:
    recs = read_jsonl(path, required=STREAM_FIELDS)
    if not recs:
        return Stream(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)), "")
    t = []
    xyz = []
    vel = []
    frame = recs[0]["frame"]
    prev = -np.inf
    for r in recs:
        line = r["_line"]
        try:
            vals = [_float(r[k], k) for k in ("t", "x", "y", "z", "vx", "vy", "vz")]
        except LoadError as exc:
            raise LoadError(str(exc), path, line) from None
        if r["frame"] != frame:
            raise LoadError(f"frame changes from {frame!r} to {r['frame']!r}", path, line)
        if vals[0] <= prev:
            raise LoadError(f"timestamp {vals[0]} not after {prev}", path, line)
        prev = vals[0]
        t.append(vals[0])
        xyz.append(vals[1:4])
        vel.append(vals[4:7])
    return Stream(np.array(t), np.array(xyz), np.array(vel), frame)


def _phase(d: dict, name: str, event_key: str) -> Phase:
    where = f"phases.{name}"
    ph = Phase(
        t_start=_float(_req(d, "t_start", where), where + ".t_start"),
        t_end=_float(_req(d, "t_end", where), where + ".t_end"),
        event_t=_float(_req(d, event_key, where), f"{where}.{event_key}"),
        target=str(_req(d, "target", where)),
    )
    if "redirect_t" in d and d["redirect_t"] is not None:
        ph.redirect_t = _float(d["redirect_t"], where + ".redirect_t")
    if "target_pixel" in d and d["target_pixel"] is not None:
        u, v = d["target_pixel"]
        ph.target_pixel = (_float(u, where), _float(v, where))
    if not ph.t_start <= ph.event_t <= ph.t_end:
        raise LoadError(f"{where}: need t_start <= {event_key} <= t_end")
    if isinstance(d.get("target"), list):
        raise LoadError(f"{where}: exactly one ground-truth target is allowed")
    return ph


def load_session(root) -> SessionLog:
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise LoadError("missing manifest.json", root)
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"invalid JSON: {exc.msg}", mpath, exc.lineno) from None
    if manifest.get("format") != FORMAT:
        raise LoadError(f"unsupported format {manifest.get('format')!r}", mpath)

    def file(key: str, group: dict) -> Path:
        p = root / str(_req(group, key, "manifest"))
        if not p.is_file():
            raise LoadError(f"referenced file {p.name} does not exist", mpath)
        return p

    log_ = SessionLog(root=root, manifest=manifest)
    phases = _req(manifest, "phases", "manifest")
    files = _req(manifest, "files", "manifest")
    if phases.get("navigation"):
        log_.nav = _phase(phases["navigation"], "navigation", "contact_t")
        log_.grid = read_grid(file("grid", files), file("grid_meta", files))
        log_.base = read_stream(file("base", files))
        for k, reg in enumerate(_req(manifest, "regions", "manifest")):
            poly = np.asarray(_req(reg, "polygon", f"regions[{k}]"), dtype=np.float64)
            if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
                raise LoadError(f"regions[{k}].polygon must list >= 3 (x, y) vertices", mpath)
            log_.regions.append(Region(str(_req(reg, "name", f"regions[{k}]")), poly))
        if log_.nav.target not in {r.name for r in log_.regions}:
            raise LoadError(f"navigation target {log_.nav.target!r} is not a declared region", mpath)
    if phases.get("manipulation"):
        log_.manip = _phase(phases["manipulation"], "manipulation", "command_t")
        log_.tcp = read_stream(file("tcp", files))
        kv = read_kv(file("intrinsics", files))
        try:
            log_.intrinsics = CameraIntrinsics(
                fx=float(kv["fx"]), fy=float(kv["fy"]), cx=float(kv["cx"]), cy=float(kv["cy"]),
                width=int(kv["width"]), height=int(kv["height"]),
            )
        except KeyError as exc:
            raise LoadError(f"missing key {exc.args[0]}", root / files["intrinsics"]) from None
        pose = _req(manifest, "cam_to_base", "manifest")
        try:
            log_.cam_to_base = RigidTransform(
                np.asarray(_req(pose, "rotation", "cam_to_base"), dtype=np.float64),
                np.asarray(_req(pose, "translation", "cam_to_base"), dtype=np.float64),
            )
        except GuiderError as exc:
            raise LoadError(f"cam_to_base: {exc}", mpath) from None
        shape = (log_.intrinsics.height, log_.intrinsics.width)
        log_.saliency = u8_to_unit(read_pgm(file("saliency", files)))
        log_.depth = mm_to_depth(read_pgm(file("depth", files)))
        mpath_masks = file("masks", files)
        for rec in read_jsonl(mpath_masks, required=("mask_file", "confidence")):
            mfile = root / str(rec["mask_file"])
            if not mfile.is_file():
                raise LoadError(f"mask file {rec['mask_file']} does not exist", mpath_masks, rec["_line"])
            try:
                conf = _float(rec["confidence"], "confidence")
                prompt = None
                if "prompt_u" in rec and "prompt_v" in rec:
                    prompt = (_float(rec["prompt_u"], "prompt_u"), _float(rec["prompt_v"], "prompt_v"))
                m = InstanceMask(read_pgm(mfile) > 0, conf, prompt)
            except GuiderError as exc:
                raise LoadError(str(exc), mpath_masks, rec["_line"]) from None
            if m.mask.shape != shape:
                raise LoadError(f"mask shape {m.mask.shape} != image {shape}", mpath_masks, rec["_line"])
            log_.masks.append(m)
            log_.mask_labels.append(str(rec.get("label", "")))
        for name, arr in (("saliency", log_.saliency), ("depth", log_.depth)):
            if arr.shape != shape:
                raise LoadError(f"{name} image shape {arr.shape} != intrinsics {shape}", mpath)
        if "scan" in files:
            log_.scan, _ = read_ply(file("scan", files))
    if log_.nav is None and log_.manip is None:
        raise LoadError("manifest declares no navigation or manipulation phase", mpath)
    return log_


# ---------------------------------------------------------------------------
# navigation


def region_cell_masks(grid: OccupancyGrid, regions: list[Region]) -> list[np.ndarray]:
    xx, yy = grid.cell_centers()
    return [r.contains(xx, yy) for r in regions]


def replay_navigation(log_: SessionLog, cfg: Config, result: ReplayResult) -> None:
    grid = log_.grid
    state = init_base_layer(grid, cfg.nav)
    candidates = grid.cells != OCCUPIED
    reg_masks = region_cell_masks(grid, log_.regions)
    xx, yy = grid.cell_centers()
    result.nav_labels = [r.name for r in log_.regions]
    base = log_.base
    sel = (base.t >= log_.nav.t_start) & (base.t <= log_.nav.t_end)
    field_ = None
    for t, p, v in zip(base.t[sel], base.xyz[sel], base.vel[sel]):
        updated = nav_step(state, BaseOdometry(float(t), p[0], p[1], v[0], v[1]), cfg.nav)
        if updated or field_ is None:
            field_ = combined_belief(state)
            (row, col), value = predicted_area(field_, candidates)
            px, py = xx[row, col], yy[row, col]
            label = NO_PREDICTION
            for reg, m in zip(log_.regions, reg_masks):
                if m[row, col]:
                    label = reg.name
                    break
            probs = [float(field_[m & candidates].max()) if (m & candidates).any() else 0.0 for m in reg_masks]
        result.nav_timeline.append(TimelineRow(float(t), label, value, probs))
    result.nav_state = state


# ---------------------------------------------------------------------------
# manipulation


def perceive(log_: SessionLog, cfg: Config, ablate_feasibility: bool = False) -> Perception:
    intr = log_.intrinsics
    shape = (intr.height, intr.width)
    fz = cfg.fusion
    B = normalize_and_threshold(log_.saliency, fz.tau, fz.eps)
    kept = filter_masks(log_.masks, shape, fz.max_area_frac, fz.tau_conf)
    F = np.zeros(shape, dtype=bool)
    for m in kept:
        F |= m.mask
    fused = fuse_2d(B, F, log_.depth)
    if ablate_feasibility:
        feas, reports = FeasibilityMasks.all_ones(shape), []
    else:
        feas, reports = feasibility_masks([m.mask for m in kept], log_.depth, intr.fx, cfg.grasp)
    casc = run_cascade(fused.P, feas, fused.zbuffer, intr, cfg.cascade)
    proposals = pool_objects(casc.final, fused.zbuffer, intr, cfg.cascade)
    for prop in proposals:
        prop.label = _label_for(prop, log_)
    return Perception(fused.P, fused.zbuffer, feas, reports, casc, proposals)


def _label_for(prop: ObjectProposal, log_: SessionLog) -> str:
    """Label of the instance mask overlapping the proposal most, else its id."""
    best, best_n = f"obj{prop.id}", 0
    r, c = prop.pixels[:, 0], prop.pixels[:, 1]
    for m, lab in zip(log_.masks, log_.mask_labels):
        n = int(m.mask[r, c].sum())
        if lab and n > best_n:
            best, best_n = lab, n
    return best


def replay_manipulation(log_: SessionLog, cfg: Config, result: ReplayResult, ablate_feasibility: bool) -> None:
    per = perceive(log_, cfg, ablate_feasibility)
    result.perception = per
    beliefs = [
        ObjectBelief(
            id=p.id,
            centroid=log_.cam_to_base.apply(p.centroid[None, :])[0],
            p=p.g,
            p_init=p.g,
            label=p.label,
        )
        for p in per.proposals
    ]
    result.manip_labels = [b.label for b in beliefs]
    tcp = log_.tcp
    sel = (tcp.t >= log_.manip.t_start) & (tcp.t <= log_.manip.t_end)
    t, q = tcp.t[sel], tcp.xyz[sel]
    if len(t) == 0 or not beliefs:
        return
    qd, qdd = estimate_derivatives(t, q)
    tracker = EefTracker(beliefs, cfg.eef)
    for i in range(len(t)):
        info = tracker.update(EefState(q[i], qd[i], qdd[i], float(t[i])))
        top = ranking(beliefs)[0]
        result.manip_timeline.append(TimelineRow(float(t[i]), top.label, top.p, [b.p for b in beliefs]))
        for b in beliefs:
            result.eef_trace.append(
                (float(t[i]), b.id, b.p, info.d[b.id], int(info.app[b.id]), int(b.id in info.topk))
            )


def scan_objects(points: np.ndarray, cfg: Config, seed: int) -> list[np.ndarray]:
    """Centroids of the clusters left after removing the dominant plane from a scan cloud."""
    g = cfg.geometry
    cloud = PointCloud(np.asarray(points, dtype=np.float64), frame="base")
    if len(cloud) < 3:
        return []
    _, residual = fit_plane_ransac(
        cloud, g.ransac_thresh, g.ransac_iters, g.ransac_remove, sub_seed(seed, "ransac"), g.ransac_downsample
    )
    if len(residual) == 0:
        return []
    normals = estimate_normals(residual, g.normal_radius, g.k_nn)
    clusters = cluster_objects(residual, normals, g.feature_alpha, g.min_cluster_size, g.cluster_eps, g.cluster_min_samples)
    return [c.centroid for c in clusters]


# ---------------------------------------------------------------------------
# metrics


def phase_metrics(name: str, rows: list[TimelineRow], ph: Phase, hold: float) -> PhaseMetrics:
    times = [r.t for r in rows]
    preds = [r.predicted for r in rows]
    res = M.evaluate(times, preds, ph.target, ph.event_t, hold)
    pm = PhaseMetrics(name, ph.target, ph.event_t, res, redirect_t=ph.redirect_t)
    if ph.redirect_t is not None:
        pm.post_redirect_stability, pm.switch_latency, pm.flip_back = redirect_metrics(
            times, preds, ph.target, ph.event_t, ph.redirect_t
        )
    return pm


def redirect_metrics(times, preds, target, event_t: float, redirect_t: float):
    """Stability over [redirect_t, event_t], switch latency and whether the prediction flipped back."""
    times = np.asarray(times, dtype=np.float64)
    # the prediction in force at redirect_t is the last one issued at or before it
    k = int(np.searchsorted(times, redirect_t, side="right")) - 1
    if k < 0:
        k = 0
    sub_t = [max(float(times[k]), redirect_t)] + [float(x) for x in times[k + 1 :]]
    sub_p = list(preds[k:])
    t_first = M.first_correct_time(sub_t, sub_p, target, event_t)
    if t_first is None:
        return 0.0, None, None
    stab = M.stability(sub_t, sub_p, target, event_t)
    runs = M._runs(M._segments(sub_t, sub_p, event_t), target)
    flip_back = not (len(runs) == 1 and abs(runs[0][1] - event_t) <= 1e-9)
    return stab, t_first - redirect_t, flip_back


def replay(log_: SessionLog, cfg: Config, phase: str = "both", ablate_feasibility: bool = False) -> ReplayResult:
    """Run the requested phases; deterministic in (log, config)."""
    result = ReplayResult()
    if phase in ("nav", "both") and log_.nav is not None:
        replay_navigation(log_, cfg, result)
        if result.nav_timeline:
            result.metrics.append(phase_metrics("nav", result.nav_timeline, log_.nav, cfg.eval.hold))
    if phase in ("manip", "both") and log_.manip is not None:
        replay_manipulation(log_, cfg, result, ablate_feasibility)
        if result.manip_timeline:
            result.metrics.append(phase_metrics("manip", result.manip_timeline, log_.manip, cfg.eval.hold))
    return result


# ---------------------------------------------------------------------------
# output


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(round(v, 12))
    return str(v)


def timeline_csv(rows: list[TimelineRow], labels: list[str]) -> str:
    lines = [",".join(["t", "predicted", "value"] + [f"p[{lab}]" for lab in labels])]
    for r in rows:
        lines.append(",".join([_num(r.t), r.predicted, _num(r.value)] + [_num(p) for p in r.probs]))
    return "\n".join(lines) + "\n"


def eef_trace_csv(trace: list[tuple]) -> str:
    lines = ["t,object_id,p,d,app,in_topk"]
    lines += [",".join(_num(v) for v in row) for row in trace]
    return "\n".join(lines) + "\n"


METRIC_COLUMNS = (
    "phase", "target", "event_t", "rtcp", "stability", "first_confident_time", "first_correct_time",
    "redirect_t", "post_redirect_stability", "switch_latency", "flip_back",
)


def metrics_csv(ms: list[PhaseMetrics]) -> str:
    lines = [",".join(METRIC_COLUMNS)]
    for m in ms:
        r = m.result
        vals = [
            m.phase, m.target, m.event_t, r.rtcp, r.stability, r.first_confident_time, r.first_correct_time,
            m.redirect_t, m.post_redirect_stability, m.switch_latency, m.flip_back,
        ]
        lines.append(",".join(_num(v) for v in vals))
    return "\n".join(lines) + "\n"
