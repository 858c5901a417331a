"""
Synthetic session generator.

Templates mirror five teleoperation task types:

- t1_direct          drive straight toward one region
- t2_base_redirect   drive toward one region, turn to another mid-way
- t3_manip_redirect  reach toward one object, switch to its neighbour
- t4_tool            drive to a workbench region, then reach for a thin tool
- t5_infeasible      a wide can next to a small graspable item; reach the item

The navigation world is a 10 m x 10 m open floor (0.05 m cells) with an
object block at the centre of each of four regions. The camera looks along
the base +x axis from 1 m height; objects are fronto-parallel patches in
front of a back wall. Everything random comes from the run seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .codecs import depth_to_mm, unit_to_u8, write_jsonl, write_kv, write_pgm, write_ply
from .errors import ConfigError
from .nav_belief import FREE, OCCUPIED, OccupancyGrid
from .replay import FORMAT, grid_to_gray
from .rng import module_rng
from .scene_geometry import Box3D, CameraIntrinsics, RigidTransform, cluster_prompts, merge_scan, reproject_depth

TEMPLATES = ("t1_direct", "t2_base_redirect", "t3_manip_redirect", "t4_tool", "t5_infeasible")
ALIASES = {
    "direct-drive": "t1_direct",
    "base-redirect": "t2_base_redirect",
    "manip-redirect": "t3_manip_redirect",
    "tool": "t4_tool",
    "infeasible-object": "t5_infeasible",
}

GRID_CELLS = 200
GRID_RES = 0.05
OBJECT_BLOCK = 8  # cells per side
REGION_HALF = 1.25  # object block + inflation ring + synergy reach
REGION_CENTERS = {"R1": (5.0, 8.5), "R2": (8.5, 5.0), "R3": (5.0, 1.5), "R4": (1.5, 5.0)}
START = (5.0, 5.0)
STOP_SHORT = 0.8  # final stop distance before a region centre
REDIRECT_SHORT = 2.2  # turn point distance before the first region centre

INTRINSICS = CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480)
CAM_HEIGHT = 1.0
CAM_TO_BASE = RigidTransform(
    np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]),
    np.array([0.0, 0.0, CAM_HEIGHT]),
)
WALL_DEPTH = 1.6
SCAN_WORKSPACE = Box3D(lo=(0.0, -1.0, 0.0), hi=(2.0, 1.0, 1.5))


@dataclass
class ScenarioParams:
    base_rate: float = 10.0
    base_speed: float = 0.5
    base_pos_noise: float = 0.005
    base_vel_noise: float = 0.01
    tcp_rate: float = 50.0
    tcp_noise: float = 0.0002
    depth_noise_mm: float = 1.0
    saliency_noise: float = 0.03
    with_scan: bool = True


@dataclass
class SceneObject:
    label: str
    u: float  # pixel centre
    v: float
    width_m: float
    height_m: float
    z: float
    confidence: float = 0.9

    def pixel_box(self, intr: CameraIntrinsics) -> tuple[int, int, int, int]:
        """(row0, row1, col0, col1) half-open pixel bounds."""
        w = self.width_m * intr.fx / self.z
        h = self.height_m * intr.fy / self.z
        c0 = int(round(self.u - w / 2))
        r0 = int(round(self.v - h / 2))
        return r0, r0 + int(round(h)), c0, c0 + int(round(w))

    def mask(self, intr: CameraIntrinsics) -> np.ndarray:
        m = np.zeros((intr.height, intr.width), dtype=bool)
        r0, r1, c0, c1 = self.pixel_box(intr)
        m[max(r0, 0) : r1, max(c0, 0) : c1] = True
        return m

    def base_centroid(self, intr: CameraIntrinsics) -> np.ndarray:
        rows, cols = np.nonzero(self.mask(intr))
        u, v = cols.mean(), rows.mean()
        cam = np.array([(u - intr.cx) / intr.fx * self.z, (v - intr.cy) / intr.fy * self.z, self.z])
        return CAM_TO_BASE.apply(cam[None, :])[0]


@dataclass
class Scenario:
    template: str
    seed: int
    manifest: dict
    grid: OccupancyGrid | None = None
    base: list[dict] = field(default_factory=list)
    tcp: list[dict] = field(default_factory=list)
    saliency: np.ndarray | None = None
    depth_m: np.ndarray | None = None
    masks: list[tuple[np.ndarray, float, tuple[float, float] | None, str]] = field(default_factory=list)
    scan: np.ndarray | None = None
    objects: list[SceneObject] = field(default_factory=list)


def resolve_template(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in TEMPLATES:
        raise ConfigError(f"unknown scenario template {name!r}; choose from {', '.join(TEMPLATES)}")
    return name


# ---------------------------------------------------------------------------
# navigation world


def region_polygon(name: str) -> list[list[float]]:
    cx, cy = REGION_CENTERS[name]
    h = REGION_HALF
    return [[cx - h, cy - h], [cx + h, cy - h], [cx + h, cy + h], [cx - h, cy + h]]


def make_world() -> OccupancyGrid:
    cells = np.full((GRID_CELLS, GRID_CELLS), FREE, dtype=np.int8)
    half = OBJECT_BLOCK // 2
    for cx, cy in REGION_CENTERS.values():
        r = int(round(cy / GRID_RES))
        c = int(round(cx / GRID_RES))
        cells[r - half : r + half, c - half : c + half] = OCCUPIED
    return OccupancyGrid(cells, resolution=GRID_RES, origin=(0.0, 0.0))


def _toward(p, target, short: float) -> tuple[float, float]:
    d = np.subtract(target, p)
    n = float(np.hypot(*d))
    return tuple(np.asarray(p) + d * (n - short) / n)


def drive(waypoints, speed: float, rate: float, t0: float = 0.0) -> tuple[list[tuple], list[float]]:
    """Constant-speed polyline; returns (t, x, y, vx, vy) samples and the arrival time at each waypoint."""
    dt = 1.0 / rate
    seg_t = [t0]
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        seg_t.append(seg_t[-1] + math.dist(a, b) / speed)
    n = int(math.floor((seg_t[-1] - t0) / dt + 1e-9))
    times = [t0 + k * dt for k in range(n + 1)]
    if seg_t[-1] - times[-1] > 1e-9:
        times.append(seg_t[-1])
    out = []
    for t in times:
        k = min(int(np.searchsorted(seg_t, t, side="right")) - 1, len(waypoints) - 2)
        a, b = np.asarray(waypoints[k]), np.asarray(waypoints[k + 1])
        L = float(np.hypot(*(b - a)))
        u = (b - a) / L
        s = min(max(t - seg_t[k], 0.0) * speed, L)
        p = a + u * s
        v = u * speed if t < seg_t[-1] - 1e-9 else np.zeros(2)
        out.append((round(t, 9), float(p[0]), float(p[1]), float(v[0]), float(v[1])))
    return out, seg_t


def base_records(samples, rng: np.random.Generator, p: ScenarioParams) -> list[dict]:
    recs = []
    for t, x, y, vx, vy in samples:
        n = rng.normal(size=4)
        recs.append({
            "t": t, "frame": "map",
            "x": x + p.base_pos_noise * n[0], "y": y + p.base_pos_noise * n[1], "z": 0.0,
            "vx": vx + p.base_vel_noise * n[2], "vy": vy + p.base_vel_noise * n[3], "vz": 0.0,
        })
    return recs


def nav_phase(route: list[str], rng, p: ScenarioParams, t0: float = 0.0):
    """Route of region names: first entries are turned away from, the last is driven to."""
    pts = [START]
    for name in route[:-1]:
        pts.append(_toward(pts[-1], REGION_CENTERS[name], REDIRECT_SHORT))
    pts.append(_toward(pts[-1], REGION_CENTERS[route[-1]], STOP_SHORT))
    samples, seg_t = drive(pts, p.base_speed, p.base_rate, t0)
    phase = {
        "t_start": t0,
        "t_end": seg_t[-1],
        "contact_t": seg_t[-1],
        "target": route[-1],
        "redirect_t": seg_t[1] if len(route) > 1 else None,
    }
    return phase, base_records(samples, rng, p)


# ---------------------------------------------------------------------------
# manipulation scene


def render_scene(objects: list[SceneObject], rng, p: ScenarioParams, intr: CameraIntrinsics = INTRINSICS):
    shape = (intr.height, intr.width)
    depth = np.full(shape, WALL_DEPTH)
    sal = 0.15 + p.saliency_noise * rng.standard_normal(shape)
    for obj in objects:
        m = obj.mask(intr)
        depth[m] = obj.z
        sal[m] = 0.97 + 0.03 * rng.random(int(m.sum()))
    depth = depth + p.depth_noise_mm * 1e-3 * rng.standard_normal(shape)
    return np.clip(sal, 0.0, 1.0), depth


def instance_masks(objects, depth_m, rng, intr: CameraIntrinsics = INTRINSICS, seed: int = 0):
    """One mask per object (prompted by cluster centroids), a wall mask and a weak speckle."""
    small = depth_m[::2, ::2]
    prompts = cluster_prompts(small, intr.scaled(0.5), seed=seed)
    prompts = [(2.0 * u, 2.0 * v) for u, v in prompts]
    out = []
    wall = np.ones((intr.height, intr.width), dtype=bool)
    for obj in objects:
        m = obj.mask(intr)
        wall &= ~m
        # the prompt nearest the object's centre, if the clustering found it
        near = min(prompts, key=lambda q: math.hypot(q[0] - obj.u, q[1] - obj.v), default=None)
        if near is not None and math.hypot(near[0] - obj.u, near[1] - obj.v) > 40:
            near = None
        out.append((m, obj.confidence, near, obj.label))
    out.append((wall, 0.95, None, "wall"))
    speck = np.zeros_like(wall)
    r, c = int(rng.integers(20, intr.height - 30)), int(rng.integers(20, intr.width - 30))
    speck[r : r + 6, c : c + 6] = True
    out.append((speck, 0.30, None, "speck"))
    return out


def min_jerk(waypoints, times, rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise minimum-jerk motion through ``waypoints`` reached at ``times``."""
    W = np.asarray(waypoints, dtype=np.float64)
    T = np.asarray(times, dtype=np.float64)
    n = int(round((T[-1] - T[0]) * rate))
    ts = T[0] + np.arange(n + 1) / rate
    q = np.empty((len(ts), 3))
    for i, t in enumerate(ts):
        k = min(int(np.searchsorted(T, t, side="right")) - 1, len(T) - 2)
        s = np.clip((t - T[k]) / (T[k + 1] - T[k]), 0.0, 1.0)
        blend = 10 * s**3 - 15 * s**4 + 6 * s**5
        q[i] = W[k] + (W[k + 1] - W[k]) * blend
    return np.round(ts, 9), q


def tcp_records(ts, q, rng, p: ScenarioParams) -> list[dict]:
    vel = np.gradient(q, ts, axis=0) if len(ts) > 1 else np.zeros_like(q)
    noisy = q + p.tcp_noise * rng.standard_normal(q.shape)
    return [
        {"t": float(t), "frame": "base", "x": float(a[0]), "y": float(a[1]), "z": float(a[2]),
         "vx": float(v[0]), "vy": float(v[1]), "vz": float(v[2])}
        for t, a, v in zip(ts, noisy, vel)
    ]


def _hover(c: np.ndarray, dx: float = 0.0, dy: float = 0.0, dz: float = 0.05) -> np.ndarray:
    """A TCP position near centroid ``c`` with the gripper cylinder spanning its height."""
    return np.array([c[0] + dx, c[1] + dy, c[2] + dz])


def manip_phase(objects, target: str, waypoints_fn, rng, p: ScenarioParams, seed: int, t0: float):
    sal, depth = render_scene(objects, rng, p)
    masks = instance_masks(objects, depth, rng, seed=seed)
    cents = {o.label: o.base_centroid(INTRINSICS) for o in objects}
    wps, times, redirect_t, command_t = waypoints_fn(cents)
    times = [t0 + t for t in times]
    ts, q = min_jerk(wps, times, p.tcp_rate)
    tgt = next(o for o in objects if o.label == target)
    phase = {
        "t_start": times[0],
        "t_end": times[-1],
        "command_t": t0 + command_t,
        "target": target,
        "target_pixel": [tgt.u, tgt.v],
        "redirect_t": None if redirect_t is None else t0 + redirect_t,
    }
    return phase, tcp_records(ts, q, rng, p), sal, depth, masks


# ---------------------------------------------------------------------------
# templates


def _t3_path(c):
    A, B = c["block_a"], c["block_b"]
    start = np.array([0.55, 0.0, 1.02])
    near_a = _hover(A, dx=-0.10, dy=-0.02)
    at_b = _hover(B, dx=-0.02)
    return [start, start, near_a, at_b, at_b], [0.0, 0.3, 2.3, 3.6, 4.6], 2.3, 4.6


def _t4_path(c):
    tool = c["screwdriver"]
    start = np.array([0.55, 0.05, 1.0])
    at = _hover(tool, dx=-0.02)
    return [start, start, at, at], [0.0, 0.3, 3.0, 4.0], None, 4.0


def _t5_path(c):
    fruit = c["fruit"]
    start = np.array([0.75, -0.06, 1.05])
    at = _hover(fruit, dx=-0.02)
    return [start, start, at, at], [0.0, 0.3, 3.3, 4.3], None, 4.3


T3_OBJECTS = [
    SceneObject("block_a", u=240, v=260, width_m=0.05, height_m=0.10, z=1.0, confidence=0.9),
    SceneObject("block_b", u=400, v=260, width_m=0.05, height_m=0.10, z=1.0, confidence=0.9),
]
T4_OBJECTS = [
    SceneObject("toolbox", u=330, v=250, width_m=0.16, height_m=0.10, z=0.95, confidence=0.92),
    SceneObject("screwdriver", u=430, v=270, width_m=0.02, height_m=0.15, z=1.05, confidence=0.85),
]
T5_OBJECTS = [
    SceneObject("can", u=320, v=250, width_m=0.12, height_m=0.16, z=1.0, confidence=0.93),
    SceneObject("fruit", u=420, v=260, width_m=0.036, height_m=0.10, z=1.15, confidence=0.88),
]


def generate_scenario(template: str, seed: int = 0, params: ScenarioParams | None = None) -> Scenario:
    template = resolve_template(template)
    p = params or ScenarioParams()
    rng = module_rng(seed, f"scenario.{template}")
    manifest: dict = {
        "format": FORMAT,
        "template": template,
        "seed": int(seed),
        "params": asdict(p),
        "phases": {"navigation": None, "scan": None, "manipulation": None},
        "files": {},
    }
    scn = Scenario(template, int(seed), manifest)

    nav_route = {
        "t1_direct": ["R1"],
        "t2_base_redirect": ["R1", "R2"],
        "t4_tool": ["R4"],
    }.get(template)
    t_manip0 = 0.0
    if nav_route is not None:
        phase, scn.base = nav_phase(nav_route, rng, p)
        manifest["phases"]["navigation"] = phase
        manifest["regions"] = [{"name": n, "polygon": region_polygon(n)} for n in REGION_CENTERS]
        scn.grid = make_world()
        t_manip0 = phase["t_end"] + 1.0

    manip = {
        "t3_manip_redirect": (T3_OBJECTS, "block_b", _t3_path),
        "t4_tool": (T4_OBJECTS, "screwdriver", _t4_path),
        "t5_infeasible": (T5_OBJECTS, "fruit", _t5_path),
    }.get(template)
    if manip is not None:
        objects, target, path_fn = manip
        phase, scn.tcp, scn.saliency, scn.depth_m, scn.masks = manip_phase(
            objects, target, path_fn, rng, p, seed, t_manip0
        )
        scn.objects = list(objects)
        manifest["phases"]["manipulation"] = phase
        manifest["cam_to_base"] = {
            "rotation": CAM_TO_BASE.rotation.tolist(),
            "translation": CAM_TO_BASE.translation.tolist(),
        }
        if p.with_scan:
            cloud = reproject_depth(scn.depth_m[::4, ::4], INTRINSICS.scaled(0.25))
            scn.scan = merge_scan([(cloud, CAM_TO_BASE)], workspace=SCAN_WORKSPACE).points
            manifest["phases"]["scan"] = {"t_start": t_manip0 - 0.5, "t_end": t_manip0}
    return scn


def write_scenario(scn: Scenario, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = scn.manifest["files"]
    if scn.grid is not None:
        write_pgm(out / "grid.pgm", grid_to_gray(scn.grid))
        write_kv(out / "grid.txt", {
            "resolution": repr(scn.grid.resolution),
            "origin_x": repr(scn.grid.origin[0]),
            "origin_y": repr(scn.grid.origin[1]),
            "occupied_max": 50,
            "free_min": 250,
        })
        write_jsonl(out / "base.jsonl", scn.base)
        files.update(grid="grid.pgm", grid_meta="grid.txt", base="base.jsonl")
    if scn.tcp:
        write_jsonl(out / "tcp.jsonl", scn.tcp)
        intr = INTRINSICS
        write_kv(out / "intrinsics.txt", {
            "fx": repr(intr.fx), "fy": repr(intr.fy), "cx": repr(intr.cx), "cy": repr(intr.cy),
            "width": intr.width, "height": intr.height,
        })
        write_pgm(out / "saliency.pgm", unit_to_u8(scn.saliency))
        write_pgm(out / "depth.pgm", depth_to_mm(scn.depth_m))
        recs = []
        for k, (m, conf, prompt, label) in enumerate(scn.masks):
            name = f"mask_{k:02d}.pgm"
            write_pgm(out / name, (m * 255).astype(np.uint8))
            rec = {"mask_file": name, "confidence": conf, "label": label}
            if prompt is not None:
                rec["prompt_u"], rec["prompt_v"] = float(prompt[0]), float(prompt[1])
            recs.append(rec)
        write_jsonl(out / "masks.jsonl", recs)
        files.update(tcp="tcp.jsonl", intrinsics="intrinsics.txt", saliency="saliency.pgm",
                     depth="depth.pgm", masks="masks.jsonl")
        if scn.scan is not None:
            write_ply(out / "scan.ply", scn.scan)
            files["scan"] = "scan.ply"
    (out / "manifest.json").write_text(json.dumps(scn.manifest, indent=2, sort_keys=True) + "\n")
    return out
