"""
Navigation-phase layered belief map.

Three co-registered layers live on the occupancy grid:

- base:    map prior (free / unknown / occupied, plus linear inflation
           around object-like obstacles)
- motion:  evidence deposited along constant-velocity extrapolations of
           the base odometry at several horizons
- synergy: flood-fill amplification where motion evidence touches map
           context, with hysteresis

The combined belief is their pointwise maximum; its peak is the predicted
interaction area. All operations mutate the state in place and return it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InputError

FREE = 0
UNKNOWN = -1
OCCUPIED = 1

BASE_FREE_VALUE = 0.02
BASE_UNKNOWN_VALUE = 0.0
BASE_OCCUPIED_VALUE = 1.0
SEED_BASE_THRESHOLD = 0.2

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass
class OccupancyGrid:
    """Tristate grid. ``cells[row, col]``; row grows with +y, col with +x.

    ``origin`` is the global-frame position of the outer corner of cell (0, 0).
    """

    cells: np.ndarray
    resolution: float = 0.05
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        self.cells = np.asarray(self.cells, dtype=np.int8)
        if self.cells.ndim != 2 or self.cells.size == 0:
            raise ConfigError("occupancy grid must be a nonempty 2D array")
        if not self.resolution > 0:
            raise ConfigError(f"grid resolution must be > 0, got {self.resolution}")
        bad = ~np.isin(self.cells, (FREE, UNKNOWN, OCCUPIED))
        if bad.any():
            raise ConfigError("grid cells must be one of free(0), unknown(-1), occupied(1)")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """World x, y of every cell center, each shaped like ``cells``."""
        cols = self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution
        rows = self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution
        xx, yy = np.meshgrid(cols, rows)
        return xx, yy

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        col = int(math.floor((x - self.origin[0]) / self.resolution))
        row = int(math.floor((y - self.origin[1]) / self.resolution))
        return row, col

    def cell_to_world(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.origin[0] + (col + 0.5) * self.resolution,
            self.origin[1] + (row + 0.5) * self.resolution,
        )


@dataclass
class NavParams:
    cell_size: float = 0.05
    gamma_base_free: float = 0.55
    gamma_base_obj: float = 0.50
    r_infl: float = 0.75
    dt_pred: float = 0.10
    d_upd: float = 0.30
    d_max: float = 1.00
    beta: float = 0.01
    gamma_decay: float = 0.25
    lam: float = 0.40
    r_syn: float = 0.15
    gamma_syn: float = 0.75
    eta_lb: float = 0.60
    eta_0: float = 0.70
    eta_inc: float = 0.05
    eta_cap: float = 0.90
    horizons: tuple[float, ...] = (5.0, 10.0, 30.0)
    weights: tuple[float, ...] = (0.60, 0.60, 0.85)
    infl_low: float = 0.2
    infl_high: float = 0.6
    max_object_cells: int = 400

    def validate(self) -> None:
        for name in ("gamma_base_free", "gamma_base_obj", "gamma_decay", "gamma_syn", "lam"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"nav.{name} must lie in (0, 1], got {v}")
        for w in self.weights:
            if not 0.0 < w <= 1.0:
                raise ConfigError(f"nav.weights entries must lie in (0, 1], got {w}")
        if len(self.weights) != len(self.horizons) or not self.horizons:
            raise ConfigError("nav.horizons and nav.weights must be nonempty and equally long")
        if any(h <= 0 for h in self.horizons):
            raise ConfigError("nav.horizons must be positive")
        if not self.eta_lb < self.eta_0 < self.eta_cap <= 1.0:
            raise ConfigError("need nav.eta_lb < nav.eta_0 < nav.eta_cap <= 1")
        if not 0.0 <= self.infl_low < self.infl_high <= 1.0:
            raise ConfigError("need 0 <= nav.infl_low < nav.infl_high <= 1")
        for name in ("cell_size", "r_infl", "dt_pred", "d_upd", "d_max", "r_syn"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"nav.{name} must be > 0")
        if not 0.0 < self.beta <= 1.0 or not 0.0 < self.eta_inc:
            raise ConfigError("nav.beta must lie in (0, 1] and nav.eta_inc must be > 0")
        if self.max_object_cells < 1:
            raise ConfigError("nav.max_object_cells must be >= 1")


@dataclass(frozen=True)
class BaseOdometry:
    t: float
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0


@dataclass
class NavBeliefState:
    grid: OccupancyGrid
    base: np.ndarray
    motion: np.ndarray
    synergy: np.ndarray
    base_initial: np.ndarray
    object_region: np.ndarray
    last_update_pose: tuple[float, float] | None = None
    update_count: int = 0

    def copy(self) -> "NavBeliefState":
        kw = {}
        for f in fields(self):
            v = getattr(self, f.name)
            kw[f.name] = v.copy() if isinstance(v, np.ndarray) else v
        return NavBeliefState(**kw)


def init_base_layer(grid: OccupancyGrid, params: NavParams | None = None) -> NavBeliefState:
    """Build the piecewise map prior and inflate object-like obstacles."""
    params = params or NavParams()
    if grid.cells.size == 0:
        raise ConfigError("empty occupancy grid")
    base = np.full(grid.cells.shape, BASE_UNKNOWN_VALUE, dtype=np.float64)
    base[grid.cells == FREE] = BASE_FREE_VALUE
    base[grid.cells == OCCUPIED] = BASE_OCCUPIED_VALUE
    state = NavBeliefState(
        grid=grid,
        base=base,
        motion=np.zeros_like(base),
        synergy=np.zeros_like(base),
        base_initial=base.copy(),
        object_region=np.zeros(base.shape, dtype=bool),
    )
    inflate_objects(state, grid, params)
    state.base_initial = state.base.copy()
    return state


def object_like_cells(grid: OccupancyGrid, max_object_cells: int) -> np.ndarray:
    """Occupied cells belonging to 8-connected components of at most ``max_object_cells``."""
    labels, n = ndimage.label(grid.cells == OCCUPIED, structure=_EIGHT_CONNECTED)
    if n == 0:
        return np.zeros(grid.cells.shape, dtype=bool)
    sizes = np.bincount(labels.ravel())
    keep = sizes <= max_object_cells
    keep[0] = False
    return keep[labels]


def inflate_objects(state: NavBeliefState, grid: OccupancyGrid, params: NavParams) -> NavBeliefState:
    """Linear belief ramp on free cells around object-like occupied components.

    Distance is measured from the ring of free cells touching the object, so
    an adjacent cell gets ``infl_high`` and a cell ``r_infl`` further out gets
    ``infl_low``. Larger components (walls, shelving) inflate nothing.
    """
    objects = object_like_cells(grid, params.max_object_cells)
    state.object_region = objects.copy()
    if not objects.any():
        return state
    # centre-to-centre distance (m) to the nearest object cell
    dist = ndimage.distance_transform_edt(~objects, sampling=grid.resolution)
    ring = dist - grid.resolution
    free = grid.cells == FREE
    inside = free & (ring <= params.r_infl + 1e-12)
    frac = np.clip(ring[inside] / params.r_infl, 0.0, 1.0)
    value = params.infl_high - (params.infl_high - params.infl_low) * frac
    state.base[inside] = np.maximum(state.base[inside], value)
    state.object_region |= inside
    state.base[grid.cells == OCCUPIED] = BASE_OCCUPIED_VALUE
    return state


def decay_layers(state: NavBeliefState, params: NavParams) -> NavBeliefState:
    """One decay event: base relaxes to its snapshot, motion/synergy shrink toward zero."""
    gamma = np.where(state.object_region, params.gamma_base_obj, params.gamma_base_free)
    state.base = state.base_initial + gamma * (state.base - state.base_initial)
    state.motion *= params.gamma_decay
    state.synergy *= params.gamma_syn
    return state


def _horizon_evidence(
    xx: np.ndarray,
    yy: np.ndarray,
    x: float,
    y: float,
    vx: float,
    vy: float,
    n_samples: int,
    dt: float,
    d_max: float,
) -> np.ndarray:
    """max over samples k=1..n of max(0, 1 - |c - p_k| / d_max).

    The samples are collinear and evenly spaced, so the nearest one to a
    cell is found by projecting onto the line and rounding.
    """
    speed2 = vx * vx + vy * vy
    if speed2 == 0.0:
        sx = np.full(xx.shape, x)
        sy = np.full(yy.shape, y)
    else:
        s = ((xx - x) * vx + (yy - y) * vy) / (speed2 * dt)
        k = np.clip(np.rint(s), 1, n_samples)
        sx = x + vx * k * dt
        sy = y + vy * k * dt
    d = np.hypot(xx - sx, yy - sy)
    return np.maximum(0.0, 1.0 - d / d_max)


def _sample_box(grid: OccupancyGrid, odo: BaseOdometry, t_near: float, t_far: float, margin: float):
    """Cell index ranges covering the extrapolated segment between two times, padded by ``margin``."""
    ex = (odo.x + odo.vx * t_near, odo.x + odo.vx * t_far)
    ey = (odo.y + odo.vy * t_near, odo.y + odo.vy * t_far)
    lo_r, lo_c = grid.world_to_cell(min(ex) - margin, min(ey) - margin)
    hi_r, hi_c = grid.world_to_cell(max(ex) + margin, max(ey) + margin)
    return max(lo_r, 0), min(hi_r + 1, grid.height), max(lo_c, 0), min(hi_c + 1, grid.width)


def motion_evidence(grid: OccupancyGrid, odo: BaseOdometry, params: NavParams) -> np.ndarray:
    """Blended multi-horizon evidence field max_i alpha_i * E_i over the whole grid.

    Each horizon is evaluated only inside the box its samples can reach;
    cells further than ``d_max`` from every sample get zero evidence.
    """
    blend = np.zeros(grid.cells.shape, dtype=np.float64)
    for tau, alpha in zip(params.horizons, params.weights):
        n = max(1, int(round(tau / params.dt_pred)))
        r0, r1, c0, c1 = _sample_box(grid, odo, params.dt_pred, n * params.dt_pred, params.d_max)
        if r0 >= r1 or c0 >= c1:
            continue
        cols = grid.origin[0] + (np.arange(c0, c1) + 0.5) * grid.resolution
        rows = grid.origin[1] + (np.arange(r0, r1) + 0.5) * grid.resolution
        xx, yy = np.meshgrid(cols, rows)
        e = _horizon_evidence(xx, yy, odo.x, odo.y, odo.vx, odo.vy, n, params.dt_pred, params.d_max)
        sub = blend[r0:r1, c0:c1]
        np.maximum(sub, alpha * e, out=sub)
    return blend


def update_motion_layer(state: NavBeliefState, odo: BaseOdometry, params: NavParams) -> bool:
    """Deposit motion evidence if the base moved at least ``d_upd`` since the last update.

    Returns True when an update was applied. The very first call (no prior
    update pose) always applies.
    """
    if state.last_update_pose is not None:
        dx = odo.x - state.last_update_pose[0]
        dy = odo.y - state.last_update_pose[1]
        if math.hypot(dx, dy) < params.d_upd:
            return False
    evidence = motion_evidence(state.grid, odo, params)
    state.motion = np.clip(state.motion + params.lam * evidence, 0.0, 1.0)
    state.last_update_pose = (odo.x, odo.y)
    state.update_count += 1
    return True


def disk_offsets(radius_m: float, resolution: float) -> np.ndarray:
    """Boolean footprint of cells whose centers lie within ``radius_m`` of the middle cell."""
    k = int(math.floor(radius_m / resolution + 1e-9))
    ii, jj = np.mgrid[-k : k + 1, -k : k + 1]
    return np.hypot(ii, jj) * resolution <= radius_m + 1e-9


def synergy_seeds(state: NavBeliefState, params: NavParams) -> np.ndarray:
    return (state.base >= SEED_BASE_THRESHOLD) & (state.motion >= params.beta)


def _dilate(mask: np.ndarray, footprint: np.ndarray) -> np.ndarray:
    """Binary dilation as the union of shifted copies, one per footprint offset."""
    k = footprint.shape[0] // 2
    h, w = mask.shape
    pad = np.zeros((h + 2 * k, w + 2 * k), dtype=bool)
    pad[k : k + h, k : k + w] = mask
    out = np.zeros_like(mask, dtype=bool)
    for di, dj in np.argwhere(footprint):
        out |= pad[di : di + h, dj : dj + w]
    return out


def update_synergy_layer(state: NavBeliefState, params: NavParams) -> NavBeliefState:
    """Flood from every seed out to ``r_syn`` and apply the hysteresis rule once per visited cell.

    The union of per-seed flood regions equals a dilation of the seed set by
    the digital disk, which is how it is computed here.
    """
    seeds = synergy_seeds(state, params)
    if not seeds.any():
        return state
    disk = disk_offsets(params.r_syn, state.grid.resolution)
    k = disk.shape[0] // 2
    rows, cols = np.nonzero(seeds)
    r0, r1 = max(rows.min() - k, 0), min(rows.max() + k + 1, seeds.shape[0])
    c0, c1 = max(cols.min() - k, 0), min(cols.max() + k + 1, seeds.shape[1])
    visited = _dilate(seeds[r0:r1, c0:c1], disk)
    syn = state.synergy[r0:r1, c0:c1]
    cur = syn[visited]
    syn[visited] = np.where(cur < params.eta_lb, params.eta_0, np.minimum(cur + params.eta_inc, params.eta_cap))
    return state


def combined_belief(state: NavBeliefState) -> np.ndarray:
    return np.maximum(np.maximum(state.base, state.motion), state.synergy)


def predicted_area(field_: np.ndarray, mask: np.ndarray | None = None) -> tuple[tuple[int, int], float]:
    """Argmax cell (row, col) and its value; ties go to the lowest row-major index.

    ``mask`` restricts the search to cells where it is True.
    """
    f = np.asarray(field_, dtype=np.float64)
    if f.size == 0:
        raise InputError("empty field")
    if mask is not None:
        if not mask.any():
            raise InputError("predicted_area mask selects no cells")
        f = np.where(mask, f, -np.inf)
    flat = int(np.argmax(f))
    row, col = divmod(flat, f.shape[1])
    return (row, col), float(f[row, col])


def nav_step(state: NavBeliefState, odo: BaseOdometry, params: NavParams) -> bool:
    """Full per-sample update: on an accepted displacement event decay, deposit, then flood."""
    if state.last_update_pose is None:
        state.last_update_pose = (odo.x, odo.y)
        return False
    dx = odo.x - state.last_update_pose[0]
    dy = odo.y - state.last_update_pose[1]
    if math.hypot(dx, dy) < params.d_upd:
        return False
    decay_layers(state, params)
    update_motion_layer(state, odo, params)
    update_synergy_layer(state, params)
    return True
