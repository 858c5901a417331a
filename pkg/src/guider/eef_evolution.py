"""
Per-object intent probabilities driven by end-effector motion.

Each object's probability follows a growth/decay model evaluated from the
tool-centre point (TCP) distance to an upright gripper cylinder, integrated
with forward Euler at a fixed step, with a bounded per-step drop and a
per-object ceiling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DerivativeError


@dataclass
class EefParams:
    r_g: float = 0.028
    h_g: float = 0.10
    alpha_g: float = 0.08
    alpha_d: float = 0.80
    gamma_v: float = 0.10
    gamma_a: float = 0.05
    delta: float = 0.10
    kappa: float = 10.0
    p_cap: float = 0.30
    low_evidence_threshold: float = 0.05
    dt: float = 0.004
    beta_topk: float = 0.002
    beta_other: float = 0.005
    K: int = 2
    tau_pred: float = 0.3
    p_max: float = 0.99
    approach_snap: float = 0.005

    def validate(self) -> None:
        for name in (
            "r_g", "h_g", "alpha_g", "alpha_d", "gamma_v", "gamma_a", "delta", "kappa",
            "p_cap", "low_evidence_threshold", "dt", "beta_topk", "beta_other", "tau_pred",
            "p_max", "approach_snap",
        ):
            if not getattr(self, name) > 0:
                raise ConfigError(f"eef.{name} must be > 0")
        if not self.p_cap < self.p_max <= 1.0:
            raise ConfigError("need eef.p_cap < eef.p_max <= 1")
        if self.K < 1:
            raise ConfigError("eef.K must be >= 1")


@dataclass
class EefState:
    q: np.ndarray
    qd: np.ndarray = field(default_factory=lambda: np.zeros(3))
    qdd: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def __post_init__(self) -> None:
        self.q = np.asarray(self.q, dtype=np.float64).reshape(3)
        self.qd = np.asarray(self.qd, dtype=np.float64).reshape(3)
        self.qdd = np.asarray(self.qdd, dtype=np.float64).reshape(3)


@dataclass
class ObjectBelief:
    id: int
    centroid: np.ndarray
    p: float
    p_init: float
    d_prev: float | None = None
    label: str = ""

    def __post_init__(self) -> None:
        self.centroid = np.asarray(self.centroid, dtype=np.float64).reshape(3)

    def is_low_evidence(self, params: EefParams) -> bool:
        return self.p_init < params.low_evidence_threshold

    def ceiling(self, params: EefParams) -> float:
        return params.p_cap if self.is_low_evidence(params) else params.p_max


@dataclass
class StepInfo:
    d: dict[int, float]
    app: dict[int, bool]
    topk: set[int]


def make_beliefs(scores, centroids, labels=None) -> list[ObjectBelief]:
    labels = labels or [""] * len(scores)
    return [
        ObjectBelief(id=i, centroid=c, p=float(g), p_init=float(g), label=lab)
        for i, (g, c, lab) in enumerate(zip(scores, centroids, labels))
    ]


def _tcp(q) -> np.ndarray:
    return np.asarray(q.q if isinstance(q, EefState) else q, dtype=np.float64)


def cylinder_distances(C: np.ndarray, q, params: EefParams) -> np.ndarray:
    """Distance from each centroid row of ``C`` to the cylinder hanging below the TCP (0 inside)."""
    C = np.asarray(C, dtype=np.float64).reshape(-1, 3)
    q = _tcp(q)
    rho = np.hypot(C[:, 0] - q[0], C[:, 1] - q[1])
    radial = np.maximum(0.0, rho - params.r_g)
    vertical = np.maximum(0.0, np.maximum((q[2] - params.h_g) - C[:, 2], C[:, 2] - q[2]))
    return np.sqrt(radial * radial + vertical * vertical)


def cylinder_distance(c, q, params: EefParams) -> float:
    return float(cylinder_distances(c, q, params)[0])


def approach_indicator(d: float, d_prev: float | None, params: EefParams) -> bool:
    if d_prev is None:
        d_prev = d
    return (d - d_prev) < 0 or d < params.approach_snap


def _rates(d, app, low, v: float, a: float, params: EefParams):
    not_app = np.where(app, 0.0, 1.0)
    alpha_g = np.where(low, params.alpha_g / params.kappa, params.alpha_g)
    G = alpha_g / (d + params.delta) * (1 + params.gamma_v * v + params.gamma_a * a) * (1 - 0.7 * not_app)
    D = params.alpha_d * (d + params.delta) * (1 + 0.3 * params.gamma_v * v + 0.3 * params.gamma_a * a) * (1 + 0.5 * not_app)
    return G, D


def growth_decay(obj: ObjectBelief, d: float, app: bool, v: float, a: float, params: EefParams) -> tuple[float, float]:
    G, D = _rates(np.array([d]), np.array([app]), np.array([obj.is_low_evidence(params)]), v, a, params)
    return float(G[0]), float(D[0])


def predict_tcp(q: EefState, params: EefParams) -> np.ndarray:
    tau = params.tau_pred
    return q.q + q.qd * tau + 0.5 * q.qdd * tau * tau


def _topk_mask(C: np.ndarray, ids: np.ndarray, q_hat: np.ndarray, q: np.ndarray, K: int) -> np.ndarray:
    ahead = np.linalg.norm(C - q_hat, axis=1)
    here = np.linalg.norm(C - q, axis=1)
    chosen = np.zeros(len(C), dtype=bool)
    chosen[np.lexsort((ids, ahead))[:K]] = True
    chosen[np.lexsort((ids, here))[0]] = True
    return chosen


def top_k_set(objects: list[ObjectBelief], q_hat, q, params: EefParams) -> set[int]:
    """K nearest centroids to the predicted TCP, plus the one nearest the current TCP; ties to the lower id."""
    if not objects:
        return set()
    C = np.array([o.centroid for o in objects])
    ids = np.array([o.id for o in objects])
    chosen = _topk_mask(C, ids, np.asarray(q_hat, dtype=np.float64), _tcp(q), params.K)
    return {int(i) for i in ids[chosen]}


def advance(objects: list[ObjectBelief], q: EefState, params: EefParams, n_steps: int = 1) -> StepInfo:
    """Apply ``n_steps`` Euler updates holding the TCP state fixed.

    Distances, approach flags, growth/decay rates and the top-K set are
    evaluated once from ``q``; ``d_prev`` is refreshed afterwards. With
    ``n_steps=1`` this is exactly one discrete update.
    """
    if not objects:
        return StepInfo(d={}, app={}, topk=set())
    v = float(np.linalg.norm(q.qd))
    a = float(np.linalg.norm(q.qdd))
    C = np.array([o.centroid for o in objects])
    ids = np.array([o.id for o in objects])
    in_topk = _topk_mask(C, ids, predict_tcp(q, params), q.q, params.K)
    d = cylinder_distances(C, q, params)
    d_prev = np.array([dp if (dp := o.d_prev) is not None else di for o, di in zip(objects, d)])
    app = ((d - d_prev) < 0) | (d < params.approach_snap)
    low = np.array([o.is_low_evidence(params) for o in objects])
    G, D = _rates(d, app, low, v, a, params)
    rate = params.dt * (G - D)
    beta = np.where(in_topk, params.beta_topk, params.beta_other)
    ceiling = np.where(low, params.p_cap, params.p_max)
    p = np.array([o.p for o in objects])
    for _ in range(n_steps):
        p = np.maximum(0.0, np.minimum(np.maximum(p + rate, p - beta), ceiling))
    for k, obj in enumerate(objects):
        obj.p = float(p[k])
        obj.d_prev = float(d[k])
    return StepInfo(
        d={int(i): float(x) for i, x in zip(ids, d)},
        app={int(i): bool(x) for i, x in zip(ids, app)},
        topk={int(i) for i in ids[in_topk]},
    )


def step(objects: list[ObjectBelief], q: EefState, params: EefParams) -> StepInfo:
    return advance(objects, q, params, 1)


def estimate_derivatives(t, q) -> tuple[np.ndarray, np.ndarray]:
    """Velocity and acceleration by second-order finite differences on a possibly uneven time grid."""
    t = np.asarray(t, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if len(t) < 3:
        raise DerivativeError("need at least 3 samples for derivatives")
    if np.any(np.diff(t) <= 0):
        raise DerivativeError("timestamps must be strictly increasing")
    qd = np.gradient(q, t, axis=0, edge_order=2)
    qdd = np.gradient(qd, t, axis=0, edge_order=2)
    return qd, qdd


def ranking(objects: list[ObjectBelief]) -> list[ObjectBelief]:
    """Objects best-first; equal probabilities go to the lower id."""
    return sorted(objects, key=lambda o: (-o.p, o.id))


class EefTracker:
    """Drives the belief set over an irregularly sampled TCP stream.

    Each incoming sample is held (zero-order) across the integrator steps
    that elapsed since the previous sample.
    """

    def __init__(self, objects: list[ObjectBelief], params: EefParams | None = None):
        self.objects = objects
        self.params = params or EefParams()
        self._t_prev: float | None = None
        self._carry = 0.0

    def update(self, state: EefState) -> StepInfo:
        if self._t_prev is None:
            n = 1
        else:
            elapsed = state.t - self._t_prev + self._carry
            n = int(math.floor(elapsed / self.params.dt + 1e-9))
            self._carry = elapsed - n * self.params.dt
            n = max(n, 0)
        self._t_prev = state.t
        # n == 0 still refreshes d_prev so the approach flag follows the samples
        return advance(self.objects, state, self.params, n)

    def top(self) -> ObjectBelief | None:
        r = ranking(self.objects)
        return r[0] if r else None
