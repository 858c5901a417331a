"""Acceptance criteria, one test each, at the stated tolerances.

Each test prints a PASS/FAIL line (collected again in the terminal
summary) before asserting.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
import shapes
from conftest import SESSION_T0
from guider import cli
from guider.config import Config
from guider.eef_evolution import (
    EefParams,
    EefState,
    ObjectBelief,
    estimate_derivatives,
    step,
)
from guider.grasp_feasibility import GripperSpec, ObjectMask2D, assess_object
from guider.metrics import rtcp, stability, wilcoxon_exact
from guider.nav_belief import (
    BaseOdometry,
    NavParams,
    OccupancyGrid,
    combined_belief,
    decay_layers,
    init_base_layer,
    motion_evidence,
    nav_step,
    update_motion_layer,
    update_synergy_layer,
)
from guider.object_cascade import CascadeParams, centre_bias, depth_weight, run_cascade
from guider.perception_fusion import fuse_2d
from guider.grasp_feasibility import FeasibilityMasks
from guider.replay import load_session, replay
from guider.scenarios import generate_scenario, write_scenario
from guider.scene_geometry import CameraIntrinsics

SEEDS = range(5)


def random_world(rng, n=200):
    cells = np.zeros((n, n), dtype=np.int8)
    cells[rng.random((n, n)) < 0.02] = -1
    for _ in range(rng.integers(2, 7)):
        r, c = rng.integers(5, n - 15, size=2)
        h, w = rng.integers(2, 12, size=2)
        cells[r : r + h, c : c + w] = 1
    if rng.random() < 0.5:
        cells[0, :] = 1
        cells[:, -1] = 1
    return OccupancyGrid(cells, 0.05)


# ---------------------------------------------------------------------------


def test_c01_navigation_layer_conformance(report):
    rng = np.random.default_rng(1)
    params = NavParams()
    t0 = time.perf_counter()
    n_seq = 10_000
    worst_lo, worst_hi, mismatches, brute_checks = 0.0, 1.0, 0, 0
    ok = True
    state = None
    pose = np.array([5.0, 5.0])
    for i in range(n_seq):
        if i % 500 == 0:
            state = init_base_layer(random_world(rng), params)
            pose = rng.uniform(1, 9, size=2)
        for _ in range(rng.integers(1, 4)):
            op = rng.integers(0, 4)
            if op == 0:
                vel = rng.normal(0, 0.6, size=2)
                pose = np.clip(pose + rng.normal(0, 0.25, size=2), 0, 10)
                nav_step(state, BaseOdometry(float(i), *pose, *vel), params)
            elif op == 1:
                state.last_update_pose = None
                vel = rng.normal(0, 0.6, size=2)
                update_motion_layer(state, BaseOdometry(float(i), *rng.uniform(0, 10, size=2), *vel), params)
            elif op == 2:
                update_synergy_layer(state, params)
            else:
                decay_layers(state, params)
        for layer in (state.base, state.motion, state.synergy):
            worst_lo = min(worst_lo, float(layer.min()))
            worst_hi = max(worst_hi, float(layer.max()))
        comb = combined_belief(state)
        if i % 100 == 0:
            ref = oracles.pointwise_max(state.base, state.motion, state.synergy)
            brute_checks += 1
        else:
            ref = np.stack([state.base, state.motion, state.synergy]).max(axis=0)
        mismatches += int(np.count_nonzero(comb != ref))
    elapsed = time.perf_counter() - t0
    ok = worst_lo >= 0.0 and worst_hi <= 1.0 and mismatches == 0 and elapsed < 30.0
    report(1, "navigation layer conformance", ok,
           f"{n_seq} sequences, layer range [{worst_lo:.3g}, {worst_hi:.3g}], "
           f"{mismatches} combined mismatches ({brute_checks} cell-loop checks), {elapsed:.1f} s (< 30 s)")
    assert ok


def test_c02_motion_evidence_closed_form(report):
    rng = np.random.default_rng(2)
    params = NavParams()
    grid = OccupancyGrid(np.zeros((200, 200), dtype=np.int8), 0.05)
    xx, yy = grid.cell_centers()
    worst_field = worst_dep = 0.0
    n_cells = 0
    positive = 0
    for _ in range(10):
        odo = BaseOdometry(0.0, *rng.uniform(2, 8, size=2), *rng.normal(0, 0.3, size=2))
        field = motion_evidence(grid, odo, params)
        state = init_base_layer(grid, params)
        update_motion_layer(state, odo, params)
        # half the cells where evidence is deposited, half anywhere
        hot = np.argwhere(field > 0)
        picks = [tuple(hot[k]) for k in rng.integers(0, len(hot), 50)]
        picks += [tuple(rng.integers(0, 200, size=2)) for _ in range(50)]
        for r, c in picks:
            ref = oracles.motion_evidence_at(
                xx[r, c], yy[r, c], odo.x, odo.y, odo.vx, odo.vy,
                params.horizons, params.weights, params.dt_pred, params.d_max,
            )
            worst_field = max(worst_field, abs(field[r, c] - ref))
            worst_dep = max(worst_dep, abs(state.motion[r, c] - min(1.0, params.lam * ref)))
            positive += ref > 0
            n_cells += 1
    ok = n_cells == 1000 and worst_field <= 1e-12 and worst_dep <= 1e-12
    report(2, "motion evidence closed form", ok,
           f"{n_cells} cells ({positive} with evidence), max |blend - oracle| = {worst_field:.2e}, "
           f"max |deposit - lambda*oracle| = {worst_dep:.2e} (<= 1e-12)")
    assert ok


def test_c03_synergy_hysteresis(report):
    params = NavParams()
    cells = np.zeros((60, 60), dtype=np.int8)
    cells[28:32, 40:44] = 1
    state = init_base_layer(OccupancyGrid(cells, 0.05), params)
    # drive toward the object so evidence lands on its inflation ring
    update_motion_layer(state, BaseOdometry(0.0, 0.5, 1.5, 0.3, 0.0), params)
    update_synergy_layer(state, params)
    visited = state.synergy > 0
    first = np.unique(state.synergy[visited])
    update_synergy_layer(state, params)
    second = np.unique(state.synergy[visited])
    ok = (
        visited.any()
        and first.tolist() == [params.eta_0]
        and second.tolist() == [params.eta_0 + params.eta_inc]
        and first[0] == 0.70
        and second[0] == 0.75
    )
    report(3, "synergy hysteresis", ok,
           f"{int(visited.sum())} flooded cells: first visit {first.tolist()}, second visit {second.tolist()}")
    assert ok


def test_c04_grasp_feasibility_oracle(report):
    grip = GripperSpec()
    suite = shapes.suite()
    t_impl = t_oracle = 0.0
    mismatched = []
    verdicts = {}
    for name, mask in suite:
        t = time.perf_counter()
        rep = assess_object(ObjectMask2D(mask, shapes.Z, shapes.FX), grip)
        t_impl += time.perf_counter() - t
        t = time.perf_counter()
        ref = (
            oracles.min_rect_short_side(mask) * shapes.GAMMA <= 2 * grip.r,
            not oracles.erode(mask, grip.r / shapes.GAMMA).any(),
            oracles.adv_feasible(mask, shapes.GAMMA, grip.r, grip.finger_width, grip.clearance_extension),
        )
        t_oracle += time.perf_counter() - t
        got = (rep.bbox, rep.morph, rep.adv)
        verdicts[name] = got
        if got != ref:
            mismatched.append(f"{name}: {got} vs {ref}")
    disk = assess_object(ObjectMask2D(shapes.disk(0.12), shapes.Z, shapes.FX), grip)
    bar = assess_object(ObjectMask2D(shapes.bar(0.05, 0.15), shapes.Z, shapes.FX), grip)
    disk_fails = not (disk.bbox or disk.morph or disk.adv)
    bar_passes = bar.bbox and bar.morph and bar.adv
    ok = len(suite) == 50 and not mismatched and disk_fails and bar_passes and t_impl + t_oracle < 60.0
    report(4, "grasp feasibility oracle suite", ok,
           f"{len(suite) - len(mismatched)}/{len(suite)} shapes agree on all three tests; "
           f"0.12 m disk fails all: {disk_fails}; 0.05 m bar passes all: {bar_passes} "
           f"(rotated 30/45 deg adv: {verdicts['bar w=0.05 a=30'][2]}/{verdicts['bar w=0.05 a=45'][2]}); "
           f"{t_impl:.1f} s + {t_oracle:.1f} s oracle (< 60 s)" + ("; " + "; ".join(mismatched) if mismatched else ""))
    assert ok


def test_c05_cascade_values(report):
    rng = np.random.default_rng(5)
    B = rng.random((48, 64)) < 0.5
    F = rng.random((48, 64)) < 0.5
    values = set(np.unique(fuse_2d(B, F).P).tolist())
    fusion_ok = values == {0.0, 0.6, 0.9}

    intr = CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480)
    params = CascadeParams()
    centre = centre_bias(np.ones((480, 640)), intr, params)[240, 320 + 240]
    centre_err = abs(centre - math.exp(-0.5))

    P = np.full((4, 4), 0.9)
    depth_err = float(np.max(np.abs(depth_weight(P, np.full((4, 4), 1.5), params) / P - math.exp(-0.375))))

    small = CameraIntrinsics(fx=40.0, fy=40.0, cx=15.5, cy=11.5, width=32, height=24)
    resurrected = floor_violations = 0
    for _ in range(1000):
        P0 = np.where(rng.random((24, 32)) < 0.4, rng.choice([0.6, 0.9], size=(24, 32)), 0.0)
        P0 *= rng.random((24, 32)) < 0.9
        masks = FeasibilityMasks(*(rng.random((24, 32)) < 0.5 for _ in range(4)))
        z = rng.uniform(0.3, 3.0, size=(24, 32))
        z[rng.random((24, 32)) < 0.1] = np.nan
        res = run_cascade(P0, masks, z, small, params)
        ever = np.zeros((24, 32), dtype=bool)
        for _, stage in res.stages[:-1]:
            ever |= stage > 0
        resurrected += int(np.count_nonzero(res.final[~ever] != 0.0))
        floor_violations += int(np.count_nonzero(res.final[ever] < params.floor_eps))
    ok = fusion_ok and centre_err <= 1e-12 and depth_err <= 1e-12 and resurrected == 0 and floor_violations == 0
    report(5, "cascade values", ok,
           f"fusion values {sorted(values)}; |centre - exp(-0.5)| = {centre_err:.1e}; "
           f"|depth - exp(-0.375)| = {depth_err:.1e}; resurrected {resurrected}, "
           f"unfloored {floor_violations} over 1000 images")
    assert ok


def test_c06_eef_evolution(report):
    params = EefParams()
    rng = np.random.default_rng(6)
    n_obj = 20
    # (a) + (b): every object-step checked individually
    objects = [
        ObjectBelief(
            id=k,
            centroid=rng.uniform([-0.3, -0.3, 0.0], [0.3, 0.3, 0.3]),
            p=float(g),
            p_init=float(g),
        )
        for k, g in enumerate(np.concatenate([rng.uniform(0, 0.0499, 10), rng.uniform(0.05, 0.7, 10)]))
    ]
    low = np.array([o.is_low_evidence(params) for o in objects])
    steps = 0
    low_max = 0.0
    drop_violations = 0
    worst_drop_ratio = 0.0
    at_cap = 0
    episode = []
    while steps < 1_000_000:
        if not episode:
            # either a wandering TCP or one hovering on an object with violent
            # dynamics, which lets growth outpace decay and press on the caps
            n = int(rng.integers(100, 1500))
            if rng.random() < 0.5:
                q = rng.uniform(-0.3, 0.3, size=3)
                walk = np.cumsum(rng.normal(0, 0.005, size=(n, 3)), axis=0)
                episode = [EefState(q + w, rng.normal(0, 0.5, 3), rng.normal(0, 5.0, 3)) for w in walk]
            else:
                c = objects[rng.integers(n_obj)].centroid
                q = c + np.array([0.0, 0.0, rng.uniform(0.0, 0.1)])
                episode = [EefState(q, rng.normal(0, 3.0, 3), rng.normal(0, 80.0, 3)) for _ in range(n)]
        state = episode.pop()
        before = np.array([o.p for o in objects])
        info = step(objects, state, params)
        after = np.array([o.p for o in objects])
        beta = np.array([params.beta_topk if o.id in info.topk else params.beta_other for o in objects])
        drop_violations += int(np.count_nonzero(after < before - beta))
        worst_drop_ratio = max(worst_drop_ratio, float(np.max((before - after) / beta)))
        low_max = max(low_max, float(after[low].max()))
        at_cap += int(np.count_nonzero(after[low] == params.p_cap))
        steps += n_obj
    a_ok = low_max <= params.p_cap
    b_ok = drop_violations == 0

    # (c) parked on a regular object's centroid
    c = np.array([0.6, 0.1, 0.8])
    parked = [ObjectBelief(0, c, 0.4, 0.4), ObjectBelief(1, c + [0.3, 0.0, 0.0], 0.6, 0.6)]
    still = EefState(c + [0.0, 0.0, 0.05])
    trace = [parked[0].p]
    for _ in range(20_000):
        step(parked, still, params)
        trace.append(parked[0].p)
    trace = np.array(trace)
    c_ok = bool(np.all(np.diff(trace) >= 0)) and abs(trace[-1] - params.p_max) <= 1e-6

    # (d) derivatives of quadratics on uneven grids
    worst_d = 0.0
    for _ in range(200):
        t = np.cumsum(rng.uniform(0.005, 0.03, size=rng.integers(3, 80)))
        a0, a1, a2 = rng.normal(0, 1, size=(3, 3))
        qs = a0 + t[:, None] * a1 + t[:, None] ** 2 * a2
        qd, qdd = estimate_derivatives(t, qs)
        worst_d = max(worst_d, float(np.abs(qd - (a1 + 2 * t[:, None] * a2)).max()),
                      float(np.abs(qdd - 2 * a2).max()))
    d_ok = worst_d <= 1e-6
    ok = a_ok and b_ok and c_ok and d_ok
    report(6, "EEF evolution", ok,
           f"(a) max low-evidence p {low_max:.4f} over {steps} object-steps (<= 0.30, {at_cap} at the cap); "
           f"(b) {drop_violations} drops beyond beta, worst drop/beta {worst_drop_ratio:.3f}; "
           f"(c) monotone to {trace[-1]:.8f}; (d) max derivative error {worst_d:.1e}")
    assert ok


def _replay_dir(tmp_path, template, seed):
    out = write_scenario(generate_scenario(template, seed), tmp_path / f"{template}_{seed}")
    return load_session(out)


def test_c07_t5_feasible_object_first(report, tmp_path):
    cfg = Config()
    lines, ok = [], True
    for seed in SEEDS:
        log_ = _replay_dir(tmp_path, "t5_infeasible", seed)
        full = replay(log_, cfg, phase="manip")
        abl = replay(log_, cfg, phase="manip", ablate_feasibility=True)
        first = full.perception.proposals[0].label
        r_full = full.metrics[0].result.rtcp
        r_abl = abl.metrics[0].result.rtcp
        good = first == log_.manip.target and r_full is not None and (r_abl is None or r_full > r_abl)
        ok &= good
        lines.append(f"seed {seed}: rank1={first} RTCP {r_full} vs ablated {r_abl}")
    report(7, "T5 feasible object ranked first and locked on earlier", ok, "; ".join(lines))
    assert ok


def test_c08_redirection_stability(report, tmp_path):
    cfg = Config()
    lines, ok = [], True
    for template, phase in (("t2_base_redirect", "nav"), ("t3_manip_redirect", "manip")):
        for seed in SEEDS:
            log_ = _replay_dir(tmp_path, template, seed)
            (m,) = replay(log_, cfg, phase=phase).metrics
            good = (
                m.post_redirect_stability == 100.0
                and m.switch_latency is not None
                and m.switch_latency <= 2.0
                and m.flip_back is False
            )
            ok &= good
            lines.append(f"{template[:2]}/{seed}: {m.post_redirect_stability:.0f}% {m.switch_latency:.2f} s")
    report(8, "redirection stability", ok, "; ".join(lines) + " (need 100%, <= 2 s, no flip-back)")
    assert ok


def test_c09_metrics_and_statistics(report):
    rng = np.random.default_rng(9)
    worst_rtcp = worst_stab = 0.0
    presence_mismatch = 0
    for _ in range(100):
        n = int(rng.integers(1, 60))
        ticks = np.sort(rng.choice(np.arange(0, 800), size=n, replace=False)).tolist()
        preds = rng.choice(["A", "B", "C", ""], size=n, p=[0.55, 0.2, 0.15, 0.1]).tolist()
        contact = int(rng.integers(ticks[-1] + 1, ticks[-1] + 150))
        t_conf, t_corr, correct, span = oracles.scan_timeline(ticks, preds, "A", contact, hold=50)
        times = [k / 100 for k in ticks]
        got_rtcp = rtcp(times, preds, "A", contact / 100)
        got_stab = stability(times, preds, "A", contact / 100)
        if (got_rtcp is None) != (t_conf is None):
            presence_mismatch += 1
        elif got_rtcp is not None:
            worst_rtcp = max(worst_rtcp, abs(got_rtcp - (contact - t_conf) / 100))
        ref_stab = 0.0 if t_corr is None else 100.0 * correct / span
        worst_stab = max(worst_stab, abs(got_stab - ref_stab))
    timeline_ok = presence_mismatch == 0 and worst_rtcp <= 1e-9 and worst_stab <= 1e-9

    w = wilcoxon_exact([30.0, 25.0, 41.0, 18.0, 22.0], [10.0, 11.0, 12.0, 9.0, 8.0])
    table_ok = w.p_one == 1 / 32 and w.r_bs == 1.0 and round(w.p_one, 3) == 0.031

    worst_p = 0.0
    cases = 0
    for n in range(1, 11):
        for _ in range(12):
            d = rng.integers(-6, 7, size=n).astype(float)
            w_plus, p_ge, p_le = oracles.signed_rank_enumeration(d)
            for alt, ref in (("greater", p_ge), ("less", p_le)):
                got = wilcoxon_exact(d, alternative=alt)
                worst_p = max(worst_p, abs(got.p_one - ref), abs(got.w_plus - w_plus),
                              abs(got.p_two - min(1.0, 2 * min(p_ge, p_le))))
            cases += 1
    enum_ok = worst_p <= 1e-12
    ok = timeline_ok and table_ok and enum_ok
    report(9, "metrics and statistics", ok,
           f"100 timelines: max RTCP err {worst_rtcp:.1e}, max stability err {worst_stab:.1e}, "
           f"{presence_mismatch} presence mismatches; five positive pairs p_one={w.p_one:.4f} r_bs={w.r_bs:+.2f}; "
           f"{cases} enumerations n<=10 max err {worst_p:.1e}")
    assert ok


def test_c10_end_to_end_determinism(report, tmp_path, capsys):
    outputs = []
    for run in ("a", "b"):
        log_dir = tmp_path / f"log_{run}"
        out = tmp_path / f"out_{run}"
        assert cli.main(["gen", "t4_tool", "--seed", "7", "--out", str(log_dir)]) == 0
        assert cli.main(["replay", str(log_dir), "--seed", "7", "--out", str(out)]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file()})
    capsys.readouterr()
    identical = outputs[0] == outputs[1] and "metrics.csv" in outputs[0]
    suite_s = time.perf_counter() - SESSION_T0
    ok = identical and suite_s < 300.0
    report(10, "end-to-end determinism", ok,
           f"{len(outputs[0])} replay outputs byte-identical across two gen+replay runs: {identical}; "
           f"full suite {suite_s:.0f} s (< 300 s)")
    assert ok
