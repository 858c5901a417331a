"""
Command-line front end.

    guider gen TEMPLATE --seed N --out DIR
    guider replay LOG_DIR --out DIR [--config F] [--seed N] [--phase nav|manip|both]
                  [--dump-stages] [--ablate-feasibility]
    guider eval RUN_DIR... [--baseline RUN_DIR...] --out DIR [--alternative greater|less]
    guider render FIELD --out IMAGE.ppm
    guider check-config CONFIG

Exit status: 0 on success, 2 when an input, log or config fails validation,
1 on I/O failures. ``GUIDER_LOG_LEVEL`` (error, warn, info, debug) sets verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .codecs import read_pgm, read_raw_f32, u8_to_unit, unit_to_u8, write_jsonl, write_pgm, write_raw_f32
from .config import Config, dump_config, load_config
from .errors import ConfigError, GuiderError
from .metrics import aggregate, wilcoxon_exact
from .nav_belief import combined_belief
from .render import render_heatmap
from .replay import (
    ReplayResult,
    eef_trace_csv,
    load_session,
    metrics_csv,
    replay,
    scan_objects,
    timeline_csv,
)
from .scenarios import generate_scenario, write_scenario

log = logging.getLogger("guider")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 1, 2


def _setup_logging() -> None:
    name = os.environ.get("GUIDER_LOG_LEVEL", "warn").strip().lower()
    if name not in LOG_LEVELS:
        raise ConfigError(f"GUIDER_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def _dump_field(stage_dir: Path, name: str, field_: np.ndarray) -> None:
    write_pgm(stage_dir / f"{name}.pgm", unit_to_u8(field_))
    write_raw_f32(stage_dir / f"{name}.f32", field_)


def _dump_stages(res: ReplayResult, out: Path) -> None:
    stage_dir = out / "stages"
    stage_dir.mkdir(exist_ok=True)
    if res.nav_state is not None:
        st = res.nav_state
        for name, f in (("base", st.base), ("motion", st.motion), ("synergy", st.synergy)):
            _dump_field(stage_dir, f"nav_{name}", f)
        combined = combined_belief(st)
        _dump_field(stage_dir, "nav_combined", combined)
        render_heatmap(combined, stage_dir / "nav_combined.ppm")
    if res.perception is not None:
        per = res.perception
        _dump_field(stage_dir, "fused", per.fused_P)
        for name, m in per.feasibility.ordered():
            write_pgm(stage_dir / f"mask_{name}.pgm", (m * 255).astype(np.uint8))
        for k, (name, f) in enumerate(per.cascade.stages):
            _dump_field(stage_dir, f"cascade_{k}_{name}", f)
        feas = []
        for k, rep in enumerate(per.reports):
            if rep is None:
                continue
            feas.append({
                "mask": k, "bbox": rep.bbox, "morph": rep.morph, "adv": rep.adv,
                "rect_px": [float(v) for v in rep.rect_size_px], "gamma": rep.gamma,
                "feasible_pairs": sum(c.feasible for c in rep.candidates),
            })
        write_jsonl(stage_dir / "feasibility.jsonl", feas)


def cmd_gen(args) -> int:
    scn = generate_scenario(args.template, args.seed)
    out = write_scenario(scn, args.out)
    print(f"wrote {scn.template} (seed {args.seed}) to {out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = load_config(args.config)
    session = load_session(args.log_dir)
    res = replay(session, cfg, phase=args.phase, ablate_feasibility=args.ablate_feasibility)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if res.nav_timeline:
        _write(out / "nav_timeline.csv", timeline_csv(res.nav_timeline, res.nav_labels))
    if res.manip_timeline:
        _write(out / "manip_timeline.csv", timeline_csv(res.manip_timeline, res.manip_labels))
        _write(out / "eef_trace.csv", eef_trace_csv(res.eef_trace))
    if res.perception is not None:
        write_jsonl(out / "proposals.jsonl", [p.to_record() for p in res.perception.proposals])
    if session.scan is not None and args.phase in ("manip", "both"):
        cents = scan_objects(session.scan, cfg, args.seed)
        write_jsonl(out / "scan_objects.jsonl", [{"id": k, "centroid_xyz": [float(v) for v in c]} for k, c in enumerate(cents)])
    _write(out / "metrics.csv", metrics_csv(res.metrics))
    run = {
        "template": session.manifest.get("template", ""),
        "log_seed": session.manifest.get("seed"),
        "seed": args.seed,
        "phase": args.phase,
        "ablate_feasibility": bool(args.ablate_feasibility),
    }
    _write(out / "run.json", json.dumps(run, sort_keys=True) + "\n")
    if args.dump_stages:
        _dump_stages(res, out)
    for m in res.metrics:
        rt = "never" if m.result.rtcp is None else f"{m.result.rtcp:.2f} s"
        print(f"{m.phase:5s} target={m.target} RTCP={rt} stability={m.result.stability:.1f}%")
    return EXIT_OK


def _read_metrics(run_dir: Path) -> tuple[str, list[dict]]:
    path = run_dir / "metrics.csv"
    if not path.is_file():
        raise ConfigError(f"{run_dir}: no metrics.csv")
    info = run_dir / "run.json"
    task = json.loads(info.read_text()).get("template", "") if info.is_file() else ""
    with open(path, newline="") as fh:
        return task, list(csv.DictReader(fh))


def _collect(dirs) -> dict[tuple[str, str, str], list[float]]:
    """(task, phase, metric) -> values in run order; absent RTCP counts as 0 s."""
    out: dict[tuple[str, str, str], list[float]] = {}
    for d in dirs:
        task, rows = _read_metrics(Path(d))
        for r in rows:
            for metric in ("rtcp", "stability"):
                v = float(r[metric]) if r[metric] != "" else 0.0
                out.setdefault((task, r["phase"], metric), []).append(v)
    return out


def cmd_eval(args) -> int:
    ours = _collect(args.runs)
    base = _collect(args.baseline) if args.baseline else {}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["task", "phase", "metric", "n", "median", "mad", "baseline_median", "baseline_mad", "p_two", "p_one", "r_bs"]
    rows = []
    for key in sorted(ours):
        med, mad = aggregate(ours[key])
        row = list(key) + [len(ours[key]), med, mad, "", "", "", "", ""]
        if key in base:
            if len(base[key]) != len(ours[key]):
                raise ConfigError(f"{key}: {len(ours[key])} runs vs {len(base[key])} baseline runs; pairs must match")
            bmed, bmad = aggregate(base[key])
            w = wilcoxon_exact(ours[key], base[key], alternative=args.alternative)
            row[6:] = [bmed, bmad, w.p_two, w.p_one, w.r_bs]
        rows.append(row)
    with open(out / "summary.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(round(v, 12)) if isinstance(v, float) else v for v in row])
    lines = [f"{'task':18s} {'phase':5s} {'metric':9s} {'ours':>16s} {'baseline':>16s}  p2/p1/r_bs"]
    for task, phase, metric, n, med, mad, bmed, bmad, p2, p1, r in rows:
        theirs = f"{bmed:.1f} ± {bmad:.1f}" if bmed != "" else "-"
        stats = f"{p2:.3f}/{p1:.3f}/{r:+.2f}" if p2 != "" else "-"
        lines.append(f"{task:18s} {phase:5s} {metric:9s} {f'{med:.1f} ± {mad:.1f}':>16s} {theirs:>16s}  {stats}")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def _load_field(path: Path) -> np.ndarray:
    if path.is_dir():
        session = load_session(path)
        if session.nav is None:
            raise ConfigError(f"{path}: log has no navigation phase to render")
        res = replay(session, Config(), phase="nav")
        return combined_belief(res.nav_state)
    if path.suffix == ".pgm":
        return u8_to_unit(read_pgm(path))
    if path.suffix == ".f32":
        return read_raw_f32(path).astype(np.float64)
    raise ConfigError(f"{path}: expected a session directory, .pgm or .f32 field")


def cmd_render(args) -> int:
    field_ = _load_field(Path(args.field))
    if field_.ndim != 2:
        raise ConfigError("render needs a 2D field")
    render_heatmap(field_, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_check_config(args) -> int:
    cfg = load_config(args.config)
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="guider", description="Teleoperation intent inference and replay evaluation.")
    ap.add_argument("--version", action="version", version=f"guider {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic session log")
    g.add_argument("template")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--config", help="accepted for symmetry; generation uses no tunable parameters")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("replay", help="replay a session log and compute metrics")
    r.add_argument("log_dir")
    r.add_argument("--out", required=True)
    r.add_argument("--config")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--phase", choices=("nav", "manip", "both"), default="both")
    r.add_argument("--dump-stages", action="store_true")
    r.add_argument("--ablate-feasibility", action="store_true", help="force all feasibility masks to all-ones")
    r.set_defaults(func=cmd_replay)

    e = sub.add_parser("eval", help="aggregate replay outputs; optional paired comparison")
    e.add_argument("runs", nargs="+")
    e.add_argument("--baseline", nargs="+")
    e.add_argument("--out", required=True)
    e.add_argument("--alternative", choices=("greater", "less"), default="greater")
    e.add_argument("--config")
    e.set_defaults(func=cmd_eval)

    h = sub.add_parser("render", help="render a scalar field as a PPM heatmap")
    h.add_argument("field")
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_render)

    c = sub.add_parser("check-config", help="validate a config file and print it in full")
    c.add_argument("config")
    c.set_defaults(func=cmd_check_config)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except GuiderError as exc:
        print(f"guider: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"guider: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
