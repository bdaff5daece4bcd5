"""``revsws`` command line: synth, estimate, metrics, run."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .config import (METRICS_SCHEMA, SYNTHESIS_DEFAULTS, ConfigError, _merge, apply_overrides,
                     bundled_config, load_config, validate)
from .io import RvfError, atomic_write_text, canonical_json, read_field, read_map_csv, write_field, write_map
from .pipeline import WindowConfig, sws_map
from .runner import (EXIT_CONFIG, EXIT_OK, EXIT_STAGE, build_rois, format_report, map_metrics,
                     preprocess, run, synthesize)
from .spectral import CONTAINS, PLANES, ComplexPlaneField, plane_kind_for
from .wavefield import AXES

logger = logging.getLogger("revsws")


def _load(path: str) -> dict:
    if path.startswith("bundled:"):
        return bundled_config(path.split(":", 1)[1])
    return load_config(path)


def _resolve_plane(series, plane: str) -> str:
    if plane in PLANES:
        return plane
    want = CONTAINS if plane == "contains-axis" else "perpendicular_to_sensor_axis"
    shape = dict(zip(AXES, series.grid.shape))
    for p in PLANES:
        if plane_kind_for(p, series.sensor_axis) == want and shape[p[0]] > 1 and shape[p[1]] > 1:
            return p
    raise ConfigError(f"series of shape {series.grid.shape} has no {plane} plane")


def cmd_synth(args) -> int:
    cfg = apply_overrides(_load(args.config), args.set)
    syn = cfg.get("synthesis", cfg)
    if args.seed is not None:
        syn["seed"] = args.seed
    validate({"synthesis": syn, "estimation": [{"estimator": "aia", "window_mm": 1.0}]})
    series, _ = synthesize(_merge(SYNTHESIS_DEFAULTS, syn))
    write_field(series, args.out)
    logger.info("wrote %s", args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    obj = read_field(args.input)
    if isinstance(obj, ComplexPlaneField):
        fld = obj
    else:
        plane = _resolve_plane(obj, args.plane)
        fld = preprocess(obj, {"plane": plane, "index": args.index, "f0_hint_hz": args.f0_hint,
                               "bandpass": None, "median_radius_px": args.median_radius_px})
    step = None if args.step_mm is None else args.step_mm * 1e-3
    ring = None if args.ring_width_mm is None else args.ring_width_mm * 1e-3
    smap = sws_map(fld, WindowConfig(args.window_mm * 1e-3, step, ring, args.estimator))
    write_map(smap, args.out, args.format)
    logger.info("wrote %s (%d of %d windows valid)", args.out, smap.validity.sum(), smap.validity.size)
    return EXIT_OK


def cmd_metrics(args) -> int:
    smap = read_map_csv(args.map)
    spec = json.loads(Path(args.roi).read_text())
    validate(spec, METRICS_SCHEMA)
    rois = build_rois(smap, spec.get("rois", []))
    report = map_metrics(smap, rois, spec.get("ratios", []))
    atomic_write_text(args.report, format_report(report))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = apply_overrides(_load(args.config), args.set)
    timing = {}
    t0 = time.perf_counter()
    code, report = run(cfg, timing)
    timing["total"] = time.perf_counter() - t0
    text = format_report(report)
    if args.report:
        atomic_write_text(args.report, text)
        atomic_write_text(args.report + ".timing.json", canonical_json(timing) + "\n")
    else:
        sys.stdout.write(text)
    if code != EXIT_OK:
        err = report["error"]
        print(f"error in stage {err['stage']}: {err['message']}", file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="revsws", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    over = dict(action="append", default=[], metavar="KEY=VALUE",
                help="override a config key by dotted path (repeatable)")

    s = sub.add_parser("synth", help="synthesize a reverberant motion series")
    s.add_argument("--config", required=True, help="JSON config or bundled:<name>")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--set", **over)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("estimate", help="SWS map from an .rvf field")
    e.add_argument("--in", dest="input", required=True)
    e.add_argument("--estimator", default="aia",
                   choices=["aia", "simple-x", "simple-y", "simple-z", "simple-axial", "simple-perp"])
    e.add_argument("--plane", default="contains-axis",
                   choices=["contains-axis", "perp-axis", *PLANES])
    e.add_argument("--index", type=int, default=0)
    e.add_argument("--f0-hint", type=float)
    e.add_argument("--median-radius-px", type=int, default=0)
    e.add_argument("--window-mm", type=float, required=True)
    e.add_argument("--step-mm", type=float)
    e.add_argument("--ring-width-mm", type=float)
    e.add_argument("--format", choices=["csv", "pgm16"], default="csv")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_estimate)

    m = sub.add_parser("metrics", help="roi statistics of a CSV map")
    m.add_argument("--map", required=True)
    m.add_argument("--roi", required=True, help="JSON with 'rois' (box_mm or whole) and 'ratios'")
    m.add_argument("--report", required=True)
    m.set_defaults(func=cmd_metrics)

    r = sub.add_parser("run", help="full run from a config")
    r.add_argument("--config", required=True, help="JSON config or bundled:<name>")
    r.add_argument("--report", help="report path (stdout when omitted)")
    r.add_argument("--set", **over)
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RvfError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
