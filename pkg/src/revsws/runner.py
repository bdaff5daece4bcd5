"""End-to-end runs: synthesis or ingest, preprocessing, estimation, metrics."""
from __future__ import annotations

import json
import logging
import math
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_hash, effective_config
from .io import RvfError, read_field, write_field, write_map
from .models import FitConfig
from .pipeline import Roi, WindowConfig, region_ratio, region_stats, snr_db, sws_map
from .spectral import ComplexPlaneField, extract_phasor, median_filter, plane_slice, temporal_bandpass
from .wavefield import (AXES, Directionality, GridSpec, MediumMap, MotionSeries, add_noise,
                        make_two_region_medium, synth_reverberant)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


# --- building blocks ----------------------------------------------------------

def build_grid(g: dict) -> GridSpec:
    f0 = float(g["f0_hz"])
    spc = int(g["samples_per_cycle"])
    nt = int(g["cycles"]) * spc
    dt = 1.0 / (f0 * spc)
    d = g["spacing_mm"] * 1e-3
    shape = g["shape"]
    if g.get("plane"):
        if len(shape) != 2:
            raise ConfigError("a plane grid takes a 2-element shape")
        return GridSpec.plane(g["plane"], shape[0], shape[1], d, nt, dt, f0)
    if len(shape) != 3:
        raise ConfigError("a volume grid takes a 3-element shape")
    return GridSpec(*shape, (d, d, d), nt, dt, f0)


def build_medium(grid: GridSpec, m: dict) -> MediumMap:
    inc = m.get("inclusion")
    if inc is None:
        return MediumMap.homogeneous(grid, m["background_sws"])
    center = inc.get("center_mm")
    length = inc.get("length_mm")
    return make_two_region_medium(
        grid, m["background_sws"], inc["sws"], inc["shape"],
        center=None if center is None else np.asarray(center) * 1e-3,
        radius=inc["radius_mm"] * 1e-3, axis=inc.get("axis", "z"),
        length=None if length is None else length * 1e-3,
        branch_angle=math.radians(inc.get("branch_angle_deg", 30.0)))


def build_directionality(d: dict) -> Directionality:
    if d["kind"] == "isotropic":
        return Directionality()
    axis = d.get("axis", "x")
    if isinstance(axis, str):
        axis = np.eye(3)[AXES.index(axis)]
    return Directionality.cone(axis, math.radians(d.get("half_angle_deg", 20.0)))


def synthesize(s: dict) -> tuple[MotionSeries, MediumMap]:
    grid = build_grid(s["grid"])
    medium = build_medium(grid, s["medium"])
    series = synth_reverberant(grid, medium, s["q_count"], build_directionality(s["directionality"]),
                               seed=s["seed"], sensor_axis=s["sensor_axis"])
    noise = s.get("noise")
    if noise is not None:
        series = add_noise(series, noise["snr_db"], seed=noise.get("seed", s["seed"] + 1))
    return series, medium


def preprocess(obj, p: dict) -> ComplexPlaneField:
    if isinstance(obj, MotionSeries):
        if p.get("bandpass"):
            bp = p["bandpass"]
            f0 = p.get("f0_hint_hz") or obj.grid.f0
            obj = temporal_bandpass(obj, f0, bp.get("fractional_bandwidth", 0.2),
                                    bp.get("atten_db", 40.0))
        fld = extract_phasor(obj, p["plane"], p["index"], p.get("f0_hint_hz"))
    elif isinstance(obj, ComplexPlaneField):
        fld = obj
    else:
        raise TypeError(f"cannot preprocess {type(obj).__name__}")
    if p.get("median_radius_px", 0) > 0:
        fld = median_filter(fld, p["median_radius_px"])
    return fld


def window_config(e: dict) -> WindowConfig:
    step = e.get("step_mm")
    ring = e.get("ring_width_mm")
    return WindowConfig(e["window_mm"] * 1e-3, None if step is None else step * 1e-3,
                        None if ring is None else ring * 1e-3, e["estimator"],
                        FitConfig(**e.get("fit", {})))


def build_rois(smap, roi_cfgs, labels=None, spacing=None) -> dict:
    """Map roi name to ``Roi`` or to an error message."""
    out = {}
    for r in roi_cfgs:
        try:
            if "whole" in r:
                out[r["name"]] = Roi(np.ones(smap.shape, dtype=bool), r["name"])
            elif "box_mm" in r:
                lo, hi = (np.asarray(b, dtype=float) * 1e-3 for b in r["box_mm"])
                out[r["name"]] = Roi.box(smap, lo, hi, r["name"])
            else:
                if labels is None:
                    raise ValueError("region rois need a synthesized medium")
                out[r["name"]] = Roi.from_labels(smap, labels, spacing, r["region"],
                                                 r.get("margin_mm", 0.0) * 1e-3, r["name"])
        except ValueError as exc:
            out[r["name"]] = str(exc)
    return out


def map_metrics(smap, rois: dict, ratios, truth: dict | None = None) -> dict:
    valid = int(smap.validity.sum())
    res = {"n_windows": int(smap.validity.size), "n_valid": valid, "rois": {}, "ratios": {}}
    for name, roi in rois.items():
        if isinstance(roi, str):
            res["rois"][name] = {"error": roi}
            continue
        try:
            mean, std, n = region_stats(smap, roi)
            res["rois"][name] = {"mean": mean, "std": std, "n": n, "snr_db": snr_db(smap, roi)}
        except ValueError as exc:
            res["rois"][name] = {"error": str(exc)}
    for r in ratios:
        name = r.get("name") or f"{r['numerator']}/{r['denominator']}"
        a, b = rois.get(r["numerator"]), rois.get(r["denominator"])
        try:
            if isinstance(a, str) or isinstance(b, str):
                raise ValueError("roi unavailable")
            value, spread = region_ratio(smap, a, b)
            entry = {"value": value, "spread": spread}
            if truth and name in truth:
                entry["truth"] = truth[name]
                entry["relative_error"] = abs(value - truth[name]) / truth[name]
            res["ratios"][name] = entry
        except ValueError as exc:
            res["ratios"][name] = {"error": str(exc)}
    return res


def _ratio_truth(cfg: dict, medium: MediumMap | None) -> dict:
    if medium is None:
        return {}
    region_of = {r["name"]: r["region"] for r in cfg["metrics"]["rois"] if "region" in r}
    out = {}
    for r in cfg["metrics"]["ratios"]:
        a, b = region_of.get(r["numerator"]), region_of.get(r["denominator"])
        if a is None or b is None:
            continue
        try:
            name = r.get("name") or f"{r['numerator']}/{r['denominator']}"
            out[name] = medium.region_speed(a) / medium.region_speed(b)
        except KeyError:
            continue
    return out


# --- report formatting ----------------------------------------------------------

def _round(obj):
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(f"{x:.6g}")
    return obj


def format_report(report: dict) -> str:
    """Deterministic JSON: sorted keys, 6 significant digits, inf/nan as strings."""
    return json.dumps(_round(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


# --- orchestration --------------------------------------------------------------

def run(config: dict, timing: dict | None = None) -> tuple[int, dict]:
    """Execute a run; returns (exit code, report).

    ``timing``, when given, receives wall-clock seconds per stage.  It is kept
    out of the report unless ``outputs.include_timing`` is set, so that
    repeated runs produce identical reports.
    """
    timing = {} if timing is None else timing
    try:
        cfg = effective_config(config)
    except ConfigError as exc:
        return EXIT_CONFIG, {"status": "error", "exit_code": EXIT_CONFIG,
                             "error": {"stage": "config", "type": "ConfigError",
                                       "message": str(exc)}}

    report = {"status": "ok", "exit_code": EXIT_OK, "stages": [], "estimators": {},
              "provenance": {"package_version": __version__, "config": cfg,
                             "config_hash": config_hash(cfg)}}
    state = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except Exception as exc:  # any failure halts the run with its stage
            raise StageError(name, exc) from exc
        timing[name] = time.perf_counter() - t0
        report["stages"].append(name)
        return out

    try:
        if cfg["synthesis"] is not None:
            state["series"], state["medium"] = stage("synthesis", lambda: synthesize(cfg["synthesis"]))
            src = state["series"]
            report["truth"] = {"region_sws": {str(r): state["medium"].region_speed(r)
                                              for r in state["medium"].regions()}}
        else:
            src = stage("input", lambda: read_field(cfg["input"]["path"]))
            state["medium"] = None

        fld = stage("preprocessing", lambda: preprocess(src, cfg["preprocessing"]))
        report["provenance"]["field"] = {"metadata": fld.metadata, "weak_signal": fld.weak_signal,
                                         "plane_kind": fld.plane_kind, "axes": list(fld.axes),
                                         "source": getattr(src, "metadata", {})}
        labels = None
        if state["medium"] is not None and isinstance(src, MotionSeries):
            p = cfg["preprocessing"]
            sl, _ = plane_slice(src.grid, p["plane"], p["index"])
            labels = state["medium"].region_label[sl]

        def estimate():
            out = {}
            for e in cfg["estimation"]:
                out[e.get("name", e["estimator"])] = sws_map(fld, window_config(e))
            return out

        maps = stage("estimation", estimate)

        truth = _ratio_truth(cfg, state["medium"])

        def metrics():
            out = {}
            for name, smap in maps.items():
                rois = build_rois(smap, cfg["metrics"]["rois"], labels, fld.spacing)
                out[name] = map_metrics(smap, rois, cfg["metrics"]["ratios"], truth)
                out[name]["model"] = smap.provenance["model"]
                out[name]["estimator"] = smap.provenance["window"]["estimator"]
            return out

        report["estimators"] = stage("metrics", metrics)

        outs = cfg["outputs"]
        if outs["maps_dir"] or outs["series_path"]:
            def write_outputs():
                if outs["maps_dir"]:
                    d = Path(outs["maps_dir"])
                    d.mkdir(parents=True, exist_ok=True)
                    ext = "csv" if outs["map_format"] == "csv" else "pgm"
                    for name, smap in maps.items():
                        write_map(smap, d / f"{name}.{ext}", outs["map_format"])
                if outs["series_path"] and isinstance(src, MotionSeries):
                    write_field(src, outs["series_path"])
            stage("outputs", write_outputs)
    except StageError as err:
        code = err.cause.code if isinstance(err.cause, RvfError) else EXIT_STAGE
        logger.error("run failed in stage %s: %s", err.stage, err.cause)
        return code, {"status": "error", "exit_code": code, "stages": report["stages"],
                      "error": {"stage": err.stage, "type": type(err.cause).__name__,
                                "message": str(err.cause)},
                      "provenance": report["provenance"]}

    if cfg["outputs"]["include_timing"]:
        report["timing_s"] = dict(timing)
    return EXIT_OK, report
