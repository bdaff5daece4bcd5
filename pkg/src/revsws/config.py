"""Run configuration: JSON schema, defaults and ``--set`` style overrides."""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

import jsonschema

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer"}
_AXIS = {"enum": ["x", "y", "z"]}
_PLANE = {"enum": ["xy", "xz", "yz"]}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


def _nullable(schema: dict) -> dict:
    return {"anyOf": [schema, {"type": "null"}]}


_FIT = _obj({
    "sws_min": _POS, "sws_max": _POS, "n_grid": {"type": "integer", "minimum": 200},
    "rel_tol": _POS, "max_rmse": _POS, "fit_amplitude": {"type": "boolean"},
    "max_lag_wavelengths": _nullable(_POS), "min_bins": {"type": "integer", "minimum": 2},
})

_INCLUSION = _obj({
    "shape": {"enum": ["sphere", "cylinder", "y_tube"]},
    "sws": _POS,
    "radius_mm": {"type": "number", "minimum": 0},
    "axis": _AXIS,
    "length_mm": _nullable(_POS),
    "center_mm": _nullable({"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}),
    "branch_angle_deg": _NUM,
}, required=["shape", "sws", "radius_mm"])

_DIRECTIONALITY = _obj({
    "kind": {"enum": ["isotropic", "cone"]},
    "axis": {"anyOf": [_AXIS, {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}]},
    "half_angle_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 180},
}, required=["kind"])

_SYNTHESIS = _obj({
    "grid": _obj({
        "plane": _nullable(_PLANE),
        "shape": {"type": "array", "items": {"type": "integer", "minimum": 1},
                  "minItems": 2, "maxItems": 3},
        "spacing_mm": _POS,
        "f0_hz": _POS,
        "cycles": {"type": "integer", "minimum": 2},
        "samples_per_cycle": {"type": "integer", "minimum": 8},
    }, required=["shape", "spacing_mm", "f0_hz"]),
    "medium": _obj({"background_sws": _POS, "inclusion": _nullable(_INCLUSION)},
                   required=["background_sws"]),
    "q_count": {"type": "integer", "minimum": 1},
    "directionality": _DIRECTIONALITY,
    "seed": {"type": "integer", "minimum": 0},
    "noise": _nullable(_obj({"snr_db": _NUM, "seed": {"type": "integer", "minimum": 0}},
                            required=["snr_db"])),
    "sensor_axis": _AXIS,
})

_ROI = {"oneOf": [
    _obj({"name": {"type": "string"}, "region": {"type": "integer", "minimum": 0},
          "margin_mm": {"type": "number", "minimum": 0}}, required=["name", "region"]),
    _obj({"name": {"type": "string"},
          "box_mm": {"type": "array", "minItems": 2, "maxItems": 2,
                     "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}}},
         required=["name", "box_mm"]),
    _obj({"name": {"type": "string"}, "whole": {"const": True}}, required=["name", "whole"]),
]}

_RATIO = _obj({"name": {"type": "string"}, "numerator": {"type": "string"},
               "denominator": {"type": "string"}}, required=["numerator", "denominator"])

METRICS_SCHEMA = _obj({"rois": {"type": "array", "items": _ROI},
                       "ratios": {"type": "array", "items": _RATIO}})

SCHEMA = _obj({
    "synthesis": _nullable(_SYNTHESIS),
    "input": _nullable(_obj({"path": {"type": "string"}}, required=["path"])),
    "preprocessing": _obj({
        "plane": _PLANE,
        "index": {"type": "integer", "minimum": 0},
        "f0_hint_hz": _nullable(_POS),
        "bandpass": _nullable(_obj({"fractional_bandwidth": _POS, "atten_db": _POS})),
        "median_radius_px": {"type": "integer", "minimum": 0},
    }),
    "estimation": {"type": "array", "minItems": 1, "items": _obj({
        "name": {"type": "string"},
        "estimator": {"enum": ["aia", "simple-x", "simple-y", "simple-z",
                               "simple-axial", "simple-perp"]},
        "window_mm": _POS,
        "step_mm": _nullable(_POS),
        "ring_width_mm": _nullable(_POS),
        "fit": _FIT,
    }, required=["estimator", "window_mm"])},
    "metrics": METRICS_SCHEMA,
    "outputs": _obj({
        "maps_dir": _nullable({"type": "string"}),
        "map_format": {"enum": ["csv", "pgm16"]},
        "series_path": _nullable({"type": "string"}),
        "include_timing": {"type": "boolean"},
    }),
}, required=["estimation"])

DEFAULTS = {
    "synthesis": None,
    "input": None,
    "preprocessing": {"plane": "xy", "index": 0, "f0_hint_hz": None, "bandpass": None,
                      "median_radius_px": 0},
    "metrics": {"rois": [], "ratios": []},
    "outputs": {"maps_dir": None, "map_format": "csv", "series_path": None,
                "include_timing": False},
}

SYNTHESIS_DEFAULTS = {
    "grid": {"plane": None, "cycles": 2, "samples_per_cycle": 16},
    "medium": {"inclusion": None},
    "q_count": 1000,
    "directionality": {"kind": "isotropic"},
    "seed": 0,
    "noise": None,
    "sensor_axis": "z",
}


class ConfigError(ValueError):
    """Schema violation or inconsistent settings."""


def _merge(base, over):
    if isinstance(base, dict) and isinstance(over, dict):
        out = dict(base)
        for k, v in over.items():
            out[k] = _merge(base.get(k), v) if k in base else copy.deepcopy(v)
        return out
    return copy.deepcopy(over)


def validate(cfg: dict, schema: dict = SCHEMA) -> None:
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None


def effective_config(raw: dict) -> dict:
    """Validate ``raw`` and fill in defaults."""
    validate(raw)
    cfg = _merge(DEFAULTS, raw)
    if cfg["synthesis"] is not None:
        cfg["synthesis"] = _merge(SYNTHESIS_DEFAULTS, cfg["synthesis"])
    if (cfg["synthesis"] is None) == (cfg["input"] is None):
        raise ConfigError("exactly one of 'synthesis' and 'input' must be given")
    names = [e.get("name", e["estimator"]) for e in cfg["estimation"]]
    if len(set(names)) != len(names):
        raise ConfigError(f"estimator names must be unique, got {names}")
    rois = [r["name"] for r in cfg["metrics"]["rois"]]
    for r in cfg["metrics"]["ratios"]:
        for key in ("numerator", "denominator"):
            if r[key] not in rois:
                raise ConfigError(f"ratio refers to unknown roi {r[key]!r}")
    validate(cfg)
    return cfg


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, assignments) -> dict:
    """Apply ``dotted.path=value`` assignments; values parse as JSON when possible.

    Integer path components index into lists, e.g. ``estimation.0.window_mm=10``.
    """
    out = copy.deepcopy(cfg)
    for item in assignments:
        path, sep, text = item.partition("=")
        if not sep or not path:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        keys = path.split(".")
        node = out
        for key in keys[:-1]:
            if isinstance(node, list):
                node = node[int(key)]
            else:
                if node.get(key) is None:
                    node[key] = {}
                node = node[key]
        last = keys[-1]
        if isinstance(node, list):
            node[int(last)] = _parse_value(text)
        else:
            node[last] = _parse_value(text)
    return out


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def bundled_config(name: str) -> dict:
    """Load a config shipped with the package, e.g. ``sim_tube_200hz.json``."""
    return json.loads(resources.files("revsws").joinpath("configs", name).read_text())


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
