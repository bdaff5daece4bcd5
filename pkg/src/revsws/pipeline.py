"""Sliding-window SWS maps, plane fusion and map metrics."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .autocorr import angular_integrate, autocorr2d, axial_profiles
from .models import FitConfig, FitDomainError, KEstimate, ModelKind, fit_wavenumber
from .spectral import CONTAINS, ComplexPlaneField

logger = logging.getLogger(__name__)

ESTIMATORS = ("aia", "simple-x", "simple-y", "simple-z", "simple-axial", "simple-perp")


@dataclass
class WindowConfig:
    """Sliding-window estimator settings (lengths in meters).

    ``estimator`` is ``aia`` or ``simple-<axis>`` where the axis is a
    physical axis lying in the plane, ``axial`` (the sensor axis) or ``perp``
    (the first in-plane axis that is not the sensor axis).
    """

    window_size: float
    step: float | None = None
    ring_width: float | None = None
    estimator: str = "aia"
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.step is None:
            self.step = self.window_size / 4.0
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.window_size <= 0 or self.step <= 0:
            raise ValueError("window_size and step must be positive")
        if self.step > self.window_size:
            raise ValueError("step must not exceed window_size")

    def snapshot(self) -> dict:
        d = asdict(self)
        d["fit"] = asdict(self.fit)
        return d


@dataclass
class SwsMap:
    """Window-center SWS estimates.

    Window w along axis a starts at pixel ``w * step_px[a]`` and spans
    ``window_px[a]`` pixels; its center sits at
    ``(w * step_px[a] + (window_px[a] - 1) / 2) * spacing[a]`` meters.
    Windows that would cross the field edge are skipped.
    """

    values: np.ndarray
    validity: np.ndarray
    residuals: np.ndarray
    centers: tuple[np.ndarray, np.ndarray]
    axes: tuple[str, str] = ("x", "y")
    provenance: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape

    def same_geometry(self, other: "SwsMap") -> bool:
        # lattice only; planes of different orientation may be fused
        return (self.shape == other.shape
                and all(np.array_equal(a, b) for a, b in zip(self.centers, other.centers)))


def window_layout(shape, spacing, window_size: float, step: float):
    """Window size and step in pixels plus the start indices per axis."""
    win = [int(round(window_size / d)) for d in spacing]
    stp = [max(1, int(round(step / d))) for d in spacing]
    if min(win) < 4:
        raise ValueError(f"window of {win} pixels is smaller than 4")
    if any(w > n for w, n in zip(win, shape)):
        raise ValueError(f"field {tuple(shape)} smaller than window {tuple(win)}")
    starts = [np.arange(0, n - w + 1, s) for n, w, s in zip(shape, win, stp)]
    return win, stp, starts


def _resolve_estimator(fld: ComplexPlaneField, estimator: str):
    """Return (profile selector, model kind) for an estimator name."""
    if estimator == "aia":
        kind = ModelKind.AIA_CONTAINS_AXIS if fld.plane_kind == CONTAINS else ModelKind.AIA_PERP_AXIS
        return "aia", kind
    axis = estimator.split("-", 1)[1]
    if axis == "axial":
        axis = fld.sensor_axis
    elif axis == "perp":
        axis = next(a for a in fld.axes if a != fld.sensor_axis)
    if axis not in fld.axes:
        raise ValueError(f"lag axis {axis!r} does not lie in the {''.join(fld.axes)} plane")
    kind = ModelKind.SIMPLE_AXIAL if axis == fld.sensor_axis else ModelKind.SIMPLE_PERP
    return fld.axes.index(axis), kind


def estimate_window(values: np.ndarray, spacing, f0: float, selector, kind: ModelKind,
                    cfg: WindowConfig, origin=(0, 0)) -> KEstimate | None:
    """Run one window through autocorrelation, profile reduction and fit.

    Returns ``None`` for degenerate (zero-energy) windows.
    """
    acmap = autocorr2d(values, spacing=spacing, origin=origin)
    if acmap.degenerate:
        return None
    if selector == "aia":
        profile = angular_integrate(acmap, cfg.ring_width)
    else:
        profile = axial_profiles(acmap)[selector]
    try:
        return fit_wavenumber(profile, kind, f0, cfg.fit, window_origin=tuple(origin))
    except FitDomainError as exc:
        return KEstimate(float("nan"), float("nan"), f0, float("nan"), float("nan"), False,
                         tuple(origin), reason=str(exc))


def _thread_count() -> int:
    env = os.environ.get("REVSWS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def sws_map(fld: ComplexPlaneField, cfg: WindowConfig, threads: int | None = None) -> SwsMap:
    """Slide a square window over the field and estimate SWS in each placement."""
    win, stp, starts = window_layout(fld.shape, fld.spacing, cfg.window_size, cfg.step)
    selector, kind = _resolve_estimator(fld, cfg.estimator)
    placements = [(i, j) for i in range(len(starts[0])) for j in range(len(starts[1]))]

    def run(ij):
        i, j = ij
        a, b = int(starts[0][i]), int(starts[1][j])
        block = fld.values[a:a + win[0], b:b + win[1]]
        return estimate_window(block, fld.spacing, fld.f0, selector, kind, cfg, (a, b))

    threads = threads or _thread_count()
    if threads > 1 and len(placements) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, placements))
    else:
        results = [run(p) for p in placements]

    shape = (len(starts[0]), len(starts[1]))
    values = np.full(shape, np.nan)
    residuals = np.full(shape, np.nan)
    valid = np.zeros(shape, dtype=bool)
    for (i, j), est in zip(placements, results):
        if est is None:
            continue
        residuals[i, j] = est.residual_rmse
        if est.converged and math.isfinite(est.sws):
            values[i, j] = est.sws
            valid[i, j] = True
    if not valid.any():
        logger.warning("SWS map has no valid windows")
    centers = tuple((s + (w - 1) / 2.0) * d for s, w, d in zip(starts, win, fld.spacing))
    prov = {"window": cfg.snapshot(), "model": kind.value, "window_px": win, "step_px": stp,
            "f0": fld.f0, "plane_kind": fld.plane_kind}
    return SwsMap(values, valid, residuals, centers, tuple(fld.axes), prov)


def fuse_planes(maps: list[SwsMap], mode: str = "median") -> SwsMap:
    """Element-wise average or median over the valid entries of co-registered maps."""
    if not maps:
        raise ValueError("need at least one map")
    if mode not in ("average", "median"):
        raise ValueError("mode must be 'average' or 'median'")
    ref = maps[0]
    for m in maps[1:]:
        if not ref.same_geometry(m):
            raise ValueError("maps are not co-registered")
    stack = np.stack([np.where(m.validity, m.values, np.nan) for m in maps])
    valid = np.any(np.stack([m.validity for m in maps]), axis=0)
    out = np.full(ref.shape, np.nan)
    if valid.any():
        reducer = np.nanmean if mode == "average" else np.nanmedian
        out[valid] = reducer(stack[:, valid], axis=0)
    res = np.stack([m.residuals for m in maps])
    with np.errstate(all="ignore"):
        residuals = np.where(np.all(np.isnan(res), axis=0), np.nan,
                             np.nanmean(np.where(np.isnan(res), np.nan, res), axis=0))
    prov = {"fused": mode, "inputs": [m.provenance for m in maps]}
    return SwsMap(out, valid, residuals, ref.centers, ref.axes, prov)


@dataclass
class Roi:
    """Boolean selection over the window-center lattice of a map."""

    mask: np.ndarray
    name: str = "roi"

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.mask.any():
            raise ValueError(f"roi {self.name!r} is empty")

    @classmethod
    def box(cls, smap: SwsMap, lo, hi, name: str = "box") -> "Roi":
        """Window centers inside the axis-aligned box [lo, hi] (meters)."""
        c0, c1 = smap.centers
        m = ((c0[:, None] >= lo[0]) & (c0[:, None] <= hi[0])
             & (c1[None, :] >= lo[1]) & (c1[None, :] <= hi[1]))
        return cls(m, name)

    @classmethod
    def from_labels(cls, smap: SwsMap, labels: np.ndarray, spacing, region: int,
                    margin: float, name: str | None = None) -> "Roi":
        """Window centers in ``region`` at least ``margin`` meters from any other region.

        ``labels`` is the per-pixel region map of the plane the map was
        estimated on, with pixel (i, j) at (i * spacing[0], j * spacing[1]).
        """
        inside = np.asarray(labels) == region
        dist = ndimage.distance_transform_edt(inside, sampling=spacing)
        if inside.all():
            dist = np.full(inside.shape, np.inf)
        c0, c1 = smap.centers
        i = np.clip(np.rint(c0 / spacing[0]).astype(int), 0, inside.shape[0] - 1)
        j = np.clip(np.rint(c1 / spacing[1]).astype(int), 0, inside.shape[1] - 1)
        d = dist[np.ix_(i, j)]
        return cls(d >= margin if margin > 0 else d > 0, name or f"region{region}")


def roi_values(smap: SwsMap, roi: Roi) -> np.ndarray:
    if roi.mask.shape != smap.shape:
        raise ValueError("roi and map shapes differ")
    return smap.values[roi.mask & smap.validity]


def snr_db(smap: SwsMap, roi: Roi) -> float:
    """10 log10(mean / std) of valid in-roi speeds; +inf for zero spread."""
    v = roi_values(smap, roi)
    if v.size < 2:
        raise ValueError(f"roi {roi.name!r} has {v.size} valid samples, need 2")
    sd = float(np.std(v, ddof=1))
    if sd == 0.0:
        logger.warning("roi %r has zero spread; SNR is infinite", roi.name)
        return math.inf
    return 10.0 * math.log10(float(np.mean(v)) / sd)


def region_stats(smap: SwsMap, roi: Roi) -> tuple[float, float, int]:
    v = roi_values(smap, roi)
    if v.size < 2:
        raise ValueError(f"roi {roi.name!r} has {v.size} valid samples, need 2")
    return float(np.mean(v)), float(np.std(v, ddof=1)), int(v.size)


def region_ratio(smap: SwsMap, roi_a: Roi, roi_b: Roi) -> tuple[float, float]:
    """mean(a) / mean(b) with first-order propagated spread."""
    ma, sa, _ = region_stats(smap, roi_a)
    mb, sb, _ = region_stats(smap, roi_b)
    if mb == 0:
        raise ValueError("denominator roi has zero mean")
    ratio = ma / mb
    return ratio, abs(ratio) * math.hypot(sa / ma, sb / mb)
