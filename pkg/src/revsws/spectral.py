"""Temporal demodulation of motion series into complex plane fields, plus the
optional pre-autocorrelation filters (zero-phase FIR band-pass, median)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, signal

from .wavefield import AXES, GridSpec, MotionSeries

logger = logging.getLogger(__name__)

CONTAINS = "contains_sensor_axis"
PERPENDICULAR = "perpendicular_to_sensor_axis"
PLANES = ("xy", "xz", "yz")


@dataclass
class ComplexPlaneField:
    """Per-pixel complex phasor on a 2D plane.

    ``values`` is indexed [i0, i1] along the two in-plane axes named by
    ``axes`` (e.g. ("x", "z")), with ``spacing`` in meters per pixel.
    """

    values: np.ndarray
    spacing: tuple[float, float]
    f0: float
    plane_kind: str
    axes: tuple[str, str] = ("x", "y")
    sensor_axis: str = "z"
    weak_signal: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.values.ndim != 2:
            raise ValueError("plane field must be 2D")
        if self.plane_kind not in (CONTAINS, PERPENDICULAR):
            raise ValueError(f"bad plane_kind {self.plane_kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values) -> "ComplexPlaneField":
        return ComplexPlaneField(values, self.spacing, self.f0, self.plane_kind, self.axes,
                                 self.sensor_axis, self.weak_signal, dict(self.metadata))


def plane_kind_for(plane: str, sensor_axis: str) -> str:
    return CONTAINS if sensor_axis in plane else PERPENDICULAR


def plane_slice(grid: GridSpec, plane: str, index: int):
    if plane not in PLANES:
        raise ValueError(f"plane must be one of {PLANES}")
    normal = next(a for a in AXES if a not in plane)
    ni = AXES.index(normal)
    if not 0 <= index < grid.shape[ni]:
        raise ValueError(f"plane index {index} outside 0..{grid.shape[ni] - 1}")
    sl = [slice(None)] * 3
    sl[ni] = index
    spacing = tuple(grid.spacing[AXES.index(a)] for a in plane)
    return tuple(sl), spacing


def extract_phasor(series: MotionSeries, plane: str = "xy", index: int = 0,
                   f0_hint: float | None = None) -> ComplexPlaneField:
    """Demodulate one plane of a motion series at the strongest bin near f0.

    The bin is chosen once for the whole plane, by grid-summed power, within
    two bins of ``f0_hint``.  The phasor is scaled so a pixel carrying
    A cos(2 pi f t + phi) maps to A exp(i phi).  When the series does not hold
    an integer number of cycles a Hann window is applied and its coherent
    gain divided out.
    """
    grid = series.grid
    f0_hint = grid.f0 if f0_hint is None else float(f0_hint)
    fs = 1.0 / grid.dt
    if not 0 < f0_hint < fs / 2:
        raise ValueError(f"f0_hint {f0_hint} Hz outside (0, Nyquist={fs / 2} Hz)")
    nt = grid.nt
    if nt * grid.dt * f0_hint < 2.0 - 1e-9:
        raise ValueError("series holds fewer than 2 cycles of f0_hint")

    sl, spacing = plane_slice(grid, plane, index)
    data = np.asarray(series.samples[sl], dtype=float)  # (n0, n1, nt)

    cycles = nt * grid.dt * f0_hint
    exact = abs(cycles - round(cycles)) < 1e-6
    if exact:
        win = np.ones(nt)
    else:
        win = signal.windows.hann(nt, sym=False)
    spec = np.fft.rfft(data * win, axis=-1)
    power = np.sum(np.abs(spec) ** 2, axis=(0, 1))
    freqs = np.fft.rfftfreq(nt, grid.dt)
    b0 = int(round(f0_hint * nt * grid.dt))
    lo, hi = max(b0 - 2, 1), min(b0 + 2, len(freqs) - 1 - (nt % 2 == 0))
    cand = np.arange(lo, hi + 1)
    b = int(cand[np.argmax(power[cand])])

    values = 2.0 * spec[..., b] / win.sum()
    off = np.delete(power[1:], b - 1)
    weak = not power[b] > 3.0 * (np.median(off) if off.size else 0.0)
    if weak:
        logger.warning("weak signal: selected bin power %.3g vs median off-bin %.3g",
                       power[b], np.median(off) if off.size else 0.0)
    meta = {"bin": b, "bin_frequency": float(freqs[b]), "windowed": not exact,
            "plane": plane, "index": int(index)}
    return ComplexPlaneField(values, spacing, float(freqs[b]),
                             plane_kind_for(plane, series.sensor_axis), (plane[0], plane[1]),
                             series.sensor_axis, weak, meta)


def temporal_bandpass(series: MotionSeries, f0: float, fractional_bandwidth: float = 0.2,
                      atten_db: float = 40.0) -> MotionSeries:
    """Zero-phase FIR band-pass centred on f0.

    Kaiser-window design with transition width equal to half the band,
    applied forward and backward (gain squared, no phase shift).
    """
    if not 0 < fractional_bandwidth < 1:
        raise ValueError("fractional_bandwidth must lie in (0, 1)")
    fs = 1.0 / series.grid.dt
    nyq = fs / 2.0
    lo = f0 * (1.0 - fractional_bandwidth / 2.0)
    hi = f0 * (1.0 + fractional_bandwidth / 2.0)
    width = f0 * fractional_bandwidth / 2.0
    if hi + width / 2.0 >= nyq:
        raise ValueError(f"band up to {hi + width / 2.0:.4g} Hz exceeds Nyquist {nyq:.4g} Hz")
    numtaps, beta = signal.kaiserord(atten_db, width / nyq)
    numtaps |= 1
    nt = series.grid.nt
    if 3 * numtaps >= nt:
        raise ValueError(f"series of {nt} samples too short for a {numtaps}-tap filter")
    taps = signal.firwin(numtaps, [lo, hi], window=("kaiser", beta), pass_zero=False, fs=fs)
    # renormalize to unit gain at f0 exactly
    w, h = signal.freqz(taps, worN=[f0], fs=fs)
    taps = taps / abs(h[0])
    out = signal.filtfilt(taps, [1.0], series.samples, axis=-1)
    meta = dict(series.metadata)
    meta["bandpass"] = {"f0": f0, "fractional_bandwidth": fractional_bandwidth,
                        "numtaps": int(numtaps)}
    return MotionSeries(series.grid, out, series.sensor_axis, series.units, meta)


def median_filter(fld: ComplexPlaneField, radius_px: int = 1) -> ComplexPlaneField:
    """Component-wise (real, imaginary) median over a (2r+1)^2 window."""
    if radius_px < 0:
        raise ValueError("radius_px must be non-negative")
    if radius_px == 0:
        return fld.with_values(fld.values.copy())
    size = 2 * int(radius_px) + 1
    re = ndimage.median_filter(fld.values.real, size=size, mode="nearest")
    im = ndimage.median_filter(fld.values.imag, size=size, mode="nearest")
    return fld.with_values(re + 1j * im)
