"""Windowed 2D spatial autocorrelation of phasor fields and its reduction to
1D lag profiles (angular integration or axis cuts)."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


@dataclass
class AutocorrMap:
    """Real autocorrelation over lags, centered at zero lag.

    ``values[i, j]`` holds the lag (i - (n0 - 1), j - (n1 - 1)) in pixels,
    where (n0, n1) is the window shape.
    """

    values: np.ndarray
    counts: np.ndarray
    spacing: tuple[float, float]
    window_shape: tuple[int, int]
    window_origin: tuple[int, int] = (0, 0)
    normalization: str = "unit_zero_lag"
    zero_lag_raw: float = 0.0
    degenerate: bool = False

    @property
    def center(self) -> tuple[int, int]:
        return (self.window_shape[0] - 1, self.window_shape[1] - 1)

    def lag_axes(self) -> tuple[np.ndarray, np.ndarray]:
        n0, n1 = self.window_shape
        return (np.arange(-(n0 - 1), n0) * self.spacing[0],
                np.arange(-(n1 - 1), n1) * self.spacing[1])

    @property
    def usable_radius(self) -> float:
        """Half the window extent along its shorter side."""
        return min(n * d for n, d in zip(self.window_shape, self.spacing)) / 2.0


@dataclass
class RadialProfile:
    radii: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    max_lag: float
    dropped: list = field(default_factory=list)

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.counts = np.asarray(self.counts, dtype=int)
        if not (len(self.radii) == len(self.values) == len(self.counts)):
            raise ValueError("profile arrays differ in length")
        if len(self.radii) and (self.radii[0] != 0 or np.any(np.diff(self.radii) <= 0)):
            raise ValueError("radii must start at 0 and increase strictly")
        if np.any(self.counts < 1):
            raise ValueError("every bin needs at least one sample")

    def __len__(self):
        return len(self.radii)


def _pair_counts(n0: int, n1: int) -> np.ndarray:
    c0 = n0 - np.abs(np.arange(-(n0 - 1), n0))
    c1 = n1 - np.abs(np.arange(-(n1 - 1), n1))
    return np.outer(c0, c1)


def _raw_fft(v: np.ndarray) -> np.ndarray:
    n0, n1 = v.shape
    s = (2 * n0 - 1, 2 * n1 - 1)
    f = np.fft.fft2(v, s=s)
    # ifft gives sum conj(V(e)) V(e + d), the conjugate of ours: same real part
    r = np.fft.ifft2(np.conj(f) * f)
    return np.fft.fftshift(r).real


def _raw_direct(v: np.ndarray) -> np.ndarray:
    n0, n1 = v.shape
    out = np.empty((2 * n0 - 1, 2 * n1 - 1))
    for a in range(-(n0 - 1), n0):
        s0, t0 = slice(max(0, -a), n0 - max(0, a)), slice(max(0, a), n0 - max(0, -a))
        for b in range(-(n1 - 1), n1):
            s1, t1 = slice(max(0, -b), n1 - max(0, b)), slice(max(0, b), n1 - max(0, -b))
            out[a + n0 - 1, b + n1 - 1] = np.sum(v[s0, s1] * np.conj(v[t0, t1])).real
    return out


def autocorr2d(window, spacing=None, normalize: bool = True, method: str = "fft",
               origin=(0, 0)) -> AutocorrMap:
    """Unbiased real autocorrelation Re{sum V(e) V*(e + d)} / pairs(d).

    ``window`` is a complex 2D array or a ComplexPlaneField.  With
    ``normalize`` the map is divided by its zero-lag value.  The output is
    symmetrized so that value(d) == value(-d) holds bit for bit.
    """
    if hasattr(window, "values"):
        spacing = window.spacing if spacing is None else spacing
        window = window.values
    v = np.asarray(window, dtype=complex)
    if v.ndim != 2 or min(v.shape) < 4:
        raise ValueError(f"window must be at least 4x4, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("window values must be finite")
    spacing = (1.0, 1.0) if spacing is None else tuple(float(s) for s in spacing)
    n0, n1 = v.shape
    counts = _pair_counts(n0, n1)
    if method == "fft":
        raw = _raw_fft(v)
    elif method == "direct":
        raw = _raw_direct(v)
    else:
        raise ValueError(f"unknown method {method!r}")
    acf = raw / counts
    acf = 0.5 * (acf + acf[::-1, ::-1])
    zero = float(np.mean(np.abs(v) ** 2))
    acf[n0 - 1, n1 - 1] = zero
    degenerate = zero == 0.0
    norm = "raw"
    if normalize and not degenerate:
        acf = acf / zero
        norm = "unit_zero_lag"
    return AutocorrMap(acf, counts, spacing, (n0, n1), tuple(origin), norm, zero, degenerate)


@functools.lru_cache(maxsize=64)
def _annulus_layout(shape: tuple[int, int], spacing: tuple[float, float], ring_width: float,
                    max_radius: float):
    n0, n1 = shape
    d0 = np.arange(-(n0 - 1), n0) * spacing[0]
    d1 = np.arange(-(n1 - 1), n1) * spacing[1]
    r = np.hypot(d0[:, None], d1[None, :])
    idx = np.rint(r / ring_width).astype(int)
    n_bins = int(math.floor(max_radius / ring_width + 1e-9)) + 1
    inside = idx < n_bins
    flat_idx = idx[inside]
    counts = np.bincount(flat_idx, minlength=n_bins)
    rsum = np.bincount(flat_idx, weights=r[inside], minlength=n_bins)
    return inside, flat_idx, counts, rsum, n_bins


def _polar_mean(acmap: AutocorrMap, ring_width: float):
    c0, c1 = acmap.center
    d0, d1 = acmap.spacing
    n_bins = int(math.floor(acmap.usable_radius / ring_width + 1e-9)) + 1
    radii = np.arange(n_bins) * ring_width
    # Uncorrelated noise piles up at zero lag only; a spline through that spike
    # rings into the inner circles, so interpolate with it replaced by a
    # quadratic extrapolation from the lag-1 and lag-2 neighbours.
    smooth = acmap.values.copy()
    if min(acmap.values.shape) >= 5:
        v = acmap.values
        m1 = 0.25 * (v[c0 - 1, c1] + v[c0 + 1, c1] + v[c0, c1 - 1] + v[c0, c1 + 1])
        m2 = 0.25 * (v[c0 - 2, c1] + v[c0 + 2, c1] + v[c0, c1 - 2] + v[c0, c1 + 2])
        smooth[c0, c1] = (4.0 * m1 - m2) / 3.0
    coeffs = ndimage.spline_filter(smooth, order=3, mode="mirror")
    vals = np.empty(n_bins)
    counts = np.empty(n_bins, dtype=int)
    vals[0], counts[0] = acmap.values[c0, c1], 1
    for j in range(1, n_bins):
        # about one sample per pixel of circumference
        n_theta = max(8, int(math.ceil(2.0 * math.pi * radii[j] / min(d0, d1))))
        th = np.arange(n_theta) * (2.0 * math.pi / n_theta)
        pts = [c0 + radii[j] * np.cos(th) / d0, c1 + radii[j] * np.sin(th) / d1]
        vals[j] = ndimage.map_coordinates(coeffs, pts, order=3, mode="mirror",
                                          prefilter=False).mean()
        counts[j] = n_theta
    return radii, vals, counts


def angular_integrate(acmap: AutocorrMap, ring_width: float | None = None,
                      method: str = "polar") -> RadialProfile:
    """Mean of the lag map over circles of constant radius, r = 0, w, 2w, ...

    ``polar`` (default) resamples each circle at about one point per pixel of
    circumference with cubic-spline interpolation of the lag map and averages
    uniformly in angle.  ``annulus`` instead averages the lattice lags with
    round(|d| / w) == j and reports each bin at the mean radius of its
    members; it needs no interpolation but samples angles unevenly, which
    costs a few percent on oscillating maps.

    Radii past half the window extent are discarded.  Empty annuli are
    dropped and listed in ``dropped``.  ``ring_width`` defaults to the larger
    pixel spacing.
    """
    if ring_width is None:
        ring_width = max(acmap.spacing)
    if ring_width < max(acmap.spacing) * (1 - 1e-12):
        raise ValueError(f"ring_width {ring_width} smaller than pixel spacing {max(acmap.spacing)}")
    rmax = acmap.usable_radius
    if method == "polar":
        radii, vals, counts = _polar_mean(acmap, float(ring_width))
        return RadialProfile(radii, vals, counts, rmax)
    if method != "annulus":
        raise ValueError(f"unknown method {method!r}")
    inside, flat_idx, counts, rsum, n_bins = _annulus_layout(
        tuple(acmap.window_shape), tuple(acmap.spacing), float(ring_width), float(rmax))
    vsum = np.bincount(flat_idx, weights=acmap.values[inside], minlength=n_bins)
    keep = counts > 0
    dropped = [j * ring_width for j in np.flatnonzero(~keep)]
    radii = rsum[keep] / counts[keep]
    return RadialProfile(radii, vsum[keep] / counts[keep], counts[keep], rmax, dropped)


def axial_profiles(acmap: AutocorrMap) -> tuple[RadialProfile, RadialProfile]:
    """Lag profiles along the first and second window axes.

    Positive and negative lags are averaged; lags beyond half the window
    extent are discarded like in :func:`angular_integrate`.
    """
    c0, c1 = acmap.center
    rmax = acmap.usable_radius
    out = []
    for axis, c in ((0, c0), (1, c1)):
        line = acmap.values[:, c1] if axis == 0 else acmap.values[c0, :]
        n = int(math.floor(rmax / acmap.spacing[axis] + 1e-9))
        n = min(n, c)
        pos = line[c:c + n + 1]
        neg = line[c - n:c + 1][::-1]
        vals = 0.5 * (pos + neg)
        counts = np.full(n + 1, 2)
        counts[0] = 1
        out.append(RadialProfile(np.arange(n + 1) * acmap.spacing[axis], vals, counts, rmax))
    return out[0], out[1]
