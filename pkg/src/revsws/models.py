"""Theoretical autocorrelation curves of a z-sensed reverberant field and
wavenumber fitting against measured lag profiles.

All model curves are expressed in units of the mean squared particle
velocity, so the unnormalized zero-lag value of every kind is 1/3.  The
normalized curves divide that out and start at exactly 1.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

# Below this argument the closed forms lose digits to cancellation.
_SERIES_CUTOFF = 0.1


class ModelKind(str, enum.Enum):
    GENERAL = "general"
    SIMPLE_PERP = "simple_perp"
    SIMPLE_AXIAL = "simple_axial"
    AIA_CONTAINS_AXIS = "aia_contains_axis"
    AIA_PERP_AXIS = "aia_perp_axis"


class FitDomainError(ValueError):
    """Raised when a profile cannot support a wavenumber fit."""


def sph_j0(x):
    """Spherical Bessel function j0(x) = sin(x)/x."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SERIES_CUTOFF
    xs = np.where(small, 1.0, x)
    x2 = x * x
    series = 1.0 - x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0)))
    return np.where(small, series, np.sin(xs) / xs)


def sph_j1_over_x(x):
    """j1(x)/x, finite at the origin where it tends to 1/3."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SERIES_CUTOFF
    xs = np.where(small, 1.0, x)
    x2 = x * x
    # 1/3 - x^2/30 + x^4/840 - x^6/45360 + x^8/3991680
    series = (1.0 / 3.0) * (1.0 - x2 / 10.0 * (1.0 - x2 / 28.0 * (1.0 - x2 / 54.0 * (1.0 - x2 / 88.0))))
    closed = (np.sin(xs) / xs**2 - np.cos(xs) / xs) / xs
    return np.where(small, series, closed)


def sph_j1(x):
    x = np.asarray(x, dtype=float)
    return sph_j1_over_x(x) * x


def _raw_model(kind: ModelKind, x, theta_s: float | None):
    j0 = sph_j0(x)
    j1x = sph_j1_over_x(x)
    if kind is ModelKind.SIMPLE_PERP or kind is ModelKind.AIA_PERP_AXIS:
        return 0.5 * (j0 - j1x)
    if kind is ModelKind.SIMPLE_AXIAL:
        return j1x
    if kind is ModelKind.AIA_CONTAINS_AXIS:
        return 0.25 * (j0 + j1x)
    if kind is ModelKind.GENERAL:
        if theta_s is None or not 0.0 <= theta_s <= math.pi / 2:
            raise ValueError("general model needs theta_s in [0, pi/2]")
        s2 = math.sin(theta_s) ** 2
        c2 = math.cos(theta_s) ** 2
        return 0.5 * s2 * (j0 - j1x) + c2 * j1x
    raise ValueError(f"unknown model kind {kind!r}")


def model_eval(kind, k, lag, theta_s: float | None = None, normalized: bool = True):
    """Evaluate an autocorrelation model at radial lag(s).

    Parameters
    ----------
    kind : ModelKind or str
    k : float or array
        Wavenumber in rad/m, must be positive.  Broadcasts against ``lag``.
    lag : float or array
        Non-negative lag in meters.
    theta_s : float, optional
        Angle between the lag vector and the sensor axis, only for the
        ``general`` kind.
    normalized : bool
        If true the curve is scaled to exactly 1 at zero lag, otherwise it is
        in units of the mean squared velocity (zero-lag value 1/3).
    """
    kind = ModelKind(kind)
    k = np.asarray(k, dtype=float)
    if np.any(k <= 0):
        raise ValueError("k must be positive")
    lag = np.asarray(lag, dtype=float)
    if np.any(lag < 0):
        raise ValueError("lag must be non-negative")
    val = _raw_model(kind, k * lag, theta_s)
    if normalized:
        val = 3.0 * val
    if val.ndim == 0:
        return float(val)
    return val


def k_to_sws(k: float, f0: float) -> float:
    if not k > 0:
        raise ValueError(f"wavenumber must be positive, got {k}")
    return 2.0 * math.pi * f0 / k


def sws_to_k(sws: float, f0: float) -> float:
    if not sws > 0:
        raise ValueError(f"speed must be positive, got {sws}")
    return 2.0 * math.pi * f0 / sws


@dataclass
class FitConfig:
    """Knobs of the grid-then-golden-section wavenumber fit.

    ``max_lag_wavelengths`` caps the fitted lag range at that many model
    wavelengths (re-evaluated once at the grid-best k).  ``None`` fits every
    retained bin of the profile.
    """

    sws_min: float = 0.3
    sws_max: float = 10.0
    n_grid: int = 200
    rel_tol: float = 1e-4
    max_rmse: float = 0.3
    fit_amplitude: bool = False
    max_lag_wavelengths: float | None = None
    min_bins: int = 6

    def __post_init__(self):
        if not 0 < self.sws_min < self.sws_max:
            raise ValueError("need 0 < sws_min < sws_max")
        if self.n_grid < 200:
            raise ValueError("n_grid must be at least 200")
        if self.max_lag_wavelengths is not None and self.max_lag_wavelengths <= 0:
            raise ValueError("max_lag_wavelengths must be positive")

    def k_bounds(self, f0: float) -> tuple[float, float]:
        return sws_to_k(self.sws_max, f0), sws_to_k(self.sws_min, f0)


@dataclass
class KEstimate:
    k: float
    sws: float
    f0: float
    amplitude: float
    residual_rmse: float
    converged: bool
    window_origin: tuple[int, int] | None = None
    reason: str = ""
    n_bins: int = 0
    extra: dict = field(default_factory=dict)


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_section(fun, a: float, b: float, rel_tol: float, max_iter: int = 200):
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if (b - a) <= rel_tol * 0.5 * (a + b):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
    return (c, fc) if fc <= fd else (d, fd)


def _objective(kind, r, y, w, fit_amplitude, theta_s):
    """Weighted SSE as a function of k (vectorized over a k array)."""
    wsum = w.sum()

    def sse(k):
        k = np.atleast_1d(np.asarray(k, dtype=float))
        m = model_eval(kind, k[:, None], r[None, :], theta_s=theta_s)
        m = np.atleast_2d(m)
        if fit_amplitude:
            num = (w * y * m).sum(axis=1)
            den = (w * m * m).sum(axis=1)
            amp = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        else:
            amp = np.ones(len(k))
        res = y[None, :] - amp[:, None] * m
        return (w * res * res).sum(axis=1) / wsum, amp

    return sse


def fit_wavenumber(profile, kind, f0: float, cfg: FitConfig | None = None,
                   theta_s: float | None = None, window_origin=None) -> KEstimate:
    """Fit the wavenumber of ``kind`` to a radial or axial lag profile.

    A log-spaced grid over the configured speed range locates the global
    basin; golden-section search then refines inside the neighbouring grid
    cells.  Residuals are weighted by the per-bin sample counts.
    """
    cfg = cfg or FitConfig()
    kind = ModelKind(kind)
    r = np.asarray(profile.radii, dtype=float)
    y = np.asarray(profile.values, dtype=float)
    w = np.asarray(profile.counts, dtype=float)
    if len(r) < cfg.min_bins:
        raise FitDomainError(f"profile has {len(r)} bins, need at least {cfg.min_bins}")
    if not (np.all(np.isfinite(y)) and np.all(w > 0)):
        raise FitDomainError("profile values must be finite with positive counts")

    if cfg.fit_amplitude:
        keep = r > 0
        r, y, w = r[keep], y[keep], w[keep]

    k_lo, k_hi = cfg.k_bounds(f0)
    if np.ptp(y) < 1e-12:
        return KEstimate(k=float("nan"), sws=float("nan"), f0=f0, amplitude=float("nan"),
                         residual_rmse=float("nan"), converged=False,
                         window_origin=window_origin, reason="flat profile", n_bins=len(r))

    grid = np.geomspace(k_lo, k_hi, cfg.n_grid)

    def coarse(r_, y_, w_):
        sse = _objective(kind, r_, y_, w_, cfg.fit_amplitude, theta_s)
        vals, _ = sse(grid)
        return int(np.argmin(vals)), sse

    i_best, sse = coarse(r, y, w)
    if cfg.max_lag_wavelengths is not None:
        lam = 2.0 * math.pi / grid[i_best]
        keep = r <= cfg.max_lag_wavelengths * lam
        keep[: cfg.min_bins] = True
        r, y, w = r[keep], y[keep], w[keep]
        i_best, sse = coarse(r, y, w)

    a = grid[max(i_best - 1, 0)]
    b = grid[min(i_best + 1, cfg.n_grid - 1)]
    k_best, f_best = _golden_section(lambda k: float(sse(k)[0][0]), a, b, cfg.rel_tol)
    amp = float(sse(k_best)[1][0])
    rmse = math.sqrt(max(f_best, 0.0))

    reason = ""
    on_bound = (k_best <= k_lo * (1 + 2 * cfg.rel_tol)) or (k_best >= k_hi * (1 - 2 * cfg.rel_tol))
    if on_bound:
        reason = "minimum on k bound"
    elif rmse > cfg.max_rmse:
        reason = f"residual rmse {rmse:.3g} above {cfg.max_rmse}"
    return KEstimate(k=k_best, sws=k_to_sws(k_best, f0), f0=f0, amplitude=amp,
                     residual_rmse=rmse, converged=not reason, window_origin=window_origin,
                     reason=reason, n_bins=len(r))
