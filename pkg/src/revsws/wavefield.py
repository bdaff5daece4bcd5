"""Synthetic reverberant shear-wave fields with known local wave speed.

Fields are built as superpositions of transverse plane waves sharing one
wavenumber per region.  Only the z-projection of the particle velocity is
kept, and the stored series is the real part of the analytic field, so
downstream code has to demodulate it like measured data.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

logger = logging.getLogger(__name__)

AXES = ("x", "y", "z")


class SpatialSamplingError(ValueError):
    pass


class DegenerateSignalError(ValueError):
    pass


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Voxel grid plus temporal sampling.

    ``spacing`` is meters per voxel along (x, y, z); a dimension of size 1
    makes the grid a plane or line embedded in 3D space.
    """

    nx: int
    ny: int
    nz: int
    spacing: tuple[float, float, float]
    nt: int
    dt: float
    f0: float

    def __post_init__(self):
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValueError("voxel counts must be positive")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError("spacing must be three positive values")
        if self.dt <= 0 or self.f0 <= 0:
            raise ValueError("dt and f0 must be positive")
        if self.f0 >= 0.5 / self.dt:
            raise ValueError(f"f0={self.f0} Hz is above the temporal Nyquist {0.5 / self.dt} Hz")
        if self.f0 * self.dt > 1.0 / 8.0:
            raise ValueError("need at least 8 time samples per cycle")
        if self.nt * self.dt * self.f0 < 2.0 - 1e-9:
            raise ValueError("need at least 2 cycles of f0 in the series")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    def coords(self) -> np.ndarray:
        """Voxel positions in meters, shape (nx, ny, nz, 3)."""
        axes = [np.arange(n) * d for n, d in zip(self.shape, self.spacing)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def times(self) -> np.ndarray:
        return np.arange(self.nt) * self.dt

    @classmethod
    def plane(cls, plane: str, n0: int, n1: int, spacing: float, nt: int, dt: float, f0: float):
        """Single-voxel-thick grid spanning the named plane ('xy', 'xz' or 'yz')."""
        dims = {"x": 1, "y": 1, "z": 1}
        dims[plane[0]] = n0
        dims[plane[1]] = n1
        return cls(dims["x"], dims["y"], dims["z"], (spacing,) * 3, nt, dt, f0)


@dataclass
class MediumMap:
    sws: np.ndarray
    region_label: np.ndarray

    def __post_init__(self):
        self.sws = np.asarray(self.sws, dtype=float)
        self.region_label = np.asarray(self.region_label, dtype=int)
        if self.sws.shape != self.region_label.shape:
            raise ValueError("sws and region_label shapes differ")
        if not np.all(self.sws > 0):
            raise ValueError("sws must be positive everywhere")
        for rid in self.regions():
            _, n = ndimage.label(self.region_label == rid, structure=np.ones((3,) * self.sws.ndim))
            if n != 1:
                raise GeometryError(f"region {rid} is not connected ({n} components)")

    def regions(self) -> list[int]:
        return [int(r) for r in np.unique(self.region_label)]

    def region_speed(self, rid: int) -> float:
        vals = self.sws[self.region_label == rid]
        if vals.size == 0:
            raise KeyError(rid)
        if np.ptp(vals) > 1e-12 * vals.max():
            raise ValueError(f"region {rid} has non-uniform speed")
        return float(vals[0])

    @classmethod
    def homogeneous(cls, grid: GridSpec, sws: float) -> "MediumMap":
        return cls(np.full(grid.shape, float(sws)), np.zeros(grid.shape, dtype=int))


@dataclass(frozen=True)
class Directionality:
    """Propagation-direction law: isotropic, or uniform on a spherical cap."""

    kind: str = "isotropic"
    axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    half_angle: float = math.pi

    def __post_init__(self):
        if self.kind not in ("isotropic", "cone"):
            raise ValueError(f"unknown directionality {self.kind!r}")
        if not 0 < self.half_angle <= math.pi:
            raise ValueError("half_angle must be in (0, pi]")
        if np.linalg.norm(self.axis) == 0:
            raise ValueError("cone axis must be non-zero")

    @classmethod
    def cone(cls, axis, half_angle: float) -> "Directionality":
        return cls("cone", tuple(float(a) for a in axis), float(half_angle))

    def to_dict(self) -> dict:
        if self.kind == "isotropic":
            return {"kind": "isotropic"}
        return {"kind": "cone", "axis": list(self.axis), "half_angle": self.half_angle}


ISOTROPIC = Directionality()


@dataclass
class PlaneWaveEnsemble:
    directions: np.ndarray     # (Q, 3) unit propagation directions
    polarizations: np.ndarray  # (Q, 3) unit motion directions, transverse
    amplitudes: np.ndarray     # (Q,)
    phases: np.ndarray         # (Q,)
    directionality: Directionality = ISOTROPIC

    def __post_init__(self):
        q = len(self.amplitudes)
        if q == 0:
            raise ValueError("ensemble needs at least one wave")
        if self.directions.shape != (q, 3) or self.polarizations.shape != (q, 3):
            raise ValueError("direction arrays must have shape (Q, 3)")
        for name, v in (("directions", self.directions), ("polarizations", self.polarizations)):
            if np.max(np.abs(np.linalg.norm(v, axis=1) - 1.0)) > 1e-12:
                raise ValueError(f"{name} must be unit vectors")
        if np.max(np.abs(np.einsum("ij,ij->i", self.directions, self.polarizations))) > 1e-12:
            raise ValueError("polarizations must be perpendicular to propagation")

    def __len__(self):
        return len(self.amplitudes)


def _rotation_from_z(axis: np.ndarray) -> np.ndarray:
    """Rotation matrix taking +z onto ``axis``."""
    a = axis / np.linalg.norm(axis)
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(z, a)
    c = float(z @ a)
    if np.linalg.norm(v) < 1e-15:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1.0 + c)


def _draw_wave(rng: np.random.Generator, directionality: Directionality):
    half = directionality.half_angle if directionality.kind == "cone" else math.pi
    cos_t = rng.uniform(math.cos(half), 1.0)
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    az = rng.uniform(0.0, 2.0 * math.pi)
    n = np.array([sin_t * math.cos(az), sin_t * math.sin(az), cos_t])
    if directionality.kind == "cone":
        n = _rotation_from_z(np.asarray(directionality.axis, dtype=float)) @ n
    n /= np.linalg.norm(n)
    # orthonormal basis (e1, e2) of the plane perpendicular to n
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    psi = rng.uniform(0.0, 2.0 * math.pi)
    p = math.cos(psi) * e1 + math.sin(psi) * e2
    p -= (p @ n) * n
    p /= np.linalg.norm(p)
    amp = abs(rng.standard_normal())
    phase = rng.uniform(0.0, 2.0 * math.pi)
    return n, p, amp, phase


def draw_ensemble(q_count: int, directionality: Directionality = ISOTROPIC,
                  seed: int = 0, stream: int = 0) -> PlaneWaveEnsemble:
    """Draw ``q_count`` transverse plane waves.

    Every wave has its own RNG stream keyed by (seed, stream, wave index), so
    the result does not depend on how many waves are drawn before it.
    Amplitudes follow |N(0, 1)|, which has unit second moment.
    """
    if q_count < 1:
        raise ValueError("q_count must be at least 1")
    dirs = np.empty((q_count, 3))
    pols = np.empty((q_count, 3))
    amps = np.empty(q_count)
    phases = np.empty(q_count)
    for q in range(q_count):
        rng = np.random.default_rng([int(seed), int(stream), q])
        dirs[q], pols[q], amps[q], phases[q] = _draw_wave(rng, directionality)
    return PlaneWaveEnsemble(dirs, pols, amps, phases, directionality)


@dataclass
class MotionSeries:
    grid: GridSpec
    samples: np.ndarray
    sensor_axis: str = "z"
    units: str = "m/s"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sensor_axis not in AXES:
            raise ValueError(f"sensor_axis must be one of {AXES}")
        expected = self.grid.shape + (self.grid.nt,)
        if self.samples.shape != expected:
            raise ValueError(f"samples shape {self.samples.shape} does not match grid {expected}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")


def ensemble_phasor(ensemble: PlaneWaveEnsemble, positions: np.ndarray, k: float,
                    sensor_axis: str = "z", normalize: bool = True,
                    chunk: int = 4096) -> np.ndarray:
    """Complex sensor-axis phasor of an ensemble at ``positions`` (..., 3).

    With ``normalize`` the amplitudes are scaled by 1/sqrt(Q) so the expected
    total mean squared velocity is 1 whatever the wave count.
    """
    ax = AXES.index(sensor_axis)
    weights = ensemble.polarizations[:, ax] * ensemble.amplitudes * np.exp(1j * ensemble.phases)
    if normalize:
        weights = weights / math.sqrt(len(ensemble))
    kdirs = k * ensemble.directions.T  # (3, Q)
    flat = positions.reshape(-1, 3)
    out = np.empty(len(flat), dtype=complex)
    for s in range(0, len(flat), chunk):
        out[s:s + chunk] = np.exp(1j * (flat[s:s + chunk] @ kdirs)) @ weights
    return out.reshape(positions.shape[:-1])


def synth_phasor(grid: GridSpec, medium: MediumMap, q_count: int,
                 directionality: Directionality = ISOTROPIC, seed: int = 0,
                 sensor_axis: str = "z") -> np.ndarray:
    """Analytic per-voxel phasor field; each region gets independent waves."""
    if q_count < 1:
        raise ValueError("q_count must be at least 1")
    if medium.sws.shape != grid.shape:
        raise ValueError("medium shape does not match grid")
    used = [d for n, d in zip(grid.shape, grid.spacing) if n > 1]
    max_spacing = max(used) if used else max(grid.spacing)
    pos = grid.coords()
    field_ = np.zeros(grid.shape, dtype=complex)
    for rid in medium.regions():
        c = medium.region_speed(rid)
        wavelength = c / grid.f0
        if wavelength < 4.0 * max_spacing:
            raise SpatialSamplingError(
                f"region {rid}: wavelength {wavelength:.4g} m spans fewer than 4 voxels "
                f"of {max_spacing:.4g} m")
        mask = medium.region_label == rid
        ens = draw_ensemble(q_count, directionality, seed=seed, stream=rid)
        field_[mask] = ensemble_phasor(ens, pos[mask], 2.0 * math.pi * grid.f0 / c, sensor_axis)
    return field_


def synth_reverberant(grid: GridSpec, medium: MediumMap, q_count: int,
                      directionality: Directionality = ISOTROPIC, seed: int = 0,
                      sensor_axis: str = "z") -> MotionSeries:
    """Real sensor-axis velocity series of a piecewise reverberant field.

    Evaluates Re{P(r) exp(-i w0 t)} where P sums n_z v exp(i(k n.r + phi))
    over the region's plane waves.
    """
    phasor = synth_phasor(grid, medium, q_count, directionality, seed, sensor_axis)
    carrier = np.exp(-2j * math.pi * grid.f0 * grid.times())
    samples = (phasor[..., None] * carrier).real
    meta = {
        "generator": "plane_wave_superposition",
        "q_count": int(q_count),
        "seed": int(seed),
        "directionality": directionality.to_dict(),
        "amplitude_law": "abs_normal_unit_second_moment",
        "amplitude_normalization": "1/sqrt(q_count)",
    }
    return MotionSeries(grid, samples, sensor_axis=sensor_axis, units="m/s", metadata=meta)


def add_noise(series: MotionSeries, snr_db: float, seed: int = 0) -> MotionSeries:
    """Add white Gaussian noise at ``snr_db`` relative to the mean-square signal."""
    if math.isinf(snr_db) and snr_db > 0:
        return MotionSeries(series.grid, series.samples.copy(), series.sensor_axis,
                            series.units, dict(series.metadata))
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite or +inf")
    power = float(np.mean(np.square(series.samples, dtype=float)))
    if power == 0.0:
        raise DegenerateSignalError("cannot scale noise to an all-zero signal")
    sigma = math.sqrt(power / 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(series.samples.shape) * sigma
    meta = dict(series.metadata)
    meta["noise"] = {"snr_db": float(snr_db), "seed": int(seed), "sigma": sigma}
    return MotionSeries(series.grid, series.samples + noise, series.sensor_axis, series.units, meta)


def _segment_distance(pos: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((pos - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(pos - (a + t[..., None] * ab), axis=-1)


def make_two_region_medium(grid: GridSpec, background_sws: float, inclusion_sws: float,
                           inclusion_shape: str = "sphere", *, center=None, radius: float = 0.0,
                           axis: str = "z", length: float | None = None,
                           branch_angle: float = math.radians(30.0)) -> MediumMap:
    """Background (label 0) with one stiff inclusion (label 1).

    Geometry is given in meters.  ``center`` defaults to the grid center.
    Cylinders run along ``axis`` for ``length`` (full grid when ``None``).
    The y-tube is a stem along ``axis`` ending at ``center`` that splits into
    two branches tilted by ``branch_angle``, each of half the stem length.
    """
    pos = grid.coords()
    extent = np.array([(n - 1) * d for n, d in zip(grid.shape, grid.spacing)])
    c = extent / 2.0 if center is None else np.asarray(center, dtype=float)
    ai = AXES.index(axis)
    if radius < 0:
        raise GeometryError("radius must be non-negative")

    spans = np.array(grid.shape) > 1  # a plane grid slices through the 3D shape

    def check_box(lo, hi):
        if np.any((lo < -1e-12) & spans) or np.any((hi > extent + 1e-12) & spans):
            raise GeometryError(f"inclusion [{lo}, {hi}] exceeds grid extent {extent}")

    if inclusion_shape == "sphere":
        check_box(c - radius, c + radius)
        inside = np.linalg.norm(pos - c, axis=-1) <= radius
    elif inclusion_shape == "cylinder":
        half = extent[ai] / 2.0 if length is None else length / 2.0
        lo, hi = c - radius, c + radius
        lo[ai], hi[ai] = c[ai] - half, c[ai] + half
        check_box(lo, hi)
        d = pos - c
        radial = np.sqrt(np.sum(np.delete(d, ai, axis=-1) ** 2, axis=-1))
        inside = (radial <= radius) & (np.abs(d[..., ai]) <= half)
    elif inclusion_shape == "y_tube":
        stem = extent[ai] / 2.0 if length is None else length / 2.0
        u = np.zeros(3)
        u[ai] = 1.0
        side = np.zeros(3)
        side[(ai + 1) % 3] = 1.0
        base = c - stem * u
        tips = [c + stem / 2.0 * (math.cos(branch_angle) * u + s * math.sin(branch_angle) * side)
                for s in (1.0, -1.0)]
        pts = np.array([base, c] + tips)
        check_box(pts.min(axis=0) - radius, pts.max(axis=0) + radius)
        dist = np.minimum.reduce([_segment_distance(pos, base, c)]
                                 + [_segment_distance(pos, c, t) for t in tips])
        inside = dist <= radius
    else:
        raise ValueError(f"unknown inclusion shape {inclusion_shape!r}")

    labels = inside.astype(int)
    sws = np.where(inside, float(inclusion_sws), float(background_sws))
    if radius == 0:
        labels[:] = 0
        sws[:] = float(background_sws)
    return MediumMap(sws, labels)
