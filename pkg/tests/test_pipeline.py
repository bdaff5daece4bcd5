import math

import numpy as np
import pytest

from revsws.pipeline import (Roi, SwsMap, WindowConfig, estimate_window, fuse_planes,
                             region_ratio, region_stats, roi_values, snr_db, sws_map,
                             window_layout)
from revsws.models import ModelKind
from revsws.spectral import PERPENDICULAR, ComplexPlaneField, extract_phasor
from revsws.wavefield import GridSpec, MediumMap, synth_reverberant

F0 = 200.0
DX = 0.5e-3


def synth_field(plane="xy", n=60, seed=0, sws=1.0):
    g = GridSpec.plane(plane, n, n, DX, 32, 1 / (16 * F0), F0)
    s = synth_reverberant(g, MediumMap.homogeneous(g, sws), 300, seed=seed)
    return extract_phasor(s, plane)


def make_map(values, valid=None, centers=None, axes=("x", "y")):
    values = np.asarray(values, float)
    valid = np.isfinite(values) if valid is None else np.asarray(valid)
    if centers is None:
        centers = tuple(np.arange(n) * 1e-3 for n in values.shape)
    return SwsMap(values, valid, np.zeros_like(values), centers, axes)


# --- layout ----------------------------------------------------------------------

def test_window_layout_centers_and_edges():
    win, stp, starts = window_layout((100, 90), (DX, DX), 15e-3, 4e-3)
    assert win == [30, 30] and stp == [8, 8]
    assert starts[0][-1] + 30 <= 100 and starts[0][-1] + 8 + 30 > 100
    assert len(starts[1]) == (90 - 30) // 8 + 1


def test_window_layout_errors():
    with pytest.raises(ValueError):
        window_layout((20, 20), (DX, DX), 15e-3, 4e-3)
    with pytest.raises(ValueError):
        window_layout((20, 20), (DX, DX), 1e-3, 1e-3)


def test_window_config_defaults_and_validation():
    cfg = WindowConfig(12e-3)
    assert cfg.step == pytest.approx(3e-3)
    assert cfg.snapshot()["fit"]["n_grid"] == 200
    for bad in [dict(estimator="simple-q"), dict(step=20e-3), dict(window_size=-1.0)]:
        with pytest.raises(ValueError):
            WindowConfig(**{"window_size": 12e-3, **bad})


# --- estimation --------------------------------------------------------------------

@pytest.mark.parametrize("plane, estimator, model", [
    ("xy", "aia", ModelKind.AIA_PERP_AXIS),
    ("xz", "aia", ModelKind.AIA_CONTAINS_AXIS),
    ("xz", "simple-z", ModelKind.SIMPLE_AXIAL),
    ("xz", "simple-axial", ModelKind.SIMPLE_AXIAL),
    ("xz", "simple-x", ModelKind.SIMPLE_PERP),
    ("xy", "simple-perp", ModelKind.SIMPLE_PERP),
])
def test_estimators_recover_speed(plane, estimator, model):
    fld = synth_field(plane, seed=3)
    smap = sws_map(fld, WindowConfig(15e-3, 7.5e-3, estimator=estimator))
    assert smap.provenance["model"] == model.value
    assert smap.shape == (3, 3)
    assert smap.validity.all()
    assert np.mean(smap.values) == pytest.approx(1.0, rel=0.12)
    c0 = smap.centers[0]
    assert c0[0] == pytest.approx(14.5 * DX)


def test_estimator_axis_must_lie_in_plane():
    fld = synth_field("xy", n=40)
    with pytest.raises(ValueError):
        sws_map(fld, WindowConfig(15e-3, estimator="simple-z"))


def test_zero_field_gives_no_valid_windows(caplog):
    fld = ComplexPlaneField(np.zeros((40, 40)), (DX, DX), F0, PERPENDICULAR)
    smap = sws_map(fld, WindowConfig(15e-3))
    assert not smap.validity.any()
    assert "no valid windows" in caplog.text


def test_estimate_window_reports_domain_failure():
    rng = np.random.default_rng(0)
    v = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    est = estimate_window(v, (DX, DX), F0, 0, ModelKind.SIMPLE_PERP, WindowConfig(4e-3))
    assert not est.converged and "bins" in est.reason


def test_threads_do_not_change_results():
    fld = synth_field("xz", n=50, seed=1)
    cfg = WindowConfig(10e-3, 2.5e-3)
    a = sws_map(fld, cfg, threads=1)
    b = sws_map(fld, cfg, threads=3)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.validity, b.validity)


# --- fusion ------------------------------------------------------------------------

def test_fuse_median_and_average():
    m1 = make_map([[1.0, 2.0], [np.nan, 4.0]])
    m2 = make_map([[3.0, 2.0], [np.nan, 8.0]], axes=("x", "z"))
    m3 = make_map([[5.0, 5.0], [np.nan, np.nan]], axes=("y", "z"))
    med = fuse_planes([m1, m2, m3], "median")
    avg = fuse_planes([m1, m2, m3], "average")
    assert med.values[0, 0] == 3.0 and avg.values[0, 0] == 3.0
    assert med.values[0, 1] == 2.0 and avg.values[0, 1] == 3.0
    assert med.values[1, 1] == 6.0
    assert not med.validity[1, 0] and np.isnan(med.values[1, 0])


def test_fuse_errors():
    m = make_map(np.ones((2, 2)))
    with pytest.raises(ValueError):
        fuse_planes([])
    with pytest.raises(ValueError):
        fuse_planes([m, make_map(np.ones((2, 3)))])
    with pytest.raises(ValueError):
        fuse_planes([m], "mode")


# --- rois and metrics --------------------------------------------------------------

def test_roi_box_and_values():
    m = make_map(np.arange(16.0).reshape(4, 4))
    roi = Roi.box(m, (1e-3, 0.0), (2e-3, 1e-3))
    assert sorted(roi_values(m, roi)) == [4.0, 5.0, 8.0, 9.0]
    with pytest.raises(ValueError):
        Roi.box(m, (10.0, 10.0), (11.0, 11.0))


def test_roi_from_labels_respects_margin():
    labels = np.zeros((20, 20), int)
    labels[:, 10:] = 1
    centers = (np.arange(20) * 1e-3, np.arange(20) * 1e-3)
    m = make_map(np.ones((20, 20)), centers=centers)
    r0 = Roi.from_labels(m, labels, (1e-3, 1e-3), 0, 3e-3)
    r1 = Roi.from_labels(m, labels, (1e-3, 1e-3), 1, 0.0)
    # label-0 pixels at column j lie 10 - j px from the boundary
    assert np.array_equal(np.flatnonzero(r0.mask[0]), np.arange(0, 8))
    assert np.array_equal(np.flatnonzero(r1.mask[0]), np.arange(10, 20))


def test_snr_and_stats():
    m = make_map([[1.0, 1.2], [0.8, 1.0]])
    roi = Roi(np.ones((2, 2), bool))
    mean, sd, n = region_stats(m, roi)
    assert (mean, n) == (1.0, 4)
    assert snr_db(m, roi) == pytest.approx(10 * math.log10(1.0 / np.std([1, 1.2, 0.8, 1], ddof=1)))


def test_snr_zero_spread_is_infinite():
    m = make_map(np.ones((2, 2)))
    assert snr_db(m, Roi(np.ones((2, 2), bool))) == math.inf


def test_snr_needs_two_samples():
    m = make_map([[1.0, np.nan], [np.nan, np.nan]])
    with pytest.raises(ValueError):
        snr_db(m, Roi(np.ones((2, 2), bool)))


def test_region_ratio_with_spread():
    m = make_map([[3.0, 3.3, 1.0, 1.1], [2.7, 3.0, 0.9, 1.0]])
    a = Roi(np.array([[1, 1, 0, 0], [1, 1, 0, 0]], bool))
    b = Roi(np.array([[0, 0, 1, 1], [0, 0, 1, 1]], bool))
    ratio, spread = region_ratio(m, a, b)
    assert ratio == pytest.approx(3.0)
    sa, sb = np.std([3, 3.3, 2.7, 3], ddof=1), np.std([1, 1.1, 0.9, 1], ddof=1)
    assert spread == pytest.approx(3.0 * math.hypot(sa / 3.0, sb / 1.0))
