import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from revsws.autocorr import RadialProfile
from revsws.models import (FitConfig, FitDomainError, ModelKind, fit_wavenumber, k_to_sws,
                           model_eval, sph_j0, sph_j1, sph_j1_over_x, sws_to_k)

KINDS = [ModelKind.SIMPLE_PERP, ModelKind.SIMPLE_AXIAL, ModelKind.AIA_CONTAINS_AXIS,
         ModelKind.AIA_PERP_AXIS]


def _mp_j(n, x):
    # spherical Bessel via the half-integer cylinder function
    x = mpmath.mpf(x)
    return mpmath.sqrt(mpmath.pi / (2 * x)) * mpmath.besselj(n + mpmath.mpf(1) / 2, x)


# --- Bessel helpers ------------------------------------------------------------

def test_bessel_matches_scipy_on_wide_range():
    x = np.concatenate([np.linspace(1e-3, 0.5, 200), np.linspace(0.5, 200, 2000)])
    assert np.allclose(sph_j0(x), special.spherical_jn(0, x), atol=1e-14, rtol=1e-12)
    assert np.allclose(sph_j1(x), special.spherical_jn(1, x), atol=1e-14, rtol=1e-10)


@pytest.mark.parametrize("x", [1e-9, 1e-6, 1e-4, 1e-2, 0.0999, 0.1001, 0.5])
def test_bessel_small_argument_against_mpmath(x):
    mpmath.mp.dps = 40
    assert sph_j0(x) == pytest.approx(float(_mp_j(0, x)), rel=1e-15)
    assert sph_j1_over_x(x) == pytest.approx(float(_mp_j(1, x) / x), rel=1e-12)


def test_bessel_origin_values():
    assert sph_j0(0.0) == 1.0
    assert sph_j1_over_x(0.0) == pytest.approx(1 / 3, abs=1e-16)
    assert sph_j1(0.0) == 0.0


def test_series_and_closed_form_agree_at_cutoff():
    below, above = np.nextafter(0.1, 0), 0.1
    assert abs(sph_j1_over_x(below) - sph_j1_over_x(above)) < 1e-13
    assert abs(sph_j0(below) - sph_j0(above)) < 1e-15


# --- model curves --------------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_zero_lag_is_one_normalized(kind):
    assert model_eval(kind, 1234.5, 0.0) == pytest.approx(1.0, abs=1e-15)
    assert model_eval(kind, 1234.5, 0.0, normalized=False) == pytest.approx(1 / 3, abs=1e-15)


def test_simple_perp_first_zero():
    mpmath.mp.dps = 30
    root = float(mpmath.findroot(lambda x: _mp_j(0, x) - _mp_j(1, x) / x, 2.7))
    assert 2.5 < root < 3.0
    assert abs(model_eval("simple_perp", 1.0, root)) < 1e-12


def test_axial_first_zero_at_tan_x_eq_x():
    root = 4.493409457909064
    assert abs(model_eval("simple_axial", 2.0, root / 2.0)) < 1e-12


def test_general_limits_match_special_cases():
    lag = np.linspace(0, 0.05, 50)
    perp = model_eval("general", 300.0, lag, theta_s=math.pi / 2)
    axial = model_eval("general", 300.0, lag, theta_s=0.0)
    assert np.allclose(perp, model_eval("simple_perp", 300.0, lag), atol=1e-15)
    assert np.allclose(axial, model_eval("simple_axial", 300.0, lag), atol=1e-15)


def test_aia_contains_equals_angular_mean_of_general():
    # average of the general curve over in-plane lag directions (plane holds the sensor axis)
    theta = np.linspace(0, 2 * np.pi, 4001)[:-1]
    for x in [0.3, 1.7, 5.2, 11.0]:
        th = np.arccos(np.abs(np.cos(theta)))
        vals = [model_eval("general", 1.0, x, theta_s=t, normalized=False) for t in th]
        assert np.mean(vals) == pytest.approx(model_eval("aia_contains_axis", 1.0, x,
                                                         normalized=False), abs=1e-12)


def test_general_requires_angle():
    with pytest.raises(ValueError):
        model_eval("general", 1.0, 0.1)
    with pytest.raises(ValueError):
        model_eval("general", 1.0, 0.1, theta_s=2.0)


@pytest.mark.parametrize("k, lag", [(0.0, 0.1), (-1.0, 0.1), (1.0, -0.1)])
def test_model_domain_errors(k, lag):
    with pytest.raises(ValueError):
        model_eval("simple_perp", k, lag)


def test_model_returns_float_for_scalars_and_broadcasts():
    assert isinstance(model_eval("aia_perp_axis", 10.0, 0.1), float)
    out = model_eval("aia_perp_axis", np.array([[1.0], [2.0]]), np.linspace(0, 1, 5))
    assert out.shape == (2, 5)


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 1e4), st.floats(0.0, 0.5))
def test_models_bounded_by_zero_lag(k, lag):
    for kind in KINDS:
        assert abs(model_eval(kind, k, lag)) <= 1.0 + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 50.0))
def test_isotropic_reconstruction_identity(x):
    lhs = (2 * model_eval("aia_contains_axis", 1.0, x, normalized=False)
           + model_eval("aia_perp_axis", 1.0, x, normalized=False))
    assert lhs == pytest.approx(float(sph_j0(x)), abs=1e-13)


def test_k_sws_conversion():
    assert k_to_sws(2 * math.pi * 200, 200.0) == pytest.approx(1.0)
    assert sws_to_k(k_to_sws(917.0, 150.0), 150.0) == pytest.approx(917.0, rel=1e-14)
    with pytest.raises(ValueError):
        k_to_sws(0.0, 200.0)
    with pytest.raises(ValueError):
        sws_to_k(-1.0, 200.0)


# --- fitting -------------------------------------------------------------------

def _profile(kind, k, r, noise=0.0, seed=0, amp=1.0):
    rng = np.random.default_rng(seed)
    y = amp * model_eval(kind, k, r) + noise * rng.standard_normal(r.size)
    y[0] = 1.0
    return RadialProfile(r, y, np.ones(r.size, dtype=int), float(r[-1]))


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("sws", [0.5, 1.0, 3.0])
def test_fit_recovers_noiseless_k(kind, sws):
    f0 = 200.0
    k = sws_to_k(sws, f0)
    r = np.linspace(0, 1.2 * sws / f0, 40)
    est = fit_wavenumber(_profile(kind, k, r), kind, f0)
    assert est.converged, est.reason
    assert est.sws == pytest.approx(sws, rel=3e-4)
    assert est.residual_rmse < 1e-3


def test_fit_noise_is_unbiased_ish():
    f0, sws = 200.0, 1.0
    r = np.linspace(0, 7.5e-3, 16)
    est = [fit_wavenumber(_profile("aia_perp_axis", sws_to_k(sws, f0), r, 0.05, s),
                          "aia_perp_axis", f0).sws for s in range(40)]
    assert abs(np.mean(est) - sws) < 0.03


def test_fit_with_amplitude():
    f0, sws = 200.0, 2.0
    r = np.linspace(0, 0.012, 30)
    prof = _profile("simple_perp", sws_to_k(sws, f0), r, amp=0.6)
    est = fit_wavenumber(prof, "simple_perp", f0, FitConfig(fit_amplitude=True))
    assert est.sws == pytest.approx(sws, rel=1e-3)
    assert est.amplitude == pytest.approx(0.6, rel=1e-3)


def test_fit_lag_cap_keeps_min_bins():
    f0 = 200.0
    r = np.linspace(0, 0.02, 60)
    prof = _profile("aia_perp_axis", sws_to_k(1.0, f0), r)
    est = fit_wavenumber(prof, "aia_perp_axis", f0, FitConfig(max_lag_wavelengths=1.0))
    assert est.converged
    assert 6 <= est.n_bins < 60


def test_fit_flat_profile_not_converged():
    r = np.linspace(0, 0.01, 10)
    prof = RadialProfile(r, np.ones(10), np.ones(10, dtype=int), 0.01)
    est = fit_wavenumber(prof, "aia_perp_axis", 200.0)
    assert not est.converged and est.reason == "flat profile"


def test_fit_too_few_bins():
    r = np.linspace(0, 0.01, 5)
    prof = RadialProfile(r, np.linspace(1, 0, 5), np.ones(5, dtype=int), 0.01)
    with pytest.raises(FitDomainError):
        fit_wavenumber(prof, "aia_perp_axis", 200.0)


def test_fit_out_of_range_flags_bound():
    f0 = 200.0
    r = np.linspace(0, 0.01, 20)
    # 30 m/s is far above sws_max: the optimum sits on the lower k bound
    prof = _profile("simple_perp", sws_to_k(30.0, f0), r)
    est = fit_wavenumber(prof, "simple_perp", f0)
    assert not est.converged
    assert "bound" in est.reason


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(n_grid=50)
    with pytest.raises(ValueError):
        FitConfig(sws_min=2.0, sws_max=1.0)
    lo, hi = FitConfig().k_bounds(200.0)
    assert lo < hi
