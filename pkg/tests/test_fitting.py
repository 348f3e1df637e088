import math

import numpy as np
import pytest

from dressedspin.fitting import (
    FitResult,
    UndersampledError,
    damped_sinusoid_jacobian,
    damped_sinusoid_model,
    exp_decay_jacobian,
    exp_decay_model,
    fit_damped_sinusoid,
    fit_exp_decay,
    fit_gaussians,
    fwhm,
    gaussian_area,
    gaussian_dips_jacobian,
    gaussian_dips_model,
)


def _central_fd(model, x, p, eps=1e-6):
    jac = np.empty((len(x), len(p)))
    for j in range(len(p)):
        step = eps * max(abs(p[j]), 1.0)
        hi = p.copy(); hi[j] += step
        lo = p.copy(); lo[j] -= step
        jac[:, j] = (model(x, hi) - model(x, lo)) / (2 * step)
    return jac


@pytest.mark.parametrize(
    "model,jacobian,p",
    [
        (gaussian_dips_model, gaussian_dips_jacobian,
         np.array([1.0, 0.3, 2.0, 0.7, 0.2, 5.0, 1.1])),
        (exp_decay_model, exp_decay_jacobian, np.array([0.8, 2.7, 0.1])),
        (damped_sinusoid_model, damped_sinusoid_jacobian,
         np.array([0.4, 3.0, 1.7, 0.6, 0.2])),
    ],
)
def test_analytic_jacobians_match_finite_differences(model, jacobian, p):
    rng = np.random.default_rng(1)
    for _ in range(5):
        x = np.sort(rng.uniform(0, 8, size=60))
        analytic = jacobian(x, p)
        numeric = _central_fd(model, x, p)
        scale = np.maximum(np.abs(analytic), 1.0)
        assert np.max(np.abs(analytic - numeric) / scale) < 1e-6


# ---------------------------------------------------------------------------
# Noiseless recovery
# ---------------------------------------------------------------------------

def test_gaussian_fit_recovers_noiseless_parameters():
    x = np.linspace(0, 100, 400)
    p_true = np.array([1.0, 0.2, 20.0, 3.0, 0.35, 50.0, 4.0, 0.1, 80.0, 2.5])
    y = gaussian_dips_model(x, p_true)
    fit = fit_gaussians(x, y, 3)
    assert fit.converged
    assert np.max(np.abs(fit.parameters - p_true) / np.abs(p_true)) < 1e-6


def test_single_gaussian_exact_data_tiny_residuals():
    x = np.linspace(-5, 5, 80)
    p_true = np.array([0.9, 0.4, 0.3, 1.2])
    y = gaussian_dips_model(x, p_true)
    fit = fit_gaussians(x, y, 1)
    resid = gaussian_dips_model(x, fit.parameters) - y
    assert np.max(np.abs(resid)) < 1e-10


def test_exp_fit_recovers_noiseless():
    t = np.linspace(0, 10, 60)
    y = exp_decay_model(t, np.array([1.5, 2.0, 0.3]))
    fit = fit_exp_decay(t, y)
    assert fit.converged
    assert fit["T"] == pytest.approx(2.0, rel=1e-6)
    assert fit["A"] == pytest.approx(1.5, rel=1e-6)


def test_sinusoid_fit_recovers_noiseless():
    t = np.linspace(0, 2, 160)
    p_true = np.array([0.5, 1.2, 8.0, 0.4, 0.25])
    y = damped_sinusoid_model(t, p_true)
    fit = fit_damped_sinusoid(t, y)
    assert fit.converged
    assert np.max(np.abs(fit.parameters - p_true) / np.abs(p_true)) < 1e-6


# ---------------------------------------------------------------------------
# Noisy recovery at spec'd tolerances
# ---------------------------------------------------------------------------

def test_five_gaussian_recovery_at_snr_100():
    # SNR = 100 relative to the component amplitudes
    rng = np.random.default_rng(7)
    x = np.linspace(220, 500, 900)
    p_true = [0.95]
    for a, mu, sig in ((0.22, 244.4, 5.0), (0.25, 268.4, 5.5), (0.3, 358.4, 5.5),
                       (0.25, 448.4, 5.5), (0.22, 472.4, 5.0)):
        p_true += [a, mu, sig]
    p_true = np.array(p_true)
    y = gaussian_dips_model(x, p_true) + rng.normal(0, 0.22 / 100, size=len(x))
    fit = fit_gaussians(x, y, 5)
    assert fit.converged
    err = np.abs(fit.parameters - p_true) / np.abs(p_true)
    assert np.max(err) < 0.01


def test_exp_recovery_tau_2us_snr_50():
    rng = np.random.default_rng(3)
    t = np.linspace(0, 10, 80)
    y = exp_decay_model(t, np.array([1.0, 2.0, 0.2]))
    y = y + rng.normal(0, 1.0 / 50, size=len(t))
    fit = fit_exp_decay(t, y)
    assert fit.converged
    assert fit["T"] == pytest.approx(2.0, rel=0.05)


def test_exp_recovery_290us_over_50us_window():
    # heavily truncated decay: ill-conditioned, tolerance is wide
    rng = np.random.default_rng(5)
    t = np.linspace(0, 50, 120)
    y = exp_decay_model(t, np.array([1.0, 290.0, 0.0]))
    y = y + rng.normal(0, 1.0 / 500, size=len(t))
    fit = fit_exp_decay(t, y)
    assert fit.converged
    assert fit["T"] == pytest.approx(290.0, rel=0.30)


def test_sinusoid_8mhz_and_phase_recovery():
    rng = np.random.default_rng(11)
    t = np.linspace(0, 0.5, 200)  # us
    p_true = np.array([0.15, 0.4, 8.0, math.pi / 2, 0.7])
    y = damped_sinusoid_model(t, p_true) + rng.normal(0, 0.15 / 60, size=len(t))
    fit = fit_damped_sinusoid(t, y)
    assert fit.converged
    assert fit["f"] == pytest.approx(8.0, rel=0.01)
    assert fit["phi"] == pytest.approx(math.pi / 2, abs=0.05)


# ---------------------------------------------------------------------------
# Degenerate and error paths
# ---------------------------------------------------------------------------

def test_flat_data_exp_degenerate_or_unconverged():
    t = np.linspace(0, 5, 30)
    y = np.full_like(t, 0.42)
    fit = fit_exp_decay(t, y)
    assert (not fit.converged) or fit.degenerate


def test_flat_data_gaussians_no_crash():
    x = np.linspace(0, 10, 50)
    fit = fit_gaussians(x, np.ones_like(x), 2)
    assert (not fit.converged) or fit.degenerate


def test_zero_amplitude_sinusoid_degenerate():
    t = np.linspace(0, 3, 64)
    fit = fit_damped_sinusoid(t, np.full_like(t, 0.5))
    assert (not fit.converged) or fit.degenerate


def test_undersampled_sinusoid_rejected():
    # dominant component parked just under the sampling limit
    t = np.linspace(0, 10, 32)
    f_near_nyquist = 0.48 / float(np.mean(np.diff(t)))
    y = damped_sinusoid_model(t, np.array([0.5, 100.0, f_near_nyquist, 0.0, 0.0]))
    with pytest.raises(UndersampledError):
        fit_damped_sinusoid(t, y)
    with pytest.raises(UndersampledError):
        fit_damped_sinusoid(t[:5], y[:5])


def test_too_few_points_for_gaussians():
    with pytest.raises(UndersampledError):
        fit_gaussians(np.arange(5.0), np.arange(5.0), 2)


def test_nonconverged_withholds_parameters():
    r = FitResult("m", ("a",), None, None, None, 1.0, False, 200)
    with pytest.raises(KeyError):
        r["a"]
    assert r.to_dict()["converged"] is False


# ---------------------------------------------------------------------------
# FWHM
# ---------------------------------------------------------------------------

def test_fwhm_closed_form():
    x = np.linspace(-10, 10, 200)
    y = gaussian_dips_model(x, np.array([1.0, 0.5, 0.0, 1.0]))
    fit = fit_gaussians(x, y, 1)
    w, _ = fwhm(fit, 0)
    assert w == pytest.approx(2.3548, abs=1e-3)


def test_fwhm_of_known_sigma_and_uncertainty_scaling():
    x = np.linspace(-10, 10, 300)
    rng = np.random.default_rng(2)
    y = gaussian_dips_model(x, np.array([1.0, 0.5, 0.0, 1.486]))
    noisy = y + rng.normal(0, 0.005, size=len(x))
    fit = fit_gaussians(x, noisy, 1)
    w, werr = fwhm(fit, 0)
    assert w == pytest.approx(3.5, abs=0.05)
    assert werr == pytest.approx(2 * math.sqrt(2 * math.log(2)) * fit.uncertainty("sigma1"),
                                 rel=1e-12)
    with pytest.raises(KeyError):
        fwhm(fit, 3)


def test_gaussian_area_helper():
    x = np.linspace(-10, 10, 200)
    y = gaussian_dips_model(x, np.array([1.0, 0.5, 0.0, 1.0]))
    fit = fit_gaussians(x, y, 1)
    assert gaussian_area(fit, 0) == pytest.approx(0.5 * math.sqrt(2 * math.pi), rel=1e-6)


# ---------------------------------------------------------------------------
# Equivariance invariants
# ---------------------------------------------------------------------------

def test_fit_translation_equivariance():
    x = np.linspace(0, 60, 240)
    p = np.array([1.0, 0.25, 20.0, 2.0, 0.4, 40.0, 3.0])
    y = gaussian_dips_model(x, p)
    fit0 = fit_gaussians(x, y, 2)
    x0 = 17.5
    fit1 = fit_gaussians(x + x0, y, 2)
    assert fit1["mu1"] - fit0["mu1"] == pytest.approx(x0, abs=1e-8)
    assert fit1["mu2"] - fit0["mu2"] == pytest.approx(x0, abs=1e-8)
    assert fit1["sigma1"] == pytest.approx(fit0["sigma1"], abs=1e-8)


def test_fit_scale_equivariance():
    x = np.linspace(0, 60, 240)
    p = np.array([1.0, 0.25, 20.0, 2.0, 0.4, 40.0, 3.0])
    y = gaussian_dips_model(x, p)
    fit0 = fit_gaussians(x, y, 2)
    k = 3.7
    fit1 = fit_gaussians(x, k * y, 2)
    assert fit1["A1"] == pytest.approx(k * fit0["A1"], rel=1e-8)
    assert fit1["A2"] == pytest.approx(k * fit0["A2"], rel=1e-8)
    assert fit1["mu1"] == pytest.approx(fit0["mu1"], abs=1e-8)
    assert fit1["sigma2"] == pytest.approx(fit0["sigma2"], abs=1e-8)
