import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kerrdpt.correlations import CorrelationCurve, default_delays, g2_curve
from kerrdpt.errors import InsufficientDataError
from kerrdpt.fitting import (BunchingRegressor, FitResult, LorentzianRegressor, bunching_model,
                             critical_drive, fit_bunching, fit_gap_scaling, fit_lorentzian,
                             fit_quadratic, lorentzian)
from kerrdpt.fock import FockSpace, SystemParams
from kerrdpt.liouvillian import build, spectrum

NS = 1e-9


def bunching_curve(A, tau, irf, t, noise=None, rng=None):
    y = bunching_model(t, A, tau, irf)
    err = None
    if noise is not None:
        y = y + rng.normal(0, noise, t.size)
        err = np.full(t.size, noise)
    return CorrelationCurve(t, y, "G2", err)


def test_bunching_recovery_with_irf():
    t = np.linspace(-200, 200, 801) * NS
    r = fit_bunching(bunching_curve(1.31, 40 * NS, 64e-12, t), 64e-12)
    assert r.params["A"] == pytest.approx(1.31, rel=1e-6)
    assert r.params["tau"] == pytest.approx(40 * NS, rel=1e-6)
    assert r.converged and r.publishable


def test_bunching_irf_comparable_to_tau():
    t = np.linspace(-3, 3, 601)
    r = fit_bunching(bunching_curve(0.8, 0.3, 0.5, t), 0.5)
    assert r.params["tau"] == pytest.approx(0.3, rel=1e-6)


def test_bunching_model_limits():
    t = np.linspace(-5, 5, 101)
    assert np.allclose(bunching_model(t, 0.5, 1.0), 1 + 0.5 * np.exp(-np.abs(t)), atol=1e-15)
    narrow = bunching_model(t, 0.5, 1.0, 1e-7)
    assert np.max(np.abs(narrow - bunching_model(t, 0.5, 1.0))) < 1e-6
    # area is preserved by the convolution
    fine = np.linspace(-40, 40, 80001)
    assert np.trapezoid(bunching_model(fine, 0.5, 1.0, 2.0) - 1, fine) == pytest.approx(1.0, rel=1e-6)
    assert np.all(np.isfinite(bunching_model(np.array([-1e4, 0, 1e4]), 1.0, 1e-3, 1.0)))


def test_irf_to_zero_is_continuous(rng):
    t = np.linspace(0, 10, 201)
    c = bunching_curve(0.4, 1.5, 0.0, t, noise=1e-3, rng=rng)
    a = fit_bunching(c, 0.0)
    b = fit_bunching(c, a.params["tau"] / 1e6)
    for k in ("A", "tau"):
        assert b.params[k] == pytest.approx(a.params[k], rel=1e-6)


def test_pure_exponential_exact():
    t = np.linspace(0, 20, 200)
    r = fit_bunching(CorrelationCurve(t, 1 + 0.7 * np.exp(-t / 3.0)))
    assert r.params["A"] == pytest.approx(0.7, rel=1e-9)
    assert r.params["tau"] == pytest.approx(3.0, rel=1e-9)


def test_biexponential_reduces_to_single():
    t = np.linspace(0, 20, 200)
    c = CorrelationCurve(t, 1 + 0.7 * np.exp(-t / 3.0))
    single = fit_bunching(c)
    reduced = fit_bunching(c, biexponential=True, fix_amplitude2=0.0)
    assert reduced.params["tau"] == pytest.approx(single.params["tau"], rel=1e-12)


def test_biexponential_recovery():
    t = np.concatenate([[0], np.geomspace(0.01, 100, 300)])
    y = 1 + 0.3 * np.exp(-t / 0.5) + 0.2 * np.exp(-t / 10.0)
    r = fit_bunching(CorrelationCurve(t, y), biexponential=True)
    taus = sorted([r.params["tau"], r.params["tau2"]])
    assert taus == pytest.approx([0.5, 10.0], rel=1e-5)


def test_bunching_unresolved_flag():
    t = np.linspace(0, 10, 11)
    r = fit_bunching(CorrelationCurve(t, 1 + 0.5 * np.exp(-t / 0.2)))
    assert "unresolved" in r.flags and not r.publishable


def test_bunching_needs_points():
    with pytest.raises(InsufficientDataError):
        fit_bunching(CorrelationCurve(np.arange(5.0), np.ones(5)))
    with pytest.raises(ValueError):
        fit_bunching(CorrelationCurve(np.arange(20.0), np.ones(20)), -1.0)


def test_bunching_of_regression_curve_near_threshold():
    p, s = SystemParams(1.0, 0.2, 1.17), FockSpace(30)
    adr = spectrum(build(p, s), k=2).adr
    r = fit_bunching(g2_curve(p, s, default_delays(adr)), t_min=2.0)
    assert r.params["tau"] == pytest.approx(1 / adr, rel=0.05)


def test_lorentzian_recovery():
    x = np.linspace(-200, 200, 401)
    r = fit_lorentzian(x, lorentzian(x, 3.0, 37.0, 0.8, 0.1))
    assert r.params["fwhm"] == pytest.approx(37.0, rel=1e-6)
    assert r.params["center"] == pytest.approx(3.0, abs=1e-6)


def test_lorentzian_dip():
    x = np.linspace(-100, 100, 201)
    r = fit_lorentzian(x, lorentzian(x, -5.0, -20.0, -0.5, 1.0))
    assert r.params["fwhm"] == pytest.approx(20.0, rel=1e-6)
    assert r.params["amplitude"] == pytest.approx(-0.5, rel=1e-6)


def test_lorentzian_flat_is_degenerate():
    r = fit_lorentzian(np.linspace(0, 1, 20), np.full(20, 0.3))
    assert r.params["amplitude"] == 0 and "degenerate" in r.flags and not r.publishable


def test_lorentzian_needs_points():
    with pytest.raises(InsufficientDataError):
        fit_lorentzian([0, 1, 2, 3], [0, 1, 1, 0])


def test_lorentzian_noise_within_three_sigma(rng):
    x = np.linspace(-150, 150, 121)
    truth = lorentzian(x, 0.0, 37.0, 1.0, 0.0)
    hits = 0
    for _ in range(100):
        r = fit_lorentzian(x, truth + rng.normal(0, 0.01, x.size), np.full(x.size, 0.01))
        hits += abs(r.params["fwhm"] - 37.0) < 3 * r.sigmas["fwhm"]
    assert hits >= 97


def _coverage(fit, truth, draws, rng):
    inside = {k: 0 for k in truth}
    for _ in range(draws):
        r = fit(rng)
        for k, v in truth.items():
            inside[k] += abs(r.params[k] - v) <= r.sigmas[k]
    return {k: v / draws for k, v in inside.items()}


def test_bunching_uncertainty_calibration(rng):
    t = np.linspace(-150, 150, 301) * NS
    fit = lambda g: fit_bunching(bunching_curve(1.31, 40 * NS, 64e-12, t, 0.05, g), 64e-12)
    cov = _coverage(fit, {"A": 1.31, "tau": 40 * NS}, 200, rng)
    assert all(0.60 <= c <= 0.76 for c in cov.values()), cov


def test_lorentzian_uncertainty_calibration(rng):
    x = np.linspace(-150, 150, 121)
    truth = lorentzian(x, 0.0, 37.0, 1.0, 0.0)
    fit = lambda g: fit_lorentzian(x, truth + g.normal(0, 0.02, x.size))
    cov = _coverage(fit, {"center": 0.0, "fwhm": 37.0, "amplitude": 1.0, "offset": 0.0}, 200, rng)
    assert all(0.60 <= c <= 0.76 for c in cov.values()), cov


@given(st.floats(-2.5, -0.3), st.floats(-1, 3))
def test_gap_power_law_exact(alpha, logc):
    f_c = 1.2
    f = np.linspace(0.8, 1.14, 12)
    tau = np.exp(logc) * np.abs(f / f_c - 1) ** alpha
    r = fit_gap_scaling(f, tau, f_c, (-0.35, -0.04))
    assert r.params["exponent"] == pytest.approx(alpha, abs=1e-6)
    assert r.window == (-0.35, -0.04)


def test_gap_exponential_exact():
    f_c = 1.0
    f = np.linspace(1.05, 1.3, 8)
    tau = 2.0 * np.exp(3.0 * np.abs(f - 1))
    r = fit_gap_scaling(f, tau, f_c, (0.04, 0.31), model="exponential")
    assert r.params["rate"] == pytest.approx(3.0, abs=1e-9)


def test_gap_scaling_errors():
    f = np.linspace(0.8, 1.2, 9)
    with pytest.raises(ValueError):
        fit_gap_scaling(f, np.ones(9), 1.0, (-0.1, 0.1))
    with pytest.raises(InsufficientDataError):
        fit_gap_scaling(f, np.ones(9), 1.0, (-0.06, -0.04))
    with pytest.raises(ValueError):
        fit_gap_scaling(f, np.ones(9), 1.0, (-0.3, -0.05), model="stretched")


def test_quadratic_exact_and_interpolating():
    x = np.array([0.2, 0.4, 0.8, 1.0])
    r = fit_quadratic(x, 1 - 2 * x + 0.5 * x**2)
    assert [r.params[k] for k in ("c0", "c1", "c2")] == pytest.approx([1, -2, 0.5], abs=1e-12)
    r3 = fit_quadratic(x[:3], [3.0, -1.0, 2.0])
    c = [r3.params[k] for k in ("c0", "c1", "c2")]
    assert np.allclose(np.polyval(c[::-1], x[:3]), [3.0, -1.0, 2.0], atol=1e-12)


def test_quadratic_monte_carlo(rng):
    x = np.linspace(0, 1, 8)
    sig = np.full(8, 0.05)
    truth = np.array([0.1, -0.3, -0.4])
    bad = 0
    for _ in range(100):
        y = truth[0] + truth[1] * x + truth[2] * x**2 + rng.normal(0, 0.05, 8)
        r = fit_quadratic(x, y, sig)
        est = np.array([r.params[k] for k in ("c0", "c1", "c2")])
        err = np.array([r.sigmas[k] for k in ("c0", "c1", "c2")])
        bad += np.any(np.abs(est - truth) > 3 * err)
    assert bad <= 3


def test_critical_drive_examples():
    f = np.linspace(2, 4, 11)
    assert float(critical_drive(f, 5 - (f - 3.0) ** 2)) == pytest.approx(3.0, abs=1e-12)
    mono = critical_drive(f, f)
    assert mono.at_edge and mono.f_c == 4.0
    with pytest.raises(InsufficientDataError):
        critical_drive([1, 2], [1, 2])


def test_critical_drive_refines_gap_minimum():
    p0, s = SystemParams(1.0, 0.2, 0), FockSpace(25)
    life = lambda f: 1 / spectrum(build(p0.with_drive(f), s), k=2).adr
    coarse = np.linspace(0.9, 1.5, 7)
    est = critical_drive(coarse, [life(f) for f in coarse])
    dense = np.linspace(1.05, 1.30, 26)
    best = dense[np.argmax([life(f) for f in dense])]
    assert not est.at_edge
    assert abs(est.f_c - best) < coarse[1] - coarse[0]


def test_fit_result_contract():
    with pytest.raises(ValueError):
        FitResult("x", {"a": 1.0}, {"a": -1.0}, 0.0, True)
    r = FitResult("x", {"a": 1.0}, {"a": 0.1}, 0.5, False)
    assert not r.publishable
    d = json.loads(r.to_json())
    assert set(d) >= {"model", "params", "sigmas", "residual", "converged", "window"}
    assert r["a"] == 1.0


def test_estimators():
    x = np.linspace(-100, 100, 201)
    y = lorentzian(x, 1.0, 37.0, 2.0, 0.0)
    est = LorentzianRegressor().fit(x[:, None], y)
    assert est.score(x[:, None], y) == pytest.approx(1.0)
    b = BunchingRegressor(irf_fwhm=0.0)
    assert b.get_params() == {"irf_fwhm": 0.0, "biexponential": False}
    t = np.linspace(0, 10, 50)
    b.fit(t[:, None], 1 + 0.5 * np.exp(-t / 2))
    assert b.params_["tau"] == pytest.approx(2.0, rel=1e-8)
    assert np.allclose(b.predict(t[:, None]), 1 + 0.5 * np.exp(-t / 2))
