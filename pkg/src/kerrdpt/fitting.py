"""Least-squares models for spectra, bunching curves and gap scaling.

Nonlinear fits use Levenberg-Marquardt (MINPACK via scipy) with
finite-difference Jacobians. Uncertainties come from the inverse of
``J^T W J``: taken as absolute when per-point errors are supplied,
rescaled by the reduced chi-square otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.special import erfc, erfcx
from sklearn.base import BaseEstimator, RegressorMixin

from kerrdpt.correlations import CorrelationCurve
from kerrdpt.errors import ConvergenceError, InsufficientDataError, KerrError

MAX_ITER = 500
XTOL = 1e-10
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


class SingularFitError(KerrError, np.linalg.LinAlgError):
    """Normal equations are singular (degenerate abscissae)."""


@dataclass(frozen=True)
class FitResult:
    model: str
    params: dict
    sigmas: dict
    residual: float
    converged: bool
    flags: tuple = ()
    window: tuple | None = None
    covariance: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for k, s in self.sigmas.items():
            if not (s >= 0):  # also rejects NaN
                raise ValueError(f"uncertainty for {k} must be >= 0, got {s}")

    @property
    def publishable(self) -> bool:
        return self.converged and not {"degenerate", "unresolved", "edge"} & set(self.flags)

    def __getitem__(self, key):
        return self.params[key]

    def to_dict(self) -> dict:
        return {"model": self.model, "params": dict(self.params), "sigmas": dict(self.sigmas),
                "residual": self.residual, "converged": self.converged,
                "publishable": self.publishable, "flags": list(self.flags),
                "window": list(self.window) if self.window is not None else None}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), allow_nan=True, **kw)


def _covariance(jac: np.ndarray, resid: np.ndarray, absolute: bool) -> np.ndarray:
    # jac and resid are already weighted
    _, s, vt = np.linalg.svd(jac, full_matrices=False)
    thresh = np.finfo(float).eps * max(jac.shape) * (s[0] if s.size else 0.0)
    if s.size == 0 or np.any(s <= thresh):
        return np.full((jac.shape[1],) * 2, np.inf)
    cov = (vt.T / s**2) @ vt
    if not absolute:
        dof = jac.shape[0] - jac.shape[1]
        cov = cov * (resid @ resid / dof) if dof > 0 else np.full_like(cov, np.inf)
    return cov


def _lm(fun, p0, weights, y, absolute):
    def resid(p):
        return (fun(p) - y) * weights

    sol = least_squares(resid, p0, method="lm", xtol=XTOL, ftol=XTOL, gtol=XTOL,
                        max_nfev=MAX_ITER * (len(p0) + 1))
    converged = bool(sol.success and np.all(np.isfinite(sol.x)))
    cov = _covariance(sol.jac, sol.fun, absolute)
    return sol, converged, cov


def _weights(y, sigma):
    if sigma is None:
        return np.ones_like(y), False
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != y.shape or np.any(sigma <= 0):
        raise ValueError("sigma must be positive and match the data")
    return 1.0 / sigma, True


# ---------------------------------------------------------------- Lorentzian

def lorentzian(x, center, fwhm, amplitude, offset):
    u = (np.asarray(x, dtype=float) - center) / (0.5 * fwhm)
    return offset + amplitude / (1.0 + u * u)


def fit_lorentzian(x, y, sigma=None) -> FitResult:
    """Peak (or dip) Lorentzian with free centre, FWHM, amplitude, offset."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 5:
        raise InsufficientDataError("a Lorentzian fit needs at least 5 points")
    names = ("center", "fwhm", "amplitude", "offset")
    span = float(np.ptp(y))
    if span <= 1e-14 * max(1.0, float(np.max(np.abs(y)))):
        params = dict(zip(names, (float(np.mean(x)), math.nan, 0.0, float(np.mean(y)))))
        return FitResult("lorentzian", params, dict.fromkeys(names, math.inf), 0.0, True, ("degenerate",))
    w, absolute = _weights(y, sigma)
    base = float(np.median(y))
    i = int(np.argmax(np.abs(y - base)))
    amp0 = y[i] - base
    half = np.abs(y - base) >= 0.5 * abs(amp0)
    width0 = max(float(np.ptp(x[half])), float(np.min(np.diff(np.sort(x)))))
    p0 = np.array([x[i], width0, amp0, base])
    sol, converged, cov = _lm(lambda p: lorentzian(x, *p), p0, w, y, absolute)
    p = sol.x.copy()
    p[1] = abs(p[1])
    sig = np.sqrt(np.diag(cov))
    flags = []
    if not np.isfinite(sig[2]) or abs(p[2]) <= sig[2]:
        flags.append("degenerate")
    return FitResult("lorentzian", dict(zip(names, map(float, p))), dict(zip(names, map(float, sig))),
                     float(np.linalg.norm(sol.fun)), converged, tuple(flags), covariance=cov)


# ----------------------------------------------------------------- bunching

def _two_sided_gauss(t, tau, sigma):
    """exp(-|t|/tau) convolved with a unit-area Gaussian of width sigma."""
    t = np.asarray(t, dtype=float)
    if sigma == 0:
        return np.exp(-np.abs(t) / tau)
    r = sigma / tau
    out = np.zeros_like(t)
    for sign in (1.0, -1.0):
        s = sign * t
        x = (r - s / sigma) / math.sqrt(2.0)
        # exp(r^2/2 - s/tau) erfc(x) == exp(-s^2 / 2 sigma^2) erfcx(x)
        with np.errstate(over="ignore", under="ignore"):
            term = np.where(x > 0, np.exp(-0.5 * (s / sigma) ** 2) * erfcx(np.maximum(x, 0)),
                            np.exp(0.5 * r * r - s / tau) * erfc(np.minimum(x, 0)))
        out += term
    return 0.5 * out


def bunching_model(t, amplitude, tau, irf_fwhm=0.0, amplitude2=0.0, tau2=None):
    """``1 + A exp(-|t|/tau) [+ A2 exp(-|t|/tau2)]`` convolved with a Gaussian IRF."""
    sigma = irf_fwhm * FWHM_TO_SIGMA
    out = 1.0 + amplitude * _two_sided_gauss(t, tau, sigma)
    if amplitude2 != 0.0:
        out = out + amplitude2 * _two_sided_gauss(t, tau2, sigma)
    return out


def _tau_seeds(t, dev):
    seeds = []
    pos = t > 0
    if dev[0] > 0:
        below = np.flatnonzero(dev < dev[0] / math.e)
        if below.size:
            seeds.append(max(float(t[below[0]]), 1e-300))
    m = pos & (dev > 0)
    if m.sum() >= 2:
        slope = np.polyfit(t[m], np.log(dev[m]), 1)[0]
        if slope < 0:
            seeds.append(-1.0 / slope)
    tp = t[pos]
    if tp.size:
        seeds.append(float(np.sqrt(tp.min() * tp.max())))
    return seeds[:3] if seeds else [1.0]


def fit_bunching(curve: CorrelationCurve, irf_fwhm: float = 0.0, *, biexponential: bool = False,
                 fix_amplitude2: float | None = None, t_min: float = 0.0) -> FitResult:
    """Fit ``g2(t) = 1 + A exp(-|t|/tau)`` convolved with a Gaussian IRF.

    ``irf_fwhm`` is in the same units as ``curve.delays`` (0 disables the
    convolution). Curve errors, when present, weight the fit. Three seeds
    for ``tau`` are tried and the lowest cost kept. With ``biexponential``
    a second term ``A2 exp(-|t|/tau2)`` is added; ``fix_amplitude2`` pins
    ``A2`` (0 reproduces the single-exponential fit). Points with
    ``|t| < t_min`` are excluded, which isolates the slowest decay when
    faster transients are present near zero delay.
    """
    keep = np.abs(curve.delays) >= t_min
    t = curve.delays[keep]
    y = curve.values[keep]
    errors = None if curve.errors is None else curve.errors[keep]
    if t.size < 10:
        raise InsufficientDataError("a bunching fit needs at least 10 points")
    if irf_fwhm < 0:
        raise ValueError("irf_fwhm must be >= 0")
    w, absolute = _weights(y, errors)
    dev = y - 1.0
    order = np.argsort(np.abs(t))
    A0 = float(dev[order[0]]) or 1e-3
    two = biexponential and fix_amplitude2 != 0.0

    def unpack(q):
        A, ltau = q[0], q[1]
        if not two:
            return A, math.exp(min(ltau, 700.0)), 0.0, None
        A2 = fix_amplitude2 if fix_amplitude2 is not None else q[2]
        return A, math.exp(min(ltau, 700.0)), A2, math.exp(min(q[-1], 700.0))

    def fun(q):
        A, tau, A2, tau2 = unpack(q)
        return bunching_model(t, A, tau, irf_fwhm, A2, tau2)

    best = None
    for tau0 in _tau_seeds(np.abs(t[order]), np.abs(dev[order])):
        if two:
            q0 = [A0 / 2, math.log(tau0 / 5)] + ([] if fix_amplitude2 is not None else [A0 / 2]) \
                 + [math.log(tau0 * 5)]
        else:
            q0 = [A0, math.log(tau0)]
        try:
            cand = _lm(fun, np.array(q0), w, y, absolute)
        except (ValueError, FloatingPointError, OverflowError):
            continue
        if best is None or cand[0].cost < best[0].cost:
            best = cand
    if best is None:
        raise ConvergenceError("bunching fit failed from every seed")
    sol, converged, cov = best
    A, tau, A2, tau2 = unpack(sol.x)
    # delta method: d tau = tau d(log tau)
    scale = np.ones(sol.x.size)
    scale[1] = tau
    if two:
        scale[-1] = tau2
    cov = cov * np.outer(scale, scale) if np.all(np.isfinite(cov)) else cov
    sig = np.sqrt(np.abs(np.diag(cov)))
    params = {"A": float(A), "tau": float(tau)}
    sigmas = {"A": float(sig[0]), "tau": float(sig[1])}
    model = "bunching"
    if two:
        model = "bunching_biexp"
        params.update(A2=float(A2), tau2=float(tau2))
        sigmas.update(A2=0.0 if fix_amplitude2 is not None else float(sig[2]), tau2=float(sig[-1]))
    flags = []
    tp = np.diff(np.unique(np.abs(t)))
    if tp.size and tau < tp.min():
        flags.append("unresolved")
    return FitResult(model, params, sigmas, float(np.linalg.norm(sol.fun)), converged, tuple(flags),
                     covariance=cov)


# ------------------------------------------------------------- linear fits

def _wls(X, y, sigma):
    w, absolute = _weights(y, sigma)
    Xw = X * w[:, None]
    yw = y * w
    normal = Xw.T @ Xw
    if np.linalg.cond(normal) > 1e14:
        raise SingularFitError("normal equations are singular")
    coef = np.linalg.solve(normal, Xw.T @ yw)
    r = yw - Xw @ coef
    cov = np.linalg.inv(normal)
    if not absolute:
        dof = X.shape[0] - X.shape[1]
        cov = cov * (r @ r / dof) if dof > 0 else np.full_like(cov, np.inf)
    return coef, cov, r


def fit_quadratic(x, y, sigma=None) -> FitResult:
    """Weighted least-squares parabola ``c0 + c1 x + c2 x^2`` (closed form)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3 or x.shape != y.shape:
        raise InsufficientDataError("a quadratic fit needs at least 3 points")
    X = np.vander(x, 3, increasing=True)
    coef, cov, r = _wls(X, y, sigma)
    names = ("c0", "c1", "c2")
    return FitResult("quadratic", dict(zip(names, map(float, coef))),
                     dict(zip(names, map(float, np.sqrt(np.diag(cov))))), float(np.linalg.norm(r)), True,
                     covariance=cov)


def reduced_drive(f, f_c):
    return np.asarray(f, dtype=float) / f_c - 1.0


def fit_gap_scaling(f, tau, f_c: float, window: tuple[float, float], model: str = "power_law",
                    sigma=None) -> FitResult:
    """Scaling of a lifetime ``tau`` with the reduced drive ``eps = F/F_C - 1``.

    Only points with ``window[0] <= eps <= window[1]`` are used; the window
    must lie on one side of ``eps = 0``. ``power_law`` fits
    ``log tau = b + alpha log|eps|`` and reports the literal slope
    ``exponent`` (negative when tau grows toward F_C); ``exponential`` fits
    ``log tau = b + k |eps|`` and reports ``rate = k``. ``sigma`` are
    errors on ``tau``, entering as inverse variances of ``log tau``.
    """
    lo, hi = window
    if not lo < hi:
        raise ValueError("window must satisfy lo < hi")
    if lo <= 0 <= hi:
        raise ValueError("window contains the critical drive (eps = 0)")
    eps = reduced_drive(f, f_c)
    tau = np.asarray(tau, dtype=float)
    mask = (eps >= lo) & (eps <= hi)
    if mask.sum() < 4:
        raise InsufficientDataError(f"gap-scaling fit needs at least 4 points in {window}, got {mask.sum()}")
    if np.any(tau[mask] <= 0):
        raise ValueError("lifetimes must be positive")
    x = np.abs(eps[mask])
    yl = np.log(tau[mask])
    s = None if sigma is None else np.asarray(sigma, dtype=float)[mask] / tau[mask]
    if model == "power_law":
        X = np.column_stack([np.ones_like(x), np.log(x)])
        names = ("log_prefactor", "exponent")
    elif model == "exponential":
        X = np.column_stack([np.ones_like(x), x])
        names = ("log_prefactor", "rate")
    else:
        raise ValueError(f"unknown scaling model {model!r}")
    coef, cov, r = _wls(X, yl, s)
    return FitResult(model, dict(zip(names, map(float, coef))),
                     dict(zip(names, map(float, np.sqrt(np.diag(cov))))), float(np.linalg.norm(r)), True,
                     window=(float(lo), float(hi)), covariance=cov)


@dataclass(frozen=True)
class CriticalDrive:
    f_c: float
    at_edge: bool
    curvature: float

    def __float__(self):
        return self.f_c


def critical_drive(f, tau) -> CriticalDrive:
    """Sub-grid location of the lifetime maximum.

    A parabola is passed through the three largest-``tau`` points; its
    vertex is the estimate. ``at_edge`` is set when the largest ``tau`` is
    an end point of the grid or the parabola has no interior maximum, in
    which case the grid argmax is returned.
    """
    f = np.asarray(f, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if f.size < 3 or f.shape != tau.shape:
        raise InsufficientDataError("critical_drive needs at least 3 points")
    order = np.argsort(f)
    f, tau = f[order], tau[order]
    i = int(np.argmax(tau))
    top = np.sort(np.argsort(tau)[-3:])
    c = np.polyfit(f[top], tau[top], 2)
    vertex = -c[1] / (2 * c[0]) if c[0] < 0 else math.nan
    if i in (0, f.size - 1) or not (f[top[0]] <= vertex <= f[top[-1]]):
        return CriticalDrive(float(f[i]), True, float(c[0]))
    return CriticalDrive(float(vertex), False, float(c[0]))


# ------------------------------------------------------ estimator wrappers

class LorentzianRegressor(RegressorMixin, BaseEstimator):
    """Estimator interface to :func:`fit_lorentzian` (X is the detuning)."""

    def fit(self, X, y, sample_sigma=None):
        self.result_ = fit_lorentzian(np.ravel(X), y, sample_sigma)
        self.params_ = self.result_.params
        return self

    def predict(self, X):
        p = self.params_
        return lorentzian(np.ravel(X), p["center"], p["fwhm"], p["amplitude"], p["offset"])


class BunchingRegressor(RegressorMixin, BaseEstimator):
    """Estimator interface to :func:`fit_bunching` (X is the delay)."""

    def __init__(self, irf_fwhm=0.0, biexponential=False):
        self.irf_fwhm = irf_fwhm
        self.biexponential = biexponential

    def fit(self, X, y, sample_sigma=None):
        t = np.ravel(X)
        order = np.argsort(t)
        err = None if sample_sigma is None else np.asarray(sample_sigma)[order]
        curve = CorrelationCurve(t[order], np.asarray(y)[order], "G2", err)
        self.result_ = fit_bunching(curve, self.irf_fwhm, biexponential=self.biexponential)
        self.params_ = self.result_.params
        return self

    def predict(self, X):
        p = self.params_
        return bunching_model(np.ravel(X), p["A"], p["tau"], self.irf_fwhm, p.get("A2", 0.0), p.get("tau2"))
