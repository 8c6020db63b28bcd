"""Mean-field (classical) Kerr resonator.

Replacing the mode operator by its expectation value gives

    d alpha / dt = i (delta - u |alpha|^2) alpha - (gamma/2) alpha - i f,

whose fixed points satisfy the cubic n [(delta - u n)^2 + gamma^2/4] = f^2
in n = |alpha|^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from kerrdpt.errors import ConvergenceError
from kerrdpt.fock import SystemParams

MARGINAL_TOL = 1e-10


@dataclass(frozen=True)
class MeanFieldRoot:
    n: float
    alpha: complex
    stable: bool
    marginal: bool = False
    jacobian_eigenvalues: tuple = ()


@dataclass(frozen=True)
class MeanFieldBranch:
    roots: tuple[MeanFieldRoot, ...]
    params: SystemParams

    def __len__(self):
        return len(self.roots)

    @property
    def densities(self) -> np.ndarray:
        return np.array([r.n for r in self.roots])

    @property
    def bistable(self) -> bool:
        return sum(r.stable for r in self.roots) >= 2


def drive_squared(n, delta: float, u: float, gamma: float = 1.0):
    """f^2 needed to sustain density ``n``."""
    n = np.asarray(n, dtype=float)
    return n * ((delta - u * n) ** 2 + 0.25 * gamma**2)


def flow(alpha: complex, params: SystemParams, f: float | None = None) -> complex:
    f = params.f if f is None else f
    n = abs(alpha) ** 2
    return (1j * (params.delta - params.u * n) - 0.5 * params.gamma) * alpha - 1j * f


def amplitude(n: float, params: SystemParams) -> complex:
    return -1j * params.f / (0.5 * params.gamma - 1j * (params.delta - params.u * n))


def jacobian(alpha: complex, params: SystemParams) -> np.ndarray:
    """2x2 real Jacobian of the flow in (Re alpha, Im alpha)."""
    n = abs(alpha) ** 2
    A = 1j * (params.delta - 2 * params.u * n) - 0.5 * params.gamma
    B = -1j * params.u * alpha**2
    dx = A + B
    dy = 1j * (A - B)
    return np.array([[dx.real, dy.real], [dx.imag, dy.imag]])


def _polish(n: float, coeffs: np.ndarray) -> float:
    # a few Newton steps on the cubic; companion eigenvalues lose digits near folds
    d1 = np.polyder(coeffs)
    for _ in range(3):
        slope = np.polyval(d1, n)
        if slope == 0:
            break
        step = np.polyval(coeffs, n) / slope
        n -= step
        if abs(step) <= 1e-16 * max(1.0, abs(n)):
            break
    return n


def steady_amplitudes(params: SystemParams) -> MeanFieldBranch:
    d, u, g, f = params.delta, params.u, params.gamma, params.f
    if u == 0:
        densities = [f**2 / (d**2 + 0.25 * g**2)]
    else:
        coeffs = np.array([u * u, -2 * d * u, d * d + 0.25 * g * g, -f * f])
        raw = np.roots(coeffs)
        scale = max(1.0, np.max(np.abs(raw)))
        densities = []
        for z in sorted(raw, key=lambda z: z.real):
            if abs(z.imag) > 1e-6 * scale or z.real < -1e-12 * scale:
                continue
            n = max(_polish(float(z.real), coeffs), 0.0)
            if densities and abs(n - densities[-1]) <= 1e-7 * scale:
                continue  # double root at a fold
            densities.append(n)
    roots = []
    for n in densities:
        alpha = amplitude(n, params)
        eig = np.linalg.eigvals(jacobian(alpha, params))
        lead = float(np.max(eig.real))
        marginal = abs(lead) < MARGINAL_TOL
        roots.append(MeanFieldRoot(float(n), complex(alpha), stable=(lead < 0 and not marginal),
                                   marginal=marginal, jacobian_eigenvalues=tuple(eig)))
    return MeanFieldBranch(tuple(roots), params)


def fold_densities(delta: float, u: float, gamma: float = 1.0):
    """Densities where d(f^2)/dn vanishes, or None below threshold."""
    if u == 0:
        return None
    disc = delta**2 - 0.75 * gamma**2
    if disc <= 0 or delta * u <= 0:
        return None
    root = 2.0 * np.sqrt(disc)
    a, b = (4 * delta - root) / (6 * u), (4 * delta + root) / (6 * u)
    return (min(a, b), max(a, b))


def bistable_window(delta: float, u: float, gamma: float = 1.0):
    """Drive interval ``(f_low, f_high)`` with three fixed points, else None.

    Non-empty exactly when ``delta * sign(u) > sqrt(3)/2 * gamma``.
    """
    if u == 0:
        raise ValueError("bistability requires a nonzero interaction")
    folds = fold_densities(delta, u, gamma)
    if folds is None:
        return None
    n_minus, n_plus = folds
    f_high = float(np.sqrt(drive_squared(n_minus, delta, u, gamma)))
    f_low = float(np.sqrt(drive_squared(n_plus, delta, u, gamma)))
    if not f_low < f_high:
        return None
    return f_low, f_high


@dataclass(frozen=True)
class RampTrace:
    t: np.ndarray
    f: np.ndarray
    n: np.ndarray
    rising: np.ndarray  # True on the up-sweep

    def sweep(self, up: bool, cycle: int = 0):
        """(f, n) of one half-cycle, ordered by increasing drive."""
        edges = np.flatnonzero(np.diff(self.rising.astype(int)) != 0) + 1
        segments = np.split(np.arange(self.t.size), edges)
        chosen = [s for s in segments if self.rising[s[0]] == up]
        seg = chosen[cycle]
        order = np.argsort(self.f[seg])
        return self.f[seg][order], self.n[seg][order]

    def branch_difference(self, cycle: int = 0, num: int = 2001) -> float:
        fu, nu = self.sweep(True, cycle)
        fd, nd = self.sweep(False, cycle)
        grid = np.linspace(max(fu[0], fd[0]), min(fu[-1], fd[-1]), num)
        return float(np.max(np.abs(np.interp(grid, fu, nu) - np.interp(grid, fd, nd))))

    def loop_area(self, cycle: int = 0) -> float:
        """Area between the down- and up-sweep in the (f, n) plane."""
        fu, nu = self.sweep(True, cycle)
        fd, nd = self.sweep(False, cycle)
        return float(np.trapezoid(nd, fd) - np.trapezoid(nu, fu))

    def jump_drive(self, up: bool, cycle: int = 0) -> float:
        """Drive of steepest change in n along one sweep."""
        f, n = self.sweep(up, cycle)
        slope = np.abs(np.diff(n) / np.diff(f))
        i = int(np.argmax(slope))
        return float(0.5 * (f[i] + f[i + 1]))


def _rhs(params: SystemParams, f_of_t):
    d, u, hg = params.delta, params.u, 0.5 * params.gamma

    def rhs(t, y):
        x, q = y
        n = x * x + q * q
        w = d - u * n
        f = f_of_t(t)
        # i w (x + i q) - hg (x + i q) - i f
        return [-w * q - hg * x, w * x - hg * q - f]

    return rhs


def hysteresis_ramp(params: SystemParams, f_max: float, duration: float, *, f_min: float = 0.0,
                    cycles: int = 1, samples_per_sweep: int = 2000, rtol: float = 1e-9,
                    alpha0: complex = 0j, max_step: float = np.inf) -> RampTrace:
    """Integrate the mean-field flow under a triangular drive ramp.

    Each cycle rises from ``f_min`` to ``f_max`` and falls back, taking
    ``duration`` per cycle; ``params.f`` is ignored. Half-sweeps are
    integrated separately so the error control never straddles a kink.
    """
    if duration <= 0 or f_max < f_min:
        raise ValueError("ramp needs a positive duration and f_max >= f_min")
    half = 0.5 * duration
    rate = (f_max - f_min) / half
    y = [alpha0.real, alpha0.imag]
    ts, fs, ns, up = [], [], [], []
    for k in range(2 * cycles):
        t0 = k * half
        rising = k % 2 == 0
        if rising:
            f_of_t = lambda t, t0=t0: f_min + rate * (t - t0)
        else:
            f_of_t = lambda t, t0=t0: f_max - rate * (t - t0)
        t_eval = np.linspace(t0, t0 + half, samples_per_sweep)
        sol = solve_ivp(_rhs(params, f_of_t), (t0, t0 + half), y, method="DOP853",
                        t_eval=t_eval, rtol=rtol, atol=rtol * 1e-3, max_step=max_step)
        if not sol.success:
            raise ConvergenceError(f"ramp integration failed: {sol.message}")
        y = sol.y[:, -1]
        sl = slice(0, None) if k == 0 else slice(1, None)
        ts.append(sol.t[sl])
        fs.append(np.array([f_of_t(t) for t in sol.t[sl]]))
        ns.append((sol.y[0] ** 2 + sol.y[1] ** 2)[sl])
        up.append(np.full(sol.t[sl].size, rising))
    return RampTrace(np.concatenate(ts), np.concatenate(fs), np.concatenate(ns), np.concatenate(up))


def relax(params: SystemParams, alpha0: complex, duration: float, rtol: float = 1e-9) -> complex:
    """Amplitude after free evolution at constant drive."""
    sol = solve_ivp(_rhs(params, lambda t: params.f), (0.0, duration), [alpha0.real, alpha0.imag],
                    method="DOP853", rtol=rtol, atol=1e-12)
    if not sol.success:
        raise ConvergenceError(sol.message)
    return complex(sol.y[0, -1], sol.y[1, -1])
