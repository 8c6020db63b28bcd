"""Photon correlations from the quantum regression theorem.

For a stationary state rho_ss,

    G2(t) = Tr[a^dag a  exp(L t)(a rho_ss a^dag)]
    G1(t) = Tr[a        exp(L t)(rho_ss a^dag)]

normalized by n^2 and n respectively. Only t >= 0 is computed; g2 is even
in t. The conditioned matrices are propagated without renormalization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from kerrdpt.errors import ConvergenceError, UndefinedCorrelationError
from kerrdpt.krylov import expv
from kerrdpt.fock import FockSpace, QuantumState, SystemParams, annihilation, expectation
from kerrdpt.liouvillian import Superoperator, build, spectrum, steady_state

KINDS = ("G2", "G1", "G2Classical")
EMPTY_MODE = 1e-12


@dataclass(frozen=True)
class CorrelationCurve:
    """Sampled correlation function.

    ``delays`` are in model units (1/gamma) unless ``time_unit_s`` gives
    the number of seconds per delay unit. ``baseline`` is the long-delay
    limit (1 for g2, |<a>|^2/n for g1).
    """

    delays: np.ndarray
    values: np.ndarray
    kind: str = "G2"
    errors: np.ndarray | None = None
    baseline: float = 1.0
    complex_values: np.ndarray | None = field(default=None, repr=False)
    time_unit_s: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        delays = np.asarray(self.delays, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if delays.shape != values.shape or delays.ndim != 1:
            raise ValueError("delays and values must be 1-D arrays of equal length")
        if delays.size > 1 and np.any(np.diff(delays) <= 0):
            raise ValueError("delays must be strictly increasing")
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "values", values)
        if self.errors is not None:
            errors = np.asarray(self.errors, dtype=float)
            if errors.shape != values.shape:
                raise ValueError("errors must match values")
            object.__setattr__(self, "errors", errors)

    def __len__(self):
        return self.delays.size

    def delays_s(self, time_unit_s: float | None = None) -> np.ndarray:
        scale = self.time_unit_s if time_unit_s is None else time_unit_s
        if scale is None:
            raise ValueError("curve has no physical time unit; pass time_unit_s")
        return self.delays * scale

    def in_model_units(self, time_unit_s: float) -> "CorrelationCurve":
        """Rescale delays given in seconds back to units of 1/gamma."""
        if self.time_unit_s is None:
            return self
        factor = self.time_unit_s / time_unit_s
        return CorrelationCurve(self.delays * factor, self.values, self.kind, self.errors,
                                self.baseline, self.complex_values, None)

    def to_csv(self, path, time_unit_s: float | None = None) -> None:
        delays = self.delays_s(time_unit_s)
        errors = self.errors if self.errors is not None else np.zeros_like(self.values)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delay_s", "value", "error"])
            for row in zip(delays, self.values, errors):
                w.writerow([f"{x:.17g}" for x in row])

    @classmethod
    def from_csv(cls, path, kind: str = "G2") -> "CorrelationCurve":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], kind, data[:, 2], time_unit_s=1.0)


def g2_zero(state: QuantumState) -> float:
    """Equal-time ``<a^dag a^dag a a> / <a^dag a>^2``."""
    a = annihilation(state.space)
    ad = a.T.conj()
    n = expectation(ad @ a, state).real
    if n <= EMPTY_MODE:
        raise UndefinedCorrelationError(f"g2(0) undefined for mean photon number {n:.3e}")
    return expectation(ad @ ad @ a @ a, state).real / n**2


def default_delays(adr: float, gamma: float = 1.0, num: int = 200, span: float = 50.0) -> np.ndarray:
    """Zero followed by a geometric grid from 1e-2/gamma to ``span``/adr."""
    stop = span / adr
    start = 1e-2 / gamma
    if stop <= start:
        stop = 10 * start
    return np.concatenate([[0.0], np.geomspace(start, stop, num - 1)])


def propagate(liouv: Superoperator, vec, t: float, rtol: float = 1e-8,
              method: str = "krylov", anorm: float | None = None) -> np.ndarray:
    """``exp(L t) vec`` for a vectorized matrix (or a stack of columns).

    ``method="krylov"`` uses adaptive Arnoldi projection with relative
    tolerance ``rtol``; ``method="expm"`` defers to scipy's truncated-Taylor
    ``expm_multiply`` (slower on long times, kept as a cross-check).
    """
    if t < 0:
        raise ValueError("propagation time must be non-negative")
    vec = np.asarray(vec, dtype=complex)
    if t == 0:
        return vec.copy()
    if method == "krylov":
        A = liouv.matrix
        if anorm is None:
            anorm = float(spla.norm(A, np.inf))
        if vec.ndim == 1:
            out = expv(t, A, vec, rtol=rtol, anorm=anorm)
        else:
            out = np.column_stack([expv(t, A, vec[:, j], rtol=rtol, anorm=anorm)
                                   for j in range(vec.shape[1])])
    elif method == "expm":
        out = spla.expm_multiply(liouv.matrix * t, vec)
    else:
        raise ValueError(f"unknown propagation method {method!r}")
    if not np.all(np.isfinite(out)):
        raise ConvergenceError(f"propagation to t={t:g} produced non-finite values")
    return out


def _evolve(liouv: Superoperator, columns: np.ndarray, delays, rtol: float = 1e-8) -> np.ndarray:
    """States at every delay, stepping sequentially; shape (len, dim, m)."""
    delays = np.asarray(delays, dtype=float)
    if delays.ndim != 1 or np.any(delays < 0):
        raise ValueError("delays must be a 1-D array of non-negative times")
    if delays.size > 1 and np.any(np.diff(delays) <= 0):
        raise ValueError("delays must be strictly increasing")
    anorm = float(spla.norm(liouv.matrix, np.inf))
    out = np.empty((delays.size,) + columns.shape, dtype=complex)
    x = columns
    t_prev = 0.0
    for i, t in enumerate(delays):
        x = propagate(liouv, x, t - t_prev, rtol=rtol, anorm=anorm)
        out[i] = x
        t_prev = t
    return out


def _prepare(params, space, state, liouv):
    if liouv is None:
        liouv = build(params, space)
    if state is None:
        state = steady_state(liouv)
    return liouv, state


def _resolve_delays(delays, liouv):
    if delays is None:
        delays = default_delays(spectrum(liouv, k=2).adr, liouv.params.gamma)
    return np.asarray(delays, dtype=float)


def correlation_pair(params: SystemParams, space: FockSpace, delays=None, *,
                     state: QuantumState | None = None, liouv: Superoperator | None = None):
    """Compute g2 and g1 curves sharing one sequential propagation."""
    liouv, state = _prepare(params, space, state, liouv)
    delays = _resolve_delays(delays, liouv)
    a = annihilation(space).toarray()
    ad = a.conj().T
    rho = state.rho
    n = state.mean_photon()
    if n <= EMPTY_MODE:
        raise UndefinedCorrelationError("correlations undefined for an empty mode")
    cols = np.stack([(a @ rho @ ad).reshape(-1, order="F"),
                     (rho @ ad).reshape(-1, order="F")], axis=1)
    states = _evolve(liouv, cols, delays)
    d = space.dim
    # Tr[X M] = sum_ij X_ji M_ij; with column stacking vec(M)[i + d*j] = M_ij
    w_n = np.diag(ad @ a).astype(complex)
    n_diag = np.zeros(d * d, dtype=complex)
    n_diag[np.arange(d) * (d + 1)] = w_n
    w_a = a.T.reshape(-1, order="F")
    G2 = (states[:, :, 0] @ n_diag).real / n**2
    G1 = (states[:, :, 1] @ w_a) / n
    alpha = expectation(annihilation(space), state)
    g2 = CorrelationCurve(delays, G2, "G2", baseline=1.0)
    g1 = CorrelationCurve(delays, np.abs(G1), "G1", baseline=abs(alpha) ** 2 / n,
                          complex_values=G1)
    return g2, g1


def g2_curve(params: SystemParams, space: FockSpace, delays=None, *,
             state: QuantumState | None = None, liouv: Superoperator | None = None) -> CorrelationCurve:
    liouv, state = _prepare(params, space, state, liouv)
    delays = _resolve_delays(delays, liouv)
    a = annihilation(space).toarray()
    ad = a.conj().T
    n = state.mean_photon()
    if n <= EMPTY_MODE:
        raise UndefinedCorrelationError("g2 undefined for an empty mode")
    sigma = (a @ state.rho @ ad).reshape(-1, order="F")
    states = _evolve(liouv, sigma[:, None], delays)[:, :, 0]
    d = space.dim
    populations = states[:, np.arange(d) * (d + 1)].real
    values = populations @ np.arange(d) / n**2
    return CorrelationCurve(delays, values, "G2", baseline=1.0)


def g1_curve(params: SystemParams, space: FockSpace, delays=None, *, connected: bool = False,
             state: QuantumState | None = None, liouv: Superoperator | None = None) -> CorrelationCurve:
    """First-order coherence ``|<a^dag(t) a(0)>| / n``.

    With ``connected=True`` the coherent part |<a>|^2 is subtracted from
    numerator and denominator, leaving the fluctuation coherence whose
    weak-drive limit is the empty-cavity envelope exp(-gamma t / 2).
    ``complex_values`` holds the signed correlation for Re g1.
    """
    liouv, state = _prepare(params, space, state, liouv)
    delays = _resolve_delays(delays, liouv)
    a = annihilation(space).toarray()
    ad = a.conj().T
    n = state.mean_photon()
    if n <= EMPTY_MODE:
        raise UndefinedCorrelationError("g1 undefined for an empty mode")
    x = (state.rho @ ad).reshape(-1, order="F")
    states = _evolve(liouv, x[:, None], delays)[:, :, 0]
    G1 = states @ a.T.reshape(-1, order="F")
    alpha = np.trace(a @ state.rho)
    coherent = abs(alpha) ** 2
    if connected:
        G1 = (G1 - coherent) / (n - coherent)
        baseline = 0.0
    else:
        G1 = G1 / n
        baseline = coherent / n
    return CorrelationCurve(delays, np.abs(G1), "G1", baseline=baseline, complex_values=G1)


def tail_rate(curve: CorrelationCurve, window: tuple[float, float] | None = None,
              floor: float = 1e-7) -> float:
    """Decay rate from a log-linear fit of ``|value - baseline|``.

    Without an explicit ``window`` the fit spans the last decade of delays
    at which the deviation still exceeds ``floor`` times its largest value.
    """
    dev = np.abs(curve.values - curve.baseline)
    t = curve.delays
    if window is None:
        keep = (dev > floor * dev.max()) & (t > 0)
        if keep.sum() < 3:
            raise ValueError("too few points above the numerical floor")
        t_end = t[keep].max()
        window = (t_end / 10.0, t_end)
    mask = (t >= window[0]) & (t <= window[1]) & (dev > 0)
    if mask.sum() < 3:
        raise ValueError(f"fewer than 3 points in tail window {window}")
    slope = np.polyfit(t[mask], np.log(dev[mask]), 1)[0]
    return float(-slope)
