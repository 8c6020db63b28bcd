"""Lindblad superoperator, steady state and low-lying spectrum.

Density matrices are vectorized by column stacking, ``vec(A X B) =
(B^T kron A) vec(X)``, which gives

    L = -i (I kron H - H^T kron I)
        + (gamma/2) (2 conj(a) kron a - I kron n - n^T kron I).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from kerrdpt.errors import ConvergenceError, CutoffError, DegenerateSteadyStateError
from kerrdpt.fock import (
    FockSpace,
    QuantumState,
    SystemParams,
    annihilation,
    hamiltonian,
    identity,
    number,
)

logger = logging.getLogger(__name__)

DENSE_MAX = 1024
STEADY_RESIDUAL_TOL = 1e-10
ZERO_EIGENVALUE_TOL = 1e-8


@dataclass(frozen=True)
class Superoperator:
    matrix: sp.csr_matrix
    params: SystemParams
    space: FockSpace

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Action on a density matrix (not vectorized)."""
        d = self.space.dim
        return (self.matrix @ np.asarray(rho).reshape(-1, order="F")).reshape(d, d, order="F")


def build(params: SystemParams, space: FockSpace) -> Superoperator:
    if space.dim < 2:
        raise CutoffError("Liouvillian needs at least two Fock levels")
    H = hamiltonian(params, space)
    a = annihilation(space)
    n = number(space)
    eye = identity(space)
    L = -1j * (sp.kron(eye, H) - sp.kron(H.T, eye))
    L = L + 0.5 * params.gamma * (2.0 * sp.kron(a.conj(), a) - sp.kron(eye, n) - sp.kron(n.T, eye))
    return Superoperator(L.tocsr(), params, space)


def lindblad_rhs(params: SystemParams, space: FockSpace, rho: np.ndarray) -> np.ndarray:
    """Direct evaluation of the master equation right-hand side on a matrix."""
    H = hamiltonian(params, space).toarray()
    a = annihilation(space).toarray()
    ad = a.conj().T
    n = ad @ a
    return (-1j * (H @ rho - rho @ H)
            + 0.5 * params.gamma * (2 * a @ rho @ ad - n @ rho - rho @ n))


def trace_row(space: FockSpace) -> np.ndarray:
    return np.eye(space.dim).reshape(-1, order="F")


def steady_state(liouv: Superoperator, method: str = "direct", seed: int | None = None) -> QuantumState:
    """Zero-eigenvalue mode of ``liouv`` normalized to unit trace.

    ``method="direct"`` replaces the first row of L by the trace functional
    and solves the bordered system with sparse LU. ``method="iterative"``
    extracts the null vector by shift-invert Arnoldi from a random start
    vector drawn with ``seed``; it exists mainly as a cross-check.
    """
    space = liouv.space
    L = liouv.matrix
    if method == "direct":
        A = L.tolil(copy=True)
        A[0, :] = trace_row(space)
        b = np.zeros(liouv.dim, dtype=complex)
        b[0] = 1.0
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            try:
                x = spla.splu(A.tocsc()).solve(b)
            except (RuntimeError, spla.MatrixRankWarning) as exc:
                raise DegenerateSteadyStateError(f"bordered steady-state system is singular: {exc}") from exc
    elif method == "iterative":
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(liouv.dim) + 1j * rng.standard_normal(liouv.dim)
        sigma = 1e-2 * liouv.params.gamma
        try:
            vals, vecs = spla.eigs(L, k=2, sigma=sigma, which="LM", v0=v0, tol=1e-14)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError(f"null-vector iteration did not converge: {exc}") from exc
        order = np.argsort(-vals.real)
        if abs(vals[order[1]]) < ZERO_EIGENVALUE_TOL * liouv.params.gamma:
            raise DegenerateSteadyStateError(f"two eigenvalues near zero: {vals}")
        x = vecs[:, order[0]]
        x = x / (trace_row(space) @ x)
    else:
        raise ValueError(f"unknown steady-state method {method!r}")

    if not np.all(np.isfinite(x)):
        raise DegenerateSteadyStateError("steady-state solve produced non-finite values")
    residual = np.linalg.norm(L @ x)
    if residual > STEADY_RESIDUAL_TOL:
        raise ConvergenceError(f"steady-state residual {residual:.3e} exceeds tolerance")
    d = space.dim
    rho = x.reshape(d, d, order="F")
    rho = 0.5 * (rho + rho.conj().T)
    try:
        return QuantumState(rho, space)
    except ValueError as exc:
        raise CutoffError(f"steady state is unphysical ({exc}); increase the cutoff") from exc


@dataclass(frozen=True)
class LiouvillianSpectrum:
    """Eigenvalues sorted by descending real part.

    ``adr`` is the asymptotic decay rate ``-Re(lambda_1)``.
    """

    eigenvalues: np.ndarray
    adr: float
    eigenmodes: np.ndarray | None = field(default=None, repr=False)

    @property
    def lifetime(self) -> float:
        return 1.0 / self.adr

    @property
    def gap_eigenvalue(self) -> complex:
        return complex(self.eigenvalues[1])


def _sort_desc_real(vals, vecs=None):
    # ties broken by imaginary part so conjugate pairs come out adjacent
    order = np.lexsort((np.round(vals.imag, 12), -np.round(vals.real, 12)))
    return vals[order], (None if vecs is None else vecs[:, order])


def spectrum(liouv: Superoperator, k: int = 6, method: str = "auto",
             return_modes: bool = False, maxiter: int | None = None,
             dense_max: int = DENSE_MAX) -> LiouvillianSpectrum:
    """The ``k`` eigenvalues of largest real part.

    Small superoperators (dimension <= ``dense_max``) are diagonalized
    densely; larger ones use shift-invert Arnoldi around a small positive
    real shift, requesting extra eigenvalues and keeping the ``k`` with the
    largest real part.
    """
    dim = liouv.dim
    if not 1 <= k <= dim:
        raise ValueError(f"k must lie in [1, {dim}], got {k}")
    gamma = liouv.params.gamma
    if method == "auto":
        method = "dense" if dim <= dense_max else "arnoldi"
    nev = max(k, 2)
    if method == "arnoldi" and nev + 10 >= dim - 1:
        method = "dense"

    if method == "dense":
        A = liouv.matrix.toarray()
        if return_modes:
            vals, vecs = la.eig(A)
        else:
            vals, vecs = la.eigvals(A), None
    elif method == "arnoldi":
        n_request = min(dim - 2, max(2 * nev, nev + 10))
        sigma = 1e-2 * gamma
        try:
            out = spla.eigs(liouv.matrix, k=n_request, sigma=sigma, which="LM",
                            return_eigenvectors=return_modes, maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            budget = maxiter if maxiter is not None else 10 * dim
            raise ConvergenceError(
                f"shift-invert Arnoldi did not converge within {budget} iterations "
                f"({len(exc.eigenvalues)} of {n_request} eigenvalues found)") from exc
        vals, vecs = (out if return_modes else (out, None))
    else:
        raise ValueError(f"unknown spectrum method {method!r}")

    vals, vecs = _sort_desc_real(vals, vecs)
    if abs(vals[0]) > ZERO_EIGENVALUE_TOL * gamma:
        raise ConvergenceError(f"leading eigenvalue {vals[0]:.3e} is not zero")
    adr = float(-vals[1].real)
    modes = vecs[:, :k] if vecs is not None else None
    return LiouvillianSpectrum(vals[:k], adr, modes)


def undriven_eigenvalues(params: SystemParams, max_total: int) -> np.ndarray:
    """Closed-form eigenvalues of the F=0 Liouvillian for m + n <= max_total."""
    g, d, u = params.gamma, params.delta, params.u
    out = []
    for m in range(max_total + 1):
        for n in range(max_total + 1 - m):
            out.append(-0.5 * g * (m + n)
                       + 1j * (d * (m - n) - 0.5 * u * (m * (m - 1) - n * (n - 1))))
    return np.array(out)


@dataclass(frozen=True)
class CutoffReport:
    cutoff: int
    observables: dict
    changes: dict


def _observables(params: SystemParams, cutoff: int) -> dict:
    from kerrdpt.correlations import g2_zero

    space = FockSpace(cutoff)
    liouv = build(params, space)
    rho = steady_state(liouv)
    nbar = rho.mean_photon()
    g2 = g2_zero(rho) if nbar > 0 else None
    adr = spectrum(liouv, k=2).adr
    return {"nbar": nbar, "g2_0": g2, "adr": adr}


def _changes(a: dict, b: dict) -> dict:
    out = {}
    for key in a:
        if a[key] is None or b[key] is None:
            out[key] = 0.0 if a[key] is None and b[key] is None else np.inf
        else:
            out[key] = abs(a[key] - b[key]) / max(1.0, abs(b[key]))
    return out


def converge_cutoff(params: SystemParams, tol: float, start: int = 1, stride: int = 5,
                    gap: int = 10, max_cutoff: int = 150, report: bool = False):
    """Smallest cutoff on the grid ``start, start+stride, ...`` whose
    observables (mean photon number, g2(0), ADR) move by less than ``tol``
    (relative, floored at 1) when the cutoff grows by ``gap``.

    A passing grid point is refined downward one level at a time so the
    returned cutoff is the smallest passing value above the last failing
    grid point.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    cache: dict[int, dict] = {}

    def obs(N):
        if N not in cache:
            cache[N] = _observables(params, N)
        return cache[N]

    def passes(N):
        ch = _changes(obs(N), obs(N + gap))
        return max(ch.values()) < tol, ch

    N = start
    last_fail = start - 1
    changes = {}
    while N + gap <= max_cutoff:
        ok, changes = passes(N)
        if ok:
            M = N
            while M - 1 > last_fail:
                ok_lower, ch_lower = passes(M - 1)
                if not ok_lower:
                    break
                M, changes = M - 1, ch_lower
            logger.debug("cutoff %d converged for %s (changes %s)", M, params, changes)
            if report:
                return CutoffReport(M, obs(M), changes)
            return M
        last_fail = N
        N += stride
    raise CutoffError(
        f"no cutoff up to {max_cutoff} converged to {tol:g}; largest tested N={last_fail} "
        f"with changes {changes}")
