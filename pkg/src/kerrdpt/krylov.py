"""Action of the matrix exponential by adaptive Arnoldi projection.

Step-size control follows Sidje's Expokit ``expv``: each step builds an
m-dimensional Krylov basis, exponentiates the small Hessenberg matrix, and
accepts the step when the a-posteriori error estimate falls below the
per-unit-time tolerance.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla

from kerrdpt.errors import ConvergenceError


def _round2(x: float) -> float:
    # two significant digits, rounded up, as in Expokit
    if x <= 0 or not math.isfinite(x):
        return x
    s = 10.0 ** (math.floor(math.log10(x)) - 1)
    return math.ceil(x / s) * s


def expv(t: float, A, v: np.ndarray, rtol: float = 1e-8, m: int = 30,
         anorm: float | None = None, max_steps: int = 1_000_000) -> np.ndarray:
    """``exp(t A) v`` with relative error about ``rtol`` in the 2-norm."""
    v = np.asarray(v, dtype=complex)
    n = v.shape[0]
    beta = float(np.linalg.norm(v))
    if t == 0 or beta == 0:
        return v.copy()
    m = max(1, min(m, n - 1))
    if anorm is None:
        anorm = float(spla.norm(A, np.inf)) if hasattr(A, "tocsr") else float(np.linalg.norm(A, np.inf))
    if anorm == 0:
        return v.copy()
    tol = rtol / max(1.0, t)
    btol = 1e-14 * beta
    safety, slack = 0.9, 1.2
    fact = ((m + 1) / math.e) ** (m + 1) * math.sqrt(2 * math.pi * (m + 1))
    t_new = _round2((1.0 / anorm) * ((fact * tol) / (4.0 * beta * anorm)) ** (1.0 / m))

    w = v.copy()
    # basis stored as rows so projections avoid copying conjugated slices
    V = np.empty((m + 1, n), dtype=complex)
    t_now = 0.0
    steps = 0
    while t_now < t:
        steps += 1
        if steps > max_steps:
            raise ConvergenceError(f"Krylov propagation exceeded {max_steps} steps at t={t_now:g} of {t:g}")
        t_step = min(t - t_now, t_new)
        H = np.zeros((m + 2, m + 2), dtype=complex)
        V[0] = w / beta
        k1, mb = 2, m
        for j in range(m):
            p = A @ V[j]
            Vj = V[: j + 1]
            # classical Gram-Schmidt with one reorthogonalization pass
            h = (Vj @ p.conj()).conj()
            p -= h @ Vj
            h2 = (Vj @ p.conj()).conj()
            p -= h2 @ Vj
            H[: j + 1, j] = h + h2
            s = np.linalg.norm(p)
            if s < btol:
                k1, mb = 0, j + 1
                t_step = t - t_now
                break
            H[j + 1, j] = s
            V[j + 1] = p / s
        if k1:
            H[m + 1, m] = 1.0
            avnorm = np.linalg.norm(A @ V[m])

        while True:
            mx = mb + k1
            F = la.expm(t_step * H[:mx, :mx])
            if k1 == 0:
                err, xm = btol, 1.0 / m
                break
            phi1 = abs(beta * F[m, 0])
            phi2 = abs(beta * F[m + 1, 0] * avnorm)
            if phi1 > 10 * phi2:
                err, xm = phi2, 1.0 / m
            elif phi1 > phi2:
                err, xm = phi1 * phi2 / (phi1 - phi2), 1.0 / m
            else:
                err, xm = phi1, 1.0 / max(1, m - 1)
            if err <= slack * t_step * tol * beta:
                break
            t_step = _round2(safety * t_step * (t_step * tol * beta / err) ** xm)

        mx = mb + max(0, k1 - 1)
        w = (beta * F[:mx, 0]) @ V[:mx]
        beta = float(np.linalg.norm(w))
        t_now += t_step
        if beta == 0 or not math.isfinite(beta):
            if not math.isfinite(beta):
                raise ConvergenceError("Krylov propagation produced non-finite values")
            break
        t_new = _round2(safety * t_step * (t_step * tol * beta / max(err, 1e-300)) ** xm)
    return w
