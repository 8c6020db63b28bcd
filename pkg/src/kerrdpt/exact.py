"""Exact steady-state moments of the driven Kerr resonator.

The complex-P representation gives, for the Hamiltonian used throughout
this package and a single decay channel of rate gamma,

    <a^dag^j a^l> = (-z)^(j+l) S(c1 + l, c2 + j) / ((c1)_l (c2)_j S(c1, c2))

with z = 2F/U, c1 = -(2 delta + i gamma)/U, c2 = conj(c1),
S(p, q) = 0F2(; p, q; 2 z^2) and (c)_k the rising factorial. The series is
summed with mpmath at elevated precision; this path shares no code with the
Liouvillian solver and serves as its oracle.
"""

from __future__ import annotations

import mpmath as mp

from kerrdpt.fock import SystemParams


def moment(params: SystemParams, j: int, l: int, dps: int = 40) -> complex:
    """Steady-state ``<(a^dag)^j a^l>``; requires ``u != 0``."""
    if params.u == 0:
        raise ValueError("the hypergeometric solution needs a nonzero interaction")
    with mp.workdps(dps):
        g = mp.mpf(params.gamma)
        u = mp.mpf(params.u)
        c1 = (-2 * mp.mpf(params.delta) - 1j * g) / u
        c2 = mp.conj(c1)
        z = 2 * mp.mpf(params.f) / u
        x = 2 * z * z

        def S(p, q):
            return mp.hyper([], [p, q], x)

        value = (-z) ** (j + l) * S(c1 + l, c2 + j) / (mp.rf(c1, l) * mp.rf(c2, j) * S(c1, c2))
        return complex(value)


def mean_photon(params: SystemParams) -> float:
    if params.f == 0:
        return 0.0
    return moment(params, 1, 1).real


def g2_zero(params: SystemParams) -> float:
    n = moment(params, 1, 1).real
    return moment(params, 2, 2).real / n**2


def linear_mean_photon(params: SystemParams) -> float:
    """Coherent-state photon number of the U = 0 cavity."""
    return params.f**2 / (params.delta**2 + params.gamma**2 / 4)
