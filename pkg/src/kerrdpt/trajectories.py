"""Quantum-jump unraveling of the Kerr master equation.

Between jumps the unnormalized state evolves under
``H_eff = H - i (gamma/2) a^dag a``; a jump ``psi -> a psi`` (one detected
photon) occurs when the squared norm decays below a uniform random
threshold. Propagation uses exact exponentials ``exp(-i H_eff h / 2^k)``
on a dyadic time lattice: since the norm is non-increasing, the crossing is
bracketed by a full step and located by halving down to ``h / 2^levels``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg as la

from kerrdpt.correlations import CorrelationCurve, EMPTY_MODE, propagate
from kerrdpt.errors import CutoffError, InsufficientDataError
from kerrdpt.fock import FockSpace, QuantumState, SystemParams, hamiltonian, number
from kerrdpt.liouvillian import build
from kerrdpt.photonstream import PhotonStream, g2_direct, stream_from_times
from kerrdpt.units import DEFAULT_TIME_UNIT_PS

logger = logging.getLogger(__name__)

LEAK_TOL = 1e-6
_CHUNK = 1 << 14


@dataclass(frozen=True)
class TrajectoryRecord:
    stream: PhotonStream
    sample_times: np.ndarray | None = None   # model units
    sample_n: np.ndarray | None = None
    max_top_population: float = 0.0
    jump_times: np.ndarray | None = None     # model units, unquantized
    max_norm_error: float = 0.0              # |<psi|psi> - 1| after renormalization


@numba.njit(cache=True)
def _matvec(M, x, out):
    d = x.size
    for i in range(d):
        acc = 0j
        for j in range(d):
            acc += M[i, j] * x[j]
        out[i] = acc


@numba.njit(cache=True)
def _norm2(x):
    s = 0.0
    for i in range(x.size):
        s += x[i].real * x[i].real + x[i].imag * x[i].imag
    return s


@numba.njit(cache=True)
def _run(P, sqrt_n, psi, tick, end_tick, levels, thresholds, r_pos, r, sample_every,
         jumps_out, samples_out, stats):
    """Advance until ``end_tick``, the threshold buffer runs dry or an output
    buffer fills. Returns (tick, r_pos, r, n_jumps, n_samples)."""
    d = psi.size
    trial = np.empty_like(psi)
    n_jumps = 0
    n_samples = 0
    max_jumps = jumps_out.size
    max_samples = samples_out.shape[0]
    top = stats[0]
    while tick < end_tick:
        if n_jumps >= max_jumps or n_samples >= max_samples:
            break
        # largest aligned dyadic step from here
        j = levels
        while j > 0 and (tick % (np.int64(1) << j)) != 0:
            j -= 1
        while j > 0 and tick + (np.int64(1) << j) > end_tick:
            j -= 1
        _matvec(P[levels - j], psi, trial)
        nrm = _norm2(trial)
        if nrm > r:
            psi[:] = trial
            tick += np.int64(1) << j
        else:
            for jj in range(j - 1, -1, -1):
                _matvec(P[levels - jj], psi, trial)
                nrm2 = _norm2(trial)
                if nrm2 > r:
                    psi[:] = trial
                    tick += np.int64(1) << jj
            # crossing lies in the next elementary tick
            _matvec(P[levels], psi, trial)
            psi[:] = trial
            tick += 1
            for i in range(d - 1):
                trial[i] = sqrt_n[i] * psi[i + 1]
            trial[d - 1] = 0.0
            nrm = _norm2(trial)
            scale = 1.0 / np.sqrt(nrm)
            for i in range(d):
                psi[i] = trial[i] * scale
            dev = abs(_norm2(psi) - 1.0)
            if dev > stats[1]:
                stats[1] = dev
            jumps_out[n_jumps] = tick
            n_jumps += 1
            if r_pos >= thresholds.size:
                r = -1.0  # caller refills the thresholds
            else:
                r = thresholds[r_pos]
                r_pos += 1
        if sample_every > 0 and tick % sample_every == 0:
            nrm = _norm2(psi)
            nbar = 0.0
            for i in range(d):
                nbar += i * (psi[i].real * psi[i].real + psi[i].imag * psi[i].imag)
            samples_out[n_samples, 0] = tick
            samples_out[n_samples, 1] = nbar / nrm
            n_samples += 1
            p_top = (psi[d - 1].real ** 2 + psi[d - 1].imag ** 2) / nrm
            if p_top > top:
                top = p_top
        elif nrm > 0:
            p_top = (psi[d - 1].real ** 2 + psi[d - 1].imag ** 2) / _norm2(psi)
            if p_top > top:
                top = p_top
        if r < 0:
            break
    stats[0] = top
    return tick, r_pos, r, n_jumps, n_samples


def _generator(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index)])))


def simulate(params: SystemParams, space: FockSpace, duration: float, seed: int, *,
             index: int = 0, step: float = 0.05, levels: int = 12,
             sample_dt: float | None = None, burn_in: float = 0.0,
             psi0: np.ndarray | None = None, time_unit_ps: float = DEFAULT_TIME_UNIT_PS,
             leak_tol: float = LEAK_TOL) -> TrajectoryRecord:
    """One quantum-jump trajectory of length ``duration`` (model units).

    Every jump is a detected photon (unit efficiency). Jump times live on a
    lattice of spacing ``step / 2**levels``; clicks are stored as integer
    picoseconds using ``time_unit_ps`` per 1/gamma. ``burn_in`` is simulated
    first and discarded. ``(seed, index)`` fully determine the output.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if sample_dt is not None and (sample_dt <= 0 or abs(sample_dt / step - round(sample_dt / step)) > 1e-9):
        raise ValueError("sample_dt must be a positive multiple of step")
    d = space.dim
    H_eff = hamiltonian(params, space).toarray() - 0.5j * params.gamma * number(space).toarray()
    P = np.stack([la.expm(-1j * H_eff * (step / 2**k)) for k in range(levels + 1)])
    sqrt_n = np.sqrt(np.arange(1, d, dtype=float))
    tick_dt = step / 2**levels
    full = 1 << levels
    burn_ticks = int(np.ceil(burn_in / step)) * full
    end_tick = burn_ticks + int(np.ceil(duration / step)) * full
    sample_every = int(round(sample_dt / step)) * full if sample_dt else 0

    psi = np.zeros(d, dtype=complex)
    if psi0 is None:
        psi[0] = 1.0
    else:
        psi[:] = np.asarray(psi0, dtype=complex)
        psi /= np.linalg.norm(psi)
    rng = _generator(seed, index)
    thresholds = 1.0 - rng.random(_CHUNK)  # in (0, 1]
    r, r_pos = thresholds[0], 1
    stats = np.zeros(2)
    tick = 0
    jumps, samples = [], []
    jbuf = np.empty(_CHUNK, dtype=np.int64)
    sbuf = np.empty((_CHUNK, 2))
    if sample_every:
        samples.append(np.array([[0.0, float(np.real(np.vdot(psi, np.arange(d) * psi)))]]))
    while tick < end_tick:
        tick, r_pos, r, nj, ns = _run(P, sqrt_n, psi, tick, end_tick, levels, thresholds, r_pos, r,
                                      sample_every, jbuf, sbuf, stats)
        jumps.append(jbuf[:nj].copy())
        samples.append(sbuf[:ns].copy())
        if r < 0:
            thresholds = 1.0 - rng.random(_CHUNK)
            r, r_pos = thresholds[0], 1
        elif r_pos >= thresholds.size:
            thresholds = 1.0 - rng.random(_CHUNK)
            r_pos = 0
    top = float(stats[0])
    if top > leak_tol:
        raise CutoffError(f"population of the top Fock level reached {top:.2e} (> {leak_tol:g}); "
                          f"increase the cutoff beyond {space.cutoff}")
    jump_ticks = np.concatenate(jumps) if jumps else np.empty(0, dtype=np.int64)
    jump_ticks = jump_ticks[jump_ticks >= burn_ticks] - burn_ticks
    jump_t = jump_ticks * tick_dt
    total = (end_tick - burn_ticks) * tick_dt
    meta = {"params": params, "seed": seed, "index": index, "time_unit_ps": time_unit_ps}
    stream = stream_from_times(jump_t * time_unit_ps * 1e-12, total * time_unit_ps * 1e-12,
                               time_unit_ps, meta)
    s_t = s_n = None
    if sample_every:
        arr = np.concatenate(samples)
        keep = arr[:, 0] >= burn_ticks if burn_ticks else np.ones(len(arr), bool)
        if burn_ticks:
            arr[:, 0] -= burn_ticks
        s_t, s_n = arr[keep, 0] * tick_dt, arr[keep, 1]
        if not burn_ticks:
            s_t[0] = 0.0
    return TrajectoryRecord(stream, s_t, s_n, top, jump_t, float(stats[1]))


def ensemble_g2(params: SystemParams, space: FockSpace, duration: float, n_traj: int, seed: int, *,
                bin_width: float, max_delay: float, burn_in: float = 100.0, single_blocks: int = 10,
                **kwargs) -> CorrelationCurve:
    """Mean of per-trajectory ``g2_direct`` curves (delays in model units).

    Each trajectory has length ``duration`` and index ``0..n_traj-1`` under
    the common ``seed``. Errors are the standard error across trajectories.
    A single trajectory has no spread, so it is split into
    ``single_blocks`` segments instead (Poisson errors if they would be
    shorter than ``max_delay``).
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    curves = []
    for i in range(n_traj):
        rec = simulate(params, space, duration, seed, index=i, burn_in=burn_in, **kwargs)
        unit = rec.stream.time_unit_s
        try:
            blocks = None
            if n_traj == 1 and single_blocks >= 2 and duration / single_blocks > max_delay:
                blocks = single_blocks
            c = g2_direct(rec.stream, bin_width * unit, max_delay * unit, blocks=blocks)
        except InsufficientDataError as exc:
            raise InsufficientDataError(f"trajectory {i}: {exc}") from exc
        curves.append(c)
    values = np.array([c.values for c in curves])
    mean = values.mean(axis=0)
    if n_traj > 1:
        err = values.std(axis=0, ddof=1) / np.sqrt(n_traj)
    else:
        err = curves[0].errors
    return CorrelationCurve(curves[0].delays / unit, mean, "G2", err)


@dataclass(frozen=True)
class Evolution:
    t: np.ndarray
    n: np.ndarray
    g2_0: np.ndarray   # NaN where the mode is empty (g2 undefined)


def me_evolve(params: SystemParams, space: FockSpace, rho0: QuantumState, grid, rtol: float = 1e-10) -> Evolution:
    """Integrate the master equation from ``rho0`` and record n(t), g2(0; t)."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing non-negative times")
    liouv = build(params, space)
    d = space.dim
    n_op = np.arange(d, dtype=float)
    nn_op = n_op * (n_op - 1)
    x = rho0.vec.astype(complex)
    t_prev = 0.0
    ns, g2s = [], []
    for t in grid:
        x = propagate(liouv, x, t - t_prev, rtol=rtol)
        t_prev = t
        pops = x[np.arange(d) * (d + 1)].real
        tr = pops.sum()
        n = pops @ n_op / tr
        ns.append(n)
        g2s.append(pops @ nn_op / tr / n**2 if n > EMPTY_MODE else np.nan)
    return Evolution(grid, np.array(ns), np.array(g2s))
