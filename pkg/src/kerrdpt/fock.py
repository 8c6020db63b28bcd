"""Truncated Fock space of a single bosonic mode.

Operators are returned as scipy CSR matrices; states carry a dense density
matrix. The rotating-frame Hamiltonian is

    H = -delta a^dag a + (u/2) a^dag a^dag a a + f (a^dag + a)

in units of hbar*gamma, so that blue detuning (delta > 0) with repulsive
interaction (u > 0) is the bistable side.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
POSITIVITY_FLOOR = -1e-9


@dataclass(frozen=True)
class FockSpace:
    """Fock states |0>, ..., |cutoff>."""

    cutoff: int

    def __post_init__(self):
        if int(self.cutoff) != self.cutoff or self.cutoff < 1:
            raise ValueError(f"cutoff must be an integer >= 1, got {self.cutoff!r}")
        object.__setattr__(self, "cutoff", int(self.cutoff))

    @property
    def dim(self) -> int:
        return self.cutoff + 1


@dataclass(frozen=True)
class SystemParams:
    """Model parameters; all rates share the unit of ``gamma`` (default 1)."""

    delta: float
    u: float
    f: float
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("delta", "u", "f", "gamma"):
            value = getattr(self, name)
            if not np.isfinite(value) or np.iscomplexobj(value):
                raise ValueError(f"{name} must be a finite real number, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.f < 0:
            raise ValueError(f"f must be non-negative (drive phase is a gauge choice), got {self.f}")

    def with_drive(self, f: float) -> "SystemParams":
        return replace(self, f=f)


def annihilation(space: FockSpace) -> sp.csr_matrix:
    """Lowering operator with ``a[n-1, n] = sqrt(n)``."""
    return sp.diags(np.sqrt(np.arange(1, space.dim, dtype=float)), 1,
                    shape=(space.dim, space.dim), format="csr", dtype=complex)


def creation(space: FockSpace) -> sp.csr_matrix:
    return annihilation(space).T.conj().tocsr()


def number(space: FockSpace) -> sp.csr_matrix:
    return sp.diags(np.arange(space.dim, dtype=float), 0, format="csr", dtype=complex)


def identity(space: FockSpace) -> sp.csr_matrix:
    return sp.identity(space.dim, format="csr", dtype=complex)


def hamiltonian(params: SystemParams, space: FockSpace) -> sp.csr_matrix:
    n = np.arange(space.dim, dtype=float)
    diagonal = -params.delta * n + 0.5 * params.u * n * (n - 1.0)
    a = annihilation(space)
    H = sp.diags(diagonal, 0, format="csr", dtype=complex) + params.f * (a + a.T)
    return H.tocsr()


def dense(op) -> np.ndarray:
    return op.toarray() if sp.issparse(op) else np.asarray(op)


@dataclass(frozen=True)
class QuantumState:
    """Density matrix on a truncated Fock space.

    Construction checks Hermiticity, unit trace and positivity; eigenvalues
    in ``[POSITIVITY_FLOOR, 0)`` are clamped to zero and the state is
    renormalized.
    """

    rho: np.ndarray
    space: FockSpace = field(default=None)
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValueError(f"density matrix must be square, got shape {rho.shape}")
        space = self.space if self.space is not None else FockSpace(rho.shape[0] - 1)
        if space.dim != rho.shape[0]:
            raise ValueError(f"density matrix of size {rho.shape[0]} does not match {space}")
        if self.validate:
            rho = _check_density(rho)
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "space", space)

    @classmethod
    def fock(cls, space: FockSpace, n: int) -> "QuantumState":
        rho = np.zeros((space.dim, space.dim), dtype=complex)
        rho[n, n] = 1.0
        return cls(rho, space)

    @classmethod
    def vacuum(cls, space: FockSpace) -> "QuantumState":
        return cls.fock(space, 0)

    @classmethod
    def from_vector(cls, vec, space: FockSpace, validate: bool = True) -> "QuantumState":
        """Inverse of :attr:`vec` (column stacking)."""
        rho = np.asarray(vec).reshape(space.dim, space.dim, order="F")
        return cls(rho, space, validate=validate)

    @property
    def vec(self) -> np.ndarray:
        return self.rho.reshape(-1, order="F")

    def mean_photon(self) -> float:
        return float(np.real(np.diagonal(self.rho)) @ np.arange(self.space.dim))


def _check_density(rho: np.ndarray) -> np.ndarray:
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > HERMITIAN_TOL:
        raise ValueError(f"density matrix is not Hermitian (max deviation {herm:.3e})")
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValueError(f"density matrix trace is {tr!r}, expected 1")
    w, v = np.linalg.eigh(rho)
    if w.min() < POSITIVITY_FLOOR:
        raise ValueError(f"density matrix has eigenvalue {w.min():.3e} below the positivity floor")
    if w.min() < 0:
        w = np.clip(w, 0.0, None)
        rho = (v * w) @ v.conj().T
        rho /= np.trace(rho).real
    return rho


def expectation(op, state: QuantumState) -> complex:
    """``trace(op @ rho)``."""
    rho = state.rho if isinstance(state, QuantumState) else np.asarray(state)
    if op.shape != rho.shape:
        raise ValueError(f"operator shape {op.shape} does not match state shape {rho.shape}")
    if sp.issparse(op):
        return complex(op.multiply(rho.T).sum())
    return complex(np.einsum("ij,ji->", op, rho))
