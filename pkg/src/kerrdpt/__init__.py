"""Driven-dissipative Kerr resonator: steady states, Liouvillian spectra,
photon correlations, mean-field bistability and photon-stream analysis."""

from kerrdpt.errors import (
    ConvergenceError,
    CutoffError,
    DegenerateSteadyStateError,
    InsufficientDataError,
    KerrError,
    StreamFormatError,
)
from kerrdpt.fock import (
    FockSpace,
    QuantumState,
    SystemParams,
    annihilation,
    expectation,
    hamiltonian,
    number,
)
from kerrdpt.liouvillian import (
    LiouvillianSpectrum,
    Superoperator,
    build,
    converge_cutoff,
    spectrum,
    steady_state,
)
from kerrdpt.correlations import (
    CorrelationCurve,
    default_delays,
    g1_curve,
    g2_curve,
    g2_zero,
    propagate,
    tail_rate,
)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "CorrelationCurve",
    "CutoffError",
    "DegenerateSteadyStateError",
    "FockSpace",
    "InsufficientDataError",
    "KerrError",
    "LiouvillianSpectrum",
    "QuantumState",
    "StreamFormatError",
    "Superoperator",
    "SystemParams",
    "annihilation",
    "build",
    "converge_cutoff",
    "default_delays",
    "expectation",
    "g1_curve",
    "g2_curve",
    "g2_zero",
    "hamiltonian",
    "number",
    "propagate",
    "spectrum",
    "steady_state",
    "tail_rate",
]
