"""Conversion between the dimensionless model and laboratory units."""

HBAR_EV_S = 6.582119569e-16

# Fiber-cavity polariton linewidth (FWHM) used as the default physical scale.
DEFAULT_LINEWIDTH_EV = 37e-6


def time_unit_s(linewidth_ev: float = DEFAULT_LINEWIDTH_EV) -> float:
    """Seconds per model time unit 1/gamma for an energy linewidth gamma."""
    if linewidth_ev <= 0:
        raise ValueError("linewidth must be positive")
    return HBAR_EV_S / linewidth_ev


def time_unit_ps(linewidth_ev: float = DEFAULT_LINEWIDTH_EV) -> float:
    return time_unit_s(linewidth_ev) * 1e12


DEFAULT_TIME_UNIT_S = time_unit_s()
DEFAULT_TIME_UNIT_PS = time_unit_ps()
