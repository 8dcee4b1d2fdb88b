"""Exception hierarchy shared by the solver modules."""


class PhonogapError(Exception):
    """Base class for every error raised by the package."""


class MaterialError(PhonogapError, ValueError):
    """Material parameters violate positivity or strong convexity."""


class ContrastError(PhonogapError, ValueError):
    """Background and inclusion moduli do not define a contrast regime."""


class NearZeroMomentumError(PhonogapError, ValueError):
    """Quasi-momentum too close to the origin for the lattice sums."""


class ResonantDenominatorError(PhonogapError, ValueError):
    """Wavenumber too close to a pole of the quasi-periodic Fourier series."""


class AccuracyError(PhonogapError, RuntimeError):
    """A numerical self-consistency check exceeded its tolerance."""


class SingularPointError(PhonogapError, ValueError):
    """Kernel requested at its singular point."""


class GeometryError(PhonogapError, ValueError):
    """Shape is not a valid inclusion inside the unit cell."""


class ConditioningError(PhonogapError, RuntimeError):
    """Linear system too ill-conditioned to solve reliably."""


class PositivityError(PhonogapError, RuntimeError):
    """A matrix that must be positive definite is not."""


class NearFieldError(PhonogapError, ValueError):
    """Evaluation point too close to the boundary for the plain quadrature."""


class UnsupportedRegimeError(PhonogapError, ValueError):
    """Operation requested outside the regime where it is defined."""


class PairingError(PhonogapError, RuntimeError):
    """Resonance counts differ between contrast values so branches cannot be paired."""


class SweepError(PhonogapError, RuntimeError):
    """Too many quasi-momentum samples failed during a band sweep."""


class WindowError(PhonogapError, ValueError):
    """Frequency outside the admissible low-frequency window."""
