"""Exception hierarchy shared by synthesis, control evaluation and the CLI."""


class PhShapeError(Exception):
    """Base class for all errors raised by ph_shape."""


class SingularMatrixError(PhShapeError):
    """A matrix that must be inverted is singular or badly conditioned."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class SingularMassError(SingularMatrixError):
    """The mass matrix cannot be inverted at the requested configuration."""

    def __init__(self, q, condition=None):
        super().__init__(f"singular mass matrix at q={list(map(float, q))} (cond={condition:.3g})", condition)
        self.q = q


class DomainBoundaryError(PhShapeError):
    """The kinetic-energy matching ODE cannot be continued past ``q_i``."""

    def __init__(self, q_i, reason=""):
        msg = f"matching ODE boundary reached at q_i={q_i:.12g}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.q_i = q_i


class DomainError(PhShapeError):
    """A configuration lies outside the domain covered by a synthesized table."""

    def __init__(self, q_i, domain):
        super().__init__(f"q_i={q_i:.17g} outside table domain [{domain[0]:.17g}, {domain[1]:.17g}]")
        self.q_i = q_i
        self.domain = domain


class ConfigError(PhShapeError):
    """Invalid run configuration."""


class PackageError(PhShapeError):
    """A controller package is missing, unreadable or inconsistent."""
