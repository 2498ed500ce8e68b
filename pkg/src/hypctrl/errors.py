"""Exception hierarchy; the CLI maps these onto exit codes."""


class HypctrlError(Exception):
    """Base class for all package errors."""


class DomainError(HypctrlError):
    """A mathematical precondition failed (CLI exit code 2)."""


class ConfigError(HypctrlError):
    """A configuration key or value is invalid (CLI exit code 3)."""


class ControlRangeError(DomainError):
    """Control value outside the admissible control range."""


class NoSplittingError(DomainError):
    """No hyperbolic splitting detected along the orbit."""


class NotHyperbolicError(DomainError):
    """No (c, lambda) pair with lambda < 1 fits the sampled growth data."""


class ShadowingError(DomainError):
    """Newton refinement of a pseudo-orbit diverged."""


class GridEmptyError(DomainError):
    """A grid-set computation produced or received an empty cell set."""
