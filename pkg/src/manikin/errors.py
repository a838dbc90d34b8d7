"""Exception hierarchy shared by every subsystem."""


class ManikinError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ManikinError):
    """Input is well-formed but violates a structural or physical constraint.

    ``path`` names the offending location (``joints[3].parent_link``) when known.
    """

    def __init__(self, message, path=None):
        self.path = path
        self.detail = message
        super().__init__(f"{path}: {message}" if path else message)

    def under(self, prefix):
        """The same error with ``prefix`` prepended to its path."""
        path = f"{prefix}.{self.path}" if self.path else prefix
        err = type(self)(self.detail, path)
        err.__cause__ = self
        return err


class ParseError(ManikinError):
    def __init__(self, message, path=None):
        self.path = path
        self.detail = message
        super().__init__(f"{path}: {message}" if path else message)


class CycleDetected(ValidationError):
    pass


class DuplicateId(ValidationError):
    pass


class NonUnitAxis(ValidationError):
    pass


class InvalidLimits(ValidationError):
    pass


class UnknownLink(ValidationError):
    pass


class UnknownHand(ValidationError):
    pass


class DimensionMismatch(ManikinError, ValueError):
    pass


class ZeroTotalMass(ManikinError):
    pass


class SingularMass(ManikinError):
    pass


class NonPositiveDt(ManikinError, ValueError):
    pass


class NoEligibleController(ManikinError):
    pass


class UnplannableGoal(ManikinError):
    pass


class EmptyGraspSet(ManikinError):
    pass


class DuplicateHand(ManikinError):
    pass


class UnrealizableWrench(ManikinError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class RegionTooSmall(ManikinError):
    pass


class DegenerateCone(ManikinError, ValueError):
    pass


class IoError(ManikinError, OSError):
    pass


class SimulationError(ManikinError):
    """A module error raised inside the run loop, with the tick it happened on."""

    def __init__(self, tick, time, cause):
        self.tick = tick
        self.time = time
        self.cause = cause
        super().__init__(f"tick {tick} (t={time!r}): {type(cause).__name__}: {cause}")
