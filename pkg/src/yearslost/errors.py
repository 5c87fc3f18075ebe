"""Exception hierarchy.

Every error raised by the package derives from :class:`YearsLostError`.
The CLI maps :class:`ConfigError` (an invalid setting) to exit code 2, other
:class:`InputError` subclasses to exit code 3 and :class:`ComputeError`
subclasses to exit code 4.
"""


class YearsLostError(Exception):
    """Base class for all package errors."""


class InputError(YearsLostError):
    """Invalid or malformed input data/configuration."""


class MissingColumn(InputError):
    pass


class NonFiniteValue(InputError):
    pass


class BadEventCode(InputError):
    pass


class BadTreatmentCode(InputError):
    pass


class ConfigError(InputError):
    """A setting is out of range or unknown."""


class UnreadableConfig(InputError):
    """A configuration file is missing or is not valid TOML."""


class ComputeError(YearsLostError):
    """A numerical procedure could not produce a valid result."""


class InfeasibleFolds(ComputeError):
    pass


class FoldTooSmall(ComputeError):
    pass


class NoEvents(ComputeError):
    pass


class SingularDesign(ComputeError):
    pass


class NonConvergence(ComputeError):
    pass


class SeparableData(ComputeError):
    pass


class SingleArm(ComputeError):
    pass


class InfeasibleParams(ComputeError):
    pass


class SuperunitJump(ComputeError):
    pass


class PositivityBreach(ComputeError):
    pass


class DegenerateDenominator(ComputeError):
    pass


class SparseCell(ComputeError):
    pass


class QuadratureFailure(ComputeError):
    pass
