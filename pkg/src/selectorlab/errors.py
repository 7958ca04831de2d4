"""Exception hierarchy shared by all modules.

Everything a user can trigger with bad inputs derives from ``ValidationError``
so the CLI can map it to exit status 2.
"""


class SelectorLabError(Exception):
    pass


class ValidationError(SelectorLabError, ValueError):
    """Input data or parameters violate a documented precondition."""


class FormatError(ValidationError):
    """A dataset, bundle or artifact file is malformed."""


class NotApplicableError(ValidationError):
    """A score cannot be computed for this data (e.g. no wrong predictions to fit on).

    The message always suggests falling back to a logit-based score.
    """


class UndefinedMetricError(ValidationError):
    """A metric is mathematically undefined for the given inputs."""
