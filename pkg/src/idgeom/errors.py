"""Exception hierarchy shared by every module."""


class IdGeomError(Exception):
    """Base class for all library errors."""


class InvalidInput(IdGeomError, ValueError):
    """Input data is malformed (non-finite entries, wrong rank, ...)."""


class InvalidArgument(IdGeomError, ValueError):
    """A parameter is out of its admissible range."""


class DegenerateInput(IdGeomError, ValueError):
    """Data is well-formed but carries no usable signal (e.g. all points equal)."""


class DegenerateFit(IdGeomError, ValueError):
    """A least-squares fit is undetermined."""


class MissingAnnotation(IdGeomError, KeyError):
    """A document lacks an annotation layer the metric needs."""

    def __str__(self):
        return Exception.__str__(self)
