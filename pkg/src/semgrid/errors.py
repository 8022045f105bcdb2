"""Exception types raised across the pipeline."""


class SemgridError(Exception):
    """Base class for all data/contract errors raised by semgrid."""


class ProjectionError(SemgridError):
    pass


class BehindCamera(ProjectionError):
    pass


class OutOfBounds(ProjectionError):
    pass


class NonPositiveDepth(SemgridError):
    pass


class InvalidTransform(SemgridError):
    pass


class InvalidCalibration(SemgridError, ValueError):
    """Camera intrinsics or rig layout violate their invariants."""


class UnknownCamera(SemgridError):
    pass


class DimensionMismatch(SemgridError):
    pass


class DegenerateEvidence(SemgridError):
    """All class likelihood products vanished; the cell cannot be updated."""


class DegenerateLength(SemgridError):
    pass


class PointCountMismatch(SemgridError):
    pass


class EmptySet(SemgridError):
    pass


class ZeroBaseline(SemgridError):
    pass


class NonFinite(SemgridError):
    pass


class DuplicateName(SemgridError):
    pass


class UnknownVectorizer(SemgridError):
    pass


class InvalidSpec(SemgridError, ValueError):
    pass


class ParseError(SemgridError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class MissingFile(SemgridError):
    def __init__(self, path, referenced_from=None):
        self.path = path
        msg = f"missing file: {path}"
        if referenced_from is not None:
            msg += f" (referenced from {referenced_from})"
        super().__init__(msg)


class OutOfWorldWarning(UserWarning):
    """Ego window left the world extent; affected cells are reported unknown."""
