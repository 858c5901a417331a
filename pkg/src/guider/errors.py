"""Exception hierarchy shared by all pipeline stages."""


class GuiderError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(GuiderError):
    """Invalid parameters, unknown template names or empty inputs at setup time."""


class InputError(GuiderError):
    """Shape mismatches and inconsistent arguments passed to an operation."""


class GeometryError(GuiderError):
    """Degenerate geometry (e.g. collinear points handed to a plane fit)."""


class ProjectionError(GeometryError):
    """A 3D point cannot be projected (non-positive depth)."""


class DerivativeError(GuiderError):
    """Too few samples to estimate finite-difference derivatives."""


class LoadError(GuiderError):
    """A session log or asset file failed schema validation."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
