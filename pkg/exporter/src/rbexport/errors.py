class ExportError(ValueError):
    """An export job is misconfigured or cannot run as specified."""


class FormatError(ValueError):
    """A file does not conform to the container format."""
