"""Exporter exception hierarchy."""


class ExportError(Exception):
    """Base class for every trainer-hook failure."""


class ShapeMismatch(ExportError):
    """A captured tensor disagrees with the declared dataset geometry."""


class OutOfOrderEpoch(ExportError):
    """Epoch captures must arrive exactly once each, in sequence from zero."""


class IncompleteCapture(ExportError):
    """finalize() was called before every declared capture arrived."""
