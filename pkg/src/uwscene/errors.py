"""Shared exception types."""


class ValidationError(ValueError):
    """Input violates a documented contract (range, finiteness, vocabulary)."""


class DimensionError(ValidationError):
    """Array shapes are inconsistent with each other or with a grid."""


class NumericError(ArithmeticError):
    """A computation produced non-finite intermediates.

    ``stage`` names the computation step that failed.
    """

    def __init__(self, message: str, stage: str = ""):
        super().__init__(message if not stage else f"[{stage}] {message}")
        self.stage = stage


class ParseError(ValueError):
    """Free text could not be parsed into the requested structure."""


class ProviderError(RuntimeError):
    """A caption provider call failed.

    ``retriable`` signals whether the caller may re-submit the request.
    """

    def __init__(self, message: str, retriable: bool = True):
        super().__init__(message)
        self.retriable = retriable


class MissingPredictionsError(ValueError):
    """A gold record has no matching prediction in the run being scored."""

    def __init__(self, missing_ids):
        self.missing_ids = list(missing_ids)
        preview = ", ".join(self.missing_ids[:5])
        more = "" if len(self.missing_ids) <= 5 else f" (+{len(self.missing_ids) - 5} more)"
        super().__init__(f"{len(self.missing_ids)} gold record(s) without predictions: {preview}{more}")
