"""Exception hierarchy shared across the package."""

from __future__ import annotations


class LlmOptError(Exception):
    """Base class for all errors raised by llmopt."""


class DimensionError(LlmOptError, ValueError):
    pass


class InstanceError(LlmOptError, ValueError):
    pass


class TourError(LlmOptError, ValueError):
    pass


class ViewError(LlmOptError, ValueError):
    pass


class TooLargeError(LlmOptError, ValueError):
    pass


class OracleViolationError(LlmOptError, ArithmeticError):
    """A tour was reported shorter than the exact optimum."""


class FormatError(LlmOptError, ValueError):
    pass


class RenderError(LlmOptError, ValueError):
    pass


class ConfigError(LlmOptError, ValueError):
    """Invalid experiment configuration.

    ``field`` is a dotted path to the offending entry (``loop.retry_cap``),
    ``line`` is set for JSON syntax errors.
    """

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        prefix = ""
        if line is not None:
            prefix = f"line {line}: "
        elif field:
            prefix = f"{field}: "
        super().__init__(prefix + message)


class MissingApiKeyError(ConfigError):
    pass


class BackendError(LlmOptError):
    """A generator failed to produce a reply at all.

    ``kind`` is one of ``Transport``, ``Api``, ``ContextLength``, ``Exhausted``.
    """

    KINDS = ("Transport", "Api", "ContextLength", "Exhausted")

    def __init__(self, kind: str, message: str = ""):
        if kind not in self.KINDS:
            raise ValueError(f"unknown backend error kind {kind!r}")
        self.kind = kind
        super().__init__(f"{kind}: {message}" if message else kind)
