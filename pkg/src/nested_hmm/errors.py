"""Exception types. Every error carries a stable ``code`` used by the CLI."""

from __future__ import annotations


class NestedHMMError(Exception):
    code = "E_GENERIC"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def to_record(self) -> dict:
        return {"error": self.code, "message": str(self), "details": self.details}


class DataError(NestedHMMError):
    """Malformed panel: missing values, ragged units, bad responses, parse failures."""

    code = "E_DATA"


class ConfigError(NestedHMMError):
    code = "E_CONFIG"


class ParameterError(NestedHMMError):
    code = "E_PARAMS"


class ZeroLikelihoodError(NestedHMMError):
    """An observation has probability zero under the model."""

    code = "E_ZERO_LIKELIHOOD"


class SingularMatrixError(NestedHMMError):
    code = "E_SINGULAR"


class DegeneracyWarning(UserWarning):
    """A latent state received no expected mass during an M-step."""
