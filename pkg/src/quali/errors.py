"""Exception types shared across the toolkit."""

from __future__ import annotations


class QualiError(Exception):
    """Base class for all toolkit errors."""

    code = "QualiError"


class FormatMismatchError(QualiError):
    """File content does not match the declared input format."""

    code = "FormatMismatch"


class MappingError(QualiError):
    """A column mapping does not resolve against the input's header."""

    code = "MappingError"


class EmptyDatasetError(QualiError):
    """The input yields zero usable records."""

    code = "EmptyDataset"


class BudgetTooSmallError(QualiError):
    """The effective token budget is below the minimum fragment size."""

    code = "BudgetTooSmall"


class ConfigInvalidError(QualiError):
    """A prompt configuration violates its guardrails."""

    code = "ConfigInvalid"


class RequestOverBudgetError(QualiError):
    """An outbound request would exceed the model context limit."""

    code = "RequestOverBudget"


class HeaderMismatchError(QualiError):
    """A CSV file's header row does not match the expected schema."""

    code = "HeaderMismatch"


class RowArityError(QualiError):
    """A CSV row has the wrong number of fields or an unparsable field."""

    code = "RowArityError"


class AuthFailedError(QualiError):
    """The backend rejected the supplied API key."""

    code = "AuthFailed"


class SessionNotFoundError(QualiError):
    """No session is registered under the given id."""

    code = "SessionNotFound"


class MockScriptError(QualiError):
    """A mock backend script is malformed or exhausted."""

    code = "MockScriptError"


class RunCancelledError(QualiError):
    """An analysis run was cancelled cooperatively."""

    code = "RunCancelled"
