"""Shared exception types."""


class QlanError(Exception):
    """Base class for all package errors."""


class ValidationError(QlanError):
    """An input violated a documented invariant or precondition."""
