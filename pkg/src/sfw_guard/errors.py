"""Shared exception hierarchy."""


class SfwGuardError(Exception):
    """Base class for all errors raised by this package."""
