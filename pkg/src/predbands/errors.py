"""Exception types; each maps onto a CLI exit code."""


class UsageError(Exception):
    """Bad invocation: unknown flags, missing arguments, invalid combinations."""

    exit_code = 1


class DataError(Exception):
    """Malformed or numerically unusable input data."""

    exit_code = 2


class RuleError(Exception):
    """A predictive rule failed to produce a usable answer."""

    exit_code = 3


class ProtocolError(RuleError):
    """A remote rule violated the wire protocol (range, pairing, framing)."""
