"""Error types shared across modules, mapped to CLI exit codes."""


class UsageError(Exception):
    """Bad flags, config keys, or option values (exit code 1)."""


class DataError(Exception):
    """Missing or malformed input data or checkpoints (exit code 2)."""
