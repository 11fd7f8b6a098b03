"""Shared exception base for every module in the package.

Each module defines its own error types (see the module that raises them);
all of them derive from CacheQAError so callers such as the CLI and the HTTP
service can catch one base class and report a structured error.
"""


class CacheQAError(Exception):
    """Base class for all errors raised by cacheqa modules."""

    def payload(self) -> dict:
        """Structured form used by the CLI and HTTP error responses."""
        return {"error": type(self).__name__, "message": str(self)}
