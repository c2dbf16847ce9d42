"""Exception type shared by every module."""

from __future__ import annotations


class HMLError(ValueError):
    """Raised for invalid inputs.

    ``code`` is a short machine-readable tag (``"duplicate-path"``,
    ``"shape-mismatch"``, ...); ``file`` and ``field`` optionally name the
    offending input so the CLI can report it.
    """

    def __init__(self, code: str, message: str, *, file: str | None = None, field: str | None = None):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message
        self.file = file
        self.field = field

    def to_dict(self) -> dict:
        out = {"error": self.code, "message": self.message}
        if self.file is not None:
            out["file"] = self.file
        if self.field is not None:
            out["field"] = self.field
        return out
