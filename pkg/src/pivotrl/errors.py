"""Exception type shared across the package."""

from __future__ import annotations


class PivotError(Exception):
    """Error carrying a stable machine-readable code (e.g. ``GROUP_TOO_SMALL``)."""

    def __init__(self, code: str, message: str = "") -> None:
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class ConfigError(PivotError):
    def __init__(self, message: str) -> None:
        super().__init__("CONFIG_INVALID", message)
