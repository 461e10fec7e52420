"""Utilities module"""

from enum import Enum

from packaging.version import parse


class FormatCompatibility(Enum):
    """How a declared file format version relates to the supported one."""

    SAME = 0
    """Same major and minor version; patch levels are ignored."""

    OLDER = 1
    """Same major version, older minor version."""

    NEWER = 2
    """Same major version, newer minor version. Readable, but unknown keys may be ignored."""

    INCOMPATIBLE = 3
    """Different major version."""

    def __str__(self) -> str:
        return self.name

    @property
    def readable(self) -> bool:
        return self is not FormatCompatibility.INCOMPATIBLE


def format_compatibility(supported: str, declared: str) -> FormatCompatibility:
    """Classifies a declared format version against the supported one.

    Args:
        supported (str): Version this release reads, e.g. ``"1.0"``.
        declared (str): Version found in the file.

    Returns:
        FormatCompatibility: SAME, OLDER, NEWER or INCOMPATIBLE.

    Raises:
        ValueError: If either string is not a valid version.

    Examples:
        >>> format_compatibility("1.0", "1.0.3")
        FormatCompatibility.SAME
        >>> format_compatibility("1.0", "2.0")
        FormatCompatibility.INCOMPATIBLE
    """
    base = parse(supported)
    found = parse(declared)

    if found.major != base.major:
        return FormatCompatibility.INCOMPATIBLE
    if found.minor > base.minor:
        return FormatCompatibility.NEWER
    if found.minor < base.minor:
        return FormatCompatibility.OLDER
    return FormatCompatibility.SAME
