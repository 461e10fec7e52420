"""Package metadata for lmpcurtail."""

from .constants import VERSION

__version__ = VERSION
