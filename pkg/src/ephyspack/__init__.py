"""ephyspack: a self-contained container format for cellular neurophysiology data.

A container file holds a hierarchy of groups, chunked checksummed datasets,
and attributes; the model layer maps recording sessions onto it: signal
sources, time series, signal events, image stacks, experimental events,
generic arrays, plus derivation and grouping relationships. Query, validate,
ingest, and a CLI sit on top.
"""

from . import errors
from .container import (
    ContainerHandle,
    U64,
    create_container,
    open_container,
)
from .crc32c import crc32c

__version__ = "1.0.0"

__all__ = [
    "ContainerHandle",
    "U64",
    "crc32c",
    "create_container",
    "errors",
    "open_container",
]
