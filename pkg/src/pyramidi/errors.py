"""Exception hierarchy shared across the package.

Three error families matter to callers (and map onto CLI exit codes):

* ``UsageError``   -- bad invocation or configuration (exit code 1).
* ``DataError``    -- malformed or unrepresentable input data (exit code 2),
                      including MIDI parse failures and dictionary misses.
* ``NumericError`` -- non-finite values or divergence during training or
                      sampling (exit code 3).
"""

from __future__ import annotations


class PyramidiError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(PyramidiError):
    """Invalid invocation: bad flags, unknown keys, contradictory options."""


class DataError(PyramidiError):
    """Input data cannot be parsed or represented on the requested grid."""


class MidiParseError(DataError):
    """Standard MIDI file is malformed.

    Attributes:
        offset: Byte offset into the input where parsing failed, or ``None``
            when no single offset is meaningful (e.g. truncated file).
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class OutOfDictionaryError(DataError):
    """A pitch group has no entry in the relevant track dictionary."""

    def __init__(self, track: int, step: int, group: tuple[int, ...]):
        pitches = ",".join(str(p) for p in group) if group else "rest"
        super().__init__(
            f"track {track}, step {step}: pitch group ({pitches}) is not in "
            f"the track dictionary"
        )
        self.track = track
        self.step = step
        self.group = group


class NumericError(PyramidiError):
    """Non-finite activations, gradients, or losses were encountered."""
