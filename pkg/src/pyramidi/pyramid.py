"""Multi-scale views of a token sequence.

A token sequence on a fine grid (say sixteenth notes) is re-expressed at
coarser note values by stride sampling: the eighth-note view keeps every
second token, the quarter-note view every fourth. Upsampling is the right
inverse, repeating each token. A :class:`SequencePyramid` stacks these views
from coarsest to finest; which scales to use is chosen from the shortest
note in the source material, always anchored at quarter notes on the coarse
end and capped at four levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .midi_io import PianoRoll
from .pgroup import TokenSequence

__all__ = [
    "ScaleSpec",
    "SequencePyramid",
    "downsample",
    "upsample",
    "build_pyramid",
    "choose_scales",
]

COARSEST_NOTE_VALUE = 4  # quarter notes
FINEST_NOTE_VALUE = 32
MAX_LEVELS = 4


@dataclass(frozen=True, slots=True)
class ScaleSpec:
    """One pyramid level.

    Attributes:
        note_value: Grid density as a note-value denominator (4 = quarter,
            8 = eighth, 16 = sixteenth notes).
        stride: Sampling stride relative to the finest level of the pyramid
            this spec belongs to (1 for the finest level itself).
    """

    note_value: int
    stride: int = 1

    def __post_init__(self) -> None:
        if self.note_value < 1 or self.note_value & (self.note_value - 1):
            raise ValueError(f"note_value must be a power of two, got {self.note_value}")
        if self.stride < 1 or self.stride & (self.stride - 1):
            raise ValueError(f"stride must be a power of two, got {self.stride}")

    @property
    def label(self) -> str:
        names = {1: "whole", 2: "half", 4: "4th", 8: "8th", 16: "16th", 32: "32nd"}
        return names.get(self.note_value, f"1/{self.note_value}")


def downsample(seq: TokenSequence, factor: int) -> TokenSequence:
    """Keep every ``factor``-th token of every track.

    The output at step ``t`` is the input at step ``t * factor``: the first
    token of each length-``factor`` block survives. Length and bar size must
    both divide evenly, so bars stay aligned.

    Raises:
        DataError: ``factor`` does not divide the length or the bar size.
    """
    if factor < 1:
        raise DataError(f"downsample factor must be >= 1, got {factor}")
    if factor == 1:
        return seq
    if seq.steps % factor or seq.steps_per_bar % factor:
        raise DataError(
            f"factor {factor} does not divide sequence length {seq.steps} "
            f"and bar size {seq.steps_per_bar}"
        )
    return TokenSequence(
        tokens=seq.tokens[:, ::factor].copy(),
        dictionaries=seq.dictionaries,
        steps_per_bar=seq.steps_per_bar // factor,
        time_signature=seq.time_signature,
    )


def upsample(seq: TokenSequence, factor: int) -> TokenSequence:
    """Repeat every token ``factor`` times (right inverse of downsample)."""
    if factor < 1:
        raise DataError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return seq
    return TokenSequence(
        tokens=np.repeat(seq.tokens, factor, axis=1),
        dictionaries=seq.dictionaries,
        steps_per_bar=seq.steps_per_bar * factor,
        time_signature=seq.time_signature,
    )


@dataclass(frozen=True)
class SequencePyramid:
    """Coarse-to-fine stack of views of one token sequence.

    ``levels[i]`` pairs a :class:`ScaleSpec` with the sequence at that scale;
    note values strictly double from each level to the next and every level
    spans the same number of bars.
    """

    levels: list[tuple[ScaleSpec, TokenSequence]]

    def __post_init__(self) -> None:
        if not self.levels:
            raise ValueError("pyramid needs at least one level")
        bars = self.levels[0][1].bars
        for i, (spec, seq) in enumerate(self.levels):
            if seq.bars != bars:
                raise ValueError(f"level {i} spans {seq.bars} bars, expected {bars}")
            if i and spec.note_value != 2 * self.levels[i - 1][0].note_value:
                raise ValueError(
                    f"level {i} note value {spec.note_value} is not double the "
                    f"previous level's {self.levels[i - 1][0].note_value}"
                )

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def bars(self) -> int:
        return self.levels[0][1].bars

    @property
    def finest(self) -> TokenSequence:
        return self.levels[-1][1]

    @property
    def specs(self) -> list[ScaleSpec]:
        return [spec for spec, _ in self.levels]


def build_pyramid(seq: TokenSequence, specs: list[ScaleSpec]) -> SequencePyramid:
    """Materialize the views named by ``specs`` (coarse to fine).

    The last spec must match the resolution of ``seq`` itself; coarser specs
    are produced by stride sampling.

    Raises:
        DataError: Specs out of order, mismatched with the sequence
            resolution, or incompatible with its length.
    """
    if not specs:
        raise DataError("no scales given")
    values = [s.note_value for s in specs]
    if any(b != 2 * a for a, b in zip(values, values[1:])):
        raise DataError(
            f"scales must double from each level to the next, coarse to fine; "
            f"got {values}"
        )
    finest = values[-1]
    if finest != seq.resolution:
        raise DataError(
            f"finest scale 1/{finest} does not match the sequence resolution "
            f"1/{seq.resolution}"
        )
    levels = []
    for spec in specs:
        stride = finest // spec.note_value
        level_seq = downsample(seq, stride)
        levels.append((ScaleSpec(spec.note_value, stride), level_seq))
    return SequencePyramid(levels=levels)


def _shortest_run(roll: PianoRoll) -> int:
    """Length in steps of the shortest contiguous note in the roll."""
    shortest = None
    for k in range(roll.tracks):
        grid = roll.grid[k]
        for pitch in np.flatnonzero(grid.any(axis=0)):
            column = grid[:, pitch]
            padded = np.concatenate(([False], column, [False])).astype(np.int8)
            edges = np.diff(padded)
            starts = np.flatnonzero(edges == 1)
            ends = np.flatnonzero(edges == -1)
            if starts.size:
                run = int((ends - starts).min())
                shortest = run if shortest is None else min(shortest, run)
    if shortest is None:
        raise DataError("empty segment: no notes, cannot choose scales")
    return shortest


def choose_scales(roll: PianoRoll) -> list[ScaleSpec]:
    """Pick pyramid scales from the shortest note in the material.

    The finest scale is the power-of-two note value that still resolves the
    shortest note (its duration rounded down to a note-value denominator,
    rounded up to a power of two), clamped between quarter notes and the
    roll's own resolution. The chain always starts at quarter notes and
    doubles up to the finest scale, at most :data:`MAX_LEVELS` levels deep.

    Returns:
        Specs ordered coarse to fine with strides relative to the finest.
    """
    shortest = _shortest_run(roll)
    # A run of `shortest` steps at resolution `res` lasts shortest/res whole
    # notes; representing it needs note value >= res/shortest.
    needed = roll.resolution / shortest
    finest = COARSEST_NOTE_VALUE
    while finest < needed:
        finest *= 2
    finest = min(finest, roll.resolution, FINEST_NOTE_VALUE)
    values = []
    value = COARSEST_NOTE_VALUE
    while value <= finest:
        values.append(value)
        value *= 2
    assert len(values) <= MAX_LEVELS  # 4..32 doubling chain is at most 4 long
    return [ScaleSpec(v, stride=finest // v) for v in values]
