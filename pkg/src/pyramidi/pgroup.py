"""Pitch-group dictionaries and token sequences.

A *pitch group* is the set of pitches a track sounds during one grid step,
stored canonically as a sorted tuple (the empty tuple is a rest). Each track
gets its own dictionary mapping groups to dense token indices: index 0 is
always the rest, and further indices follow first occurrence in time. The
mapping is bijective, so decoding a token sequence reproduces the exact roll
it was encoded from, and any model that emits these tokens can only ever
produce pitch groups the source material contains.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import DataError, OutOfDictionaryError
from .midi_io import PianoRoll

__all__ = [
    "PitchGroup",
    "canonical_group",
    "group_at",
    "track_groups",
    "PitchGroupDictionary",
    "build_dictionaries",
    "vocab_sizes",
    "TokenSequence",
    "encode",
    "decode",
    "dump_dictionaries",
    "load_dictionaries",
]

PitchGroup = tuple[int, ...]

REST: PitchGroup = ()


def canonical_group(pitches: Iterable[int]) -> PitchGroup:
    """Sorted, de-duplicated tuple form of a set of pitches."""
    group = tuple(sorted(set(int(p) for p in pitches)))
    for p in group:
        if not 0 <= p <= 127:
            raise ValueError(f"pitch {p} outside 0..127")
    return group


def group_at(roll: PianoRoll, track: int, step: int) -> PitchGroup:
    """The pitch group sounding on ``track`` during ``step``."""
    return tuple(int(p) for p in np.flatnonzero(roll.grid[track, step]))


def track_groups(roll: PianoRoll, track: int) -> list[PitchGroup]:
    """Per-step pitch groups for one track, in time order."""
    grid = roll.grid[track]
    return [tuple(int(p) for p in np.flatnonzero(grid[t])) for t in range(grid.shape[0])]


class PitchGroupDictionary:
    """Bijection between pitch groups and dense token indices for one track.

    Index 0 is reserved for the rest (empty group); the remaining groups are
    numbered by first occurrence in the material the dictionary was built
    from. Lookup is O(1) in both directions.
    """

    __slots__ = ("_groups", "_index")

    def __init__(self, groups: Iterable[PitchGroup] = ()):
        self._groups: list[PitchGroup] = [REST]
        self._index: dict[PitchGroup, int] = {REST: 0}
        for group in groups:
            self.add(canonical_group(group))

    def add(self, group: PitchGroup) -> int:
        """Insert a canonical group if new; return its index either way."""
        existing = self._index.get(group)
        if existing is not None:
            return existing
        index = len(self._groups)
        self._groups.append(group)
        self._index[group] = index
        return index

    def index_of(self, group: PitchGroup) -> int | None:
        """Token index for a canonical group, or None if absent."""
        return self._index.get(group)

    def group_of(self, index: int) -> PitchGroup:
        if not 0 <= index < len(self._groups):
            raise DataError(
                f"token {index} outside dictionary range 0..{len(self._groups) - 1}"
            )
        return self._groups[index]

    def __len__(self) -> int:
        return len(self._groups)

    def __iter__(self) -> Iterator[PitchGroup]:
        return iter(self._groups)

    def __contains__(self, group: PitchGroup) -> bool:
        return group in self._index

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PitchGroupDictionary):
            return NotImplemented
        return self._groups == other._groups

    def __repr__(self) -> str:
        return f"PitchGroupDictionary({len(self._groups)} groups)"


def build_dictionaries(roll: PianoRoll) -> list[PitchGroupDictionary]:
    """One dictionary per track, groups numbered by first occurrence."""
    dicts = []
    for k in range(roll.tracks):
        d = PitchGroupDictionary()
        for group in track_groups(roll, k):
            d.add(group)
        dicts.append(d)
    return dicts


def vocab_sizes(dicts: list[PitchGroupDictionary]) -> list[int]:
    return [len(d) for d in dicts]


@dataclass(frozen=True)
class TokenSequence:
    """Token grid of shape ``(tracks, steps)`` plus the dictionaries decoding it.

    Like :class:`PianoRoll`, the step count is a whole number of bars and the
    time signature travels with the data so the note-value resolution of the
    grid stays recoverable (``steps_per_bar * den / num``).
    """

    tokens: np.ndarray
    dictionaries: list[PitchGroupDictionary]
    steps_per_bar: int
    time_signature: tuple[int, int] = (4, 4)

    def __post_init__(self) -> None:
        tokens = np.asarray(self.tokens, dtype=np.int64)
        object.__setattr__(self, "tokens", tokens)
        if tokens.ndim != 2:
            raise ValueError(f"tokens must be (tracks, steps), got {tokens.shape}")
        if tokens.shape[0] != len(self.dictionaries):
            raise ValueError(
                f"{tokens.shape[0]} token rows but {len(self.dictionaries)} dictionaries"
            )
        if self.steps_per_bar < 1:
            raise ValueError(f"steps_per_bar must be positive, got {self.steps_per_bar}")
        if tokens.shape[1] % self.steps_per_bar != 0:
            raise ValueError(
                f"steps ({tokens.shape[1]}) not a multiple of steps_per_bar "
                f"({self.steps_per_bar})"
            )
        if tokens.size and tokens.min() < 0:
            raise ValueError("negative token index")
        for k, d in enumerate(self.dictionaries):
            row = tokens[k]
            if row.size and row.max() >= len(d):
                raise ValueError(
                    f"track {k} holds token {int(row.max())} but its dictionary "
                    f"has only {len(d)} entries"
                )

    @property
    def tracks(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def steps(self) -> int:
        return int(self.tokens.shape[1])

    @property
    def bars(self) -> int:
        return self.steps // self.steps_per_bar

    @property
    def resolution(self) -> int:
        num, den = self.time_signature
        return self.steps_per_bar * den // num

    def bar(self, index: int) -> np.ndarray:
        """Token block ``(tracks, steps_per_bar)`` for one bar."""
        if not 0 <= index < self.bars:
            raise IndexError(f"bar {index} outside 0..{self.bars - 1}")
        lo = index * self.steps_per_bar
        return self.tokens[:, lo : lo + self.steps_per_bar]

    def group_rows(self) -> list[list[PitchGroup]]:
        """Canonical pitch groups per track and step (decoded view)."""
        return [
            [self.dictionaries[k].group_of(int(t)) for t in self.tokens[k]]
            for k in range(self.tracks)
        ]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TokenSequence):
            return NotImplemented
        return (
            self.steps_per_bar == other.steps_per_bar
            and self.time_signature == other.time_signature
            and self.dictionaries == other.dictionaries
            and bool(np.array_equal(self.tokens, other.tokens))
        )

    def __hash__(self) -> int:  # pragma: no cover - identity hashing only
        return id(self)


def encode(
    roll: PianoRoll, dicts: list[PitchGroupDictionary] | None = None
) -> TokenSequence:
    """Tokenize a roll; dictionaries are built from the roll when not given.

    Raises:
        OutOfDictionaryError: Some step's pitch group is missing from its
            track dictionary; the error names the track and step.
        DataError: Track count differs from the number of dictionaries.
    """
    if dicts is None:
        dicts = build_dictionaries(roll)
    if roll.tracks != len(dicts):
        raise DataError(
            f"roll has {roll.tracks} tracks but {len(dicts)} dictionaries given"
        )
    tokens = np.zeros((roll.tracks, roll.steps), dtype=np.int64)
    for k in range(roll.tracks):
        d = dicts[k]
        for t, group in enumerate(track_groups(roll, k)):
            index = d.index_of(group)
            if index is None:
                raise OutOfDictionaryError(track=k, step=t, group=group)
            tokens[k, t] = index
    return TokenSequence(
        tokens=tokens,
        dictionaries=dicts,
        steps_per_bar=roll.steps_per_bar,
        time_signature=roll.time_signature,
    )


def decode(seq: TokenSequence) -> PianoRoll:
    """Reconstruct the piano roll a token sequence represents."""
    grid = np.zeros((seq.tracks, seq.steps, 128), dtype=bool)
    for k in range(seq.tracks):
        d = seq.dictionaries[k]
        for t in range(seq.steps):
            for pitch in d.group_of(int(seq.tokens[k, t])):
                grid[k, t, pitch] = True
    return PianoRoll(
        grid=grid,
        steps_per_bar=seq.steps_per_bar,
        time_signature=seq.time_signature,
    )


def dump_dictionaries(dicts: list[PitchGroupDictionary]) -> str:
    """Serialize dictionaries as text.

    Format: a ``track K`` header line per track, then one line per entry,
    ``index<TAB>comma-separated pitches`` with the literal word ``rest`` for
    the empty group. Round-trips through :func:`load_dictionaries`.
    """
    lines = []
    for k, d in enumerate(dicts):
        lines.append(f"track {k}")
        for index, group in enumerate(d):
            body = ",".join(str(p) for p in group) if group else "rest"
            lines.append(f"{index}\t{body}")
    return "\n".join(lines) + "\n"


def load_dictionaries(text: str) -> list[PitchGroupDictionary]:
    """Parse the :func:`dump_dictionaries` format.

    Raises:
        DataError: Malformed lines, out-of-order indices, missing rest entry,
            or duplicate groups within a track.
    """
    dicts: list[PitchGroupDictionary] = []
    current: PitchGroupDictionary | None = None
    expected_index = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("track "):
            tail = line[len("track "):]
            if not tail.isdigit() or int(tail) != len(dicts):
                raise DataError(
                    f"line {lineno}: expected 'track {len(dicts)}', got {line!r}"
                )
            current = PitchGroupDictionary()
            dicts.append(current)
            expected_index = 0
            continue
        if current is None:
            raise DataError(f"line {lineno}: entry before any 'track' header")
        index_text, _, body = line.partition("\t")
        if not body:
            raise DataError(f"line {lineno}: expected 'index<TAB>pitches'")
        try:
            index = int(index_text)
        except ValueError:
            raise DataError(f"line {lineno}: bad index {index_text!r}") from None
        if index != expected_index:
            raise DataError(
                f"line {lineno}: index {index} out of order (expected {expected_index})"
            )
        if body == "rest":
            group: PitchGroup = REST
        else:
            try:
                group = canonical_group(int(p) for p in body.split(","))
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
        if index == 0:
            if group != REST:
                raise DataError(f"line {lineno}: index 0 must be the rest")
        else:
            if group == REST:
                raise DataError(f"line {lineno}: rest listed twice")
            if group in current:
                raise DataError(f"line {lineno}: duplicate group {body!r}")
            current.add(group)
        expected_index += 1
    if not dicts:
        raise DataError("dictionary dump contains no tracks")
    return dicts
