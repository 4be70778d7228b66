"""Standard MIDI file codec and piano-roll quantization.

Reading: ``parse_midi`` accepts SMF format 0/1 byte streams and produces a
:class:`MidiSong` (absolute-tick note events per track). Writing:
``render_midi`` serializes a :class:`PianoRoll` back to a format 1 file with
one MIDI track per roll track, fixed velocity, and tempo/time-signature meta
events on the first track.

Quantization snaps note boundaries to a uniform grid (``resolution`` cells
per whole note, e.g. 16 for sixteenth notes) and pads the result to a whole
number of bars. A note shorter than half a grid step still occupies one cell,
so no sounding note disappears.

Unsupported on purpose: SMF format 2, SMPTE divisions, tempo maps (only the
first tempo and time signature are honored; later changes warn and are
ignored), and microtiming beyond the quantization grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, MidiParseError

__all__ = [
    "NoteEvent",
    "MidiSong",
    "PianoRoll",
    "parse_midi",
    "load_midi",
    "quantize",
    "render_midi",
    "save_midi",
]

VALID_RESOLUTIONS = (4, 8, 16, 32)

# Channel assignment for rendered tracks; channel 9 is reserved for
# percussion by General MIDI, so melodic tracks skip it.
_MELODIC_CHANNELS = tuple(c for c in range(16) if c != 9)


@dataclass(frozen=True, slots=True)
class NoteEvent:
    """One note with absolute tick boundaries.

    Attributes:
        pitch: MIDI note number, 0-127.
        start: Absolute start tick (inclusive).
        end: Absolute end tick (exclusive); always greater than ``start``.
        velocity: Note-on velocity, 1-127.
    """

    pitch: int
    start: int
    end: int
    velocity: int = 100

    def __post_init__(self) -> None:
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside 0..127")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity {self.velocity} outside 1..127")
        if self.start < 0 or self.end <= self.start:
            raise ValueError(
                f"note span [{self.start}, {self.end}) is empty or negative"
            )


@dataclass(slots=True)
class MidiSong:
    """Parsed MIDI content: per-track note events on an absolute tick axis.

    ``length_ticks`` is where the longest track's end-of-track marker sits;
    it preserves trailing silence that no note covers. Zero means "no longer
    than the last note".
    """

    ticks_per_quarter: int
    tempo_bpm: float = 120.0
    time_signature: tuple[int, int] = (4, 4)
    tracks: list[list[NoteEvent]] = field(default_factory=list)
    length_ticks: int = 0

    @property
    def note_count(self) -> int:
        return sum(len(t) for t in self.tracks)


@dataclass(frozen=True)
class PianoRoll:
    """Boolean grid of shape ``(tracks, steps, 128)`` on a uniform time grid.

    ``steps`` is always a whole number of bars (``steps % steps_per_bar == 0``).
    ``grid[k, t, p]`` is True when track ``k`` sounds pitch ``p`` during step
    ``t``. The grid resolution in note-value terms (4 = quarter notes,
    16 = sixteenths) is recoverable via :attr:`resolution`.
    """

    grid: np.ndarray
    steps_per_bar: int
    time_signature: tuple[int, int] = (4, 4)

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=bool)
        object.__setattr__(self, "grid", grid)
        if grid.ndim != 3 or grid.shape[2] != 128:
            raise ValueError(f"grid must be (tracks, steps, 128), got {grid.shape}")
        if grid.shape[0] < 1:
            raise ValueError("piano roll needs at least one track")
        if self.steps_per_bar < 1:
            raise ValueError(f"steps_per_bar must be positive, got {self.steps_per_bar}")
        if grid.shape[1] % self.steps_per_bar != 0:
            raise ValueError(
                f"steps ({grid.shape[1]}) not a multiple of steps_per_bar "
                f"({self.steps_per_bar})"
            )
        num, den = self.time_signature
        if num < 1 or den < 1:
            raise ValueError(f"invalid time signature {num}/{den}")
        if (self.steps_per_bar * den) % num != 0:
            raise ValueError(
                f"steps_per_bar {self.steps_per_bar} does not sit on a uniform "
                f"note-value grid in {num}/{den}"
            )

    @property
    def tracks(self) -> int:
        return int(self.grid.shape[0])

    @property
    def steps(self) -> int:
        return int(self.grid.shape[1])

    @property
    def bars(self) -> int:
        return self.steps // self.steps_per_bar

    @property
    def resolution(self) -> int:
        """Grid density as a note-value denominator (16 = sixteenth notes)."""
        num, den = self.time_signature
        return self.steps_per_bar * den // num

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PianoRoll):
            return NotImplemented
        return (
            self.steps_per_bar == other.steps_per_bar
            and self.time_signature == other.time_signature
            and self.grid.shape == other.grid.shape
            and bool(np.array_equal(self.grid, other.grid))
        )

    def __hash__(self) -> int:  # pragma: no cover - identity hashing only
        return id(self)


class _Reader:
    """Byte cursor with bounds checking; every failure carries an offset."""

    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.remaining() < n:
            raise MidiParseError(f"truncated file while reading {what}", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return int.from_bytes(self.take(2, what), "big")

    def u32(self, what: str) -> int:
        return int.from_bytes(self.take(4, what), "big")

    def vlq(self) -> int:
        """Variable-length quantity, at most four bytes per the SMF spec."""
        value = 0
        for i in range(4):
            byte = self.u8("variable-length quantity")
            value = (value << 7) | (byte & 0x7F)
            if not byte & 0x80:
                return value
        raise MidiParseError("variable-length quantity exceeds 4 bytes", self.pos - 1)


def _channel_data_len(status: int) -> int:
    kind = status & 0xF0
    if kind in (0xC0, 0xD0):  # program change, channel pressure
        return 1
    return 2


class _TrackState:
    """Accumulates note pairing state while a single track chunk is read."""

    def __init__(self) -> None:
        self.notes: list[NoteEvent] = []
        # FIFO of (start_tick, velocity) per (channel, pitch): overlapping
        # note-ons close in arrival order.
        self.active: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def note_on(self, channel: int, pitch: int, velocity: int, tick: int) -> None:
        self.active.setdefault((channel, pitch), []).append((tick, velocity))

    def note_off(self, channel: int, pitch: int, tick: int) -> None:
        queue = self.active.get((channel, pitch))
        if not queue:
            return  # unmatched note-off: ignore, matches common practice
        start, velocity = queue.pop(0)
        self.notes.append(
            NoteEvent(pitch=pitch, start=start, end=max(tick, start + 1), velocity=velocity)
        )

    def finish(self, tick: int) -> list[NoteEvent]:
        # Close any note still sounding at end of track.
        for (channel, pitch), queue in sorted(self.active.items()):
            for start, velocity in queue:
                self.notes.append(
                    NoteEvent(pitch=pitch, start=start, end=max(tick, start + 1), velocity=velocity)
                )
        self.active.clear()
        self.notes.sort(key=lambda n: (n.start, n.pitch, n.end))
        return self.notes


def _parse_track(
    reader: _Reader, length: int, song: _SongBuilder
) -> tuple[list[NoteEvent], int]:
    """Parse one MTrk chunk; returns its notes and its end-of-track tick."""
    end_pos = reader.pos + length
    if end_pos > len(reader.data):
        raise MidiParseError("track chunk overruns end of file", reader.pos)
    state = _TrackState()
    tick = 0
    running_status: int | None = None

    while reader.pos < end_pos:
        tick += reader.vlq()
        first = reader.u8("event status")

        if first == 0xFF:  # meta event
            running_status = None
            meta_type = reader.u8("meta event type")
            meta_len = reader.vlq()
            payload_at = reader.pos
            payload = reader.take(meta_len, "meta event payload")
            if meta_type == 0x2F:  # end of track
                reader.pos = end_pos  # skip any padding after the marker
                return state.finish(tick), tick
            if meta_type == 0x51:
                song.see_tempo(payload, payload_at)
            elif meta_type == 0x58:
                song.see_time_signature(payload, payload_at)
            continue

        if first in (0xF0, 0xF7):  # sysex: skip payload
            running_status = None
            sysex_len = reader.vlq()
            reader.take(sysex_len, "sysex payload")
            continue

        if first >= 0xF1:
            raise MidiParseError(
                f"system message status 0x{first:02X} is not valid in a track chunk",
                reader.pos - 1,
            )

        if first & 0x80:
            status = first
            running_status = status
            data0 = reader.u8("event data")
        else:
            if running_status is None:
                raise MidiParseError(
                    f"data byte 0x{first:02X} with no running status", reader.pos - 1
                )
            status = running_status
            data0 = first

        if data0 & 0x80:
            raise MidiParseError(
                f"expected data byte, got 0x{data0:02X}", reader.pos - 1
            )
        if _channel_data_len(status) == 2:
            data1 = reader.u8("event data")
            if data1 & 0x80:
                raise MidiParseError(
                    f"expected data byte, got 0x{data1:02X}", reader.pos - 1
                )
        else:
            data1 = 0

        kind = status & 0xF0
        channel = status & 0x0F
        if kind == 0x90 and data1 > 0:
            state.note_on(channel, data0, data1, tick)
        elif kind == 0x80 or (kind == 0x90 and data1 == 0):
            state.note_off(channel, data0, tick)
        # Other channel messages (controllers, pitch bend, ...) carry no
        # note content and are dropped.

    # Chunk exhausted without an end-of-track meta: accept what we have.
    return state.finish(tick), tick


class _SongBuilder:
    """Collects file-level attributes, honoring only the first of each."""

    def __init__(self) -> None:
        self.tempo_bpm: float | None = None
        self.time_signature: tuple[int, int] | None = None

    def see_tempo(self, payload: bytes, offset: int) -> None:
        if len(payload) < 3:
            raise MidiParseError("tempo meta event shorter than 3 bytes", offset)
        mpqn = int.from_bytes(payload[:3], "big")
        if mpqn == 0:
            raise MidiParseError("tempo meta event declares zero µs per quarter", offset)
        bpm = 60_000_000.0 / mpqn
        if self.tempo_bpm is None:
            self.tempo_bpm = bpm
        elif abs(bpm - self.tempo_bpm) > 1e-9:
            warnings.warn(
                f"ignoring tempo change to {bpm:.2f} bpm; "
                f"only the first tempo ({self.tempo_bpm:.2f} bpm) is used",
                stacklevel=4,
            )

    def see_time_signature(self, payload: bytes, offset: int) -> None:
        if len(payload) < 2:
            raise MidiParseError("time signature meta event shorter than 2 bytes", offset)
        numerator = payload[0]
        denom_power = payload[1]
        if numerator == 0 or denom_power > 8:
            raise MidiParseError(
                f"unusable time signature {numerator}/2^{denom_power}", offset
            )
        signature = (numerator, 1 << denom_power)
        if self.time_signature is None:
            self.time_signature = signature
        elif signature != self.time_signature:
            warnings.warn(
                f"ignoring time signature change to {signature[0]}/{signature[1]}; "
                f"only the first ({self.time_signature[0]}/{self.time_signature[1]}) is used",
                stacklevel=4,
            )


def parse_midi(data: bytes) -> MidiSong:
    """Parse a standard MIDI file (format 0 or 1) from bytes.

    Args:
        data: Complete SMF byte stream.

    Returns:
        A :class:`MidiSong` with one entry in ``tracks`` per MTrk chunk.

    Raises:
        MidiParseError: On any structural violation; the message names the
            byte offset where parsing failed. SMF format 2 and SMPTE time
            divisions are rejected.
    """
    reader = _Reader(data)
    header_at = reader.pos
    if reader.take(4, "header chunk id") != b"MThd":
        raise MidiParseError("not a standard MIDI file (missing MThd)", header_at)
    header_len = reader.u32("header chunk length")
    if header_len < 6:
        raise MidiParseError(f"header chunk length {header_len} < 6", reader.pos - 4)
    fmt = reader.u16("format")
    ntrks = reader.u16("track count")
    division = reader.u16("division")
    reader.take(header_len - 6, "header padding")

    if fmt not in (0, 1):
        raise MidiParseError(f"SMF format {fmt} unsupported (only 0 and 1)", header_at + 8)
    if division & 0x8000:
        raise MidiParseError("SMPTE time division unsupported", header_at + 12)
    if division == 0:
        raise MidiParseError("time division of zero ticks per quarter", header_at + 12)
    if ntrks == 0:
        raise MidiParseError("file declares zero tracks", header_at + 10)

    builder = _SongBuilder()
    tracks: list[list[NoteEvent]] = []
    length_ticks = 0
    while len(tracks) < ntrks:
        chunk_id = reader.take(4, "chunk id")
        chunk_len = reader.u32("chunk length")
        if chunk_id == b"MTrk":
            events, end_tick = _parse_track(reader, chunk_len, builder)
            tracks.append(events)
            length_ticks = max(length_ticks, end_tick)
        else:
            # Alien chunks are legal and skipped wholesale.
            reader.take(chunk_len, f"chunk {chunk_id!r} payload")

    return MidiSong(
        ticks_per_quarter=division,
        tempo_bpm=builder.tempo_bpm if builder.tempo_bpm is not None else 120.0,
        time_signature=builder.time_signature if builder.time_signature is not None else (4, 4),
        tracks=tracks,
        length_ticks=length_ticks,
    )


def load_midi(path: str) -> MidiSong:
    """Read and parse a MIDI file from disk."""
    with open(path, "rb") as fh:
        return parse_midi(fh.read())


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def quantize(song: MidiSong, resolution: int = 16) -> PianoRoll:
    """Snap a song to a uniform grid and return its piano roll.

    Args:
        song: Parsed MIDI content.
        resolution: Grid density as a note-value denominator; one of
            4, 8, 16, 32 (16 places sixteenth notes on consecutive steps).

    Returns:
        A :class:`PianoRoll` of shape ``(tracks, steps, 128)`` where steps is
        padded up to a whole number of bars.

    Raises:
        ValueError: ``resolution`` is not one of the supported grid densities.
        DataError: The song has no notes, or its time signature does not
            yield a whole number of steps per bar at this resolution.
    """
    if resolution not in VALID_RESOLUTIONS:
        raise ValueError(
            f"resolution must be one of {VALID_RESOLUTIONS}, got {resolution}"
        )
    num, den = song.time_signature
    steps_per_bar_exact = num * resolution / den
    if steps_per_bar_exact != int(steps_per_bar_exact) or steps_per_bar_exact < 1:
        raise DataError(
            f"time signature {num}/{den} gives {steps_per_bar_exact} steps per bar "
            f"at 1/{resolution} resolution; need a positive whole number"
        )
    steps_per_bar = int(steps_per_bar_exact)
    if song.note_count == 0:
        raise DataError("empty segment: the song contains no notes")

    step_ticks = song.ticks_per_quarter * 4.0 / resolution
    n_tracks = len(song.tracks)
    spans: list[list[tuple[int, int, int]]] = []
    last_cell = _round_half_up(song.length_ticks / step_ticks)
    for events in song.tracks:
        track_spans = []
        for note in events:
            s = _round_half_up(note.start / step_ticks)
            e = _round_half_up(note.end / step_ticks)
            if e <= s:
                e = s + 1  # sub-step notes still occupy one cell
            track_spans.append((s, e, note.pitch))
            last_cell = max(last_cell, e)
        spans.append(track_spans)

    steps = math.ceil(last_cell / steps_per_bar) * steps_per_bar
    grid = np.zeros((n_tracks, steps, 128), dtype=bool)
    for k, track_spans in enumerate(spans):
        for s, e, pitch in track_spans:
            grid[k, s:e, pitch] = True
    return PianoRoll(grid=grid, steps_per_bar=steps_per_bar, time_signature=song.time_signature)


def _vlq_bytes(value: int) -> bytes:
    if value < 0:
        raise ValueError(f"cannot encode negative delta {value}")
    chunks = [value & 0x7F]
    value >>= 7
    while value:
        chunks.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(chunks))


def _track_chunk(events: bytes) -> bytes:
    return b"MTrk" + len(events).to_bytes(4, "big") + events


def _note_spans(column: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start/end step indices of each run of consecutive True cells."""
    padded = np.concatenate(([False], column, [False])).astype(np.int8)
    edges = np.diff(padded)
    return np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)


def render_midi(
    roll: PianoRoll,
    tempo_bpm: float = 120.0,
    velocity: int = 100,
    ticks_per_quarter: int = 480,
) -> bytes:
    """Serialize a piano roll as an SMF format 1 byte stream.

    One MIDI track per roll track; adjacent on-cells of the same pitch merge
    into a single note. Every note uses the same velocity. Tempo and time
    signature meta events go on the first track. Note-offs are written before
    note-ons that share a tick, and every end-of-track marker sits at the
    roll's final tick, so trailing silent bars survive a parse round trip.

    Args:
        roll: Quantized content to render.
        tempo_bpm: Tempo for the single tempo event.
        velocity: Note-on velocity applied to every note (1-127).
        ticks_per_quarter: SMF time division to use.

    Returns:
        Complete file content as bytes.
    """
    if not 1 <= velocity <= 127:
        raise ValueError(f"velocity {velocity} outside 1..127")
    if tempo_bpm <= 0:
        raise ValueError(f"tempo must be positive, got {tempo_bpm}")
    num, den = roll.time_signature
    if den & (den - 1):
        raise ValueError(f"time signature denominator {den} is not a power of two")
    step_ticks = ticks_per_quarter * 4 // roll.resolution
    if step_ticks * roll.resolution != ticks_per_quarter * 4:
        raise ValueError(
            f"resolution 1/{roll.resolution} does not divide {ticks_per_quarter} "
            f"ticks per quarter"
        )

    chunks = []
    for k in range(roll.tracks):
        channel = _MELODIC_CHANNELS[k % len(_MELODIC_CHANNELS)]
        # (tick, order, pitch, is_on): offs sort before ons at equal ticks.
        track_events: list[tuple[int, int, int, bool]] = []
        for pitch in range(128):
            column = roll.grid[k, :, pitch]
            if not column.any():
                continue
            starts, ends = _note_spans(column)
            for s, e in zip(starts, ends):
                track_events.append((int(s) * step_ticks, 1, pitch, True))
                track_events.append((int(e) * step_ticks, 0, pitch, False))
        track_events.sort()

        payload = bytearray()
        if k == 0:
            mpqn = round(60_000_000 / tempo_bpm)
            payload += b"\x00\xff\x51\x03" + mpqn.to_bytes(3, "big")
            payload += bytes([0x00, 0xFF, 0x58, 0x04, num, den.bit_length() - 1, 24, 8])
        tick = 0
        for ev_tick, _, pitch, is_on in track_events:
            payload += _vlq_bytes(ev_tick - tick)
            tick = ev_tick
            status = (0x90 if is_on else 0x80) | channel
            payload += bytes([status, pitch, velocity if is_on else 0])
        # End-of-track at the roll's true end preserves trailing silence.
        payload += _vlq_bytes(roll.steps * step_ticks - tick)
        payload += b"\xff\x2f\x00"
        chunks.append(_track_chunk(bytes(payload)))

    header = b"MThd" + (6).to_bytes(4, "big")
    header += (1).to_bytes(2, "big")
    header += roll.tracks.to_bytes(2, "big")
    header += ticks_per_quarter.to_bytes(2, "big")
    return header + b"".join(chunks)


def save_midi(
    roll: PianoRoll,
    path: str,
    tempo_bpm: float = 120.0,
    velocity: int = 100,
) -> None:
    """Render a piano roll and write it to ``path``."""
    with open(path, "wb") as fh:
        fh.write(render_midi(roll, tempo_bpm=tempo_bpm, velocity=velocity))
