"""Shared fixtures: synthetic musical material and tmp model runs."""

import os

# One core in CI containers; pinning BLAS threads avoids spin-wait overhead
# and keeps float reductions deterministic. Must happen before numpy loads.
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np
import pytest

from pyramidi.midi_io import PianoRoll

Note = tuple[int, int, int]  # (pitch, start_step, duration_steps)


def roll_from_notes(
    tracks: list[list[Note]],
    steps_per_bar: int = 16,
    bars: int | None = None,
    time_signature: tuple[int, int] = (4, 4),
) -> PianoRoll:
    """Build a roll from (pitch, start, duration) triples per track."""
    last = max((s + d for notes in tracks for _, s, d in notes), default=0)
    if bars is None:
        bars = max(1, -(-last // steps_per_bar))
    grid = np.zeros((len(tracks), bars * steps_per_bar, 128), dtype=bool)
    for k, notes in enumerate(tracks):
        for pitch, start, duration in notes:
            grid[k, start : start + duration, pitch] = True
    return PianoRoll(grid=grid, steps_per_bar=steps_per_bar, time_signature=time_signature)


def make_chorale(bars: int = 12) -> PianoRoll:
    """Deterministic four-voice segment for training tests.

    Designed so that every bar is distinct at the quarter-note scale (the
    lead voice opens each bar with a unique pitch), the shortest note is a
    sixteenth (scale selection yields the full 4th/8th/16th chain), the alto
    plays two-pitch chords (multi-pitch groups), and the bass rests on beat 4
    of every bar (rest tokens appear at every scale).
    """
    lead: list[Note] = []
    alto: list[Note] = []
    tenor: list[Note] = []
    bass: list[Note] = []
    for b in range(bars):
        base = 16 * b
        lead.append((72 + b, base + 0, 4))
        lead.append((74 + (b * 3) % 4, base + 4, 4))
        lead.append((76 - b % 3, base + 8, 4))
        if b % 2 == 0:
            lead.append((79, base + 12, 1))
            lead.append((77, base + 13, 1))
            lead.append((76, base + 14, 2))
        else:
            lead.append((78, base + 12, 2))
            lead.append((74, base + 14, 2))
        alto.append((60, base + 0, 8))
        alto.append((64, base + 0, 8))  # chord with the previous entry
        alto.append((62 + b % 4, base + 8, 8))
        tenor.append((52 + b % 4, base + 0, 4))
        tenor.append((54 - b % 2, base + 4, 4))
        tenor.append((55, base + 8, 4))
        tenor.append((52 + (b + 1) % 3, base + 12, 4))
        bass.append((40 + b % 5, base + 0, 12))  # beat 4 rests
    return roll_from_notes([lead, alto, tenor, bass], steps_per_bar=16, bars=bars)


def random_roll(
    rng: np.random.Generator,
    tracks: int | None = None,
    bars: int | None = None,
    steps_per_bar: int = 16,
    time_signature: tuple[int, int] = (4, 4),
) -> PianoRoll:
    """Random but non-empty roll for round-trip style tests."""
    tracks = tracks if tracks is not None else int(rng.integers(1, 5))
    bars = bars if bars is not None else int(rng.integers(1, 5))
    steps = bars * steps_per_bar
    grid = np.zeros((tracks, steps, 128), dtype=bool)
    for k in range(tracks):
        for _ in range(int(rng.integers(1, 4 * bars + 2))):
            pitch = int(rng.integers(24, 100))
            start = int(rng.integers(0, steps))
            duration = int(rng.integers(1, min(steps - start, 2 * steps_per_bar) + 1))
            grid[k, start : start + duration, pitch] = True
    if not grid.any():
        grid[0, 0, 60] = True
    return PianoRoll(grid=grid, steps_per_bar=steps_per_bar, time_signature=time_signature)


@pytest.fixture(scope="session")
def chorale() -> PianoRoll:
    return make_chorale()


@pytest.fixture(scope="session")
def tiny_roll() -> PianoRoll:
    """Two tracks, four bars; small enough for fast little tests."""
    melody = [(60 + (i % 5), 4 * i, 4) for i in range(16)]
    bass = [(36 + (i % 3), 16 * i, 12) for i in range(4)]
    return roll_from_notes([melody, bass], steps_per_bar=16, bars=4)
