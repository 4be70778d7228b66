"""Figure rendering: piano-roll images, loss curves, evaluation charts.

Everything draws through explicit Agg canvases rather than pyplot, so
importing this module never touches global matplotlib state or needs a
display. Piano rolls render pixel-exact: one image row per (track, pitch)
and one column per grid step, scaled by an integer factor.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.image import imsave

from .metrics import EvalReport
from .midi_io import PianoRoll

__all__ = [
    "piano_roll_image",
    "save_piano_roll_png",
    "save_nll_curves_png",
    "save_eval_report_png",
]

# One distinguishable color per track, cycled past eight tracks.
_TRACK_COLORS = np.array(
    [
        (0.122, 0.467, 0.706),
        (1.000, 0.498, 0.055),
        (0.173, 0.627, 0.173),
        (0.839, 0.153, 0.157),
        (0.580, 0.404, 0.741),
        (0.549, 0.337, 0.294),
        (0.890, 0.467, 0.761),
        (0.498, 0.498, 0.498),
    ]
)

_BACKGROUND = np.array((1.0, 1.0, 1.0))
_BAR_TINT = np.array((0.93, 0.93, 0.95))
_SEPARATOR = np.array((0.80, 0.80, 0.82))


def piano_roll_image(roll: PianoRoll) -> np.ndarray:
    """RGB array of shape ``(tracks * 128, steps, 3)``.

    Each track occupies a 128-row band with pitch 127 at the top; active
    cells take the track's color, bar-start columns get a light tint, and a
    single separator row divides adjacent bands.
    """
    tracks, steps = roll.tracks, roll.steps
    image = np.empty((tracks * 128, steps, 3), dtype=np.float64)
    image[:] = _BACKGROUND
    image[:, :: roll.steps_per_bar] = _BAR_TINT
    for k in range(tracks):
        band = image[k * 128 : (k + 1) * 128]
        # Row 0 of the band is pitch 127: transpose steps x pitch, flip pitch.
        mask = roll.grid[k].T[::-1]
        band[mask] = _TRACK_COLORS[k % len(_TRACK_COLORS)]
        if k:
            image[k * 128] = _SEPARATOR
    return image


def save_piano_roll_png(roll: PianoRoll, path: str | Path, scale: int = 2) -> None:
    """Write a pixel-exact piano-roll image.

    Args:
        roll: Content to draw.
        path: Destination PNG file.
        scale: Integer pixel size of one grid cell (both axes).
    """
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    image = piano_roll_image(roll)
    if scale > 1:
        image = np.repeat(np.repeat(image, scale, axis=0), scale, axis=1)
    imsave(str(path), image, format="png")


def save_nll_curves_png(
    curves: dict[str, list[tuple[int, float]]], path: str | Path
) -> None:
    """Plot per-stage training loss against optimizer steps (log y-axis)."""
    if not curves:
        raise ValueError("no curves to plot")
    fig = Figure(figsize=(8, 4.5), dpi=120)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot()
    plotted = False
    for label, points in curves.items():
        if not points:
            continue
        steps = [s for s, _ in points]
        values = [v for _, v in points]
        ax.plot(steps, values, linewidth=1.0, label=label)
        plotted = True
    if not plotted:
        raise ValueError("every curve is empty; nothing to plot")
    ax.set_yscale("log")
    ax.set_xlabel("optimizer step")
    ax.set_ylabel("training NLL (nats)")
    ax.grid(True, which="both", alpha=0.25)
    ax.legend(loc="upper right", fontsize=9)
    fig.tight_layout()
    fig.savefig(str(path), format="png")


def save_eval_report_png(report: EvalReport, path: str | Path) -> None:
    """Chart per-sample divergence and overlap with their means."""
    indices = [s.index for s in report.scores]
    kls = [s.kl_bits for s in report.scores]
    overlaps = [s.overlap for s in report.scores]

    fig = Figure(figsize=(8, 4.5), dpi=120)
    FigureCanvasAgg(fig)
    ax_kl, ax_ov = fig.subplots(1, 2)

    ax_kl.bar(indices, kls, color=_TRACK_COLORS[0])
    ax_kl.axhline(report.mean_kl_bits, color="black", linewidth=1.0, linestyle="--")
    ax_kl.set_xlabel("sample")
    ax_kl.set_ylabel("KL divergence (bits)")
    ax_kl.set_title(f"mean {report.mean_kl_bits:.3f}")

    ax_ov.bar(indices, overlaps, color=_TRACK_COLORS[2])
    ax_ov.axhline(report.mean_overlap, color="black", linewidth=1.0, linestyle="--")
    ax_ov.set_ylim(0.0, 1.05)
    ax_ov.set_xlabel("sample")
    ax_ov.set_ylabel("group overlap")
    ax_ov.set_title(f"mean {report.mean_overlap:.3f}")

    fig.tight_layout()
    fig.savefig(str(path), format="png")
