"""Distribution metrics comparing generated material with its source.

Both metrics work on pitch groups pooled across tracks: every (track, step)
cell contributes one canonical group occurrence, rests included. The
divergence asks how far the source's group frequencies drift in a sample;
the overlap asks how much of the source's vocabulary of distinct groups a
sample actually exercises (and whether it stays inside it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .midi_io import PianoRoll
from .pgroup import PitchGroup, track_groups

__all__ = [
    "SMOOTHING_EPSILON",
    "group_distribution",
    "kl_divergence_bits",
    "group_overlap",
    "SampleScore",
    "EvalReport",
    "evaluate",
    "format_report_kv",
    "format_per_sample_csv",
]

SMOOTHING_EPSILON = 1e-6


def group_distribution(roll: PianoRoll) -> dict[PitchGroup, float]:
    """Relative frequency of each pitch group, pooled over tracks and steps."""
    counts: dict[PitchGroup, int] = {}
    for k in range(roll.tracks):
        for group in track_groups(roll, k):
            counts[group] = counts.get(group, 0) + 1
    total = roll.tracks * roll.steps
    return {group: count / total for group, count in counts.items()}


def kl_divergence_bits(
    p: dict[PitchGroup, float], q: dict[PitchGroup, float]
) -> float:
    """Kullback-Leibler divergence KL(p || q) in bits.

    When every group that ``p`` uses also appears in ``q``, the divergence is
    computed directly, so identical distributions give exactly zero. Only
    when ``p`` has mass outside ``q``'s support is ``q`` smoothed: every
    group in the union support gains :data:`SMOOTHING_EPSILON` before
    renormalization, which keeps the divergence finite.
    """
    support = set(p) | set(q)
    needs_smoothing = any(q.get(g, 0.0) == 0.0 for g in p if p[g] > 0.0)
    if needs_smoothing:
        q_total = sum(q.values()) + SMOOTHING_EPSILON * len(support)
        q_of = {g: (q.get(g, 0.0) + SMOOTHING_EPSILON) / q_total for g in support}
    else:
        q_of = q
    divergence = 0.0
    for group, p_mass in p.items():
        if p_mass > 0.0:
            divergence += p_mass * math.log2(p_mass / q_of[group])
    return divergence


def group_overlap(a: PianoRoll, b: PianoRoll) -> float:
    """Jaccard overlap of the distinct pitch groups two rolls use."""
    groups_a = set(group_distribution(a))
    groups_b = set(group_distribution(b))
    union = groups_a | groups_b
    if not union:
        return 1.0
    return len(groups_a & groups_b) / len(union)


@dataclass(frozen=True)
class SampleScore:
    """Metrics for one generated sample against the source material."""

    index: int
    kl_bits: float
    overlap: float
    distinct_groups: int
    novel_groups: int  # groups the source never uses (0 = fully closed)


@dataclass(frozen=True)
class EvalReport:
    """Aggregate metrics for a batch of samples against one source."""

    scores: list[SampleScore]
    source_distinct_groups: int

    @property
    def mean_kl_bits(self) -> float:
        return sum(s.kl_bits for s in self.scores) / len(self.scores)

    @property
    def mean_overlap(self) -> float:
        return sum(s.overlap for s in self.scores) / len(self.scores)

    @property
    def total_novel_groups(self) -> int:
        return sum(s.novel_groups for s in self.scores)


def evaluate(source: PianoRoll, samples: list[PianoRoll]) -> EvalReport:
    """Score each sample's group distribution against the source's.

    The divergence direction is KL(source || sample): it measures how much
    of the source's usage a sample fails to reproduce, and is finite even
    when a sample never plays some source group (conditional smoothing).

    Raises:
        ValueError: No samples given.
    """
    if not samples:
        raise ValueError("need at least one sample to evaluate")
    source_dist = group_distribution(source)
    source_groups = set(source_dist)
    scores = []
    for index, sample in enumerate(samples):
        sample_dist = group_distribution(sample)
        sample_groups = set(sample_dist)
        union = source_groups | sample_groups
        overlap = (
            len(source_groups & sample_groups) / len(union) if union else 1.0
        )
        scores.append(
            SampleScore(
                index=index,
                kl_bits=kl_divergence_bits(source_dist, sample_dist),
                overlap=overlap,
                distinct_groups=len(sample_groups),
                novel_groups=len(sample_groups - source_groups),
            )
        )
    return EvalReport(scores=scores, source_distinct_groups=len(source_groups))


def format_report_kv(report: EvalReport) -> str:
    """Aggregate report as ``key = value`` lines."""
    lines = [
        f"samples = {len(report.scores)}",
        f"source_distinct_groups = {report.source_distinct_groups}",
        f"mean_kl_bits = {report.mean_kl_bits:.6f}",
        f"mean_overlap = {report.mean_overlap:.6f}",
        f"total_novel_groups = {report.total_novel_groups}",
    ]
    return "\n".join(lines) + "\n"


def format_per_sample_csv(report: EvalReport) -> str:
    """Per-sample scores as CSV with a header row."""
    lines = ["sample,kl_bits,overlap,distinct_groups,novel_groups"]
    for s in report.scores:
        lines.append(
            f"{s.index},{s.kl_bits:.6f},{s.overlap:.6f},"
            f"{s.distinct_groups},{s.novel_groups}"
        )
    return "\n".join(lines) + "\n"
