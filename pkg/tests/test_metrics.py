"""Metric oracles: hand-computed divergences and overlaps."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_chorale, random_roll, roll_from_notes
from pyramidi.metrics import (
    evaluate,
    format_per_sample_csv,
    format_report_kv,
    group_distribution,
    group_overlap,
    kl_divergence_bits,
)
from pyramidi.midi_io import PianoRoll


def roll_of_groups(step_groups: list[list[int]], steps_per_bar=None) -> PianoRoll:
    """Single-track roll whose step t sounds exactly step_groups[t]."""
    steps = len(step_groups)
    grid = np.zeros((1, steps, 128), dtype=bool)
    for t, pitches in enumerate(step_groups):
        for p in pitches:
            grid[0, t, p] = True
    return PianoRoll(grid=grid, steps_per_bar=steps_per_bar or steps)


class TestGroupDistribution:
    def test_counts_pool_tracks_and_include_rests(self):
        grid = np.zeros((2, 4, 128), dtype=bool)
        grid[0, 0, 60] = True
        grid[0, 1, 60] = True
        grid[1, 0, [40, 47]] = True
        roll = PianoRoll(grid=grid, steps_per_bar=4)
        dist = group_distribution(roll)
        # 8 cells total: 2x (60,), 1x (40,47), 5x rest.
        assert dist[(60,)] == pytest.approx(2 / 8)
        assert dist[(40, 47)] == pytest.approx(1 / 8)
        assert dist[()] == pytest.approx(5 / 8)
        assert sum(dist.values()) == pytest.approx(1.0)

    def test_chorale_distribution_sums_to_one(self):
        dist = group_distribution(make_chorale())
        assert sum(dist.values()) == pytest.approx(1.0)
        assert all(v > 0 for v in dist.values())


class TestKlDivergence:
    def test_identical_distributions_exactly_zero(self):
        p = {(60,): 0.5, (64,): 0.25, (): 0.25}
        assert kl_divergence_bits(p, dict(p)) == 0.0

    def test_hand_case_half_half_vs_quarter_three_quarter(self):
        p = {(60,): 0.5, (64,): 0.5}
        q = {(60,): 0.25, (64,): 0.75}
        expected = 1.0 - math.log2(3.0) / 2.0  # 0.5*log2(2) + 0.5*log2(2/3)
        assert kl_divergence_bits(p, q) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.20751875, abs=1e-7)

    def test_asymmetry(self):
        p = {(60,): 0.5, (64,): 0.5}
        q = {(60,): 0.25, (64,): 0.75}
        assert kl_divergence_bits(p, q) != pytest.approx(kl_divergence_bits(q, p))

    def test_missing_support_stays_finite(self):
        p = {(60,): 0.5, (64,): 0.5}
        q = {(60,): 1.0}
        value = kl_divergence_bits(p, q)
        assert math.isfinite(value)
        # Half of p's mass sits on a group q gives only epsilon weight:
        # the divergence is large but bounded by the smoothing floor.
        assert value > 5.0

    def test_smoothing_only_when_needed(self):
        # q covers p's support, but has extra groups: no smoothing, and the
        # extra q mass still costs p nothing directly.
        p = {(60,): 1.0}
        q = {(60,): 0.5, (64,): 0.5}
        assert kl_divergence_bits(p, q) == pytest.approx(1.0)  # log2(1/0.5)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_non_negative_on_random_rolls(self, seed):
        rng = np.random.default_rng(seed)
        a = random_roll(rng)
        b = random_roll(rng)
        value = kl_divergence_bits(group_distribution(a), group_distribution(b))
        assert value >= -1e-12


class TestGroupOverlap:
    def test_identical_is_one(self):
        roll = make_chorale(bars=2)
        assert group_overlap(roll, roll) == 1.0

    def test_disjoint_is_zero(self):
        a = roll_of_groups([[60], [62]])
        b = roll_of_groups([[70], [72]])
        assert group_overlap(a, b) == 0.0

    def test_half_overlap_hand_case(self):
        # {a, b, c} vs {b, c, d}: intersection 2, union 4.
        a = roll_of_groups([[60], [62], [64]], steps_per_bar=3)
        b = roll_of_groups([[62], [64], [66]], steps_per_bar=3)
        assert group_overlap(a, b) == pytest.approx(0.5)

    def test_subset_gives_size_ratio(self):
        a = roll_of_groups([[60], [62]])
        b = roll_of_groups([[60], [62], [64], [66]], steps_per_bar=4)
        assert group_overlap(a, b) == pytest.approx(2 / 4)

    def test_symmetry(self):
        a = make_chorale(bars=2)
        b = make_chorale(bars=4)
        assert group_overlap(a, b) == group_overlap(b, a)


class TestEvaluate:
    def test_source_vs_itself(self):
        roll = make_chorale(bars=4)
        report = evaluate(roll, [roll, roll])
        assert report.mean_kl_bits == 0.0
        assert report.mean_overlap == 1.0
        assert report.total_novel_groups == 0
        assert all(s.distinct_groups == report.source_distinct_groups for s in report.scores)

    def test_novel_groups_counted(self):
        source = roll_of_groups([[60], [62]])
        sample = roll_of_groups([[60], [70]])
        report = evaluate(source, [sample])
        assert report.scores[0].novel_groups == 1
        assert report.scores[0].overlap == pytest.approx(1 / 3)

    def test_rejects_empty_sample_list(self):
        with pytest.raises(ValueError):
            evaluate(make_chorale(bars=1), [])

    def test_report_serialization(self):
        roll = make_chorale(bars=2)
        report = evaluate(roll, [roll])
        kv = format_report_kv(report)
        assert "mean_kl_bits = 0.000000" in kv
        assert "mean_overlap = 1.000000" in kv
        assert all(" = " in line for line in kv.strip().splitlines())
        csv = format_per_sample_csv(report)
        lines = csv.strip().splitlines()
        assert lines[0] == "sample,kl_bits,overlap,distinct_groups,novel_groups"
        assert lines[1].startswith("0,0.000000,1.000000,")
