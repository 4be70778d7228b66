"""Acceptance gate: one test per release criterion, each printing PASS/FAIL.

The criteria pin the package's headline behaviors end to end: full-size
training converges on a single segment, the stage pyramid beats its
single-stage ablation on distribution metrics, generated material stays
inside the source dictionaries, the MIDI codec round-trips exactly, gradients
and the sampler are numerically correct, metric oracles hold, runs are
byte-reproducible, and the attention core honors its causality and memory
contracts.

The convergence and ablation tests train six full-size models and dominate
the suite's wall time (roughly twenty minutes on one CPU core); everything
else finishes in seconds. Each test emits one `PASS criterion N` /
`FAIL criterion N` line through pytest's capture so the gate's verdict reads
off the terminal directly.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from conftest import make_chorale, roll_from_notes, random_roll
from gradcheck import check_gradients

from pyramidi.metrics import (
    evaluate,
    group_distribution,
    group_overlap,
    kl_divergence_bits,
)
from pyramidi.midi_io import PianoRoll, parse_midi, quantize, render_midi
from pyramidi.neural.stage import StageConfig, StageModel, nll_loss
from pyramidi.pgroup import build_dictionaries, decode, encode
from pyramidi.pipeline import (
    GenerateConfig,
    TrainConfig,
    generate,
    save_bundle,
    top_p_sample,
    train,
)

NLL_BOUND = 1e-2
TRAIN_BUDGET_SECONDS = 15 * 60
ABLATION_SEEDS = (0, 1, 2)


def _report(capsys, number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    with capsys.disabled():
        print(line, flush=True)
    assert ok, line


# --- training material -------------------------------------------------------

CHORD_TONES = [
    (72, 64, 55, 48),  # I   (soprano, alto, tenor, bass)
    (69, 60, 52, 45),  # vi
    (65, 57, 48, 41),  # IV
    (67, 59, 50, 43),  # V
]

MOVE_WEIGHTS = {
    0: (0.35, 0.18, 0.18, 0.15, 0.14),  # soprano: busiest voice
    1: (0.55, 0.13, 0.12, 0.0, 0.20),
    2: (0.55, 0.13, 0.12, 0.0, 0.20),
    3: (0.60, 0.10, 0.0, 0.10, 0.20),  # bass: holds or runs
}


def acceptance_segment(seed: int = 2025, phrases: int = 3) -> PianoRoll:
    """Twelve bars of four-voice material over a repeating harmonic loop.

    Beat heads always carry the bar's chord tone, so the quarter-note grid
    is a clean four-bar loop. The sixteenth-note figuration between beats
    (hold, upper/lower neighbour, run, or a breath rest) is drawn per beat
    and voice from a fixed-seed generator, so the fine grid is busy and
    never repeats verbatim, and every voice realizes rests.
    """
    rng = np.random.default_rng(seed)
    bars = 4 * phrases
    spb = 16
    grid = np.zeros((4, bars * spb, 128), dtype=bool)
    for bar in range(bars):
        tones = CHORD_TONES[bar % 4]
        nxt = CHORD_TONES[(bar + 1) % 4]
        for voice in range(4):
            tone = tones[voice]
            base = bar * spb
            for beat in range(4):
                at = base + beat * 4
                grid[voice, at, tone] = True
                move = rng.choice(5, p=MOVE_WEIGHTS[voice])
                if move == 0:  # hold through the beat
                    grid[voice, at + 1 : at + 4, tone] = True
                elif move == 1:  # upper neighbour on the off-eighth
                    grid[voice, at + 1, tone] = True
                    grid[voice, at + 2, tone + 2] = True
                    grid[voice, at + 3, tone] = True
                elif move == 2:  # lower neighbour
                    grid[voice, at + 1, tone] = True
                    grid[voice, at + 2, tone - 1] = True
                    grid[voice, at + 3, tone] = True
                elif move == 3:  # sixteenth run toward the next beat's tone
                    step = 2 if nxt[voice] >= tone else -2
                    grid[voice, at + 1, tone + step] = True
                    grid[voice, at + 2, tone + 2 * step] = True
                    grid[voice, at + 3, tone + step] = True
                else:  # breath: attack, then rest out the beat
                    grid[voice, at + 1, tone] = True
    return PianoRoll(grid=grid, steps_per_bar=16, time_signature=(4, 4))


@pytest.fixture(scope="session")
def segment() -> PianoRoll:
    return acceptance_segment()


@pytest.fixture(scope="session")
def trained(segment):
    """Cached trainer: (seed, single_stage) -> (bundle, wall_seconds)."""
    cache: dict[tuple[int, bool], tuple[object, float]] = {}

    def get(seed: int, single_stage: bool):
        key = (seed, single_stage)
        if key not in cache:
            started = time.monotonic()
            bundle = train(
                segment, TrainConfig(seed=seed, single_stage=single_stage)
            )
            cache[key] = (bundle, time.monotonic() - started)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def ablation(segment, trained):
    """Per-seed samples and reports for the pyramid and its ablation."""
    results = {}
    for seed in ABLATION_SEEDS:
        per = {}
        for name, single in (("pyramid", False), ("single", True)):
            bundle, _ = trained(seed, single)
            samples = generate(
                bundle,
                GenerateConfig(bars=32, samples=10, primer_bars=12, seed=seed),
            )
            per[name] = (samples, evaluate(segment, samples))
        results[seed] = per
    return results


# --- criterion 1: overfit convergence ---------------------------------------


def test_criterion_1_overfit_convergence(segment, trained, capsys):
    pyramid, pyramid_wall = trained(0, False)
    single, single_wall = trained(0, True)
    pyramid_nlls = [stage.final_nll for stage in pyramid.stages]
    single_nlls = [stage.final_nll for stage in single.stages]
    ok = (
        all(nll <= NLL_BOUND for nll in pyramid_nlls + single_nlls)
        and pyramid_wall <= TRAIN_BUDGET_SECONDS
    )
    detail = (
        "overfit convergence: pyramid nll "
        + "/".join(f"{v:.4f}" for v in pyramid_nlls)
        + f" in {pyramid_wall:.0f}s, single-stage nll "
        + f"{single_nlls[0]:.4f} in {single_wall:.0f}s"
        + f" (bound {NLL_BOUND}, budget {TRAIN_BUDGET_SECONDS}s)"
    )
    _report(capsys, 1, ok, detail)


# --- criterion 2: ablation direction ----------------------------------------


def test_criterion_2_ablation_direction(ablation, capsys):
    wins = 0
    parts = []
    for seed in ABLATION_SEEDS:
        _, pyramid_report = ablation[seed]["pyramid"]
        _, single_report = ablation[seed]["single"]
        better = (
            pyramid_report.mean_overlap > single_report.mean_overlap
            and pyramid_report.mean_kl_bits < single_report.mean_kl_bits
        )
        wins += better
        parts.append(
            f"seed {seed} {'won' if better else 'lost'} (overlap "
            f"{pyramid_report.mean_overlap:.3f} vs "
            f"{single_report.mean_overlap:.3f}, kl "
            f"{pyramid_report.mean_kl_bits:.3f} vs "
            f"{single_report.mean_kl_bits:.3f})"
        )
    ok = wins >= 2
    _report(
        capsys,
        2,
        ok,
        f"ablation direction holds on {wins}/3 seeds: " + "; ".join(parts),
    )


# --- criterion 3: closed output space ----------------------------------------


def test_criterion_3_closed_output_space(segment, trained, ablation, capsys):
    scanned = 0
    novel = 0
    identity_holds = True
    for seed in ABLATION_SEEDS:
        for name, single in (("pyramid", False), ("single", True)):
            bundle, _ = trained(seed, single)
            samples, report = ablation[seed][name]
            for roll in samples:
                encode(roll, bundle.dictionaries)  # raises if any group is new
                scanned += 1
            novel += report.total_novel_groups
            for score in report.scores:
                expected = (
                    score.distinct_groups / report.source_distinct_groups
                )
                if score.overlap != expected:
                    identity_holds = False
    ok = novel == 0 and identity_holds
    _report(
        capsys,
        3,
        ok,
        f"closed output space: {scanned} samples re-encoded, {novel} novel "
        f"groups, overlap == distinct/source everywhere: {identity_holds}",
    )


# --- criterion 4: codec round trips ------------------------------------------


def _codec_corpus() -> list[PianoRoll]:
    rolls = [
        make_chorale(),
        acceptance_segment(),
        roll_from_notes([[(60, 0, 4), (64, 4, 4), (67, 8, 8)]], steps_per_bar=16),
        roll_from_notes(
            [[(72, 0, 3), (71, 3, 3), (69, 6, 6)], [(48, 0, 12)]],
            steps_per_bar=12,
            time_signature=(3, 4),
        ),
        roll_from_notes(
            [[(60, i, 1) for i in range(0, 24, 2)]],
            steps_per_bar=12,
            time_signature=(6, 8),
        ),
        roll_from_notes(
            [[(55, 0, 8), (57, 8, 8)], [(36, 0, 16)]],
            steps_per_bar=8,
            time_signature=(2, 2),
        ),
    ]
    meters = [
        (16, (4, 4)),
        (12, (3, 4)),
        (12, (6, 8)),
        (8, (2, 2)),
        (24, (6, 8)),
    ]
    rng = np.random.default_rng(404)
    for index in range(16):
        spb, signature = meters[index % len(meters)]
        rolls.append(
            random_roll(rng, steps_per_bar=spb, time_signature=signature)
        )
    return rolls


def test_criterion_4_codec_round_trips(capsys):
    corpus = _codec_corpus()
    midi_mismatches = 0
    token_mismatches = 0
    for roll in corpus:
        back = quantize(parse_midi(render_midi(roll)), roll.resolution)
        if (
            back.grid.shape != roll.grid.shape
            or back.steps_per_bar != roll.steps_per_bar
            or back.time_signature != roll.time_signature
        ):
            midi_mismatches += roll.grid.size
        else:
            midi_mismatches += int(np.sum(back.grid != roll.grid))
        decoded = decode(encode(roll, build_dictionaries(roll)))
        token_mismatches += int(np.sum(decoded.grid != roll.grid))
    ok = len(corpus) >= 20 and midi_mismatches == 0 and token_mismatches == 0
    _report(
        capsys,
        4,
        ok,
        f"codec round trips: {len(corpus)} rolls, {midi_mismatches} MIDI cell "
        f"mismatches, {token_mismatches} token cell mismatches",
    )


# --- criterion 5: gradient correctness ---------------------------------------


def test_criterion_5_gradient_correctness(capsys):
    config = StageConfig(
        proc_len=4,
        layers=1,
        heads=2,
        head_dim=4,
        model_dim=8,
        ffn_dim=16,
        dropout=0.0,
    )
    rng = np.random.default_rng(11)
    model = StageModel(config, [5], rng, dtype=np.float64)
    tokens = rng.integers(0, 5, size=(1, 4))
    targets = rng.integers(0, 5, size=(1, 4))

    def make_loss():
        logits, _ = model.apply(tokens, None)
        return nll_loss(logits, targets)

    errors = check_gradients(
        make_loss, model.params(), tolerance=1e-3, step=1e-5
    )
    worst = max(errors.values())
    ok = worst <= 1e-3
    _report(
        capsys,
        5,
        ok,
        f"gradient correctness: {len(errors)} parameter groups, worst "
        f"relative error {worst:.2e} (tolerance 1e-3)",
    )


# --- criterion 6: sampler frequencies ----------------------------------------


def test_criterion_6_sampler_frequencies(capsys):
    probs = np.array([0.5, 0.3, 0.2])
    draws = 100_000

    rng = np.random.default_rng(0)
    narrow = np.bincount(
        [top_p_sample(probs, 0.5, rng) for _ in range(draws)], minlength=3
    )
    rng = np.random.default_rng(0)
    wide = (
        np.bincount(
            [top_p_sample(probs, 0.9, rng) for _ in range(draws)], minlength=3
        )
        / draws
    )
    narrow_ok = narrow[0] == draws
    deviation = float(np.max(np.abs(wide - probs)))
    ok = narrow_ok and deviation <= 0.01
    _report(
        capsys,
        6,
        ok,
        f"sampler frequencies: p=0.5 emits token 0 at {narrow[0] / draws:.4f}, "
        f"p=0.9 worst deviation {deviation:.4f} over {draws} draws",
    )


# --- criterion 7: metric oracles ---------------------------------------------


def test_criterion_7_metric_oracles(capsys):
    a, b = (60,), (64,)
    p = {a: 0.75, b: 0.25}
    q = {a: 0.5, b: 0.5}
    self_kl = kl_divergence_bits(p, p)
    hand = kl_divergence_bits(p, q)
    hand_expected = 0.75 * np.log2(1.5) + 0.25 * np.log2(0.5)

    def steps_roll(pitches: list[int | None]) -> PianoRoll:
        grid = np.zeros((1, len(pitches), 128), dtype=bool)
        for i, pitch in enumerate(pitches):
            if pitch is not None:
                grid[0, i, pitch] = True
        return PianoRoll(grid=grid, steps_per_bar=len(pitches))

    full = group_overlap(steps_roll([60, 62, 60, 62]), steps_roll([62, 60, 62, 60]))
    half = group_overlap(
        steps_roll([60, 62, 60, 62]), steps_roll([60, 62, 64, None])
    )
    none = group_overlap(steps_roll([60, 60, 60, 60]), steps_roll([62, 62, 62, 62]))
    ok = (
        self_kl <= 1e-9
        and abs(hand - hand_expected) <= 1e-6
        and (full, half, none) == (1.0, 0.5, 0.0)
    )
    _report(
        capsys,
        7,
        ok,
        f"metric oracles: KL(P,P)={self_kl:.1e}, hand case "
        f"{hand:.8f} (expected {hand_expected:.8f}), overlap cases "
        f"({full}, {half}, {none})",
    )


# --- criterion 8: determinism -------------------------------------------------


def test_criterion_8_determinism(segment, tmp_path_factory, capsys):
    config = TrainConfig(seed=7, steps=60, warmup_steps=20)
    sampling = GenerateConfig(bars=8, samples=2, primer_bars=12, seed=5)
    out = tmp_path_factory.mktemp("determinism")
    payloads = []
    for run in ("first", "second"):
        bundle = train(segment, config)
        bundle_dir = out / run
        save_bundle(bundle, bundle_dir)
        files = {
            path.name: path.read_bytes()
            for path in sorted(bundle_dir.iterdir())
        }
        midi = [render_midi(roll) for roll in generate(bundle, sampling)]
        payloads.append((files, midi))
    (first_files, first_midi), (second_files, second_midi) = payloads
    files_match = first_files == second_files
    midi_match = first_midi == second_midi
    ok = files_match and midi_match
    _report(
        capsys,
        8,
        ok,
        f"determinism: {len(first_files)} bundle files identical: "
        f"{files_match}, {len(first_midi)} rendered samples identical: "
        f"{midi_match}",
    )


# --- criterion 9: architecture contracts -------------------------------------


def _random_stage(rng: np.random.Generator, layers: int, proc_len: int, mem_len: int):
    # head_dim >= 4 keeps layernorm non-degenerate (with two dimensions it
    # preserves only the sign ordering, so distinct embeddings can collide
    # exactly and the positive perturbation controls below would misfire)
    # while keeping model_dim even for the position tables.
    heads = int(rng.choice([1, 2]))
    head_dim = int(rng.choice([4, 6]))
    tracks = int(rng.integers(1, 4))
    vocabs = [int(rng.integers(2, 7)) for _ in range(tracks)]
    config = StageConfig(
        proc_len=proc_len,
        mem_len=mem_len,
        layers=layers,
        heads=heads,
        head_dim=head_dim,
        model_dim=heads * head_dim,
        ffn_dim=int(rng.integers(4, 17)),
        dropout=0.0,
    )
    model = StageModel(
        config, vocabs, np.random.default_rng(int(rng.integers(0, 2**31)))
    )
    return model, vocabs


def _random_block(rng, vocabs, proc_len):
    return np.stack([rng.integers(0, v, size=proc_len) for v in vocabs])


def _perturb(rng, block, vocabs, track, position):
    changed = block.copy()
    vocab = vocabs[track]
    changed[track, position] = (
        block[track, position] + 1 + int(rng.integers(0, vocab - 1))
    ) % vocab
    return changed


def test_criterion_9_architecture_contracts(capsys):
    rng = np.random.default_rng(19)
    causal_violations = 0
    for _ in range(100):
        proc_len = int(rng.integers(2, 6))
        model, vocabs = _random_stage(
            rng,
            layers=int(rng.integers(1, 3)),
            proc_len=proc_len,
            mem_len=int(rng.integers(1, proc_len + 1)),
        )
        block = _random_block(rng, vocabs, proc_len)
        position = int(rng.integers(1, proc_len))
        changed = _perturb(
            rng, block, vocabs, int(rng.integers(0, len(vocabs))), position
        )
        base, _ = model.apply(block, None)
        pert, _ = model.apply(changed, None)
        prefix_intact = all(
            np.array_equal(a.data[:position], b.data[:position])
            for a, b in zip(base, pert)
        )
        suffix_reacts = any(
            not np.array_equal(a.data[position:], b.data[position:])
            for a, b in zip(base, pert)
        )
        if not (prefix_intact and suffix_reacts):
            causal_violations += 1

    window_violations = 0
    for _ in range(100):
        # The memory-window bound is exact for one layer: deeper stacks
        # widen their receptive field through the layer recurrence, which
        # is the mechanism's purpose, not a violation.
        proc_len = int(rng.integers(2, 6))
        mem_len = int(rng.integers(1, proc_len))
        model, vocabs = _random_stage(rng, layers=1, proc_len=proc_len, mem_len=mem_len)
        first = _random_block(rng, vocabs, proc_len)
        second = _random_block(rng, vocabs, proc_len)
        track = int(rng.integers(0, len(vocabs)))
        outside = _perturb(
            rng, first, vocabs, track, int(rng.integers(0, proc_len - mem_len))
        )
        inside = _perturb(rng, first, vocabs, track, proc_len - 1)

        _, memory = model.apply(first, None)
        base, _ = model.apply(second, memory)
        _, memory_outside = model.apply(outside, None)
        unchanged, _ = model.apply(second, memory_outside)
        _, memory_inside = model.apply(inside, None)
        changed, _ = model.apply(second, memory_inside)

        outside_invisible = all(
            np.array_equal(a.data, b.data) for a, b in zip(base, unchanged)
        )
        inside_visible = any(
            not np.array_equal(a.data, b.data) for a, b in zip(base, changed)
        )
        if not (outside_invisible and inside_visible):
            window_violations += 1

    ok = causal_violations == 0 and window_violations == 0
    _report(
        capsys,
        9,
        ok,
        f"architecture contracts: {causal_violations} causal violations, "
        f"{window_violations} memory-window violations over 100 trials each",
    )
