"""Training and generation around the stage pyramid.

One piece of multi-track material is the entire dataset. Training fits a
chain of stage models to it, coarse to fine: the coarsest stage learns
bar-to-next-bar prediction at the quarter-note grid, and each finer stage
learns to re-draw a bar at double density given the coarser version of the
same bar. Generation then walks the chain: the coarse stage dreams up new
bars one at a time (feeding its own output back), and each refiner upsamples
and re-draws them until the finest grid is reached.

All randomness flows from one root seed through named substreams, so a
training or generation run is reproducible byte for byte.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DataError, NumericError
from .midi_io import PianoRoll, parse_midi, render_midi, quantize, save_midi
from .neural import (
    Adam,
    StageConfig,
    StageModel,
    load_stage_checkpoint,
    lr_schedule,
    nll_loss,
    no_grad,
    save_stage_checkpoint,
)
from .pgroup import (
    PitchGroupDictionary,
    TokenSequence,
    decode,
    dump_dictionaries,
    encode,
    load_dictionaries,
)
from .pyramid import ScaleSpec, SequencePyramid, build_pyramid, choose_scales

__all__ = [
    "TrainConfig",
    "GenerateConfig",
    "TrainedStage",
    "ModelBundle",
    "substream",
    "top_p_sample",
    "prepare_segment",
    "train",
    "generate",
    "save_bundle",
    "load_bundle",
]


def substream(seed: int, name: str) -> np.random.Generator:
    """A named, independent random stream derived from one root seed."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run needs besides the material itself.

    ``steps`` counts optimizer updates per stage (one update per bar block).
    ``teacher_forcing`` controls what refiner stages see as input: the true
    coarser bars (on) or bars sampled from the already-trained coarser stage
    (off). The ablation flag ``single_stage`` skips the pyramid and trains
    one stage directly at the finest grid.
    """

    steps: int = 2000
    base_lr: float = 2e-4
    warmup_steps: int = 200
    min_lr: float | None = None
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    layers: int = 6
    heads: int = 8
    head_dim: int = 32
    model_dim: int = 256
    ffn_dim: int = 1024
    dropout: float = 0.09
    resolution: int = 16
    teacher_forcing: bool = True
    single_stage: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.base_lr <= 0.0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 <= self.warmup_steps < self.steps:
            raise ValueError(
                f"warmup_steps must be in [0, steps), got {self.warmup_steps} "
                f"with steps={self.steps}"
            )
        if self.min_lr is not None and self.min_lr < 0.0:
            raise ValueError(f"min_lr must be >= 0, got {self.min_lr}")
        for name in ("adam_beta1", "adam_beta2"):
            beta = getattr(self, name)
            if not 0.0 <= beta < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {beta}")
        if self.adam_eps <= 0.0:
            raise ValueError(f"adam_eps must be positive, got {self.adam_eps}")
        for name in ("layers", "heads", "head_dim", "model_dim", "ffn_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.resolution not in (4, 8, 16, 32):
            raise ValueError(
                f"resolution must be one of 4, 8, 16, 32, got {self.resolution}"
            )

    def stage_config(self, proc_len: int) -> StageConfig:
        return StageConfig(
            proc_len=proc_len,
            mem_len=proc_len,
            layers=self.layers,
            heads=self.heads,
            head_dim=self.head_dim,
            model_dim=self.model_dim,
            ffn_dim=self.ffn_dim,
            dropout=self.dropout,
        )


@dataclass(frozen=True)
class GenerateConfig:
    """Sampling controls for continuation generation.

    ``primer_bars`` caps how much of the training segment primes the stage
    memories; segments shorter than the cap prime on everything they have.
    """

    bars: int = 32
    samples: int = 1
    primer_bars: int = 12
    p_coarse: float = 0.9
    p_refine: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.bars < 1:
            raise ValueError(f"bars must be >= 1, got {self.bars}")
        if self.samples < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")
        if self.primer_bars < 1:
            raise ValueError(f"primer_bars must be >= 1, got {self.primer_bars}")
        for name, p in (("p_coarse", self.p_coarse), ("p_refine", self.p_refine)):
            if not 0.0 < p <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {p}")


@dataclass
class TrainedStage:
    """One fitted stage: its scale, model, and training record."""

    spec: ScaleSpec
    model: StageModel
    nll_curve: list[tuple[int, float]] = field(default_factory=list)
    final_nll: float = float("nan")


@dataclass
class ModelBundle:
    """A complete trained pyramid plus the material it was fitted to."""

    stages: list[TrainedStage]
    segment: PianoRoll
    sequence: TokenSequence
    pyramid: SequencePyramid
    config: TrainConfig

    @property
    def dictionaries(self) -> list[PitchGroupDictionary]:
        return self.sequence.dictionaries

    @property
    def specs(self) -> list[ScaleSpec]:
        return [stage.spec for stage in self.stages]


def prepare_segment(
    roll: PianoRoll, config: TrainConfig
) -> tuple[PianoRoll, TokenSequence, SequencePyramid]:
    """Choose scales for a roll and re-grid it to the finest one chosen.

    The roll is probed at its own resolution; when the material's shortest
    note needs a coarser grid than the roll carries, the roll is re-quantized
    through the codec so note boundaries are re-rounded properly.
    """
    specs = choose_scales(roll)
    finest = specs[-1].note_value
    if finest != roll.resolution:
        roll = quantize(parse_midi(render_midi(roll)), finest)
    if config.single_stage:
        specs = [ScaleSpec(finest, stride=1)]
    seq = encode(roll)
    pyramid = build_pyramid(seq, specs)
    if pyramid.bars < 2:
        raise DataError(
            f"segment has {pyramid.bars} bar(s); need at least 2 to learn "
            f"bar-to-bar structure"
        )
    return roll, seq, pyramid


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def top_p_sample(probs: np.ndarray, p: float, rng: np.random.Generator) -> int:
    """Draw one index from the smallest probability mass reaching ``p``.

    Probabilities sort descending (stable, so ties keep index order); the
    nucleus is the shortest prefix whose cumulative mass is at least ``p``,
    renormalized before the draw. ``p`` at or below the top probability makes
    sampling greedy; ``p = 1`` draws from the full distribution.
    """
    probs = np.asarray(probs, dtype=np.float64)
    order = np.argsort(-probs, kind="stable")
    ranked = probs[order]
    csum = np.cumsum(ranked)
    csum = csum / csum[-1]
    cut = min(int(np.searchsorted(csum, p, side="left")), probs.size - 1)
    nucleus = np.cumsum(ranked[: cut + 1]) / csum[cut]
    pick = min(int(np.searchsorted(nucleus, rng.random(), side="right")), cut)
    return int(order[pick])


def _sample_block(
    logits: list, p: float, rng: np.random.Generator
) -> np.ndarray:
    """Sample a ``(tracks, seg_len)`` token block from per-track logits."""
    rows = []
    for track_logits in logits:
        probs = _softmax_rows(np.asarray(track_logits.data, dtype=np.float64))
        rows.append([top_p_sample(row, p, rng) for row in probs])
    return np.asarray(rows, dtype=np.int64)


def _bars(seq: TokenSequence) -> list[np.ndarray]:
    return [seq.bar(t) for t in range(seq.bars)]


def _coarse_examples(level: TokenSequence) -> list[tuple[np.ndarray, np.ndarray]]:
    """(input bar, next bar) pairs for the coarsest stage."""
    bars = _bars(level)
    return list(zip(bars[:-1], bars[1:]))


def _refine_examples(
    coarse_bars: list[np.ndarray], fine: TokenSequence
) -> list[tuple[np.ndarray, np.ndarray]]:
    """(upsampled coarser bar, fine bar) pairs for a refiner stage."""
    fine_bars = _bars(fine)
    factor = fine.steps_per_bar // coarse_bars[0].shape[1]
    return [
        (np.repeat(c, factor, axis=1), f) for c, f in zip(coarse_bars, fine_bars)
    ]


def _sampled_coarse_bars(
    stages: list[TrainedStage],
    pyramid: SequencePyramid,
    upto: int,
    p: float,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Bars as the trained stages up to ``upto`` would actually produce them.

    The coarsest stage predicts each bar from its true predecessor, then the
    refiners re-draw those predictions scale by scale. Bar 0, which nothing
    predicts, stays ground truth. Used for refiner training with teacher
    forcing off.
    """
    level0 = pyramid.levels[0][1]
    bars0 = _bars(level0)
    with no_grad():
        stage0 = stages[0].model
        stage0.reset_memory()
        sampled = [bars0[0]]
        for t in range(level0.bars - 1):
            logits = stage0.step(bars0[t])
            sampled.append(_sample_block(logits, p, rng))
        current = sampled
        for idx in range(1, upto):
            refiner = stages[idx].model
            refiner.reset_memory()
            fine_level = pyramid.levels[idx][1]
            factor = fine_level.steps_per_bar // current[0].shape[1]
            refined = []
            for bar in current:
                logits = refiner.step(np.repeat(bar, factor, axis=1))
                refined.append(_sample_block(logits, p, rng))
            current = refined
    return current


def _train_stage(
    stage_index: int,
    spec: ScaleSpec,
    model: StageModel,
    examples_for_epoch: Callable[[], list[tuple[np.ndarray, np.ndarray]]],
    config: TrainConfig,
    log: Callable[[str], None] | None,
) -> list[tuple[int, float]]:
    """Run the optimizer loop for one stage; returns its loss curve."""
    dropout_rng = substream(config.seed, f"train.stage{stage_index}.dropout")
    opt = Adam(
        model.params(),
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_eps,
    )
    curve: list[tuple[int, float]] = []
    step = 0
    while step < config.steps:
        model.reset_memory()
        for tokens, targets in examples_for_epoch():
            if step >= config.steps:
                break
            lr = lr_schedule(
                step + 1,
                config.steps,
                config.base_lr,
                config.warmup_steps,
                min_lr=config.min_lr,
            )
            try:
                logits = model.step(tokens, rng=dropout_rng, train=True)
            except NumericError as exc:
                raise NumericError(
                    f"stage {stage_index + 1} ({spec.label} grid): {exc}"
                ) from None
            loss = nll_loss(logits, targets)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(
                    f"stage {stage_index + 1} ({spec.label} grid) diverged: "
                    f"non-finite loss at step {step + 1}"
                )
            opt.zero_grad()
            loss.backward()
            try:
                opt.step(lr)
            except NumericError as exc:
                raise NumericError(
                    f"stage {stage_index + 1} ({spec.label} grid): {exc}"
                ) from None
            step += 1
            curve.append((step, value))
            if log is not None and (step % 200 == 0 or step == 1):
                log(
                    f"stage {stage_index + 1} ({spec.label} grid) "
                    f"step {step}/{config.steps} nll {value:.4f}"
                )
    return curve


def _eval_stage(
    model: StageModel, examples: list[tuple[np.ndarray, np.ndarray]]
) -> float:
    """Teacher-forced mean NLL over a full pass, dropout off."""
    total = 0.0
    count = 0
    with no_grad():
        model.reset_memory()
        for tokens, targets in examples:
            logits = model.step(tokens)
            loss = nll_loss(logits, targets)
            total += float(loss.data) * targets.size
            count += targets.size
    return total / count


def train(
    roll: PianoRoll,
    config: TrainConfig = TrainConfig(),
    log: Callable[[str], None] | None = None,
) -> ModelBundle:
    """Fit the stage chain to one piece of material.

    Stages train sequentially, coarsest first, each for ``config.steps``
    optimizer updates. Encoder memory carries across the bars of an epoch
    and resets between epochs. With teacher forcing off, refiner inputs are
    re-sampled each epoch from the stages already trained.

    Raises:
        DataError: The material is too short or malformed.
        NumericError: A stage diverged (named in the message).
    """
    roll, seq, pyramid = prepare_segment(roll, config)
    bundle = ModelBundle(
        stages=[], segment=roll, sequence=seq, pyramid=pyramid, config=config
    )
    vocabs = [len(d) for d in seq.dictionaries]

    def constant(pairs: list[tuple[np.ndarray, np.ndarray]]):
        def supply() -> list[tuple[np.ndarray, np.ndarray]]:
            return pairs

        return supply

    for index, (spec, level) in enumerate(pyramid.levels):
        init_rng = substream(config.seed, f"init.stage{index}")
        model = StageModel(config.stage_config(level.steps_per_bar), vocabs, init_rng)
        stage = TrainedStage(spec=spec, model=model)

        if index == 0:
            examples = constant(_coarse_examples(level))
        elif config.teacher_forcing:
            examples = constant(
                _refine_examples(_bars(pyramid.levels[index - 1][1]), level)
            )
        else:
            sample_rng = substream(config.seed, f"train.stage{index}.inputs")

            def examples(index=index, level=level, rng=sample_rng):
                coarse = _sampled_coarse_bars(
                    bundle.stages, pyramid, index, p=0.9, rng=rng
                )
                return _refine_examples(coarse, level)

        if log is not None:
            log(
                f"stage {index + 1}/{pyramid.depth}: {spec.label} grid, "
                f"{level.steps_per_bar} steps per bar, vocab {vocabs}"
            )
        stage.nll_curve = _train_stage(index, spec, model, examples, config, log)

        if index == 0:
            eval_examples = _coarse_examples(level)
        else:
            eval_examples = _refine_examples(
                _bars(pyramid.levels[index - 1][1]), level
            )
        stage.final_nll = _eval_stage(model, eval_examples)
        if log is not None:
            log(
                f"stage {index + 1} done: teacher-forced nll "
                f"{stage.final_nll:.6f}"
            )
        bundle.stages.append(stage)
    return bundle


def generate(
    bundle: ModelBundle, config: GenerateConfig = GenerateConfig()
) -> list[PianoRoll]:
    """Sample multi-track continuations of the bundle's material.

    Each sample primes the stage chain on the training segment's first
    ``primer_bars`` bars (capped at what the segment has, with a warning):
    the coarse stage reads all but the primer's last bar into memory, each
    refiner reads every primer bar as the upsampled coarser-scale material
    it was trained on. The coarse stage then extends the material bar by
    bar, feeding its own samples back, while the refiners re-draw each new
    bar at successively finer grids.
    """
    pyramid = bundle.pyramid
    level_seqs = [level for _, level in pyramid.levels]
    total_bars = level_seqs[0].bars
    primer_bars = min(config.primer_bars, total_bars)
    if config.primer_bars > total_bars:
        warnings.warn(
            f"primer_bars={config.primer_bars} exceeds the segment's "
            f"{total_bars} bars; priming on the whole segment",
            stacklevel=2,
        )
    rolls = []
    for sample_index in range(config.samples):
        rng = substream(config.seed, f"generate.sample{sample_index}")
        with no_grad():
            coarse = bundle.stages[0].model
            coarse.reset_memory()
            coarse_bars = _bars(level_seqs[0])[:primer_bars]
            for bar in coarse_bars[:-1]:
                coarse.step(bar)

            for idx, stage in enumerate(bundle.stages[1:], start=1):
                stage.model.reset_memory()
                fine_spb = level_seqs[idx].steps_per_bar
                for bar in _bars(level_seqs[idx - 1])[:primer_bars]:
                    factor = fine_spb // bar.shape[1]
                    stage.model.step(np.repeat(bar, factor, axis=1))

            current = coarse_bars[-1]
            finest_bars = []
            for _ in range(config.bars):
                logits = coarse.step(current)
                sampled = _sample_block(logits, config.p_coarse, rng)
                bar_at_scale = sampled
                for idx, stage in enumerate(bundle.stages[1:], start=1):
                    factor = (
                        level_seqs[idx].steps_per_bar // bar_at_scale.shape[1]
                    )
                    logits = stage.model.step(np.repeat(bar_at_scale, factor, axis=1))
                    bar_at_scale = _sample_block(logits, config.p_refine, rng)
                finest_bars.append(bar_at_scale)
                current = sampled

        tokens = np.concatenate(finest_bars, axis=1)
        seq = TokenSequence(
            tokens=tokens,
            dictionaries=bundle.dictionaries,
            steps_per_bar=bundle.sequence.steps_per_bar,
            time_signature=bundle.sequence.time_signature,
        )
        rolls.append(decode(seq))
    return rolls


# --- bundle persistence -----------------------------------------------------

_MANIFEST_NAME = "manifest.txt"
_SEGMENT_NAME = "segment.mid"
_DICTS_NAME = "dictionaries.txt"
_CURVES_NAME = "nll_curves.csv"
_BUNDLE_FORMAT = "pyramidi-bundle"
_BUNDLE_VERSION = 1


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if value is None:
        return "none"
    return str(value)


def save_bundle(bundle: ModelBundle, directory: str | Path) -> Path:
    """Write a trained bundle to a directory; returns the manifest path.

    Layout: ``manifest.txt`` (key = value lines with file hashes),
    ``segment.mid``, ``dictionaries.txt``, one ``stageN.ckpt`` per stage,
    and ``nll_curves.csv``. Saving the same bundle twice produces identical
    bytes.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    save_midi(bundle.segment, directory / _SEGMENT_NAME)
    (directory / _DICTS_NAME).write_text(dump_dictionaries(bundle.dictionaries))

    curve_lines = ["stage,step,nll"]
    for index, stage in enumerate(bundle.stages, start=1):
        for step, value in stage.nll_curve:
            curve_lines.append(f"{index},{step},{value:.8f}")
    (directory / _CURVES_NAME).write_text("\n".join(curve_lines) + "\n")

    stage_files = []
    for index, stage in enumerate(bundle.stages, start=1):
        name = f"stage{index}.ckpt"
        arrays = {k: p.data for k, p in stage.model.params().items()}
        meta = {
            "stage": index,
            "note_value": stage.spec.note_value,
            "stride": stage.spec.stride,
            "vocab_sizes": stage.model.vocab_sizes,
            "final_nll": stage.final_nll,
        }
        save_stage_checkpoint(
            directory / name, stage.model.config.as_dict(), arrays, meta=meta
        )
        stage_files.append(name)

    cfg = bundle.config
    lines = [
        f"format = {_BUNDLE_FORMAT}",
        f"version = {_BUNDLE_VERSION}",
        f"seed = {cfg.seed}",
        f"steps = {cfg.steps}",
        f"base_lr = {cfg.base_lr}",
        f"warmup_steps = {cfg.warmup_steps}",
        f"min_lr = {_format_value(cfg.min_lr)}",
        f"adam_beta1 = {cfg.adam_beta1}",
        f"adam_beta2 = {cfg.adam_beta2}",
        f"adam_eps = {cfg.adam_eps}",
        f"layers = {cfg.layers}",
        f"heads = {cfg.heads}",
        f"head_dim = {cfg.head_dim}",
        f"model_dim = {cfg.model_dim}",
        f"ffn_dim = {cfg.ffn_dim}",
        f"dropout = {cfg.dropout}",
        f"teacher_forcing = {_format_value(cfg.teacher_forcing)}",
        f"single_stage = {_format_value(cfg.single_stage)}",
        f"resolution = {bundle.segment.resolution}",
        f"time_signature = {bundle.segment.time_signature[0]}/"
        f"{bundle.segment.time_signature[1]}",
        f"tracks = {bundle.segment.tracks}",
        f"bars = {bundle.segment.bars}",
        f"stages = {len(bundle.stages)}",
    ]
    for index, stage in enumerate(bundle.stages, start=1):
        lines.append(f"stage{index}.scale = {stage.spec.note_value}")
        lines.append(f"stage{index}.final_nll = {stage.final_nll:.8f}")
    for name in [_SEGMENT_NAME, _DICTS_NAME, _CURVES_NAME, *stage_files]:
        lines.append(f"sha256.{name} = {_sha256_file(directory / name)}")
    manifest = directory / _MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_manifest(path: Path) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments skipped."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise DataError(f"{path} line {lineno}: expected 'key = value'")
        entries[key.strip()] = value.strip()
    return entries


def load_bundle(directory: str | Path) -> ModelBundle:
    """Read a bundle directory back into memory, verifying file hashes.

    Raises:
        DataError: Missing files, hash mismatches, or fields that do not
            reconstruct a consistent pyramid.
    """
    directory = Path(directory)
    manifest_path = directory / _MANIFEST_NAME
    if not manifest_path.is_file():
        raise DataError(f"{directory}: no {_MANIFEST_NAME}; not a bundle directory")
    entries = read_manifest(manifest_path)
    if entries.get("format") != _BUNDLE_FORMAT:
        raise DataError(f"{manifest_path}: unrecognized bundle format")
    if entries.get("version") != str(_BUNDLE_VERSION):
        raise DataError(
            f"{manifest_path}: bundle version {entries.get('version')} unsupported"
        )

    def need(key: str) -> str:
        if key not in entries:
            raise DataError(f"{manifest_path}: missing key {key!r}")
        return entries[key]

    stage_files = [f"stage{i}.ckpt" for i in range(1, int(need("stages")) + 1)]
    for name in [_SEGMENT_NAME, _DICTS_NAME, _CURVES_NAME, *stage_files]:
        recorded = need(f"sha256.{name}")
        target = directory / name
        if not target.is_file():
            raise DataError(f"{directory}: bundle file {name} is missing")
        if _sha256_file(target) != recorded:
            raise DataError(f"{directory}: bundle file {name} does not match its hash")

    resolution = int(need("resolution"))
    with open(directory / _SEGMENT_NAME, "rb") as fh:
        segment = quantize(parse_midi(fh.read()), resolution)
    dictionaries = load_dictionaries((directory / _DICTS_NAME).read_text())
    seq = encode(segment, dictionaries)

    min_lr_text = need("min_lr")
    config = TrainConfig(
        steps=int(need("steps")),
        base_lr=float(need("base_lr")),
        warmup_steps=int(need("warmup_steps")),
        min_lr=None if min_lr_text == "none" else float(min_lr_text),
        adam_beta1=float(need("adam_beta1")),
        adam_beta2=float(need("adam_beta2")),
        adam_eps=float(need("adam_eps")),
        layers=int(need("layers")),
        heads=int(need("heads")),
        head_dim=int(need("head_dim")),
        model_dim=int(need("model_dim")),
        ffn_dim=int(need("ffn_dim")),
        dropout=float(need("dropout")),
        teacher_forcing=need("teacher_forcing") == "yes",
        single_stage=need("single_stage") == "yes",
        resolution=resolution,
        seed=int(need("seed")),
    )

    stage_count = int(need("stages"))
    stages: list[TrainedStage] = []
    specs: list[ScaleSpec] = []
    finest = int(need(f"stage{stage_count}.scale"))
    curves = _read_curves(directory / _CURVES_NAME, stage_count)
    for index in range(1, stage_count + 1):
        ckpt_config, arrays, meta = load_stage_checkpoint(
            directory / f"stage{index}.ckpt"
        )
        stage_cfg = StageConfig(**ckpt_config)
        vocabs = [int(v) for v in meta["vocab_sizes"]]
        if vocabs != [len(d) for d in dictionaries]:
            raise DataError(
                f"{directory}: stage {index} vocabularies do not match the "
                f"dictionaries file"
            )
        model = StageModel(
            stage_cfg, vocabs, substream(config.seed, f"load.stage{index}")
        )
        params = model.params()
        if set(params) != set(arrays):
            raise DataError(
                f"{directory}: stage {index} checkpoint parameters do not "
                f"match the model"
            )
        for name, tensor in params.items():
            if tensor.data.shape != arrays[name].shape:
                raise DataError(
                    f"{directory}: stage {index} parameter {name} has shape "
                    f"{arrays[name].shape}, expected {tensor.data.shape}"
                )
            tensor.data = arrays[name].astype(tensor.data.dtype)
        note_value = int(meta["note_value"])
        spec = ScaleSpec(note_value, stride=finest // note_value)
        specs.append(spec)
        stages.append(
            TrainedStage(
                spec=spec,
                model=model,
                nll_curve=curves.get(index, []),
                final_nll=float(meta["final_nll"]),
            )
        )

    pyramid = build_pyramid(seq, specs)
    return ModelBundle(
        stages=stages, segment=segment, sequence=seq, pyramid=pyramid, config=config
    )


def _read_curves(path: Path, stage_count: int) -> dict[int, list[tuple[int, float]]]:
    curves: dict[int, list[tuple[int, float]]] = {i: [] for i in range(1, stage_count + 1)}
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "stage,step,nll":
        raise DataError(f"{path}: expected 'stage,step,nll' header")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise DataError(f"{path} line {lineno}: expected three fields")
        try:
            stage, step, value = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise DataError(f"{path} line {lineno}: malformed row") from None
        if stage not in curves:
            raise DataError(f"{path} line {lineno}: stage {stage} out of range")
        curves[stage].append((step, value))
    return curves
