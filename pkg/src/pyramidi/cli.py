"""Command-line interface: train, generate, evaluate, inspect.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

Hyper-parameters may come from a config file (``--config FILE``) holding
``key = value`` lines; ``#`` starts a comment. Keys are the TrainConfig or
GenerateConfig field names of the subcommand being run (``steps = 4000``,
``p_coarse = 0.8``, ``teacher_forcing = no``). Explicit flags beat the file,
the file beats built-in defaults. Paths are always flags, never config keys.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import warnings
from dataclasses import fields
from pathlib import Path

from . import metrics, pipeline, plots
from .errors import DataError, NumericError, UsageError
from .midi_io import load_midi, quantize, save_midi
from .pgroup import dump_dictionaries

__all__ = ["main"]

_EPILOG = """\
config file:  line-oriented `key = value`; keys are the config field names
              of the subcommand (see its --help). Flags override the file.
exit codes:   0 success, 1 usage error, 2 data error, 3 numeric failure.
"""


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; we reserve 2 for data."""

    def error(self, message: str):
        raise UsageError(message)


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


# --- config resolution -------------------------------------------------------


def _parse_bool(text: str, key: str) -> bool:
    lowered = text.lower()
    if lowered in ("yes", "true", "on", "1"):
        return True
    if lowered in ("no", "false", "off", "0"):
        return False
    raise UsageError(f"config key {key}: expected yes/no, got {text!r}")


def _convert(text: str, annotation: str, key: str) -> object:
    try:
        if annotation == "int":
            return int(text)
        if annotation == "float":
            return float(text)
        if annotation == "float | None":
            return None if text.lower() == "none" else float(text)
        if annotation == "bool":
            return _parse_bool(text, key)
    except ValueError:
        raise UsageError(
            f"config key {key}: cannot parse {text!r} as {annotation}"
        ) from None
    raise UsageError(f"config key {key} cannot be set from a file")


def _read_config_file(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise UsageError(f"{path} line {lineno}: expected 'key = value'")
        pairs[key.replace("-", "_")] = value
    return pairs


def _resolve_config(cls, args: argparse.Namespace):
    """Build a config dataclass from flags > config file > defaults."""
    pairs = _read_config_file(Path(args.config)) if args.config else {}
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(pairs) - set(known))
    if unknown:
        raise UsageError(
            f"unknown config key(s) for this command: {', '.join(unknown)}"
        )
    cli = vars(args)
    values = {}
    for name, spec in known.items():
        if cli.get(name) is not None:
            values[name] = cli[name]
        elif name in pairs:
            values[name] = _convert(pairs[name], str(spec.type), name)
    try:
        return cls(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise DataError(f"{what} not found: {path}")
    return path


def _check_resolution(resolution: int) -> int:
    if resolution not in (4, 8, 16, 32):
        raise UsageError(
            f"resolution must be one of 4, 8, 16, 32, got {resolution}"
        )
    return resolution


# --- subcommands -------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> None:
    config = _resolve_config(pipeline.TrainConfig, args)
    source = _require_file(Path(args.input), "input MIDI")
    out = Path(args.out)

    roll = quantize(load_midi(str(source)), config.resolution)
    log = None if args.quiet else print
    bundle = pipeline.train(roll, config, log=log)
    pipeline.save_bundle(bundle, out)

    curves = {
        f"stage {i} ({stage.spec.label})": stage.nll_curve
        for i, stage in enumerate(bundle.stages, start=1)
    }
    plots.save_nll_curves_png(curves, out / "nll_curves.png")

    for i, stage in enumerate(bundle.stages, start=1):
        print(f"stage {i} ({stage.spec.label} grid): final nll {stage.final_nll:.6f}")
    print(f"saved bundle to {out}")


def cmd_generate(args: argparse.Namespace) -> None:
    config = _resolve_config(pipeline.GenerateConfig, args)
    model_dir = Path(args.model)
    bundle = pipeline.load_bundle(model_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rolls = pipeline.generate(bundle, config)
    written: list[Path] = []
    for i, roll in enumerate(rolls):
        midi_path = out / f"sample{i:02d}.mid"
        png_path = out / f"sample{i:02d}.png"
        save_midi(roll, str(midi_path))
        plots.save_piano_roll_png(roll, png_path)
        written += [midi_path, png_path]
        print(f"wrote {midi_path} and {png_path}")

    lines = [
        "format = pyramidi-generate",
        "version = 1",
        f"model = {model_dir}",
        f"model.manifest.sha256 = {_sha256_file(model_dir / 'manifest.txt')}",
        f"bars = {config.bars}",
        f"samples = {config.samples}",
        f"primer_bars = {config.primer_bars}",
        f"p_coarse = {config.p_coarse}",
        f"p_refine = {config.p_refine}",
        f"seed = {config.seed}",
    ]
    lines += [f"sha256.{p.name} = {_sha256_file(p)}" for p in written]
    (out / "run.txt").write_text("\n".join(lines) + "\n")


def cmd_evaluate(args: argparse.Namespace) -> None:
    source_path = _require_file(Path(args.segment), "segment MIDI")
    sample_paths = [
        _require_file(Path(p), "sample MIDI") for p in args.sample_files
    ]

    resolution = _check_resolution(args.resolution)
    source = quantize(load_midi(str(source_path)), resolution)
    samples = [quantize(load_midi(str(p)), resolution) for p in sample_paths]
    report = metrics.evaluate(source, samples)

    kv_text = metrics.format_report_kv(report)
    print(kv_text, end="")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.kv").write_text(kv_text)
        (out / "per_sample.csv").write_text(metrics.format_per_sample_csv(report))
        plots.save_eval_report_png(report, out / "report.png")
        lines = [
            "format = pyramidi-evaluate",
            "version = 1",
            f"segment = {source_path}",
            f"resolution = {args.resolution}",
            f"sha256.segment = {_sha256_file(source_path)}",
        ]
        lines += [
            f"sha256.input.{p.name} = {_sha256_file(p)}" for p in sample_paths
        ]
        lines += [
            f"sha256.{name} = {_sha256_file(out / name)}"
            for name in ("report.kv", "per_sample.csv", "report.png")
        ]
        (out / "run.txt").write_text("\n".join(lines) + "\n")
        print(f"wrote report files to {out}")


def cmd_inspect(args: argparse.Namespace) -> None:
    path = _require_file(Path(args.input), "input MIDI")
    song = load_midi(str(path))
    roll = quantize(song, _check_resolution(args.resolution))
    roll, seq, pyramid = pipeline.prepare_segment(roll, pipeline.TrainConfig())

    num, den = roll.time_signature
    print(f"file = {path}")
    print(f"tempo_bpm = {song.tempo_bpm:g}")
    print(f"time_signature = {num}/{den}")
    print(f"tracks = {roll.tracks}")
    print(f"resolution = {roll.resolution} ({roll.steps_per_bar} steps per bar)")
    print(f"steps = {roll.steps}")
    print(f"bars = {roll.bars}")
    print(f"scales = {', '.join(spec.label for spec, _ in pyramid.levels)}")
    print(f"vocab_sizes = {', '.join(str(len(d)) for d in seq.dictionaries)}")
    print()
    print(dump_dictionaries(seq.dictionaries), end="")

    if args.png:
        plots.save_piano_roll_png(roll, args.png)
        print(f"\nwrote {args.png}")


# --- parser ------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="pyramidi",
        description="Fit a coarse-to-fine transformer stack to one multi-track "
        "MIDI segment, sample continuations, and score them.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_train = sub.add_parser(
        "train",
        help="fit the stage pyramid to one MIDI segment",
        description="Quantize a MIDI file and fit one model per time scale; "
        "writes checkpoints, dictionaries, loss curves (CSV and PNG), and a "
        "manifest into --out.",
    )
    p_train.add_argument("--input", required=True, help="training MIDI segment")
    p_train.add_argument("--out", required=True, help="bundle output directory")
    p_train.add_argument("--config", help="key = value config file")
    p_train.add_argument("--steps", type=int, help="optimizer steps per stage")
    p_train.add_argument("--base-lr", type=float, dest="base_lr")
    p_train.add_argument("--warmup-steps", type=int, dest="warmup_steps")
    p_train.add_argument("--min-lr", type=float, dest="min_lr")
    p_train.add_argument("--layers", type=int, help="transformer layers per stage")
    p_train.add_argument("--heads", type=int, help="attention heads")
    p_train.add_argument("--head-dim", type=int, dest="head_dim")
    p_train.add_argument("--model-dim", type=int, dest="model_dim")
    p_train.add_argument("--ffn-dim", type=int, dest="ffn_dim")
    p_train.add_argument("--dropout", type=float)
    p_train.add_argument(
        "--resolution", type=int, help="quantization grid (4/8/16/32), default 16"
    )
    p_train.add_argument(
        "--no-teacher-forcing",
        dest="teacher_forcing",
        action="store_false",
        default=None,
        help="feed refiners sampled coarse bars instead of ground truth",
    )
    p_train.add_argument(
        "--single-stage",
        action="store_true",
        default=None,
        help="ablation: one stage at the finest grid only",
    )
    p_train.add_argument("--seed", type=int, help="root random seed")
    p_train.add_argument(
        "--quiet", action="store_true", help="suppress progress lines"
    )
    p_train.set_defaults(func=cmd_train)

    p_gen = sub.add_parser(
        "generate",
        help="sample continuations from a trained bundle",
        description="Load a bundle and write sampled MIDI continuations plus "
        "a piano-roll PNG per sample and a reproducibility manifest.",
    )
    p_gen.add_argument("--model", required=True, help="bundle directory")
    p_gen.add_argument("--out", required=True, help="sample output directory")
    p_gen.add_argument("--config", help="key = value config file")
    p_gen.add_argument("--bars", type=int, help="bars to generate per sample")
    p_gen.add_argument(
        "--n", "--samples", type=int, dest="samples", help="number of samples"
    )
    p_gen.add_argument(
        "--primer-bars",
        type=int,
        dest="primer_bars",
        help="training-segment bars used to prime the models (default 12)",
    )
    p_gen.add_argument("--p-coarse", type=float, dest="p_coarse")
    p_gen.add_argument("--p-refine", type=float, dest="p_refine")
    p_gen.add_argument("--seed", type=int, help="root random seed")
    p_gen.set_defaults(func=cmd_generate)

    p_eval = sub.add_parser(
        "evaluate",
        help="score samples against the training segment",
        description="Compute the pitch-group KL divergence (bits) and overlap "
        "of each sample against a source segment. Prints an aggregate "
        "key = value block; with --out also writes report.kv, per_sample.csv, "
        "and report.png.",
    )
    p_eval.add_argument("--segment", required=True, help="source segment MIDI")
    p_eval.add_argument("--out", help="report output directory")
    p_eval.add_argument(
        "--resolution", type=int, default=16, help="quantization grid, default 16"
    )
    p_eval.add_argument(
        "sample_files", nargs="+", metavar="SAMPLE", help="sample MIDI files"
    )
    p_eval.set_defaults(func=cmd_evaluate)

    p_inspect = sub.add_parser(
        "inspect",
        help="print segment stats, chosen scales, and dictionaries",
        description="Quantize a MIDI file the way training would and print "
        "its stats, the scales the pyramid would use, and every per-track "
        "pitch-group dictionary.",
    )
    p_inspect.add_argument("--input", required=True, help="MIDI file")
    p_inspect.add_argument(
        "--resolution", type=int, default=16, help="quantization grid, default 16"
    )
    p_inspect.add_argument("--png", help="also write a piano-roll image here")
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        with warnings.catch_warnings():
            # Show library warnings as plain stderr lines, not source excerpts.
            warnings.simplefilter("always")
            warnings.showwarning = lambda message, *rest, **kw: print(
                f"warning: {message}", file=sys.stderr
            )
            args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
