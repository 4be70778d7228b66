"""CLI behavior: exit codes, config precedence, artifacts on disk."""

import subprocess
import sys

import numpy as np
import pytest

from pyramidi.cli import main
from pyramidi.midi_io import PianoRoll, save_midi
from pyramidi.pipeline import read_manifest

TINY_CFG = """\
# small model so tests stay fast
steps = 6
warmup_steps = 1
layers = 1
heads = 2
head-dim = 4
model_dim = 8
ffn_dim = 16
dropout = 0.0
resolution = 8
"""


def segment_roll(bars: int = 3, steps_per_bar: int = 8) -> PianoRoll:
    rng = np.random.default_rng(42)
    steps = bars * steps_per_bar
    grid = np.zeros((2, steps, 128), dtype=bool)
    for k, base in enumerate((62, 50)):
        t = 0
        while t < steps:
            dur = int(rng.choice((1, 2, 4)))
            if rng.random() < 0.2:
                t += dur
                continue
            grid[k, t : t + dur, base + int(rng.integers(-3, 4))] = True
            t += dur
    return PianoRoll(grid, steps_per_bar)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    save_midi(segment_roll(), str(root / "segment.mid"))
    (root / "tiny.cfg").write_text(TINY_CFG)
    return root


@pytest.fixture(scope="module")
def bundle_dir(workdir):
    out = workdir / "bundle"
    code = main(
        [
            "train",
            "--input", str(workdir / "segment.mid"),
            "--out", str(out),
            "--config", str(workdir / "tiny.cfg"),
            "--seed", "3",
            "--quiet",
        ]
    )
    assert code == 0
    return out


# --- train ---------------------------------------------------------------------


def test_train_writes_bundle_and_curve_figure(bundle_dir, capsys):
    for name in (
        "manifest.txt",
        "segment.mid",
        "dictionaries.txt",
        "nll_curves.csv",
        "nll_curves.png",
        "stage1.ckpt",
        "stage2.ckpt",
    ):
        assert (bundle_dir / name).is_file(), name


def test_train_reports_final_nll(workdir, capsys):
    out = workdir / "report_run"
    code = main(
        [
            "train",
            "--input", str(workdir / "segment.mid"),
            "--out", str(out),
            "--config", str(workdir / "tiny.cfg"),
            "--quiet",
        ]
    )
    captured = capsys.readouterr()
    assert code == 0
    assert "final nll" in captured.out
    assert f"saved bundle to {out}" in captured.out


def test_train_flag_beats_config_file(workdir):
    out = workdir / "precedence_run"
    code = main(
        [
            "train",
            "--input", str(workdir / "segment.mid"),
            "--out", str(out),
            "--config", str(workdir / "tiny.cfg"),
            "--steps", "3",
            "--quiet",
        ]
    )
    assert code == 0
    manifest = read_manifest(out / "manifest.txt")
    assert manifest["steps"] == "3"
    assert manifest["model_dim"] == "8"


def test_train_missing_input_is_data_error(workdir, capsys):
    code = main(
        ["train", "--input", str(workdir / "nope.mid"), "--out", str(workdir / "x")]
    )
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_unknown_config_key_is_usage_error(workdir, capsys):
    cfg = workdir / "bad_key.cfg"
    cfg.write_text("stepz = 5\n")
    code = main(
        [
            "train",
            "--input", str(workdir / "segment.mid"),
            "--out", str(workdir / "x"),
            "--config", str(cfg),
        ]
    )
    assert code == 1
    assert "stepz" in capsys.readouterr().err


def test_malformed_config_line_is_usage_error(workdir, capsys):
    cfg = workdir / "bad_line.cfg"
    cfg.write_text("steps\n")
    code = main(
        [
            "train",
            "--input", str(workdir / "segment.mid"),
            "--out", str(workdir / "x"),
            "--config", str(cfg),
        ]
    )
    assert code == 1
    assert "key = value" in capsys.readouterr().err


def test_missing_config_file_is_usage_error(workdir, capsys):
    code = main(
        [
            "train",
            "--input", str(workdir / "segment.mid"),
            "--out", str(workdir / "x"),
            "--config", str(workdir / "nope.cfg"),
        ]
    )
    assert code == 1


def test_invalid_flag_value_is_usage_error(workdir, capsys):
    code = main(
        [
            "train",
            "--input", str(workdir / "segment.mid"),
            "--out", str(workdir / "x"),
            "--steps", "many",
        ]
    )
    assert code == 1


def test_missing_subcommand_is_usage_error(capsys):
    assert main([]) == 1


def test_invalid_config_value_is_usage_error(workdir, capsys):
    code = main(
        [
            "train",
            "--input", str(workdir / "segment.mid"),
            "--out", str(workdir / "x"),
            "--dropout", "2.0",
        ]
    )
    assert code == 1
    assert "dropout" in capsys.readouterr().err


# --- generate --------------------------------------------------------------------


def test_generate_writes_samples_and_manifest(bundle_dir, workdir, capsys):
    out = workdir / "samples"
    code = main(
        [
            "generate",
            "--model", str(bundle_dir),
            "--out", str(out),
            "--bars", "2",
            "--n", "2",
            "--primer-bars", "3",
            "--seed", "4",
        ]
    )
    assert code == 0
    for name in ("sample00.mid", "sample00.png", "sample01.mid", "sample01.png"):
        assert (out / name).is_file(), name
    run = read_manifest(out / "run.txt")
    assert run["samples"] == "2"
    assert run["seed"] == "4"
    assert "sha256.sample01.mid" in run


def test_generate_is_deterministic_on_disk(bundle_dir, workdir):
    args = [
        "generate",
        "--model", str(bundle_dir),
        "--bars", "2",
        "--n", "1",
        "--primer-bars", "3",
        "--seed", "9",
    ]
    assert main([*args, "--out", str(workdir / "ga")]) == 0
    assert main([*args, "--out", str(workdir / "gb")]) == 0
    assert (workdir / "ga" / "sample00.mid").read_bytes() == (
        workdir / "gb" / "sample00.mid"
    ).read_bytes()


def test_generate_missing_model_is_data_error(workdir, capsys):
    code = main(
        ["generate", "--model", str(workdir / "void"), "--out", str(workdir / "x")]
    )
    assert code == 2
    assert "not a bundle directory" in capsys.readouterr().err


# --- evaluate --------------------------------------------------------------------


def test_evaluate_self_scores_perfectly(workdir, capsys):
    segment = str(workdir / "segment.mid")
    code = main(["evaluate", "--segment", segment, segment])
    out = capsys.readouterr().out
    assert code == 0
    assert "mean_kl_bits = 0.000000" in out
    assert "mean_overlap = 1.000000" in out
    assert "total_novel_groups = 0" in out


def test_evaluate_writes_report_files(bundle_dir, workdir, capsys):
    out = workdir / "report"
    segment = str(workdir / "segment.mid")
    sample = str(workdir / "samples" / "sample00.mid")
    code = main(["evaluate", "--segment", segment, "--out", str(out), sample])
    assert code == 0
    for name in ("report.kv", "per_sample.csv", "report.png", "run.txt"):
        assert (out / name).is_file(), name
    csv_text = (out / "per_sample.csv").read_text()
    assert csv_text.startswith("sample,kl_bits,overlap,")
    assert len(csv_text.splitlines()) == 2


def test_evaluate_missing_sample_is_data_error(workdir, capsys):
    segment = str(workdir / "segment.mid")
    code = main(["evaluate", "--segment", segment, str(workdir / "ghost.mid")])
    assert code == 2


def test_evaluate_rejects_bad_resolution(workdir, capsys):
    segment = str(workdir / "segment.mid")
    code = main(["evaluate", "--segment", segment, "--resolution", "7", segment])
    assert code == 1
    assert "resolution" in capsys.readouterr().err


# --- inspect ---------------------------------------------------------------------


def test_inspect_prints_stats_and_dictionaries(workdir, capsys):
    code = main(["inspect", "--input", str(workdir / "segment.mid")])
    out = capsys.readouterr().out
    assert code == 0
    assert "scales = 4th, 8th" in out
    assert "tracks = 2" in out
    assert "track 0" in out and "track 1" in out
    assert "rest" in out
    assert "vocab_sizes = " in out


def test_inspect_writes_optional_image(workdir, capsys):
    png = workdir / "seg.png"
    code = main(
        ["inspect", "--input", str(workdir / "segment.mid"), "--png", str(png)]
    )
    assert code == 0
    assert png.is_file()


def test_inspect_missing_file_is_data_error(workdir, capsys):
    assert main(["inspect", "--input", str(workdir / "ghost.mid")]) == 2


# --- process-level entry -----------------------------------------------------------


def test_module_entry_point_help_and_failure():
    ok = subprocess.run(
        [sys.executable, "-m", "pyramidi", "--help"],
        capture_output=True,
        text=True,
    )
    assert ok.returncode == 0
    assert "train" in ok.stdout
    bad = subprocess.run(
        [sys.executable, "-m", "pyramidi", "bogus"],
        capture_output=True,
        text=True,
    )
    assert bad.returncode == 1
