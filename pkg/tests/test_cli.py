import subprocess
import sys

import pytest

from georope.cli import main
from georope.fileio import load_checkpoint, read_geotokens_csv

SMALL = """[georope]
format_version = 1
[model]
dim = 6
heads = 2
[train]
steps = 15
batch_size = 8
[task]
n_tokens = 6
n_train = 40
n_eval = 30
seeds = 0, 1
"""


@pytest.fixture
def tokens_csv(tmp_path):
    path = tmp_path / "tokens.csv"
    path.write_text(
        "id,lat_deg,lon_deg,f0,f1,f2,f3,f4,f5\n"
        "paris,48.8566,2.3522,1,0,0,0.5,0.25,0\n"
        "lima,-12.0464,-77.0428,0,1,0,1,1,1\n"
        "tokyo,35.6762,139.6503,0.3,0.2,0.1,0,0,2\n"
    )
    return path


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return path


def test_check_exits_zero(capsys):
    assert main(["check"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 9


def test_check_fidelity_report(capsys):
    assert main(["check", "--paper-fidelity"]) == 0
    assert "as-printed" in capsys.readouterr().out.lower()


def test_encode_dim4_without_pad_exits_one(tmp_path, capsys):
    path = tmp_path / "d4.csv"
    path.write_text("id,lat_deg,lon_deg,f0,f1,f2,f3\na,10,20,1,2,3,4\n")
    assert main(["encode", str(path)]) == 1
    assert "multiple of 3" in capsys.readouterr().err
    assert main(["encode", str(path), "--pad"]) == 0


@pytest.mark.parametrize("encoder", ["none", "sinusoidal", "rope", "spherical"])
def test_encode_byte_identical_runs(tokens_csv, tmp_path, encoder):
    outs = []
    for i in range(2):
        out = tmp_path / f"{encoder}{i}.csv"
        assert main(["encode", str(tokens_csv), "--encoder", encoder, "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert len(read_geotokens_csv(outs[0].decode().splitlines())) == 3


def test_encode_none_passes_features_through(tokens_csv, capsys):
    assert main(["encode", str(tokens_csv), "--encoder", "none"]) == 0
    toks = read_geotokens_csv(capsys.readouterr().out.splitlines())
    assert list(toks[0].features) == [1, 0, 0, 0.5, 0.25, 0]


def test_encode_dim_mismatch_and_bad_file(tokens_csv, tmp_path):
    assert main(["encode", str(tokens_csv), "--dim", "9"]) == 1
    assert main(["encode", str(tmp_path / "missing.csv")]) == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("id,lat_deg,lon_deg,f0\nx,91,0,1\n")
    assert main(["encode", str(bad)]) == 1


def test_usage_errors_exit_one():
    assert main([]) == 1
    assert main(["encode"]) == 1
    assert main(["encode", "x.csv", "--encoder", "cnn"]) == 1


def test_train_is_bit_reproducible(small_config, tmp_path):
    files = []
    for i in range(2):
        ckpt, curve = tmp_path / f"m{i}.json", tmp_path / f"loss{i}.csv"
        argv = ["train", "--config", str(small_config), "--seed", "3", "--out", str(ckpt), "--loss-csv", str(curve)]
        assert main(argv) == 0
        files.append((ckpt.read_bytes(), curve.read_bytes()))
    assert files[0] == files[1]
    assert len(files[0][1].decode().splitlines()) == 16


def test_train_then_eval(small_config, tmp_path, capsys):
    ckpt = tmp_path / "m.json"
    assert main(["train", "--config", str(small_config), "--encoder", "rope", "--out", str(ckpt)]) == 0
    assert load_checkpoint(ckpt).config.encoder.value == "rope"
    capsys.readouterr()
    assert main(["eval", "--config", str(small_config), "--checkpoint", str(ckpt)]) == 0
    out = capsys.readouterr().out
    assert "retrieval accuracy" in out and "chance band" in out


def test_train_needs_out_and_valid_config(small_config, tmp_path):
    assert main(["train", "--config", str(small_config)]) == 1
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\ndim=6\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "m.json")]) == 1
    assert not (tmp_path / "m.json").exists()


def test_print_config_schema(capsys):
    assert main(["train", "--print-config-schema"]) == 0
    assert "format_version = 1" in capsys.readouterr().out


def test_eval_ablation_csv(small_config, tmp_path, capsys):
    out = tmp_path / "abl.csv"
    assert main(["eval", "--config", str(small_config), "--ablation", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "encoder,seed,accuracy,spearman" and len(rows) == 1 + 3 * 2
    assert "spherical-multifreq" in capsys.readouterr().out


def test_bench_small(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--dims", "6,12", "--reps", "30", "--batch", "4", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0].startswith("dim")
    assert main(["bench", "--dims", "4,8"]) == 1
    assert main(["bench", "--reps", "3"]) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "georope", "train", "--print-config-schema"], capture_output=True, text=True)
    assert proc.returncode == 0 and "[model]" in proc.stdout
