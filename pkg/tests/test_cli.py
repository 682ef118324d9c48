"""Command line interface: config parsing, subcommand round trips,
exit codes, and bit-identity between the CLI and the library calls."""

import subprocess
import sys

import numpy as np
import pytest

from facefront import cli, container, synthdata, training

from conftest import TINY_CONFIG, TINY_SPEC

SPEC_LINES = [
    "seed=3",
    "n_identities=6",
    "images_per_identity=6  # inline comment",
    "image_size=16",
    "",
    "# full-line comment",
    "n_vertices=64",
    "n_landmarks=6",
]

TRAIN_LINES = [
    "seed=3",
    "batch_size=8",
    "epochs_pretrain_r=2",
    "epochs_pretrain_c=2",
    "stage_epochs=1,1,1",
]


def _write(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return str(path)


@pytest.fixture(scope="module")
def cli_dir(tmp_path_factory, tiny_dataset):
    """One shared directory: dataset container plus a full CLI train run."""
    root = tmp_path_factory.mktemp("cli")
    data = str(root / "tiny.ds")
    synthdata.write_dataset(tiny_dataset, data)
    cfg = _write(root / "train.cfg", TRAIN_LINES)
    ckpt = str(root / "run.ckpt")
    log = str(root / "run.log")
    code = cli.main([
        "train", "--dataset", data, "--out", ckpt, "--config", cfg,
        "--log", log,
    ])
    assert code == 0
    return {"root": root, "data": data, "cfg": cfg, "ckpt": ckpt, "log": log}


# ---------------------------------------------------------------------------
# config parsing


def test_parse_config_file(tmp_path):
    path = _write(tmp_path / "a.cfg", SPEC_LINES)
    got = cli.parse_config_file(path)
    assert got == {
        "seed": "3",
        "n_identities": "6",
        "images_per_identity": "6",
        "image_size": "16",
        "n_vertices": "64",
        "n_landmarks": "6",
    }
    bad = _write(tmp_path / "b.cfg", ["novalue"])
    with pytest.raises(ValueError, match="expected key=value"):
        cli.parse_config_file(bad)
    empty = _write(tmp_path / "c.cfg", ["=5"])
    with pytest.raises(ValueError, match="empty key"):
        cli.parse_config_file(empty)


def test_coerce_types():
    assert cli._coerce("k", "yes", False) is True
    assert cli._coerce("k", "OFF", True) is False
    assert cli._coerce("k", "7", 1) == 7
    assert cli._coerce("k", "2.5", 1.0) == 2.5
    assert cli._coerce("k", "2,2,1", (1, 1, 1)) == (2, 2, 1)
    with pytest.raises(ValueError, match="expected a boolean"):
        cli._coerce("k", "maybe", False)
    with pytest.raises(ValueError, match="unsupported"):
        cli._coerce("k", "x", None)


def test_dataclass_kwargs_rejects_unknown():
    with pytest.raises(ValueError, match="unknown or unsupported"):
        cli.dataclass_kwargs(synthdata.DatasetSpec, {"frobnicate": "1"})
    with pytest.raises(ValueError, match="unknown or unsupported"):
        cli.dataclass_kwargs(
            training.TrainConfig, {"stage_weights": "1"}, skip=("stage_weights",)
        )
    got = cli.dataclass_kwargs(training.TrainConfig, {"drop_c": "true"})
    assert got == {"drop_c": True}


# ---------------------------------------------------------------------------
# exit codes and usage


def test_usage_errors_exit_1(capsys):
    assert cli.main([]) == 1
    assert cli.main(["no-such-command"]) == 1
    assert cli.main(["train", "--dataset", "x"]) == 1
    capsys.readouterr()


def test_missing_files_exit_1(tmp_path, capsys):
    out = str(tmp_path / "o")
    assert cli.main(["gen-data", "--out", out, "--config", "/no/such.cfg"]) == 1
    assert cli.main([
        "pretrain-r", "--dataset", "/no/such.ds", "--out", out,
    ]) == 1
    err = capsys.readouterr().err
    assert "error:" in err


def test_corrupt_container_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.ds"
    bad.write_bytes(b"JUNKJUNKJUNKJUNK")
    out = str(tmp_path / "o")
    assert cli.main(["inspect", str(bad)]) == 2
    assert cli.main([
        "pretrain-r", "--dataset", str(bad), "--out", out,
    ]) == 2
    capsys.readouterr()


def test_eval_rejects_non_checkpoint(cli_dir, tmp_path, capsys):
    # a dataset container is not a train checkpoint
    code = cli.main([
        "eval", "--dataset", cli_dir["data"],
        "--checkpoint", cli_dir["data"], "--out", str(tmp_path / "r.txt"),
    ])
    assert code == 2
    assert "missing record" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# gen-data


def test_gen_data_deterministic(tmp_path, capsys):
    cfg = _write(tmp_path / "spec.cfg", SPEC_LINES)
    a = str(tmp_path / "a.ds")
    b = str(tmp_path / "b.ds")
    assert cli.main(["gen-data", "--out", a, "--config", cfg]) == 0
    assert cli.main(["gen-data", "--out", b, "--config", cfg]) == 0
    with open(a, "rb") as fa, open(b, "rb") as fb:
        assert fa.read() == fb.read()
    out = capsys.readouterr().out
    ds = synthdata.read_dataset(a)
    assert ds.spec == TINY_SPEC
    assert "images=36" in out
    assert "hash=%s" % ds.content_hash() in out


def test_gen_data_seed_override(tmp_path, capsys):
    cfg = _write(tmp_path / "spec.cfg", SPEC_LINES)
    a = str(tmp_path / "a.ds")
    b = str(tmp_path / "b.ds")
    assert cli.main(["gen-data", "--out", a, "--config", cfg]) == 0
    assert cli.main([
        "gen-data", "--out", b, "--config", cfg, "--seed", "4",
    ]) == 0
    assert synthdata.read_dataset(b).spec.seed == 4
    with open(a, "rb") as fa, open(b, "rb") as fb:
        assert fa.read() != fb.read()
    capsys.readouterr()


def test_gen_data_rejects_unknown_key(tmp_path, capsys):
    cfg = _write(tmp_path / "spec.cfg", SPEC_LINES + ["batch_size=8"])
    assert cli.main(["gen-data", "--out", str(tmp_path / "x"), "--config", cfg]) == 1
    assert "unknown or unsupported" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# pretraining commands


def test_pretrain_r_cli(cli_dir, tmp_path, capsys):
    out = str(tmp_path / "r.net")
    code = cli.main([
        "pretrain-r", "--dataset", cli_dir["data"], "--out", out,
        "--config", cli_dir["cfg"],
    ])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "nme_heldout=" in stdout
    params, spec = training.load_net(out)
    assert params.name == "R" and spec == TINY_SPEC
    reference = training.pretrain_r(TINY_CONFIG, synthdata.read_dataset(cli_dir["data"]))
    assert all(
        np.array_equal(a, b)
        for a, b in zip(params.arrays.values(), reference.params.arrays.values())
    )


def test_pretrain_c_cli(cli_dir, tmp_path, capsys):
    out = str(tmp_path / "c.net")
    code = cli.main([
        "pretrain-c", "--dataset", cli_dir["data"], "--out", out,
        "--config", cli_dir["cfg"],
    ])
    assert code == 0
    assert "acc_heldout=" in capsys.readouterr().out
    params, spec = training.load_net(out)
    assert params.name == "C" and spec == TINY_SPEC


# ---------------------------------------------------------------------------
# train


def test_train_matches_library(cli_dir, tiny_state):
    state = training.resume(cli_dir["ckpt"])
    assert state.config == TINY_CONFIG
    assert state.done()
    for name in state.nets:
        for key, arr in state.nets[name].arrays.items():
            assert np.array_equal(arr, tiny_state.nets[name].arrays[key])


def test_train_log_file(cli_dir):
    with open(cli_dir["log"]) as fh:
        lines = fh.read().splitlines()
    assert any(line.startswith("pretrain-r epoch=0") for line in lines)
    assert any(line.startswith("stage=2 epoch=0") for line in lines)
    assert lines[-1].startswith("checkpoint=")
    assert "l1_final=" in lines[-1]


def test_train_resume_finished_is_noop(cli_dir, tmp_path, capsys):
    out = str(tmp_path / "again.ckpt")
    code = cli.main([
        "train", "--dataset", cli_dir["data"],
        "--checkpoint", cli_dir["ckpt"], "--out", out,
    ])
    assert code == 0
    capsys.readouterr()
    a = training.resume(cli_dir["ckpt"])
    b = training.resume(out)
    for name in a.nets:
        for key in a.nets[name].arrays:
            assert np.array_equal(
                a.nets[name].arrays[key], b.nets[name].arrays[key]
            )


def test_train_resume_rejects_config_flags(cli_dir, tmp_path, capsys):
    code = cli.main([
        "train", "--dataset", cli_dir["data"],
        "--checkpoint", cli_dir["ckpt"], "--out", str(tmp_path / "x.ckpt"),
        "--seed", "9",
    ])
    assert code == 1
    assert "stored configuration" in capsys.readouterr().err


def test_train_ablate_flag(cli_dir, tmp_path, capsys):
    out = str(tmp_path / "nod.ckpt")
    code = cli.main([
        "train", "--dataset", cli_dir["data"], "--out", out,
        "--config", cli_dir["cfg"], "--ablate", "drop_d",
        "--stage-epochs", "1,0,0",
    ])
    assert code == 0
    capsys.readouterr()
    state = training.resume(out)
    assert state.config.drop_d is True
    assert state.config.stage_epochs == (1, 0, 0)
    # discriminator untouched when its loss is dropped
    assert state.opt["D"].t == 0


# ---------------------------------------------------------------------------
# eval, ablate, export-grid, inspect


def test_eval_cli(cli_dir, tmp_path, capsys):
    out = str(tmp_path / "report.txt")
    code = cli.main([
        "eval", "--dataset", cli_dir["data"],
        "--checkpoint", cli_dir["ckpt"], "--out", out,
    ])
    assert code == 0
    stdout = capsys.readouterr().out.splitlines()
    with open(out) as fh:
        assert fh.read().splitlines() == stdout
    assert any(line.startswith("rank1/fused/avg=") for line in stdout)
    assert any(line.startswith("nme/val_unseen=") for line in stdout)


def test_eval_single_mode(cli_dir, tmp_path, capsys):
    out = str(tmp_path / "syn.txt")
    code = cli.main([
        "eval", "--dataset", cli_dir["data"],
        "--checkpoint", cli_dir["ckpt"], "--out", out, "--mode", "syn",
    ])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "rank1/syn/avg=" in stdout
    assert "rank1/fused" not in stdout and "rank1/original" not in stdout


def test_ablate_cli(cli_dir, tmp_path, capsys):
    out = str(tmp_path / "ablate.txt")
    code = cli.main([
        "ablate", "--dataset", cli_dir["data"], "--out", out,
        "--config", cli_dir["cfg"], "--stage-epochs", "1,0,0",
    ])
    assert code == 0
    capsys.readouterr()
    with open(out) as fh:
        lines = fh.read().splitlines()
    names = ("full", "drop_c", "drop_d", "drop_r", "drop_gid", "drop_gtv",
             "drop_gsym")
    for name in names:
        assert any(line.startswith("ablation/%s=" % name) for line in lines)
    hashes = [l.split("=", 1)[1] for l in lines if l.startswith("dataset_hash/")]
    assert len(hashes) == 7 and len(set(hashes)) == 1


def test_export_grid_cli(cli_dir, tmp_path, capsys):
    out = str(tmp_path / "grid.pgm")
    code = cli.main([
        "export-grid", "--dataset", cli_dir["data"],
        "--checkpoint", cli_dir["ckpt"], "--out", out,
    ])
    assert code == 0
    assert "rows=8" in capsys.readouterr().out
    size = TINY_SPEC.image_size
    with open(out, "rb") as fh:
        assert fh.read().startswith(b"P5\n%d %d\n255\n" % (4 * size, 8 * size))


def test_inspect_cli(cli_dir, capsys):
    assert cli.main(["inspect", cli_dir["data"]]) == 0
    lines = capsys.readouterr().out.splitlines()
    entries = dict(line.rsplit(" ", 1) for line in lines)
    assert entries["spec"] == "12"
    assert entries["model/mean_shape"] == "192"
    assert entries["sample/00000/x"] == "16x16"
    assert entries["sample/00035/xg"] == "16x16"


def test_module_entry_point(cli_dir, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "facefront", "inspect", cli_dir["data"]],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "spec 12" in proc.stdout
