import os
import re
import subprocess
import zlib
from pathlib import Path

import pytest

CLI = os.environ.get("FDFTNET_CLI", str(Path(__file__).resolve().parents[2] / "build" / "fdftnet"))


def run(*args, check=True, env=None):
    proc = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, env=env)
    if check and proc.returncode != 0:
        raise AssertionError(f"exit {proc.returncode}\n{proc.stderr}")
    return proc


def kv(text):
    return dict(re.findall(r"(\w+)=(\S+)", text))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    run("synth-data", "--out", root / "data", "--n-per-class", 18, "--seed", 3)
    run("pretrain", "--data", root / "data", "--out", root / "bb.fdwt", "--epochs", 2)
    return root


def test_params_tables_and_total():
    out = run("params").stdout
    for value in ["123", "2,336", "8,768", "1,321", "5,201", "20,641", "73,728", "5,184", "82,944"]:
        assert re.search(rf"\s{value}\s", out), value
    assert re.search(r"Total\s+115,318", out)
    assert re.search(r"Total\s+323,648", out)
    assert "trainable_total=1,410,615" in out


def test_params_follow_flags():
    out = run("params", "--n", 2).stdout
    assert f"trainable_total={1410615 - 2 * 323648:,}" in out


def test_synth_data_counts_and_reproducibility(tmp_path):
    a = run("synth-data", "--out", tmp_path / "a", "--n-per-class", 100, "--seed", 5)
    b = run("synth-data", "--out", tmp_path / "b", "--n-per-class", 100, "--seed", 5)
    assert len(list((tmp_path / "a").rglob("*.ppm"))) == 200
    assert kv(a.stdout)["manifest_crc32"] == kv(b.stdout)["manifest_crc32"]
    manifest = (tmp_path / "a" / "manifest.csv").read_bytes()
    assert manifest == (tmp_path / "b" / "manifest.csv").read_bytes()
    assert f"{zlib.crc32(manifest):08x}" == kv(a.stdout)["manifest_crc32"]


def test_zero_amplitude_warns(tmp_path):
    proc = run("synth-data", "--out", tmp_path / "z", "--n-per-class", 2, "--artifact-amp", 0)
    assert "warning" in proc.stderr
    assert "warning" not in proc.stdout


def test_unwritable_output_fails(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    proc = run("synth-data", "--out", blocker / "sub", "--n-per-class", 2, check=False)
    assert proc.returncode != 0
    assert "error" in proc.stderr


def test_pretrain_writes_weights_and_history(workspace):
    assert (workspace / "bb.fdwt").read_bytes()[:4] == b"FDWT"
    lines = (workspace / "bb.history.csv").read_text().splitlines()
    assert lines[0].startswith("epoch,")
    assert len(lines) == 3


def test_finetune_eval_predict(workspace):
    proc = run("finetune", "--data", workspace / "data", "--backbone", workspace / "bb.fdwt",
               "--out", workspace / "m.fdwt", "--epochs", 2, "--n", 2)
    values = kv(proc.stdout)
    assert values["backbone_crc32_before"] == values["backbone_crc32_after"]
    assert int(values["frozen_params"]) > 0

    ev = run("eval", "--data", workspace / "data", "--model", workspace / "m.fdwt").stdout
    assert re.fullmatch(r"ACC=\d+\.\d{4} AUROC=\d+\.\d{4}\n", ev)

    image = sorted((workspace / "data" / "fake").glob("*.ppm"))[0]
    p = float(run("predict", "--model", workspace / "m.fdwt", "--image", image).stdout)
    assert 0.0 <= p <= 1.0


def test_default_finetune_counts(workspace):
    proc = run("finetune", "--data", workspace / "data", "--backbone", workspace / "bb.fdwt",
               "--out", workspace / "m4.fdwt", "--epochs", 1)
    assert kv(proc.stdout)["trainable_params"] == "1410615"


def test_runs_are_byte_identical(workspace):
    for name in ("r1", "r2"):
        run("finetune", "--data", workspace / "data", "--backbone", workspace / "bb.fdwt",
            "--out", workspace / f"{name}.fdwt", "--epochs", 2, "--n", 2, "--seed", 11)
    assert (workspace / "r1.fdwt").read_bytes() == (workspace / "r2.fdwt").read_bytes()


def test_missing_files_fail_with_message(workspace):
    proc = run("eval", "--data", workspace / "data", "--model", workspace / "nope.fdwt", check=False)
    assert proc.returncode != 0
    assert "nope.fdwt" in proc.stderr
    assert proc.stdout == ""
    proc = run("predict", "--model", workspace / "bb.fdwt", "--image", workspace / "none.ppm", check=False)
    assert proc.returncode != 0


def test_config_file_merges_under_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n=2\n")
    out = run("--config", cfg, "params").stdout
    assert f"trainable_total={1410615 - 2 * 323648:,}" in out


def test_profile_from_environment():
    env = dict(os.environ, FDFT_PROFILE="paper")
    assert "profile=paper" in run("params", env=env).stderr
    bad = dict(os.environ, FDFT_PROFILE="huge")
    assert run("params", env=bad, check=False).returncode != 0


def test_config_sections_flags_and_unknown_keys(tmp_path):
    cfg = tmp_path / "shared.cfg"
    cfg.write_text("# shared by every command\nseed=7\nfinetune.n=2\nno-ftt=true\nparams.m=2\n")
    proc = run("--config", cfg, "params", "--n", 3)
    assert "seed=7" in proc.stderr
    assert "m=2" in proc.stderr
    assert "n=3" in proc.stderr
    bad = tmp_path / "bad.cfg"
    bad.write_text("bogus=1\n")
    proc = run("--config", bad, "params", check=False)
    assert proc.returncode != 0
    assert "bogus" in proc.stderr
