import filecmp
import pathlib
import json
import os
import subprocess
import sys

import pytest

from voxgen.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main

TINY = {"n_train": 24, "n_test": 6, "batch_size": 6, "train_steps": 3, "log_every": 1, "n_importance": 3,
        "n_eval": 6, "model": {"hidden_size": 12, "latent_dim": 3, "steps": 2, "read_dim": 8, "context_dim": 4,
                               "patch": [4, 4, 4], "read_patch": [4, 4, 4]}}


def write_config(path, cfg):
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return str(path)


def same_tree(a, b) -> bool:
    """Identical relative file lists with byte-identical contents.

    Manifests record their own output directory, so the two roots are
    normalised away before comparing.
    """
    def files(root):
        return sorted(os.path.relpath(os.path.join(d, f), root) for d, _, fs in os.walk(root) for f in fs)

    def content(root, f):
        with open(os.path.join(root, f), "rb") as fh:
            return fh.read().replace(str(root).encode(), b"<root>")

    fa, fb = files(a), files(b)
    return fa == fb and all(content(a, f) == content(b, f) for f in fa)


def run_all_commands(root, seed=7) -> dict:
    """Run every CLI command into ``root``; returns {command: exit code}."""
    os.makedirs(root, exist_ok=True)
    cfg = write_config(pathlib.Path(root) / "cfg.json", TINY)
    mesh = write_config(pathlib.Path(root) / "mesh.json", {"shape": "sphere", "roughness": 0.1,
                                                                          "extent": [24, 24]})
    run = os.path.join(root, "run")
    codes = {
        "gen-data": main(["gen-data", "--config", cfg, "--seed", str(seed), "--out", os.path.join(root, "data")]),
        "train": main(["train", "--config", cfg, "--seed", str(seed), "--out", run]),
        "eval": main(["eval", "--seed", str(seed), "--out", run]),
        "sample": main(["sample", "--seed", str(seed), "--out", os.path.join(root, "samples"),
                        "--checkpoint", os.path.join(run, "checkpoint"), "--n", "2"]),
        "complete": main(["complete", "--seed", str(seed), "--out", os.path.join(root, "completion"),
                          "--checkpoint", os.path.join(run, "checkpoint"), "--n", "2", "--iters", "3"]),
        "render-mesh": main(["render-mesh", "--config", mesh, "--seed", str(seed),
                             "--out", os.path.join(root, "mesh")]),
        "train-baseline": main(["train-baseline", "--config", cfg, "--seed", str(seed),
                                "--out", os.path.join(root, "baseline")]),
    }
    return codes


def test_every_command_succeeds_and_replays(tmp_path, capsys):
    a = run_all_commands(str(tmp_path / "a"))
    b = run_all_commands(str(tmp_path / "b"))
    assert set(a.values()) == {EXIT_OK} and set(b.values()) == {EXIT_OK}
    assert same_tree(tmp_path / "a", tmp_path / "b")
    out = capsys.readouterr().out.strip().splitlines()
    assert all(json.loads(line) is not None for line in out)


def test_seed_changes_outputs(tmp_path):
    for s in (1, 2):
        main(["render-mesh", "--config", write_config(tmp_path / "m.json", {"roughness": 0.2}), "--seed", str(s),
              "--out", str(tmp_path / f"m{s}")])
    assert not filecmp.cmp(tmp_path / "m1" / "sphere.ppm", tmp_path / "m2" / "sphere.ppm", shallow=False)


@pytest.mark.parametrize("cfg", ["{not json", "[1, 2]", json.dumps({"bogus_key": 1}),
                                 json.dumps({"train_steps": 0}), json.dumps({"model": {"likelihood": "poisson"}})])
def test_config_errors_exit_2(tmp_path, cfg):
    (tmp_path / "c.json").write_text(cfg, encoding="utf-8")
    assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_other_config_errors_exit_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["train", "--seed", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG
    bad = write_config(tmp_path / "m.json", {"translation": [0, 0, 0]})
    assert main(["render-mesh", "--config", bad, "--out", str(tmp_path / "m")]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_data_errors_exit_3(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "nowhere"), "--out", str(tmp_path)]) == EXIT_DATA
    (tmp_path / "ds").mkdir()
    cfg = write_config(tmp_path / "c.json", {**TINY, "dataset": "directory", "data_dir": str(tmp_path / "ds")})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_DATA
    (tmp_path / "ds" / "manifest.json").write_text(json.dumps({"files": ["x.vox"], "labels": [0]}))
    (tmp_path / "ds" / "x.vox").write_bytes(b"VOX1\x01")
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "voxgen.cli", "render-mesh", "--out", str(tmp_path)],
                         capture_output=True, text=True, check=False)
    assert out.returncode == 0 and json.loads(out.stdout)["written"]
