import json
import math
import os

import numpy as np
import pytest

from voxgen import harness as H
from voxgen.errors import CheckpointCorrupt, ConfigError, ShapeMismatch
from voxgen.nn import load_checkpoint

TINY_MODEL = {"hidden_size": 16, "latent_dim": 4, "steps": 2, "read_dim": 8, "context_dim": 4,
              "patch": [4, 4, 4], "read_patch": [4, 4, 4]}


def tiny(out, **over):
    d = {"n_train": 40, "n_test": 8, "batch_size": 8, "train_steps": 6, "log_every": 1, "n_importance": 4,
         "n_eval": 8, "model": dict(TINY_MODEL)}
    d["model"].update(over.pop("model", {}))
    d.update(over)
    return H.RunConfig.from_dict(d, profile="toy", seed=3, out=str(out))


def params_of(model):
    return {k: v.copy() for k, v in model.state_dict().items()}


def test_profiles_and_config_errors(tmp_path):
    cfg = H.RunConfig.from_dict({}, profile="toy")
    assert cfg.model.extent == (8, 8, 8) and cfg.model.hidden_size == 64
    paper = H.RunConfig.from_dict({"dataset": "necker"}, profile="paper")
    assert paper.model.extent == (40, 40, 40) and paper.model.hidden_size == 300 and paper.model.steps == 8
    with pytest.raises(ConfigError):
        H.RunConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        H.RunConfig.from_dict({}, profile="huge")
    with pytest.raises(ConfigError):
        H.RunConfig.from_dict({"train_steps": 0})
    again = H.RunConfig.from_saved(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_zero_learning_rate_keeps_parameters(tmp_path):
    cfg = tiny(tmp_path, lr=0.0)
    init = params_of(H.VoxelModel(cfg.model, seed=cfg.seed))
    res = H.train(cfg)
    final = res["model"].state_dict()
    assert all(np.array_equal(init[k], final[k]) for k in init)


def test_resume_is_bit_exact(tmp_path):
    full = H.train(tiny(tmp_path / "a", train_steps=8))
    H.train(tiny(tmp_path / "b", train_steps=8), stop_after=3)
    resumed = H.train(tiny(tmp_path / "b", train_steps=8))
    a, b = full["model"].state_dict(), resumed["model"].state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert (tmp_path / "a" / "metrics.jsonl").read_text() == (tmp_path / "b" / "metrics.jsonl").read_text()


def test_resume_with_other_model_is_rejected(tmp_path):
    H.train(tiny(tmp_path, train_steps=2))
    with pytest.raises(ConfigError):
        H.train(tiny(tmp_path, train_steps=2, model={"hidden_size": 12}))


def test_metrics_are_json_lines_with_monotone_steps(tmp_path):
    H.train(tiny(tmp_path, eval_every=3))
    steps = []
    for line in (tmp_path / "metrics.jsonl").read_text().splitlines():
        rec = json.loads(line)
        steps.append(rec["step"])
    assert steps == sorted(steps) and steps[-1] == 6
    assert any("eval_nats" in json.loads(l) for l in (tmp_path / "metrics.jsonl").read_text().splitlines())


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    res = H.train(tiny(tmp_path))
    model, cfg, info = H.load_model(res["checkpoint"])
    a, b = res["model"].state_dict(), model.state_dict()
    assert set(a) == set(b) and all(np.array_equal(a[k], b[k]) and a[k].dtype == b[k].dtype for k in a)
    assert info["step"] == 6 and cfg.seed == 3
    arrays, _ = load_checkpoint(res["checkpoint"])
    assert any(k.startswith("adam.m.") for k in arrays)


def test_corrupt_checkpoint(tmp_path):
    res = H.train(tiny(tmp_path, train_steps=1))
    manifest = os.path.join(res["checkpoint"], "manifest.json")
    with open(manifest, "w") as fh:
        fh.write("{not json")
    with pytest.raises(CheckpointCorrupt):
        H.load_model(res["checkpoint"])


def test_training_closes_the_nats_gap(tmp_path):
    # held-out negative bound at step 0 vs after a short toy run
    cfg = H.RunConfig.from_dict({"n_train": 400, "n_test": 50, "train_steps": 300, "n_eval": 50, "n_importance": 1,
                                 "log_every": 0}, profile="toy", seed=0, out=str(tmp_path))
    data = H.load_data(cfg)
    before = H.evaluate(H.VoxelModel(cfg.model, seed=0), data[1], cfg, seed=1)["nats"]
    after = H.evaluate(H.train(cfg, resume=False, data=data)["model"], data[1], cfg, seed=1)["nats"]
    assert (before - after) / before >= 0.3


def test_eval_benchmark_view_checks(tmp_path):
    res = H.train(tiny(tmp_path, train_steps=2))
    a = H.eval_benchmark(res["checkpoint"], seed=4)
    assert a == H.eval_benchmark(res["checkpoint"], seed=4)
    assert a["n"] == 8 and a["nats"] > 0
    with pytest.raises(ShapeMismatch):
        H.eval_benchmark(res["checkpoint"], views=3)


def test_baseline_has_six_conv_layers_and_zero_weights_give_ln2():
    net = H.BaselineConvnet(8, 3)
    assert net.n_conv_layers == 6
    for p in net.parameters():
        p.data[...] = 0
    rng = np.random.default_rng(0)
    vols = (rng.random((5, 8, 8, 8)) < 0.3).astype(np.float32)
    nats = H.baseline_nats(net, rng.random((5, 3, 8, 8)).astype(np.float32), vols)
    assert np.allclose(nats, 512 * math.log(2), rtol=1e-6)


def test_train_baseline_runs(tmp_path):
    cfg = tiny(tmp_path, train_steps=2)
    res = H.train_baseline(cfg, n_views=3)
    assert res["n"] == 8 and np.isfinite(res["nats"]) and os.path.isdir(res["checkpoint"])
    with pytest.raises(ConfigError):
        H.train_baseline(cfg, n_views=0)


def test_sample_exports(tmp_path):
    res = H.train(tiny(tmp_path / "run", train_steps=1))
    assert H.sample_cmd(res["checkpoint"], str(tmp_path / "none"), 0) == []
    assert not (tmp_path / "none").exists()
    files = H.sample_cmd(res["checkpoint"], str(tmp_path / "s1"), 2, seed=5)
    H.sample_cmd(res["checkpoint"], str(tmp_path / "s2"), 2, seed=5)
    assert len(files) == 4
    for f in files:
        other = os.path.join(tmp_path / "s2", os.path.basename(f))
        assert open(f, "rb").read() == open(other, "rb").read()


def test_class_conditional_sample_directories(tmp_path):
    res = H.train(tiny(tmp_path / "run", train_steps=1, conditioning="class"))
    H.sample_cmd(res["checkpoint"], str(tmp_path / "s"), 1, classes=[0, 2])
    assert sorted(os.listdir(tmp_path / "s")) == ["class_0", "class_2"]
    with pytest.raises(ConfigError):
        H.sample_cmd(res["checkpoint"], str(tmp_path / "t"), 1, classes=[99])


def test_complete_and_render_and_gen_data(tmp_path):
    res = H.train(tiny(tmp_path / "run", train_steps=1))
    agreement = H.complete_cmd(res["checkpoint"], str(tmp_path / "c"), n=2, iters=3)
    assert set(agreement) == {1, 2, 3} and all(0 <= v <= 1 for v in agreement.values())
    assert json.loads((tmp_path / "c" / "agreement.json").read_text())["3"] == agreement[3]
    paths = H.render_mesh_cmd({"shape": "cube", "extent": [32, 32]}, str(tmp_path / "m"))
    assert all(os.path.getsize(p) > 0 for p in paths)
    with pytest.raises(ConfigError):
        H.render_mesh_cmd({"shape": "teapot"}, str(tmp_path / "m"))
    cfg = tiny(tmp_path / "d", dataset="digits")
    out = H.gen_data_cmd(cfg, str(tmp_path / "d"))
    assert out["train"] == 40 and out["test"] == 8 and len(out["idx"]) == 2
    back = H.RunConfig.from_dict({"dataset": "directory", "data_dir": str(tmp_path / "d" / "train"), "n_train": 30,
                                  "n_test": 10, "model": dict(TINY_MODEL)})
    tr, te = H.load_data(back)
    assert len(tr.x) == 30 and len(te.x) == 10


def test_montage_layout():
    v = np.zeros((4, 2, 3))
    v[3] = 1
    m = H.slice_montage(v, scale=1)
    assert m.shape == (2 * 3 + 1, 2 * 4 + 1) and m.sum() == 6
