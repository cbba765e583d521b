import json
import os

import numpy as np
import pytest
import torch

from embref.config import ConfigError, RunConfig
from embref.fixtures import read_dataset
from embref.model import collate
from embref.runner.cli import main
from embref.runner.oracles import run_suite
from embref.runner.training import (
    TrainingAbortedError,
    evaluate_checkpoint,
    load_checkpoint,
    overfit,
    restore_model,
    train,
)
from embref.runner.visualize import UnknownSampleError, visualize


def test_paper_defaults():
    cfg = RunConfig()
    assert cfg.image_size == 512
    assert (cfg.h, cfg.w, cfg.channels) == (32, 32, 256)
    assert cfg.transformer_layers == 2
    assert cfg.heads == 8
    assert cfg.batch_size == 16
    assert cfg.optimizer == "rmsprop"
    assert cfg.weight_decay == pytest.approx(5e-4)
    assert cfg.lr == pytest.approx(1e-4)
    assert cfg.lr_halving_every == 10
    assert cfg.total_epochs == 100
    assert cfg.loss_weights == (1.0, 1.0, 1.0, 1.0)
    assert cfg.film_rounds == 3


def test_lr_schedule_formula():
    cfg = RunConfig()
    assert cfg.lr_at_epoch(0) == 1e-4
    assert cfg.lr_at_epoch(9) == 1e-4
    assert cfg.lr_at_epoch(10) == 5e-5
    assert cfg.lr_at_epoch(25) == 2.5e-5  # two halvings by epoch 25
    for epoch in range(100):
        assert cfg.lr_at_epoch(epoch) == 1e-4 * 2.0 ** (-(epoch // 10))


def test_config_yaml_roundtrip_and_overrides(tmp_path):
    cfg = RunConfig.ci(rng_seed=3)
    path = tmp_path / "cfg.yaml"
    cfg.to_yaml(path)
    loaded = RunConfig.from_yaml(path)
    assert loaded == cfg
    bumped = cfg.with_overrides(["lr=0.01", "use_gesture_attention=false", "batch_size=4"])
    assert bumped.lr == 0.01
    assert bumped.use_gesture_attention is False
    assert bumped.batch_size == 4
    with pytest.raises(ConfigError):
        cfg.with_overrides(["nope=1"])
    with pytest.raises(ConfigError):
        cfg.with_overrides(["lr"])


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(image_size=500)  # grid mismatch
    with pytest.raises(ConfigError):
        RunConfig(batch_size=0)
    with pytest.raises(ConfigError):
        RunConfig(optimizer="adam")


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory, tiny_dataset_module):
    out = tmp_path_factory.mktemp("tiny_run")
    cfg = _tiny_train_config(total_epochs=3)
    result = train(cfg, tiny_dataset_module, out, quiet=True)
    return cfg, result


def _tiny_train_config(**overrides):
    base = dict(
        image_size=32, h=2, w=2, channels=16, heads=4, transformer_layers=1,
        batch_size=4, total_epochs=3, lr=1e-3, rng_seed=0,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def tiny_dataset_module(tmp_path_factory):
    from embref.fixtures import GeneratorConfig, generate_dataset

    root = tmp_path_factory.mktemp("tiny_ds_runner")
    cfg = GeneratorConfig(image_size=32, max_objects=3, radius_range=(0.10, 0.18))
    generate_dataset(root, train=8, test=4, config=cfg, base_seed=200)
    return root


def test_train_writes_metrics_and_checkpoint(tiny_run):
    cfg, result = tiny_run
    assert result.checkpoint_path.exists()
    records = [json.loads(l) for l in open(result.metrics_path)]
    steps = [r for r in records if r["kind"] == "step"]
    epochs = [r for r in records if r["kind"] == "epoch_start"]
    assert len(epochs) == 3
    assert len(steps) == 3 * 2  # 8 samples / batch 4
    for r in steps:
        for key in ("loss_yolo", "loss_div", "loss_reg", "loss_attn", "total"):
            assert key in r
    for r in epochs:
        assert r["lr"] == cfg.lr_at_epoch(r["epoch"])


def test_train_determinism(tiny_dataset_module, tmp_path):
    cfg = _tiny_train_config(total_epochs=2)
    a = train(cfg, tiny_dataset_module, tmp_path / "a", quiet=True)
    b = train(cfg, tiny_dataset_module, tmp_path / "b", quiet=True)
    assert a.metrics_path.read_text() == b.metrics_path.read_text()


def test_resume_reproduces_next_step_bitwise(tiny_dataset_module, tmp_path):
    cfg = _tiny_train_config(total_epochs=2)
    full = train(cfg, tiny_dataset_module, tmp_path / "full", quiet=True)

    cfg1 = _tiny_train_config(total_epochs=1)
    train(cfg1, tiny_dataset_module, tmp_path / "part", quiet=True)
    cfg2 = _tiny_train_config(total_epochs=2)
    resumed = train(
        cfg2, tiny_dataset_module, tmp_path / "part",
        resume=tmp_path / "part" / "checkpoint.pt", quiet=True,
    )

    def epoch_steps(path, epoch):
        return [
            json.loads(l) for l in open(path)
            if '"step"' in l and json.loads(l).get("epoch") == epoch
        ]

    want = epoch_steps(full.metrics_path, 1)
    got = epoch_steps(resumed.metrics_path, 1)
    assert want == got  # bit-for-bit identical loss values after resume


def test_resume_config_mismatch_rejected(tiny_dataset_module, tmp_path, tiny_run):
    _, result = tiny_run
    other = _tiny_train_config(total_epochs=3, lr=5e-4)
    with pytest.raises(TrainingAbortedError):
        train(other, tiny_dataset_module, tmp_path, resume=result.checkpoint_path)


def test_checkpoint_restores_bit_identical_forward(tiny_run, tiny_dataset_module):
    _, result = tiny_run
    ckpt = load_checkpoint(result.checkpoint_path)
    model, cfg = restore_model(ckpt)
    _, reader = read_dataset(tiny_dataset_module)
    batch = collate(reader.load_split("test"))
    with torch.no_grad():
        a = model(batch).raw
    model2, _ = restore_model(load_checkpoint(result.checkpoint_path))
    with torch.no_grad():
        b = model2(batch).raw
    assert torch.equal(a, b)
    assert ckpt["providers"]["visual"]["name"] == "toy_conv"
    assert "epoch" in ckpt and ckpt["config"]["rng_seed"] == 0


def test_training_abort_names_term_and_step(tiny_dataset_module, tmp_path, monkeypatch):
    from embref import losses as losses_mod
    from embref.runner import training as training_mod

    def explode(*args, **kwargs):
        raise losses_mod.NonFiniteLossError("loss_yolo", float("nan"))

    monkeypatch.setattr(training_mod, "compute_losses", explode)
    with pytest.raises(TrainingAbortedError, match=r"step 0.*loss_yolo"):
        train(_tiny_train_config(), tiny_dataset_module, tmp_path, quiet=True)


def test_evaluate_checkpoint_deterministic(tiny_run, tiny_dataset_module, tmp_path):
    _, result = tiny_run
    r1 = evaluate_checkpoint(result.checkpoint_path, tiny_dataset_module, out_dir=tmp_path / "e1")
    r2 = evaluate_checkpoint(result.checkpoint_path, tiny_dataset_module)
    assert r1.prec == r2.prec
    assert (tmp_path / "e1" / "report.txt").exists()
    rows = {x for x, _ in r1.prec}
    assert rows == {0.25, 0.50, 0.75}
    assert {b for _, b in r1.prec} == {"all", "small", "medium", "large"}


def test_overfit_harness_smoke(tiny_dataset_module):
    result = overfit(_tiny_train_config(), tiny_dataset_module, steps=5)
    assert result["initial"]["total"] > 0
    assert result["final"]["total"] < result["initial"]["total"] * 10  # it ran


def test_visualize_emits_five_panels(tiny_run, tiny_dataset_module, tmp_path):
    _, result = tiny_run
    manifest, _ = read_dataset(tiny_dataset_module)
    ids = manifest.sample_ids("test")[:2]
    paths = visualize(
        result.checkpoint_path, tiny_dataset_module, ids, tmp_path,
        dump_coords=True, dump_body_attention=True,
    )
    for sid in ids:
        for panel in ("1_boxes", "2_facing", "3_gesture", "4_verbal_gated", "5_verbal_ungated"):
            assert (tmp_path / f"{sid}_{panel}.png").exists()
        assert (tmp_path / f"{sid}_coords_depth.png").exists()
        assert (tmp_path / f"{sid}_body_attention.png").exists()
    with pytest.raises(UnknownSampleError):
        visualize(result.checkpoint_path, tiny_dataset_module, ["missing"], tmp_path)


def test_overlay_matches_input_resolution(tiny_run, tiny_dataset_module, tmp_path):
    import matplotlib.image as mpimg

    _, result = tiny_run
    manifest, _ = read_dataset(tiny_dataset_module)
    sid = manifest.sample_ids("test")[0]
    visualize(result.checkpoint_path, tiny_dataset_module, [sid], tmp_path)
    img = mpimg.imread(tmp_path / f"{sid}_2_facing.png")
    assert img.ndim == 3 and img.shape[0] > 32  # rendered, not a bare grid


def test_cli_usage_error_exits_1():
    with pytest.raises(SystemExit) as err:
        main(["train"])  # missing --data
    assert err.value.code == 1


def test_cli_oracle_suite_green(capsys):
    assert main(["oracle", "geometry"]) == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out and "[FAIL]" not in out


def test_cli_generate_eval_visualize_roundtrip(tmp_path, tiny_run, tiny_dataset_module, capsys, monkeypatch):
    assert main([
        "generate", "--root", str(tmp_path / "ds"), "--train", "3", "--test", "2",
        "--image-size", "32", "--max-objects", "3",
    ]) == 0
    manifest, _ = read_dataset(tmp_path / "ds")
    assert len(manifest.splits["train"]) == 3

    _, result = tiny_run
    monkeypatch.setenv("EMBREF_OUT", str(tmp_path / "outroot"))
    assert main([
        "eval", "--checkpoint", str(result.checkpoint_path), "--data", str(tiny_dataset_module),
    ]) == 0
    out = capsys.readouterr().out
    assert "IoU=0.25" in out and "IoU=0.75" in out
    assert (tmp_path / "outroot" / "eval" / "report.txt").exists()

    assert main([
        "visualize", "--checkpoint", str(result.checkpoint_path),
        "--data", str(tiny_dataset_module), "--count", "1",
        "--out", str(tmp_path / "panels"),
    ]) == 0
    assert len(list((tmp_path / "panels").glob("*.png"))) == 5


def test_cli_overfit_smoke(tiny_dataset_module, tmp_path, capsys):
    cfg_path = tmp_path / "cfg.yaml"
    _tiny_train_config(total_epochs=1).to_yaml(cfg_path)
    assert main([
        "train", "--data", str(tiny_dataset_module), "--config", str(cfg_path),
        "--overfit-steps", "3",
    ]) == 0
    assert "overfit 3 steps" in capsys.readouterr().out


def test_oracle_all_aggregates():
    results = run_suite("all")
    assert len(results) > 25
    assert all(r.passed for r in results)
    with pytest.raises(KeyError):
        run_suite("bogus")
