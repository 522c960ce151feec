import json
import math

import numpy as np
import pytest

from clmex.data import MultiViewDataset
from clmex.models import Network
from clmex.tensor.checkpoint import load_checkpoint
from clmex.training import (
    ConfigError,
    LabelSubsetError,
    config_from_dict,
    downstream_train,
    invariance_from_embeddings,
    load_config,
    load_network,
    pretrain,
    stratified_label_subset,
    supervised_baseline,
    view_invariance_diagnostic,
)
from clmex.training.loops import prepare_labeled

from conftest import tiny_config


def test_pretrain_smoke_and_step_accounting(tiny_data, tmp_path):
    _, train, _ = tiny_data
    cfg = tiny_config()
    net, rep = pretrain(cfg, train, out_dir=tmp_path)
    assert [r["epoch"] for r in rep.records] == [1, 2]
    assert all(math.isfinite(r["loss"]) for r in rep.records)
    per_epoch = math.ceil(len(train.groups()) / cfg.pretrain.groups_per_batch)
    assert rep.final_metrics["total_steps"] == 2 * per_epoch == rep.total_steps
    assert (tmp_path / "last.ckpt").exists() and (tmp_path / "best.ckpt").exists()
    assert (tmp_path / "pretrain_report.jsonl").read_text().count("\n") == 2
    assert "wall_time" not in (tmp_path / "pretrain_report.jsonl").read_text()


@pytest.mark.parametrize("loss", ["simclr", "supcon"])
def test_pretrain_other_losses(tiny_data, loss):
    _, train, _ = tiny_data
    _, rep = pretrain(tiny_config(loss=loss, epochs=1), train)
    assert math.isfinite(rep.final_metrics["loss"])


class _Tripwire(MultiViewDataset):
    @property
    def labels(self):
        raise AssertionError("pre-training read the labels")


def test_pretrain_never_reads_labels(tiny_data):
    ds, _, _ = tiny_data
    trap = _Tripwire(**{f: getattr(ds, f) for f in ("images", "subject_ids", "session_ids", "view_angles",
                                                      "expressions", "expression_vocabulary", "view_set")})
    pretrain(tiny_config(epochs=1), trap)


def test_pretrain_resume_matches_uninterrupted(tiny_data, tmp_path, monkeypatch):
    import shutil

    import clmex.training.loops as loops

    _, train, _ = tiny_data
    original = loops.save_training_checkpoint

    def keep_epoch_two(path, *args, **meta):
        out = original(path, *args, **meta)
        if path.name == "last.ckpt" and meta.get("epoch") == 2:
            shutil.copy(out, tmp_path / "epoch2.ckpt")
        return out

    monkeypatch.setattr(loops, "save_training_checkpoint", keep_epoch_two)
    full_net, full_rep = pretrain(tiny_config(epochs=3), train, out_dir=tmp_path / "full")
    resumed_net, resumed_rep = pretrain(tiny_config(epochs=3), train, resume_from=tmp_path / "epoch2.ckpt")
    for k, v in full_net.state_dict().items():
        np.testing.assert_array_equal(resumed_net.state_dict()[k], v)
    assert resumed_rep.deterministic_view()["records"] == full_rep.deterministic_view()["records"]


def test_probe_phase_freezes_encoder(tiny_data):
    _, train, _ = tiny_data
    cfg = tiny_config()
    cfg.downstream.finetune_epochs = 0
    net = Network(cfg.model.encoder, cfg.model.projection, seed=0)
    before = {k: v.tobytes() for k, v in net.state_dict().items() if k.startswith("encoder.")}
    net, rep = downstream_train(net, train, cfg)
    after = {k: v.tobytes() for k, v in net.state_dict().items() if k.startswith("encoder.")}
    assert before == after
    assert rep.final_metrics["probe_steps"] > 0
    assert net.projection is None


def test_finetune_moves_encoder(tiny_data):
    _, train, _ = tiny_data
    cfg = tiny_config()
    net = Network(cfg.model.encoder, cfg.model.projection, seed=0)
    before = net.state_dict()["encoder.conv0.weight"].copy()
    net, _ = downstream_train(net, train, cfg)
    assert not np.array_equal(before, net.state_dict()["encoder.conv0.weight"])


def test_constant_validation_loss_halves_lr_once():
    from clmex.tensor import PlateauSchedule

    s = PlateauSchedule(1e-4, 0.5, 3)
    lrs = [s.observe(0.7) for _ in range(4)]
    assert lrs[:3] == [1e-4] * 3 and lrs[3] == 5e-5


def test_baseline_smoke_and_budget(tiny_data, tmp_path):
    _, train, _ = tiny_data
    cfg = tiny_config()
    cfg.baseline.epochs = 1
    net, rep = supervised_baseline(train, cfg, out_dir=tmp_path)
    assert math.isfinite(rep.records[0]["loss"])
    cfg.baseline.epochs = None
    _, brep = supervised_baseline(train, cfg)
    _, drep = downstream_train(Network(cfg.model.encoder, cfg.model.projection, seed=0), train, cfg)
    assert brep.final_metrics["total_steps"] == drep.final_metrics["total_steps"]
    net2, _ = load_network(tmp_path / "baseline.ckpt")
    for k, v in net.state_dict().items():
        np.testing.assert_array_equal(net2.state_dict()[k], v)


# -- label subsets ----------------------------------------------------------------------


def test_label_subsets_are_stratified_and_nested():
    labels = np.repeat(np.arange(4), [40, 30, 20, 10])
    prev = None
    for f in (0.05, 0.1, 0.25, 0.5, 0.75, 1.0):
        idx = stratified_label_subset(labels, f, seed=3)
        counts = np.bincount(labels[idx], minlength=4)
        np.testing.assert_array_equal(counts, np.floor(f * np.array([40, 30, 20, 10]) + 0.5))
        if prev is not None:
            assert set(prev) <= set(idx)
        prev = idx
    assert len(stratified_label_subset(labels, 1.0, 3)) == 100
    assert not np.array_equal(stratified_label_subset(labels, 0.5, 3), stratified_label_subset(labels, 0.5, 4))


def test_label_subset_names_uncovered_classes():
    labels = np.array([0] * 20 + [1] * 2 + [2] * 3)
    with pytest.raises(LabelSubsetError, match=r"\[1, 2\]"):
        stratified_label_subset(labels, 0.1, 0)


def test_prepare_labeled_fraction_counts(tiny_data):
    _, train, _ = tiny_data
    cfg = tiny_config()
    full_tr, full_va = prepare_labeled(cfg, train)
    cfg.downstream.label_fraction = 0.5
    half_tr, half_va = prepare_labeled(cfg, train)
    assert len(full_tr) + len(full_va) == len(train)
    assert len(half_tr) + len(half_va) == pytest.approx(len(train) / 2, abs=2)


# -- determinism ----------------------------------------------------------------------------


def test_identical_runs_are_bit_identical(tiny_data, tmp_path):
    _, train, _ = tiny_data
    files = ("last.ckpt", "best.ckpt", "classifier.ckpt", "pretrain_report.jsonl", "pretrain_summary.json",
             "downstream_report.jsonl", "downstream_summary.json")
    runs = []
    for _ in range(2):
        cfg = tiny_config()
        net, rep = pretrain(cfg, train, out_dir=tmp_path)
        net, drep = downstream_train(net, train, cfg, out_dir=tmp_path)
        runs.append((json.dumps([rep.deterministic_view(), drep.deterministic_view()]),
                     {f: (tmp_path / f).read_bytes() for f in files}))
    assert runs[0][0] == runs[1][0]
    for f in files:
        assert runs[0][1][f] == runs[1][1][f], f


# -- diagnostic ----------------------------------------------------------------------------


def test_diagnostic_identical_embeddings_is_zero():
    assert invariance_from_embeddings(np.ones((6, 3)), np.array([0, 0, 1, 1, 2, 2])) == pytest.approx(0.0, abs=1e-12)


def test_diagnostic_orthogonal_clusters_is_one():
    R = np.repeat(np.eye(3), 4, axis=0) * np.linspace(1, 2, 12)[:, None]
    assert invariance_from_embeddings(R, np.repeat(np.arange(3), 4)) == pytest.approx(1.0, abs=1e-12)


def test_diagnostic_random_encoder_near_zero():
    from clmex.data import SyntheticConfig, generate_synthetic_dataset
    from clmex.models import EncoderConfig

    _, ds = generate_synthetic_dataset(SyntheticConfig())
    values = [view_invariance_diagnostic(Network(EncoderConfig(), seed=s).encoder, ds) for s in range(3)]
    assert all(abs(v) <= 0.15 for v in values), values


# -- config -------------------------------------------------------------------------------


def test_config_toml_roundtrip(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 3\n[pretrain]\nepochs = 5\ntemperature = 0.5\n[pretrain.augment]\ncrop_scale = [0.5, 1.0]\n'
                 '[data.synthetic]\nviews = [-45, 0, 45]\n')
    cfg = load_config(p)
    assert cfg.seed == 3 and cfg.pretrain.epochs == 5 and cfg.pretrain.augment.crop_scale == (0.5, 1.0)
    assert cfg.data.synthetic.views == (-45, 0, 45)
    assert cfg.downstream.plateau_patience == 3


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown keys"):
        config_from_dict({"pretrain": {"epoch": 3}})
    with pytest.raises(ConfigError, match="label_fraction"):
        config_from_dict({"downstream": {"label_fraction": 0.0}})
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 3")
    with pytest.raises(ConfigError, match="bad.toml"):
        load_config(bad)
