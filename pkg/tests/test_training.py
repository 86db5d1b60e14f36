import json
import math

import numpy as np
import pytest
import torch

from thforge.config import (ConfigurationError, LossConfig, TrainConfig,
                            desk_model_config)
from thforge.data.manifest import load_manifest
from thforge.losses import UncertaintyWeighting
from thforge.model.net import DualHeadNet
from thforge.training import (TrainingAbort, build_param_groups, lr_schedule,
                              predict_samples, train)


@pytest.fixture(scope="module")
def tiny_samples(tmp_path_factory):
    from thforge.data.synthetic import generate_synthetic_dataset
    out = tmp_path_factory.mktemp("tinydata")
    manifest = generate_synthetic_dataset(out, n_per_cell=1, rng_seed=3)
    samples = load_manifest(manifest)
    bona = [s for s in samples if s.label == 0][:4]
    attack = [s for s in samples if s.label == 1][:4]
    return bona + attack


def quick_cfg(**kw):
    base = dict(epochs=2, freeze_epochs=1, batch_size=4, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestParamGroups:
    def test_partition_covers_all_parameters(self):
        model = DualHeadNet(desk_model_config())
        uncertainty = UncertaintyWeighting()
        groups = build_param_groups(model, TrainConfig(), uncertainty)
        grouped = [p for g in groups for p in g["params"]]
        ids = [id(p) for p in grouped]
        assert len(ids) == len(set(ids)), "groups overlap"
        model_ids = {id(p) for p in model.parameters()}
        assert model_ids <= set(ids)
        assert len(grouped) == len(list(model.parameters())) + 2

    def test_group_learning_rates(self):
        model = DualHeadNet(desk_model_config())
        groups = build_param_groups(model, TrainConfig(), UncertaintyWeighting())
        lrs = {g["name"]: g["lr"] for g in groups}
        assert lrs["base"] == pytest.approx(3e-5)
        assert lrs["det_head"] == pytest.approx(1.5e-5)
        assert lrs["seg_head"] == pytest.approx(1.5e-4)
        assert lrs["uncertainty_det"] == pytest.approx(1e-3)
        assert lrs["uncertainty_seg"] == pytest.approx(1e-4)

    def test_uncertainty_groups_have_no_weight_decay(self):
        model = DualHeadNet(desk_model_config())
        groups = build_param_groups(model, TrainConfig(), UncertaintyWeighting())
        for g in groups:
            if g["name"].startswith("uncertainty"):
                assert g["weight_decay"] == 0.0
            else:
                assert g["weight_decay"] == pytest.approx(1e-2)

    def test_weight_decay_on_log_variance_would_bias_sigma(self):
        # 100 decay-only steps pull a log-variance toward 0 (sigma toward 1),
        # which is why the uncertainty groups must carry weight_decay 0.
        s = torch.nn.Parameter(torch.tensor(2.0))
        opt = torch.optim.AdamW([s], lr=1e-2, weight_decay=0.5)
        for _ in range(100):
            opt.zero_grad()
            (s * 0.0).sum().backward()  # zero gradient, decay only
            opt.step()
        assert abs(float(s.detach())) < 2.0 * math.exp(-0.5 * 100 * 1e-2 * 0.5) + 0.1

    def test_single_task_det_has_no_seg_group(self):
        model = DualHeadNet(desk_model_config(multitask=False, single_task="det"))
        groups = build_param_groups(model, TrainConfig())
        assert {g["name"] for g in groups} == {"base", "det_head"}


class TestLrSchedule:
    CFG = TrainConfig()

    def test_warmup_endpoint_hits_base_lr(self):
        assert lr_schedule(100, 1000, 100, 3e-5, self.CFG) == pytest.approx(3e-5)

    def test_final_step_hits_eta_min(self):
        assert lr_schedule(1000, 1000, 100, 3e-5, self.CFG) == pytest.approx(3e-7, abs=1e-12)

    def test_cosine_midpoint(self):
        lr = lr_schedule(550, 1000, 100, 3e-5, self.CFG)
        expected = 3e-7 + 0.5 * (3e-5 - 3e-7)
        assert lr == pytest.approx(expected, rel=1e-12)

    def test_warmup_is_linear_from_zero(self):
        assert lr_schedule(0, 1000, 100, 3e-5, self.CFG) == 0.0
        assert lr_schedule(50, 1000, 100, 3e-5, self.CFG) == pytest.approx(1.5e-5)

    def test_out_of_range_step_rejected(self):
        with pytest.raises(ConfigurationError):
            lr_schedule(1001, 1000, 100, 3e-5, self.CFG)


class TestTrainLoop:
    def test_history_marks_freeze_phase(self, tiny_samples, tmp_path):
        torch.manual_seed(0)
        model = DualHeadNet(desk_model_config())
        train(model, tiny_samples, LossConfig(),
              quick_cfg(epochs=2, freeze_epochs=1), out_dir=tmp_path)
        history = [json.loads(l) for l in (tmp_path / "history.jsonl").read_text().splitlines()]
        assert history[0]["frozen_backbone"] is True
        assert history[1]["frozen_backbone"] is False

    def test_backbone_bytes_identical_across_frozen_epoch(self, tiny_samples, tmp_path):
        torch.manual_seed(0)
        model = DualHeadNet(desk_model_config())
        snapshot = {n: p.detach().clone() for n, p in model.backbone.named_parameters()}
        head_before = model.seg_conv.weight.detach().clone()

        class Stop(Exception):
            pass

        def stop_after_first(record):
            raise Stop

        with pytest.raises(Stop):
            train(model, tiny_samples, LossConfig(),
                  quick_cfg(epochs=2, freeze_epochs=1), out_dir=tmp_path,
                  on_epoch=stop_after_first)
        for n, p in model.backbone.named_parameters():
            assert torch.equal(p.detach(), snapshot[n]), f"backbone {n} changed while frozen"
        assert not torch.equal(model.seg_conv.weight.detach(), head_before)

    def test_grad_norm_clipped_every_step(self, tiny_samples, tmp_path):
        torch.manual_seed(0)
        model = DualHeadNet(desk_model_config())
        norms = []
        train(model, tiny_samples, LossConfig(), quick_cfg(epochs=2),
              out_dir=tmp_path, on_step=lambda info: norms.append(info["grad_norm_post_clip"]))
        assert norms
        assert max(norms) <= 1.0 + 1e-6

    def test_history_records_lr_and_sigmas(self, tiny_samples, tmp_path):
        torch.manual_seed(0)
        model = DualHeadNet(desk_model_config())
        result = train(model, tiny_samples, LossConfig(), quick_cfg(epochs=3, freeze_epochs=1),
                       out_dir=tmp_path)
        assert len(result.history) == 3
        for rec in result.history:
            assert set(rec["lr_per_group"]) == {"base", "det_head", "seg_head",
                                                "uncertainty_det", "uncertainty_seg"}
            assert "sigma_det" in rec and "sigma_seg" in rec

    def test_sigmas_move_during_finetune(self, tiny_samples, tmp_path):
        torch.manual_seed(0)
        model = DualHeadNet(desk_model_config())
        result = train(model, tiny_samples, LossConfig(),
                       quick_cfg(epochs=6, freeze_epochs=1), out_dir=tmp_path)
        sigmas = [rec["sigma_det"] for rec in result.history]
        assert len(set(sigmas)) > 1

    def test_nan_loss_aborts_with_diagnostic(self, tiny_samples, tmp_path, monkeypatch):
        import thforge.training as training_mod
        torch.manual_seed(0)
        model = DualHeadNet(desk_model_config())
        monkeypatch.setattr(
            training_mod, "focal_loss",
            lambda *a, **k: torch.tensor(float("nan"), requires_grad=True))
        with pytest.raises(TrainingAbort, match="last_lrs"):
            train(model, tiny_samples, LossConfig(), quick_cfg(), out_dir=tmp_path)

    def test_resume_reproduces_trajectory(self, tiny_samples, tmp_path):
        cfg = quick_cfg(epochs=4, freeze_epochs=1)
        torch.manual_seed(0)
        model_full = DualHeadNet(desk_model_config())
        full = train(model_full, tiny_samples, LossConfig(), cfg,
                     out_dir=tmp_path / "full")

        class Interrupt(Exception):
            pass

        def interrupt_after_2(record):
            if record["epoch"] == 2:
                raise Interrupt

        torch.manual_seed(0)
        model_half = DualHeadNet(desk_model_config())
        with pytest.raises(Interrupt):
            train(model_half, tiny_samples, LossConfig(), cfg,
                  out_dir=tmp_path / "part", on_epoch=interrupt_after_2)
        resumed = train(model_half, tiny_samples, LossConfig(), cfg,
                        out_dir=tmp_path / "part", resume=True)
        full_losses = [r["train_loss"] for r in full.history]
        resumed_losses = [r["train_loss"] for r in resumed.history]
        assert len(full_losses) == len(resumed_losses) == 4
        for a, b in zip(full_losses, resumed_losses):
            assert a == pytest.approx(b, rel=1e-5)

    def test_best_checkpoint_selected_by_val_f1(self, tiny_samples, tmp_path):
        torch.manual_seed(0)
        model = DualHeadNet(desk_model_config())
        result = train(model, tiny_samples[:6], LossConfig(), quick_cfg(epochs=2),
                       val_samples=tiny_samples[6:], out_dir=tmp_path)
        assert result.best_checkpoint is not None
        assert result.best_checkpoint.exists()
        assert result.best_val_f1 is not None

    def test_single_task_det_trains(self, tiny_samples, tmp_path):
        torch.manual_seed(0)
        model = DualHeadNet(desk_model_config(multitask=False, single_task="det"))
        result = train(model, tiny_samples, LossConfig(), quick_cfg(), out_dir=tmp_path)
        assert (tmp_path / "last.ckpt").exists()
        assert "sigma_det" not in result.history[0]

    def test_predict_samples_shapes(self, tiny_samples):
        torch.manual_seed(0)
        model = DualHeadNet(desk_model_config())
        scores, preds, gts = predict_samples(model, tiny_samples)
        assert scores.shape == (len(tiny_samples),)
        assert preds.shape == (len(tiny_samples), 64, 64)
        assert gts.shape == preds.shape
