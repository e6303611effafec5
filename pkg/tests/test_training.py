"""两阶段训练与梯度检查"""

import csv
import dataclasses
import hashlib

import pytest
import torch

from src.checkpoint import encode_checkpoint
from src.diffusion import add_noise, make_schedule
from src.errors import ParameterError, StateError, TrainingDivergedError
from src.fusion import PathwaySpec, dual_path_forward, loss_fusion, loss_iea, loss_tca, total_loss
from src.models import AdapterRole, FusionMode
from src.network import ModelBundle, build_adapter, encode_faces
from src.toy import ToyDataset, build_dataset
from src.training import (
    ADAPTER_LOSS_COLUMNS, grad_check, parameter_partition, train_adapters, train_base, write_loss_csv,
)


@pytest.fixture
def tiny_data(tiny_cfg):
    return build_dataset(tiny_cfg.data.n_identities, tiny_cfg.data.samples_per_identity, seed=0, image_size=8)


def _with_steps(cfg, base=3, adapters=3):
    return cfg.with_updates({"training.base_steps": base, "training.adapter_steps": adapters})


def _base_digest(bundle: ModelBundle) -> str:
    entries = {k: v for k, v in bundle.state_entries().items() if k.startswith("base.")}
    return hashlib.sha256(encode_checkpoint(entries)).hexdigest()


@torch.no_grad()
def _fixed_adapter_loss(unet, iea, tca, dataset, cfg, timesteps=8) -> float:
    """固定 (t, 噪声) 网格上的 L_IEA + L_TCA + L_fusion"""
    schedule = make_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    data = dataset.stack()
    faces = encode_faces(data["images"], [s.face_bbox for s in dataset], data["masks"][:, 0])
    n = len(dataset)
    t = torch.linspace(0, cfg.schedule.T - 1, timesteps).long().repeat_interleave(n)
    x0 = data["images"].repeat(timesteps, 1, 1, 1)
    m = data["masks"].repeat(timesteps, 1, 1, 1)
    noise = torch.randn(x0.shape, generator=torch.Generator().manual_seed(99))
    out = dual_path_forward(
        unet, add_noise(x0, noise, t, schedule), t, data["tokens"].repeat(timesteps, 1),
        faces.repeat(timesteps, 1),
        PathwaySpec(iea, cfg.adapter.iea_alpha), PathwaySpec(tca, cfg.adapter.tca_alpha), m,
    )
    total = total_loss(loss_iea(noise, out.eps_iea, m), loss_tca(noise, out.eps_tca, m), loss_fusion(noise, out.eps_fused))
    return float(total)


class TestTrainBase:

    def test_loss_decreases(self, tiny_cfg, tiny_data):
        cfg = tiny_cfg.with_updates({"training.base_steps": 80, "training.batch_size": 8})
        result = train_base(tiny_data, cfg)
        losses = [row["loss"] for row in result.history]
        assert len(losses) == 80
        assert sum(losses[-20:]) / 20 < sum(losses[:10]) / 10

    def test_deterministic(self, tiny_cfg, tiny_data):
        cfg = _with_steps(tiny_cfg)
        a = train_base(tiny_data, cfg).bundle.state_entries()
        b = train_base(tiny_data, cfg).bundle.state_entries()
        assert encode_checkpoint(a) == encode_checkpoint(b)

    def test_progress_callback(self, tiny_cfg, tiny_data):
        calls = []
        train_base(tiny_data, _with_steps(tiny_cfg, base=4), progress=lambda s, n, row: calls.append((s, n)))
        assert calls == [(1, 4), (2, 4), (3, 4), (4, 4)]

    def test_empty_dataset(self, tiny_cfg):
        with pytest.raises(StateError):
            train_base(ToyDataset(), tiny_cfg)

    def test_nan_input_diverges(self, tiny_cfg, tiny_data):
        broken = ToyDataset([dataclasses.replace(s, image=torch.full_like(s.image, float("nan"))) for s in tiny_data])
        with pytest.raises(TrainingDivergedError) as exc:
            train_base(broken, _with_steps(tiny_cfg))
        assert exc.value.step == 1


class TestTrainAdapters:

    @pytest.fixture
    def base(self, tiny_cfg, tiny_data):
        return train_base(tiny_data, _with_steps(tiny_cfg)).bundle

    def test_base_untouched(self, tiny_cfg, tiny_data, base):
        before = _base_digest(base)
        result = train_adapters(tiny_data, base, _with_steps(tiny_cfg))
        assert _base_digest(result.bundle) == before
        assert result.bundle.groups() == ["base", "iea", "tca"]

    def test_parameter_partition(self, tiny_cfg, tiny_data, base):
        bundle = train_adapters(tiny_data, base, _with_steps(tiny_cfg)).bundle
        trainable, frozen = parameter_partition(bundle)
        assert not set(trainable) & set(frozen)
        names = {f"{g}.{n}" for g, m in {"base": bundle.unet, **bundle.adapters()}.items() for n, _ in m.named_parameters()}
        assert set(trainable) | set(frozen) == names
        assert all(n.startswith(("iea.", "tca.")) for n in trainable)
        assert all(n.startswith("base.") for n in frozen)

    def test_full_masks_zero_tca_loss(self, tiny_cfg, tiny_data, base):
        full = ToyDataset([dataclasses.replace(s, face_mask=torch.ones_like(s.face_mask)) for s in tiny_data])
        result = train_adapters(full, base, _with_steps(tiny_cfg))
        assert all(row["l_tca"] == 0.0 for row in result.history)
        assert all(row["l_iea"] > 0.0 for row in result.history)

    @pytest.mark.parametrize("updates", [
        {"training.strict_routing": False},
        {"training.fusion_stop_gradient": True},
        {"fusion.mode": FusionMode.INDEPENDENT.value},
        {"fusion.private_streams": True},
    ])
    def test_variants_run(self, tiny_cfg, tiny_data, base, updates):
        result = train_adapters(tiny_data, base, _with_steps(tiny_cfg).with_updates(updates))
        assert len(result.history) == 3
        for row in result.history:
            expected = (
                tiny_cfg.training.w_iea * row["l_iea"] + tiny_cfg.training.w_tca * row["l_tca"]
                + tiny_cfg.training.w_fusion * row["l_fusion"]
            )
            assert row["total"] == pytest.approx(expected, rel=1e-5)

    def test_single_adapter(self, tiny_cfg, tiny_data, base):
        result = train_adapters(tiny_data, base, _with_steps(tiny_cfg).with_updates({"training.single_adapter": True}))
        assert result.bundle.tca is None
        assert all(row["l_tca"] == 0.0 and row["l_fusion"] == 0.0 for row in result.history)

    def test_loss_csv(self, tiny_cfg, tiny_data, base, tmp_path):
        result = train_adapters(tiny_data, base, _with_steps(tiny_cfg))
        write_loss_csv(result, tmp_path / "losses.csv")
        with (tmp_path / "losses.csv").open(encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0]) == ADAPTER_LOSS_COLUMNS
        assert [int(r["step"]) for r in rows] == [1, 2, 3]

    def test_empty_dataset(self, tiny_cfg, base):
        with pytest.raises(StateError):
            train_adapters(ToyDataset(), base, tiny_cfg)

    def test_fixed_grid_loss_decreases_median_of_three_seeds(self, tiny_cfg, tiny_data, base):
        ratios = []
        for seed in range(3):
            cfg = tiny_cfg.with_updates({"seed": seed, "training.adapter_steps": 200})
            before = _fixed_adapter_loss(
                base.unet,
                build_adapter(cfg, AdapterRole.IEA, base.unet),
                build_adapter(cfg, AdapterRole.TCA, base.unet),
                tiny_data, cfg,
            )
            trained = train_adapters(tiny_data, base, cfg).bundle
            after = _fixed_adapter_loss(trained.unet, trained.iea, trained.tca, tiny_data, cfg)
            ratios.append(after / before)
        assert sorted(ratios)[1] < 1.0


class TestGradCheck:

    def test_matches_finite_differences(self, tiny_cfg, tiny_bundle, tiny_sample):
        report = grad_check(tiny_bundle, tiny_sample, tiny_cfg)
        assert len(report.entries) >= 20
        assert report.max_rel_error < 1e-3
        assert set(report.checked_groups) == {"iea", "tca"}
        assert "face_encoder" in report.frozen_groups and "base" in report.frozen_groups
        assert all(e.name.startswith(("iea.", "tca.")) for e in report.entries)

    def test_zero_loss_has_zero_gradient(self, tiny_cfg, tiny_bundle, tiny_sample):
        report = grad_check(tiny_bundle, tiny_sample, tiny_cfg, zero_loss=True)
        assert report.max_abs_grad < 1e-10

    def test_does_not_modify_bundle(self, tiny_cfg, tiny_bundle, tiny_sample):
        before = encode_checkpoint(tiny_bundle.state_entries())
        grad_check(tiny_bundle, tiny_sample, tiny_cfg)
        assert encode_checkpoint(tiny_bundle.state_entries()) == before

    @pytest.mark.parametrize("kwargs", [{"n_params": 5}, {"epsilon": 0.0}])
    def test_parameter_validation(self, tiny_cfg, tiny_bundle, tiny_sample, kwargs):
        with pytest.raises(ParameterError):
            grad_check(tiny_bundle, tiny_sample, tiny_cfg, **kwargs)

    def test_needs_both_adapters(self, tiny_cfg, tiny_unet, tiny_sample):
        with pytest.raises(ParameterError):
            grad_check(ModelBundle(unet=tiny_unet), tiny_sample, tiny_cfg)
