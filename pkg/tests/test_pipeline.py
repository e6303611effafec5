"""两阶段生成、评估、消融与 α 扫描"""

import math
import statistics
import warnings

import pytest
import torch
from scipy.stats import ConstantInputWarning

from src.errors import ParameterError
from src.models import AdapterRole, PathwaySelection
from src.network import ModelBundle, build_adapter
from src.pipeline import (
    ABLATION_SETTINGS, ablate, alpha_sweep, evaluate, evaluation_prompts, generate, rank_correlation,
    save_generation, summarize,
)
from src.presets import PresetManager
from src.toy import ToyDataset, build_dataset, face_region, score_image
from src.training import train_adapters, train_base


@pytest.fixture
def tiny_data(tiny_cfg):
    return build_dataset(2, 2, seed=0, image_size=8)


class TestGenerate:

    def test_byte_identical_outputs(self, tiny_cfg, tiny_bundle, tiny_sample, caption, tmp_path):
        a = generate(caption, tiny_sample, tiny_bundle, tiny_cfg, seed=11)
        b = generate(caption, tiny_sample, tiny_bundle, tiny_cfg, seed=11)
        paths_a = save_generation(a, tmp_path / "a")
        paths_b = save_generation(b, tmp_path / "b")
        for pa, pb in zip(paths_a, paths_b):
            assert pa.read_bytes() == pb.read_bytes()
        assert a.report.mask == b.report.mask

    def test_report_fields(self, tiny_cfg, tiny_bundle, tiny_sample, caption):
        result = generate(caption, tiny_sample, tiny_bundle, tiny_cfg, seed=2)
        assert result.image.shape == (3, 8, 8)
        assert result.mask.shape == (8, 8)
        report = result.report
        assert report.seed == 2 and report.identity_id == tiny_sample.identity.id
        assert -1.0 <= report.face_score <= 1.0
        assert report.text_match in (0.0, 1 / 3, 2 / 3, 1.0)
        assert {"mask_ms", "sample_ms"} <= set(report.timings)

    @pytest.mark.parametrize("alpha", [1.0, 0.4, 0.1])
    def test_scores_use_face_found_in_image(self, tiny_cfg, tiny_bundle, tiny_sample, caption, alpha):
        cfg = tiny_cfg.with_updates({
            "fusion.pathways": PathwaySelection.IEA_ONLY.value, "adapter.iea_alpha": alpha,
        })
        result = generate(caption, tiny_sample, tiny_bundle, cfg, seed=4)
        assert torch.equal(result.eval_mask, face_region(result.image, tiny_sample.identity))
        face, text, _ = score_image(result.image, caption, tiny_sample.identity)
        assert result.report.face_score == face
        assert result.report.text_match == text

    def test_blank_image_not_scored_as_caption(self, tiny_cfg, tiny_bundle, tiny_sample, caption):
        result = generate(caption, tiny_sample, tiny_bundle, tiny_cfg, seed=4)
        blank = torch.zeros_like(result.image)
        face, text, region = score_image(blank, caption, tiny_sample.identity)
        assert not region.any()
        assert face == 0.0 and text <= 1 / 3

    def test_dump_mask_stages(self, tiny_cfg, tiny_bundle, tiny_sample, caption, tmp_path):
        generate(caption, tiny_sample, tiny_bundle, tiny_cfg, seed=0, dump_dir=tmp_path)
        names = {p.name.rsplit("_", 1)[-1] for p in tmp_path.glob("*.png")}
        assert names == {"heatmap.png", "thresholded.png", "filtered.png", "final.png", "phase1.png"}

    @pytest.mark.parametrize("selection", list(PathwaySelection))
    def test_pathway_selections(self, tiny_cfg, tiny_bundle, tiny_sample, caption, selection):
        cfg = tiny_cfg.with_updates({"fusion.pathways": selection.value, "sampler.per_pathway_cfg": True})
        result = generate(caption, tiny_sample, tiny_bundle, cfg, seed=1)
        assert torch.isfinite(result.image).all()

    def test_reference_size_must_match(self, tiny_cfg, tiny_bundle, sample32, caption):
        with pytest.raises(ParameterError):
            generate(caption, sample32, tiny_bundle, tiny_cfg)


class TestTrainingFree:

    @pytest.fixture
    def single(self, tiny_cfg, tiny_unet):
        return ModelBundle(unet=tiny_unet, iea=build_adapter(tiny_cfg, AdapterRole.IEA, tiny_unet, seed=0))

    def test_equal_alphas_match_single_pathway(self, tiny_cfg, single, tiny_sample, caption):
        dual = tiny_cfg.with_updates({
            "fusion.training_free": True, "fusion.alpha_strong": 0.7, "fusion.alpha_weak": 0.7,
        })
        one = dual.with_updates({"fusion.pathways": PathwaySelection.IEA_ONLY.value})
        a = generate(caption, tiny_sample, single, dual, seed=4)
        b = generate(caption, tiny_sample, single, one, seed=4)
        assert torch.equal(a.image, b.image)

    def test_two_adapters_rejected(self, tiny_cfg, tiny_bundle, tiny_sample, caption):
        cfg = tiny_cfg.with_updates({"fusion.training_free": True})
        with pytest.raises(ParameterError):
            generate(caption, tiny_sample, tiny_bundle, cfg)

    def test_weak_above_strong_rejected(self, tiny_cfg, single, tiny_sample, caption):
        cfg = tiny_cfg.with_updates({
            "fusion.training_free": True, "fusion.alpha_strong": 0.3, "fusion.alpha_weak": 0.6,
        })
        with pytest.raises(ParameterError):
            generate(caption, tiny_sample, single, cfg)

    def test_trained_mode_needs_pair(self, tiny_cfg, single, tiny_sample, caption):
        with pytest.raises(ParameterError):
            generate(caption, tiny_sample, single, tiny_cfg)


class TestEvaluate:

    def test_ground_truth_upper_bound(self, tiny_cfg):
        data = build_dataset(3, 2, seed=0)
        rows = evaluate(data, None, tiny_cfg, ground_truth=True)
        assert len(rows) == 3
        assert all(r.text_match == 1.0 for r in rows)
        assert all(r.face_score > 0.8 for r in rows)

    def test_empty_dataset(self, tiny_cfg, tiny_bundle):
        rows = evaluate(ToyDataset(), tiny_bundle, tiny_cfg)
        assert rows == []
        assert all(math.isnan(v) for v in summarize(rows))

    def test_needs_bundle(self, tiny_cfg, tiny_data):
        with pytest.raises(ParameterError):
            evaluate(tiny_data, None, tiny_cfg)

    def test_prompts_deterministic(self, tiny_cfg, tiny_data):
        cfg = tiny_cfg.with_updates({"eval.captions_per_identity": 5, "eval.max_identities": 1})
        first = [(r.identity.id, c.token_key()) for r, c in evaluation_prompts(tiny_data, cfg)]
        second = [(r.identity.id, c.token_key()) for r, c in evaluation_prompts(tiny_data, cfg)]
        assert first == second
        assert len(first) == 5 and {i for i, _ in first} == {0}
        assert len(set(first)) == 5

    def test_rows_and_progress(self, tiny_cfg, tiny_bundle, tiny_data):
        calls = []
        rows = evaluate(tiny_data, tiny_bundle, tiny_cfg, progress=lambda s, n: calls.append((s, n)))
        assert [r.identity_id for r in rows] == [0, 1]
        assert calls == [(1, 2), (2, 2)]


class TestAblateAndSweep:

    def test_ablation_rows(self, tiny_cfg, tiny_bundle, tiny_data):
        rows = ablate(tiny_data, tiny_bundle, tiny_cfg)
        assert [r.setting for r in rows] == [name for name, _ in ABLATION_SETTINGS]
        assert [r.setting for r in rows] == ["IEA", "TCA", "IEA+TCA", "IEA+TCA+FFB"]
        assert all(r.n == 2 for r in rows)

    def test_alpha_sweep(self, tiny_cfg, tiny_bundle, tiny_data):
        cfg = tiny_cfg.with_updates({"eval.alpha_sweep": [1.0, 0.4]})
        rows, rho = alpha_sweep(tiny_data, tiny_bundle, cfg)
        assert [r.alpha for r in rows] == [1.0, 0.4]
        assert set(rho) == {"text_match", "face_score"}

    def test_single_alpha_has_no_correlation(self, tiny_cfg, tiny_bundle, tiny_data):
        cfg = tiny_cfg.with_updates({"eval.alpha_sweep": [0.5]})
        _, rho = alpha_sweep(tiny_data, tiny_bundle, cfg)
        assert all(math.isnan(v) for v in rho.values())

    def test_sweep_correlations_defined(self, tiny_cfg, tiny_bundle, tiny_data):
        cfg = tiny_cfg.with_updates({"eval.alpha_sweep": [1.0, 0.4, 0.1]})
        with warnings.catch_warnings():
            warnings.simplefilter("error", ConstantInputWarning)
            rows, rho = alpha_sweep(tiny_data, tiny_bundle, cfg)
        assert len(rows) == 3
        assert all(-1.0 <= v <= 1.0 for v in rho.values())


class TestRankCorrelation:

    def test_constant_metric_is_zero(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert rank_correlation([1.0, 0.4, 0.1], [2 / 3, 2 / 3, 2 / 3]) == 0.0

    def test_monotone(self):
        assert rank_correlation([1.0, 0.4, 0.1], [0.2, 0.5, 0.9]) == pytest.approx(-1.0)
        assert rank_correlation([0.1, 0.4, 1.0], [0.2, 0.5, 0.9]) == pytest.approx(1.0)

    @pytest.mark.parametrize("x, y", [
        ([0.5], [0.3]),
        ([], []),
        ([0.5, 0.5], [0.1, 0.9]),
        ([1.0, 0.4], [math.nan, 0.2]),
    ])
    def test_undefined(self, x, y):
        assert math.isnan(rank_correlation(x, y))

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            rank_correlation([1.0, 0.4], [0.1])


def _trained_toy(seed: int):
    cfg = PresetManager().get("toy").with_updates({"seed": seed, "data.seed": seed})
    data = build_dataset(cfg.data.n_identities, cfg.data.samples_per_identity, seed)
    base = train_base(data, cfg).bundle
    bundle = train_adapters(data, base, cfg).bundle
    bundle.unet.eval()
    return cfg, data, bundle


@pytest.mark.slow
class TestToyTrends:

    def test_ablation_ordering(self):
        medians: dict[str, list[tuple[float, float]]] = {}
        for seed in range(3):
            cfg, data, bundle = _trained_toy(seed)
            for row in ablate(data, bundle, cfg):
                medians.setdefault(row.setting, []).append((row.face_score, row.text_match))
        face = {k: statistics.median(v[0] for v in rows) for k, rows in medians.items()}
        text = {k: statistics.median(v[1] for v in rows) for k, rows in medians.items()}
        assert face["IEA"] > face["TCA"]
        assert text["TCA"] > text["IEA"]
        assert face["IEA+TCA+FFB"] > face["IEA+TCA"]
        assert text["IEA+TCA+FFB"] > text["IEA+TCA"]

    def test_alpha_sweep_direction(self):
        text_rho, face_rho = [], []
        for seed in range(5):
            cfg, data, bundle = _trained_toy(seed)
            _, rho = alpha_sweep(data, bundle, cfg)
            text_rho.append(rho["text_match"])
            face_rho.append(rho["face_score"])
        assert statistics.median(text_rho) <= 0
        assert statistics.median(face_rho) > 0
