"""玩具世界：渲染、DPTOY 格式与解析指标"""

import struct

import numpy as np
import pytest
import torch

from src.errors import DatasetFormatError, StructuralError
from src.models import Background, Caption, FaceSize, IdentitySpec, Placement
from src.toy import (
    build_dataset, classify, decode_dataset, encode_dataset, face_region, face_score, make_dataset,
    make_identities, make_identity, read_dataset, render_reference, render_sample, score_image,
    text_match_score, write_dataset,
)


class TestRender:

    def test_deterministic(self, caption):
        a = render_sample(make_identity(4), caption, seed=9)
        b = render_sample(make_identity(4), caption, seed=9)
        assert torch.equal(a.image, b.image) and torch.equal(a.face_mask, b.face_mask)
        assert a.face_bbox == b.face_bbox

    def test_value_range_and_mask(self, sample32):
        assert sample32.image.shape == (3, 32, 32)
        assert float(sample32.image.min()) >= -1.0 and float(sample32.image.max()) <= 1.0
        assert set(sample32.face_mask.unique().tolist()) == {0.0, 1.0}

    def test_bbox_covers_mask(self, sample32):
        top, left, bottom, right = sample32.face_bbox
        mask = sample32.face_mask
        assert float(mask[top:bottom, left:right].sum()) == float(mask.sum())
        assert mask[top].any() and mask[bottom - 1].any()

    @pytest.mark.parametrize("size,radius", [(FaceSize.SMALL, 5.0), (FaceSize.LARGE, 9.0)])
    def test_disk_area(self, size, radius):
        cap = Caption(background=Background.BLUE, placement=Placement.CENTER, size=size)
        area = float(render_sample(make_identity(2), cap, seed=1).face_mask.sum())
        assert 0.85 * np.pi * radius ** 2 <= area <= 1.15 * np.pi * radius ** 2

    def test_placement_order(self):
        xs = []
        for placement in (Placement.LEFT, Placement.CENTER, Placement.RIGHT):
            cap = Caption(background=Background.RED, placement=placement, size=FaceSize.SMALL)
            mask = render_sample(make_identity(0), cap, seed=5).face_mask
            xs.append(float(torch.nonzero(mask)[:, 1].float().mean()))
        assert xs[0] < xs[1] < xs[2]

    def test_striped_background_columns(self):
        cap = Caption(background=Background.STRIPED, placement=Placement.LEFT, size=FaceSize.SMALL)
        image = render_sample(make_identity(0), cap, seed=0).image
        assert torch.equal(image[:, 0, 0:4], torch.full((3, 4), 0.8))
        assert torch.equal(image[:, 0, 4:8], torch.full((3, 4), -0.8))

    def test_scaled_render(self, tiny_sample):
        assert tiny_sample.image.shape == (3, 8, 8)
        assert tiny_sample.face_mask.sum() > 0


class TestIdentities:

    def test_colors_separable(self):
        for identity in make_identities(30):
            gap = max(abs(f - e) for f, e in zip(identity.face_color, identity.eye_color))
            assert gap >= 0.5

    def test_distinct_face_colors(self):
        colors = {identity.face_color for identity in make_identities(30)}
        assert len(colors) == 30

    def test_validation(self):
        with pytest.raises(ValueError):
            IdentitySpec(id=0, face_color=(0.1, 0.1, 0.1), eye_color=(0.2, 0.2, 0.2))
        with pytest.raises(ValueError):
            IdentitySpec(id=0, face_color=(1.5, 0.0, 0.0), eye_color=(-1.0, 0.0, 0.0))


class TestDataset:

    def test_empty_dataset_is_valid(self):
        data = make_dataset(0, 24, seed=0)
        assert len(decode_dataset(data)) == 0

    def test_same_seed_same_bytes(self, tmp_path):
        a = make_dataset(2, 3, seed=4, path=tmp_path / "a.dptoy")
        b = make_dataset(2, 3, seed=4)
        assert a == b == (tmp_path / "a.dptoy").read_bytes()
        assert make_dataset(2, 3, seed=5) != a

    def test_attribute_balance(self):
        dataset = build_dataset(30, 24, seed=0)
        counts = {bg: 0 for bg in Background}
        for s in dataset:
            counts[s.caption.background] += 1
        for n in counts.values():
            assert abs(n / len(dataset) - 0.25) <= 0.05

    def test_decode_matches_samples(self, tmp_path):
        dataset = build_dataset(2, 2, seed=1)
        digest = write_dataset(dataset, tmp_path / "d.dptoy")
        assert len(digest) == 64
        restored = read_dataset(tmp_path / "d.dptoy")
        assert len(restored) == 4
        for original, loaded in zip(dataset, restored):
            assert torch.equal(original.image, loaded.image)
            assert torch.equal(original.face_mask, loaded.face_mask)
            assert original.face_bbox == loaded.face_bbox
            assert original.caption == loaded.caption
            assert loaded.identity.id == original.identity.id

    def test_stack_and_reference(self):
        dataset = build_dataset(2, 3, seed=0)
        stacked = dataset.stack()
        assert stacked["images"].shape == (6, 3, 32, 32)
        assert stacked["masks"].shape == (6, 1, 32, 32)
        assert stacked["tokens"].shape == (6, 3)
        assert [i.id for i in dataset.identities()] == [0, 1]
        assert dataset.reference_for(1).identity.id == 1


class TestDatasetErrors:

    def test_bad_magic(self):
        data = bytearray(make_dataset(1, 1, seed=0))
        data[0:5] = b"NOTDP"
        with pytest.raises(DatasetFormatError):
            decode_dataset(bytes(data))

    def test_unsupported_version(self):
        data = bytearray(make_dataset(0, 0, seed=0))
        data[6:8] = struct.pack("<H", 9)
        with pytest.raises(DatasetFormatError):
            decode_dataset(bytes(data))

    @pytest.mark.parametrize("cut", [3, 100])
    def test_truncated(self, cut):
        data = make_dataset(1, 1, seed=0)
        with pytest.raises(DatasetFormatError):
            decode_dataset(data[:-cut])

    def test_trailing_bytes(self):
        with pytest.raises(DatasetFormatError):
            decode_dataset(make_dataset(1, 1, seed=0) + b"\x00")

    def test_invalid_caption_token(self):
        data = bytearray(make_dataset(1, 1, seed=0))
        struct.pack_into("<H", data, 12 + 28, 0)
        with pytest.raises(DatasetFormatError):
            decode_dataset(bytes(data))

    def test_only_full_size_images_encode(self, tiny_sample):
        from src.toy import ToyDataset
        with pytest.raises(DatasetFormatError):
            encode_dataset(ToyDataset([tiny_sample]))


class TestFaceScore:

    def test_reference_scores_one(self):
        ref = render_reference(make_identity(3))
        assert face_score(ref.image, ref.face_mask, make_identity(3)) >= 0.99

    def test_negated_colors_score_negative(self):
        ident = make_identity(0)
        negated = IdentitySpec(
            id=0,
            face_color=tuple(-c for c in ident.face_color),
            eye_color=tuple(-c for c in ident.eye_color),
        )
        ref = render_reference(negated)
        assert face_score(ref.image, ref.face_mask, ident) < 0

    def test_background_invariant(self):
        ident = make_identity(5)
        scores = []
        for bg in Background:
            cap = Caption(background=bg, placement=Placement.RIGHT, size=FaceSize.LARGE)
            s = render_sample(ident, cap, seed=2)
            scores.append(face_score(s.image, s.face_mask, ident))
        assert max(scores) - min(scores) < 1e-6

    def test_empty_mask_scores_zero(self, sample32):
        assert face_score(sample32.image, torch.zeros(32, 32), sample32.identity) == 0.0

    def test_identity_separable(self):
        identities = make_identities(8)
        for ident in identities:
            ref = render_reference(ident)
            own = face_score(ref.image, ref.face_mask, ident)
            others = [face_score(ref.image, ref.face_mask, o) for o in identities if o.id != ident.id]
            assert own > max(others)


class TestTextMatch:

    def test_every_caption_matches_itself(self):
        ident = make_identity(1)
        for cap in Caption.all():
            s = render_sample(ident, cap, seed=6)
            assert text_match_score(s.image, cap, s.face_mask) == 1.0

    def test_random_samples_match(self):
        rng = np.random.default_rng(0)
        captions = Caption.all()
        for _ in range(500):
            cap = captions[int(rng.integers(len(captions)))]
            s = render_sample(make_identity(int(rng.integers(30))), cap, seed=int(rng.integers(1 << 30)))
            assert text_match_score(s.image, cap, s.face_mask) == 1.0

    def test_wrong_background(self, sample32, caption):
        wrong = caption.model_copy(update={"background": Background.RED})
        assert text_match_score(sample32.image, wrong, sample32.face_mask) <= 2 / 3

    def test_classify_fields(self, sample32):
        assert classify(sample32.image, sample32.face_mask) == {
            "background": "green", "placement": "left", "size": "large",
        }

    def test_empty_mask(self, sample32, caption):
        # 无掩码时仅背景可判定
        assert text_match_score(sample32.image, caption, torch.zeros(32, 32)) == pytest.approx(1 / 3)


class TestFaceRegion:

    @pytest.mark.parametrize("index", [0, 1, 4, 7, 12, 29])
    def test_recovers_rendered_disk(self, index):
        ident = make_identity(index)
        for k, cap in enumerate(Caption.all()):
            s = render_sample(ident, cap, seed=k)
            assert torch.equal(face_region(s.image, ident), s.face_mask), cap.token_key()

    def test_blank_image_has_no_face(self, caption):
        blank = torch.zeros(3, 32, 32)
        ident = make_identity(2)
        assert not face_region(blank, ident).any()
        face, text, region = score_image(blank, caption, ident)
        assert face == 0.0
        assert text <= 1 / 3
        assert not region.any()

    def test_placement_and_size_read_from_pixels(self):
        ident = make_identity(6)
        drawn = Caption(background=Background.GREEN, placement=Placement.RIGHT, size=FaceSize.LARGE)
        s = render_sample(ident, drawn, seed=3)
        asked = drawn.model_copy(update={"placement": Placement.LEFT})
        assert score_image(s.image, drawn, ident)[1] == 1.0
        assert score_image(s.image, asked, ident)[1] == pytest.approx(2 / 3)
        smaller = drawn.model_copy(update={"size": FaceSize.SMALL})
        assert score_image(s.image, smaller, ident)[1] == pytest.approx(2 / 3)

    def test_keeps_largest_face_colored_blob(self):
        ident = make_identity(3)
        cap = Caption(background=Background.BLUE, placement=Placement.LEFT, size=FaceSize.LARGE)
        s = render_sample(ident, cap, seed=0)
        image = s.image.clone()
        image[:, 0:2, 30:32] = torch.tensor(ident.face_color)[:, None, None]
        assert torch.equal(face_region(image, ident), s.face_mask)

    def test_noise_within_tolerance(self):
        ident = make_identity(8)
        cap = Caption(background=Background.STRIPED, placement=Placement.CENTER, size=FaceSize.SMALL)
        s = render_sample(ident, cap, seed=1)
        g = torch.Generator().manual_seed(0)
        noisy = s.image + (torch.rand(s.image.shape, generator=g) - 0.5) * 0.1
        assert torch.equal(face_region(noisy, ident), s.face_mask)

    def test_rejects_bad_shape(self):
        with pytest.raises(StructuralError):
            face_region(torch.zeros(32, 32), make_identity(0))
