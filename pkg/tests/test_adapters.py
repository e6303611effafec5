"""冻结人脸编码器与图像提示 adapter"""

import pytest
import torch

from src.errors import ParameterError, StructuralError
from src.models import AdapterRole
from src.network import (
    FACE_EMBED_DIM, ImageAdapter, adapter_kv, encode_face, flip_embedding, project_embedding,
)


class TestEncodeFace:

    def test_uniform_gray_is_zero(self):
        assert torch.equal(encode_face(torch.zeros(3, 32, 32), (4, 4, 20, 20)), torch.zeros(48))

    def test_half_split_area_average(self):
        image = torch.zeros(3, 16, 16)
        image[:, 4:12, 4:8] = -1.0
        image[:, 4:12, 8:12] = 1.0
        grid = encode_face(image, (4, 4, 12, 12)).reshape(3, 4, 4)
        expected = torch.tensor([-1.0, -1.0, 1.0, 1.0]).expand(3, 4, 4)
        torch.testing.assert_close(grid, expected)

    def test_constant_color_crops_agree(self):
        image = torch.empty(3, 32, 32)
        image[0], image[1], image[2] = 0.3, -0.7, 0.1
        torch.testing.assert_close(encode_face(image, (0, 0, 8, 8)), encode_face(image, (10, 12, 30, 31)))

    def test_mask_zeroes_background(self, sample32):
        masked = encode_face(sample32.image, sample32.face_bbox, sample32.face_mask)
        other = sample32.image.clone()
        other[:, sample32.face_mask < 0.5] = 0.9
        assert torch.equal(masked, encode_face(other, sample32.face_bbox, sample32.face_mask))

    @pytest.mark.parametrize("bbox", [(0, 0, 0, 4), (5, 5, 3, 9), (0, 0, 33, 8), (-1, 0, 4, 4), (0, 0, 4)])
    def test_invalid_bbox(self, bbox):
        with pytest.raises(ParameterError):
            encode_face(torch.zeros(3, 32, 32), bbox)

    def test_frozen(self):
        image = torch.randn(3, 16, 16, requires_grad=True)
        assert not encode_face(image, (0, 0, 16, 16)).requires_grad

    def test_flip_matches_flipped_image(self):
        image = torch.randn(3, 16, 16, generator=torch.Generator().manual_seed(0))
        full = (0, 0, 16, 16)
        torch.testing.assert_close(flip_embedding(encode_face(image, full)), encode_face(image.flip(-1), full))
        e = torch.randn(5, FACE_EMBED_DIM)
        assert torch.equal(flip_embedding(flip_embedding(e)), e)


def _adapter(role=AdapterRole.IEA, layer_dims=None, token_dim=8, hidden_dim=16):
    torch.manual_seed(0)
    return ImageAdapter(role, layer_dims or {"mid": 8, "up1": 16}, n_tokens=4, hidden_dim=hidden_dim, token_dim=token_dim)


class TestImageAdapter:

    def test_role_default_alpha(self):
        assert _adapter(AdapterRole.IEA).alpha_default == 1.0
        assert _adapter(AdapterRole.TCA).alpha_default == 0.5

    def test_same_schema_for_both_roles(self):
        iea, tca = _adapter(AdapterRole.IEA), _adapter(AdapterRole.TCA)
        assert {k: v.shape for k, v in iea.state_dict().items()} == {k: v.shape for k, v in tca.state_dict().items()}

    def test_zero_weights_give_zero_tokens(self):
        adapter = _adapter()
        with torch.no_grad():
            for p in adapter.projector.parameters():
                p.zero_()
        tokens = project_embedding(torch.randn(3, 48), adapter)
        assert tokens.shape == (3, 4, 8)
        assert torch.equal(tokens, torch.zeros_like(tokens))

    def test_projector_gradient_finite_differences(self):
        adapter = _adapter().double()
        e = torch.randn(48, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
        weight = adapter.projector[0].weight

        def objective():
            return project_embedding(e, adapter).pow(2).sum()

        (grad,) = torch.autograd.grad(objective(), [weight])
        eps = 1e-6
        with torch.no_grad():
            for i, j in [(0, 0), (3, 17), (15, 47)]:
                original = float(weight[i, j])
                weight[i, j] = original + eps
                plus = float(objective())
                weight[i, j] = original - eps
                minus = float(objective())
                weight[i, j] = original
                numeric = (plus - minus) / (2 * eps)
                assert abs(numeric - float(grad[i, j])) <= 1e-4 * max(abs(numeric), 1e-8)

    def test_zero_tokens_zero_kv(self):
        k, v = adapter_kv(torch.zeros(1, 4, 8), _adapter(), "mid")
        assert torch.equal(k, torch.zeros(1, 4, 8)) and torch.equal(v, torch.zeros(1, 4, 8))

    def test_identity_projection(self):
        adapter = _adapter(layer_dims={"mid": 8})
        with torch.no_grad():
            adapter.to_k_ip["mid"].weight.copy_(torch.eye(8))
            adapter.to_v_ip["mid"].weight.copy_(torch.eye(8))
        token = torch.randn(1, 1, 8)
        k, v = adapter_kv(token, adapter, "mid")
        assert torch.equal(k, token) and torch.equal(v, token)

    def test_unknown_layer(self):
        with pytest.raises(StructuralError):
            adapter_kv(torch.zeros(1, 4, 8), _adapter(), "down0")

    def test_embedding_dim_checked(self):
        with pytest.raises(StructuralError):
            _adapter().project(torch.zeros(47))
