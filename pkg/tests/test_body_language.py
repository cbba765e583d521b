import numpy as np
import pytest
import torch

from embref.body_language import BodyLanguageEncoder, mask_body_features
from embref.encoders import ShapeContractError
from embref.gradcheck import relative_gradient_error
from embref.layers import NonFiniteError
from embref.losses import regression_loss


def test_mask_identity_when_all_ones(rng):
    fused = torch.tensor(rng.normal(size=(1, 4, 4, 4)), dtype=torch.float32)
    mask = torch.ones(1, 8, 8)
    assert torch.allclose(mask_body_features(fused, mask, 2), fused, atol=1e-7)


def test_mask_annihilates_empty_cells(rng):
    fused = torch.tensor(rng.normal(size=(1, 4, 2, 2)), dtype=torch.float32)
    mask = torch.ones(1, 32, 32)
    mask[0, :16, :16] = 0  # the whole 16x16 window of cell (0, 0)
    out = mask_body_features(fused, mask, 16)
    assert torch.all(out[0, :, 0, 0] == 0)
    assert torch.allclose(out[0, :, 1, 1], fused[0, :, 1, 1], atol=1e-7)


def test_mask_matches_elementwise_oracle(rng):
    fused = torch.tensor(rng.normal(size=(1, 3, 4, 4)))
    mask = torch.tensor((rng.uniform(size=(1, 16, 16)) < 0.5).astype(np.float64))
    out = mask_body_features(fused, mask, 4).numpy()
    for ch in range(3):
        for i in range(4):
            for j in range(4):
                gate = mask[0, 4 * i:4 * i + 4, 4 * j:4 * j + 4].numpy().mean()
                assert abs(out[0, ch, i, j] - fused[0, ch, i, j].item() * gate) <= 1e-7


def test_mask_shape_mismatch():
    with pytest.raises(ShapeContractError):
        mask_body_features(torch.zeros(1, 4, 4, 4), torch.ones(1, 10, 10), 2)


def _encoder(channels=16, grid=(4, 4), pos_embed="learned", dtype=torch.float32):
    torch.manual_seed(7)
    return BodyLanguageEncoder(channels, grid, layers=2, heads=4, pos_embed=pos_embed).to(dtype)


def test_output_is_unit_norm(rng):
    enc = _encoder().eval()
    for _ in range(20):
        body_map = torch.tensor(rng.normal(size=(2, 16, 4, 4)), dtype=torch.float32)
        with torch.no_grad():
            direction = enc(body_map)
        assert torch.all((direction.norm(dim=-1) - 1).abs() <= 1e-6)


def test_zero_input_still_unit_norm():
    enc = _encoder().eval()
    with torch.no_grad():
        direction = enc(torch.zeros(1, 16, 4, 4))
    assert torch.isfinite(direction).all()
    assert abs(direction.norm().item() - 1) <= 1e-6


def test_token_count_at_full_scale():
    enc = BodyLanguageEncoder(256, (32, 32), layers=2, heads=8)
    assert enc.token_count == 32 * 32 + 1 == 1025
    assert enc.pos_embed.shape == (1025, 256)
    with torch.no_grad():
        direction = enc(torch.zeros(1, 256, 32, 32))
    assert direction.shape == (1, 3)


def test_regression_gradient_matches_finite_differences(rng):
    enc = _encoder(channels=8, dtype=torch.float64)
    body_map = torch.tensor(rng.normal(size=(1, 8, 4, 4)))
    target = torch.tensor(rng.normal(size=(1, 3)))
    target = target / target.norm()
    err = relative_gradient_error(
        lambda: regression_loss(enc(body_map), target), list(enc.head.parameters())
    )
    assert err < 1e-4


def test_permutation_with_pos_embed_is_invariant(rng):
    enc = _encoder(dtype=torch.float64).eval()
    body_map = torch.tensor(rng.normal(size=(1, 16, 4, 4)))
    perm = torch.tensor(rng.permutation(16))
    with torch.no_grad():
        base = enc(body_map)
        # permute map cells together with their positional embeddings
        tokens = body_map.flatten(2)[:, :, perm].reshape(1, 16, 4, 4)
        original_pos = enc.pos_embed.clone()
        enc.pos_embed[1:] = original_pos[1:][perm]
        permuted = enc(tokens)
        enc.pos_embed.copy_(original_pos)
    assert (base - permuted).abs().max().item() <= 1e-8


def test_permutation_without_pos_embed_is_invariant(rng):
    enc = _encoder(pos_embed="none", dtype=torch.float64).eval()
    body_map = torch.tensor(rng.normal(size=(1, 16, 4, 4)))
    perm = torch.tensor(rng.permutation(16))
    with torch.no_grad():
        base = enc(body_map)
        tokens = body_map.flatten(2)[:, :, perm].reshape(1, 16, 4, 4)
        permuted = enc(tokens)
    assert (base - permuted).abs().max().item() <= 1e-8


def test_non_finite_input_aborts():
    enc = _encoder().eval()
    bad = torch.full((1, 16, 4, 4), float("inf"))
    with pytest.raises(NonFiniteError):
        enc(bad)


def test_attention_heatmap_shape(rng):
    enc = _encoder().eval()
    body_map = torch.tensor(rng.normal(size=(1, 16, 4, 4)), dtype=torch.float32)
    with torch.no_grad():
        direction, attn = enc(body_map, return_attention=True)
    assert direction.shape == (1, 3)
    assert attn.shape == (1, 4, 4)
    assert torch.isfinite(attn).all()


def test_direction_is_learnable_on_frozen_batch(tiny_config, tiny_dataset):
    """200 optimizer steps on the regression term alone cut it by >= 50%."""
    from embref.fixtures import read_dataset
    from embref.losses import build_targets
    from embref.model import GroundingModel, collate
    from embref.runner.training import compute_anchors

    manifest, reader = read_dataset(tiny_dataset)
    samples = reader.load_split("train")
    torch.manual_seed(0)
    anchors = compute_anchors(tiny_config, samples)
    model = GroundingModel(tiny_config, len(manifest.vocabulary), anchors)
    batch = collate(samples)
    opt = torch.optim.RMSprop(model.parameters(), lr=1e-3)

    def reg():
        out = model(batch)
        targets = build_targets(
            out.embodied, batch["gt_box"], (tiny_config.h, tiny_config.w),
            anchors, tiny_config.stride,
        )
        return regression_loss(out.body_direction, targets.box_direction)

    initial = reg().item()
    for _ in range(200):
        loss = reg()
        opt.zero_grad()
        loss.backward()
        opt.step()
    final = reg().item()
    assert final <= 0.5 * initial, f"{initial:.4f} -> {final:.4f}"
