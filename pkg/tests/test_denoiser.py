import numpy as np
import pytest
import torch

from nfdiff import (
    ConditionalDenoiser,
    DenoiserConfig,
    attention,
    denoise,
    param_count,
    sinusoidal_embedding,
    time_embedding,
    time_shift_matrix,
)

torch.manual_seed(0)


def _tiny_cfg(**kw):
    base = dict(
        base_channels=4,
        channel_mult=(1, 2, 2, 2),
        n_resblocks=1,
        dropout=0.0,
        time_dim=8,
        attention=(True, False, False, True),
    )
    base.update(kw)
    return DenoiserConfig(**base)


# ---------------------------------------------------------------- embeddings


def test_time_embedding_layout():
    c = 8
    te = time_embedding(0.0, c)
    np.testing.assert_array_equal(te[0::2], np.zeros(c // 2))
    np.testing.assert_array_equal(te[1::2], np.ones(c // 2))
    te1 = time_embedding(1.0, c)
    w = 10000.0 ** (-2.0 * np.arange(c // 2) / c)
    np.testing.assert_allclose(te1[0::2], np.sin(w), atol=1e-15)
    np.testing.assert_allclose(te1[1::2], np.cos(w), atol=1e-15)


def test_shift_matrix_identity():
    """TE(t + dt) = D(dt) TE(t) for every t: the embedding is a group orbit."""
    rng = np.random.default_rng(0)
    for _ in range(100):
        c = int(rng.choice([8, 32, 128]))
        t = float(rng.uniform(0.0, 1000.0))
        dt = float(rng.uniform(0.0, 500.0))
        lhs = time_embedding(t + dt, c)
        rhs = time_shift_matrix(dt, c) @ time_embedding(t, c)
        assert np.abs(lhs - rhs).max() < 1e-9


def test_shift_matrix_orthogonal_and_composes():
    for dt in (0.0, 1.0, 17.3):
        d = time_shift_matrix(dt, 16)
        np.testing.assert_allclose(d.T @ d, np.eye(16), atol=1e-10)
    a, b = time_shift_matrix(3.0, 16), time_shift_matrix(4.5, 16)
    np.testing.assert_allclose(a @ b, time_shift_matrix(7.5, 16), atol=1e-10)


def test_embedding_validation():
    with pytest.raises(ValueError):
        time_embedding(1.0, 7)
    with pytest.raises(ValueError):
        time_embedding(-1.0, 8)
    with pytest.raises(ValueError):
        time_shift_matrix(1.0, 9)


def test_torch_embedding_matches_numpy():
    t = torch.tensor([0.0, 1.0, 537.25], dtype=torch.float64)
    out = sinusoidal_embedding(t, 32).numpy()
    for row, tv in zip(out, t.tolist()):
        np.testing.assert_allclose(row, time_embedding(tv, 32), atol=1e-12)


# ----------------------------------------------------------------- attention


def test_attention_rows_average_to_one():
    """Softmax weights sum to one: an all-ones value column passes through."""
    g = torch.Generator().manual_seed(1)
    z = torch.randn(5, 6, generator=g, dtype=torch.float64)
    z[:, -1] = 1.0
    w_q = torch.randn(6, 3, generator=g, dtype=torch.float64)
    w_k = torch.randn(6, 3, generator=g, dtype=torch.float64)
    w_v = torch.zeros(6, 6, dtype=torch.float64)
    w_v[-1, 0] = 1.0
    out = attention(z, w_q, w_k, w_v)
    assert torch.abs(out[:, 0] - 1.0).max() < 1e-8
    assert torch.abs(out[:, 1:]).max() == 0.0


def test_attention_permutation_equivariant():
    g = torch.Generator().manual_seed(2)
    z = torch.randn(7, 4, generator=g, dtype=torch.float64)
    mats = [torch.randn(4, 4, generator=g, dtype=torch.float64) for _ in range(3)]
    perm = torch.randperm(7, generator=g)
    base = attention(z, *mats)
    permuted = attention(z[perm], *mats)
    assert torch.abs(permuted - base[perm]).max() < 1e-8


def test_attention_batched_and_validated():
    g = torch.Generator().manual_seed(3)
    z = torch.randn(2, 5, 4, generator=g)
    mats = [torch.randn(4, 4, generator=g) for _ in range(3)]
    out = attention(z, *mats)
    assert out.shape == (2, 5, 4)
    for b in range(2):
        torch.testing.assert_close(out[b], attention(z[b], *mats))
    with pytest.raises(ValueError):
        attention(z, torch.randn(4, 3), torch.randn(4, 2), mats[2])


# -------------------------------------------------------------------- blocks


def test_resnet_block_zero_branch_is_identity():
    from nfdiff.denoiser import ResnetPlus

    block = ResnetPlus(8, 8, time_dim=16, dropout=0.0)
    torch.nn.init.zeros_(block.conv2.weight)
    torch.nn.init.zeros_(block.conv2.bias)
    x = torch.randn(2, 8, 4, 4)
    out = block(x, torch.randn(2, 16))
    assert torch.equal(out, x)


def test_resnet_block_channel_change():
    from nfdiff.denoiser import ResnetPlus

    block = ResnetPlus(4, 12, time_dim=16, dropout=0.0)
    out = block(torch.randn(2, 4, 8, 8), torch.randn(2, 16))
    assert out.shape == (2, 12, 8, 8)


# --------------------------------------------------------------------- model


def test_config_properties_and_validation():
    cfg = DenoiserConfig(base_channels=8)
    assert cfg.level_channels == (8, 16, 16, 16)
    assert cfg.embed_dim == 32
    assert _tiny_cfg().embed_dim == 8
    with pytest.raises(ValueError):
        DenoiserConfig(channel_mult=(1, 2, 2))
    with pytest.raises(ValueError):
        DenoiserConfig(attention=(True,))
    with pytest.raises(ValueError):
        DenoiserConfig(base_channels=0)
    with pytest.raises(ValueError):
        DenoiserConfig(dropout=1.0)
    with pytest.raises(ValueError):
        DenoiserConfig(time_dim=7)


@pytest.mark.parametrize("shape", [(1, 2, 16, 16), (2, 2, 16, 16), (1, 2, 16, 24)])
def test_output_shape_tracks_input(shape):
    model = ConditionalDenoiser(_tiny_cfg())
    side = torch.randn(*shape)
    out = denoise(model, side, torch.randn(*shape), 5)
    assert out.shape == shape
    assert not out.requires_grad


def test_fresh_model_predicts_zero_noise():
    """Zero-initialised head: the reverse process starts as the identity."""
    model = ConditionalDenoiser(_tiny_cfg())
    out = denoise(model, torch.randn(1, 2, 16, 16), torch.randn(1, 2, 16, 16), 3)
    assert torch.all(out == 0)


def test_shape_and_divisibility_errors():
    model = ConditionalDenoiser(_tiny_cfg())
    with pytest.raises(ValueError):
        model(torch.randn(1, 2, 16, 16), torch.randn(1, 2, 16, 24), torch.tensor([1.0]))
    with pytest.raises(ValueError):
        model(torch.randn(1, 2, 12, 12), torch.randn(1, 2, 12, 12), torch.tensor([1.0]))
    with pytest.raises(ValueError, match="at least"):
        model(torch.randn(1, 2, 8, 8), torch.randn(1, 2, 8, 8), torch.tensor([1.0]))


def test_scalar_step_broadcasts_over_batch():
    model = ConditionalDenoiser(_tiny_cfg())
    torch.nn.init.normal_(model.head.weight, std=0.1)
    side, ht = torch.randn(2, 2, 16, 16), torch.randn(2, 2, 16, 16)
    a = denoise(model, side, ht, 5)
    b = denoise(model, side, ht, torch.tensor([5.0, 5.0]))
    torch.testing.assert_close(a, b, atol=1e-12, rtol=0.0)


def test_param_count_scales_with_width():
    small = param_count(ConditionalDenoiser(_tiny_cfg()))
    wide = param_count(ConditionalDenoiser(_tiny_cfg(base_channels=8, time_dim=16)))
    assert 0 < small < wide


def test_denoise_mode_validation():
    model = ConditionalDenoiser(_tiny_cfg())
    x = torch.randn(1, 2, 16, 16)
    with pytest.raises(ValueError):
        denoise(model, x, x, 1, mode="predict")
    out = denoise(model, x, x, 1, mode="train")
    assert out.requires_grad


def test_gradient_matches_finite_differences():
    """Central differences in float64 agree with autograd through the UNet."""
    torch.manual_seed(4)
    model = ConditionalDenoiser(_tiny_cfg()).double()
    torch.nn.init.normal_(model.head.weight, std=0.1)
    model.eval()
    side = torch.randn(1, 2, 16, 16, dtype=torch.float64)
    ht = torch.randn(1, 2, 16, 16, dtype=torch.float64)
    t = torch.tensor([7.0], dtype=torch.float64)
    probe = torch.randn(1, 2, 16, 16, dtype=torch.float64)

    def loss():
        return (model(side, ht, t) * probe).sum()

    value = loss()
    value.backward()

    params = dict(model.named_parameters())
    picks = [
        ("stem.weight", (0, 0, 1, 1)),
        ("time_mlp.0.weight", (2, 3)),
        ("down.0.res.0.conv1.weight", (1, 0, 0, 0)),
        ("mid_attn.w_q", (2, 2)),
        ("up.0.res.0.time_proj.bias", (1,)),
        ("head.weight", (0, 2, 1, 1)),
    ]
    h = 1e-6
    for name, idx in picks:
        p = params[name]
        grad = p.grad[idx].item()
        with torch.no_grad():
            p[idx] += h
            f_plus = loss().item()
            p[idx] -= 2 * h
            f_minus = loss().item()
            p[idx] += h
        fd = (f_plus - f_minus) / (2 * h)
        if max(abs(fd), abs(grad)) < 1e-6:
            continue  # both zero within central-difference resolution
        rel = abs(fd - grad) / (abs(fd) + abs(grad))
        assert rel < 1e-4, f"{name}{idx}: autograd {grad:.3e} vs fd {fd:.3e}"
