import numpy as np
import pytest
import torch

from conftest import rand_cond
from texswap import conditioning as cond_mod
from texswap.conditioning import (
    COND_CHANNELS,
    DROPOUT_DRAWS,
    UNET_IN_CHANNELS,
    ConditioningStack,
    TextureTokens,
    apply_dropout,
    encode_conditions,
    encode_normals,
    null_tokens,
    tonemap_irradiance,
)


def test_channel_budget():
    assert COND_CHANNELS == 8  # x(3) + N(3) + E(1) + M(1)
    assert UNET_IN_CHANNELS == 11  # 3 noisy channels + the stack
    c = rand_cond(b=2, res=8)
    assert c.as_tensor().shape == (2, 8, 8, 8)


def test_normal_encoding_pins():
    up = torch.tensor([0.0, 0.0, 1.0]).view(1, 3, 1, 1)
    assert torch.allclose(encode_normals(up).flatten(), torch.tensor([0.5, 0.5, 1.0]))
    down = torch.tensor([-1.0, 0.0, 0.0]).view(1, 3, 1, 1)
    assert torch.allclose(encode_normals(down).flatten(), torch.tensor([0.0, 0.5, 0.5]))


def test_irradiance_tonemap_pins():
    assert float(tonemap_irradiance(torch.tensor(1.0))) == pytest.approx(0.5)
    assert float(tonemap_irradiance(torch.tensor(0.0))) == 0.0
    e = torch.linspace(0, 20, 100)
    t = tonemap_irradiance(e)
    assert t.min() >= 0 and t.max() < 1.0
    assert torch.all(torch.diff(t) > 0)


def test_encode_conditions_applies_encodings():
    b, res = 3, 8
    x = torch.rand(b, 3, res, res)
    n = torch.full((b, 3, res, res), 0.0)
    n[:, 2] = 1.0
    e = torch.ones(b, 1, res, res)
    m = torch.zeros(b, 1, res, res)
    m[..., 2:6, 2:6] = 1.0
    c = encode_conditions(x, n, e, m)
    assert torch.equal(c.x, x)
    assert torch.allclose(c.N[:, 2], torch.ones(b, res, res))
    assert torch.allclose(c.N[:, 0], torch.full((b, res, res), 0.5))
    assert torch.allclose(c.E, torch.full((b, 1, res, res), 0.5))
    assert torch.equal(c.M, m)
    assert c.present.shape == (b, 4) and bool(c.present.all())


def test_encode_conditions_present_flags_zero_maps():
    b, res = 2, 8
    x = torch.rand(b, 3, res, res)
    n = torch.rand(b, 3, res, res) * 2 - 1
    e = torch.rand(b, 1, res, res)
    m = torch.ones(b, 1, res, res)
    present = torch.tensor([[True, False, True, True],
                            [False, True, False, True]])
    c = encode_conditions(x, n, e, m, present)
    assert torch.all(c.N[0] == 0) and not torch.all(c.N[1] == 0)
    assert torch.all(c.x[1] == 0) and torch.equal(c.x[0], x[0])
    assert torch.all(c.E[1] == 0)
    assert torch.equal(c.present, present)


def test_encode_conditions_guards():
    b, res = 2, 8
    x = torch.rand(b, 3, res, res)
    n = torch.rand(b, 3, res, res)
    e = torch.rand(b, 1, res, res)
    m = torch.ones(b, 1, res, res)
    with pytest.raises(ValueError, match="resolution"):
        encode_conditions(x, n, e, torch.ones(b, 1, res, res + 1))
    bad = torch.ones(b, 4, dtype=torch.bool)
    bad[0, 3] = False
    with pytest.raises(ValueError, match="mask"):
        encode_conditions(x, n, e, m, bad)
    empty = m.clone()
    empty[1] = 0.0
    with pytest.raises(ValueError, match="item 1"):
        encode_conditions(x, n, e, empty)


def test_null_tokens():
    t = null_tokens(4, 6, 16)
    assert t.tokens.shape == (4, 6, 16)
    assert torch.all(t.tokens == 0) and bool(t.null.all())


def _dropout_batch(n, seed=0):
    rng = np.random.default_rng(seed)
    c = rand_cond(b=n, res=4, seed=seed)
    tok = TextureTokens(torch.rand(n, 3, 8), torch.zeros(n, dtype=torch.bool))
    u = rng.random((n, DROPOUT_DRAWS))
    return apply_dropout(c, tok, u), u


def test_dropout_statistics_100k():
    n = 100_000
    (c, tok), u = _dropout_batch(n)
    dropped_x = (c.x.reshape(n, -1) == 0).all(dim=1).numpy()
    dropped_n = (c.N.reshape(n, -1) == 0).all(dim=1).numpy()
    dropped_e = (c.E.reshape(n, -1) == 0).all(dim=1).numpy()
    dropped_p = tok.null.numpy()
    all_drop = dropped_x & dropped_n & dropped_e & dropped_p

    assert abs(all_drop.mean() - 0.10) < 0.005
    # marginal per input: 0.1 + 0.9 * 0.1 = 0.19
    for got in (dropped_x.mean(), dropped_n.mean(), dropped_e.mean(), dropped_p.mean()):
        assert abs(got - 0.19) < 0.01
    # the mask never drops
    assert bool((c.M.reshape(n, -1).sum(dim=1) > 0).all())
    assert bool(c.present[:, 3].all())


def test_dropout_zeroes_are_exact_and_flagged():
    n = 2000
    (c, tok), u = _dropout_batch(n, seed=1)
    gate = u[:, 0] < 0.10
    drop_x = gate | (u[:, 1] < 0.10)
    drop_n = gate | (u[:, 2] < 0.10)
    drop_e = gate | (u[:, 3] < 0.10)
    drop_p = gate | (u[:, 4] < 0.10)
    assert np.array_equal((c.x.reshape(n, -1) == 0).all(dim=1).numpy(), drop_x)
    assert np.array_equal((c.N.reshape(n, -1) == 0).all(dim=1).numpy(), drop_n)
    assert np.array_equal((c.E.reshape(n, -1) == 0).all(dim=1).numpy(), drop_e)
    assert np.array_equal(tok.null.numpy(), drop_p)
    assert np.array_equal(c.present[:, 0].numpy(), ~drop_x)
    assert np.array_equal(c.present[:, 1].numpy(), ~drop_n)
    assert np.array_equal(c.present[:, 2].numpy(), ~drop_e)
    # dropped token rows are all-zero, kept rows untouched
    assert torch.all(tok.tokens[torch.from_numpy(drop_p)] == 0)
    assert torch.all(tok.tokens[torch.from_numpy(~drop_p)] != 0)


def test_dropout_does_not_mutate_inputs():
    c = rand_cond(b=8, res=4, seed=2)
    before = c.as_tensor().clone()
    tok = TextureTokens(torch.rand(8, 3, 8), torch.zeros(8, dtype=torch.bool))
    tok_before = tok.tokens.clone()
    apply_dropout(c, tok, np.zeros((8, DROPOUT_DRAWS)) + 0.05)
    assert torch.equal(c.as_tensor(), before)
    assert torch.equal(tok.tokens, tok_before)


def test_dropout_validates_uniform_shape():
    c = rand_cond(b=4, res=4)
    tok = null_tokens(4, 3, 8)
    with pytest.raises(ValueError, match="uniforms"):
        apply_dropout(c, tok, np.zeros((4, 3)))
