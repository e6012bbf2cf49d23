import math

import numpy as np
import pytest
import torch

from hiermotion.nn import (Adam, AdamState, FeedForward, MultiHeadAttention, Standardizer, TransformerBlock,
                           adam_step, attention_forward, causal_mask, checkpoint, grad_check, grad_check_module,
                           mlp, sinusoidal_embed, timestep_embedding)

D = torch.float64


def test_sinusoidal_embed_zero():
    e = sinusoidal_embed(0, 8)
    np.testing.assert_array_equal(e[0::2], 0.0)
    np.testing.assert_array_equal(e[1::2], 1.0)


def test_sinusoidal_embed_scalar_oracle():
    w = 10000 ** -0.5
    np.testing.assert_allclose(sinusoidal_embed(1, 4), [math.sin(1), math.cos(1), math.sin(w), math.cos(w)],
                               rtol=0, atol=1e-15)


def test_sinusoidal_embed_injective():
    table = np.stack([sinusoidal_embed(t, 16) for t in range(10001)])
    rounded = {tuple(np.round(r, 9)) for r in table}
    assert len(rounded) == len(table)


def test_sinusoidal_embed_odd_dim():
    with pytest.raises(ValueError):
        sinusoidal_embed(3, 5)
    with pytest.raises(ValueError):
        timestep_embedding(torch.tensor([1]), 5)


def test_timestep_embedding_matches_scalar():
    t = torch.tensor([0, 3, 99])
    out = timestep_embedding(t, 12).numpy()
    for i, ti in enumerate(t.tolist()):
        np.testing.assert_allclose(out[i], sinusoidal_embed(ti, 12), atol=1e-12)


def test_attention_single_key_returns_value():
    q = torch.randn(2, 3, 4, dtype=D)
    k = torch.randn(2, 1, 4, dtype=D)
    v = torch.randn(2, 1, 5, dtype=D)
    np.testing.assert_allclose(attention_forward(q, k, v), v.expand(2, 3, 5), atol=1e-12)


def test_attention_identical_keys_uniform():
    q = torch.randn(1, 2, 4, dtype=D)
    k = torch.ones(1, 5, 4, dtype=D)
    v = torch.randn(1, 5, 3, dtype=D)
    _, w = attention_forward(q, k, v, return_weights=True)
    np.testing.assert_allclose(w, 0.2, atol=1e-12)


def test_attention_loop_oracle():
    g = torch.Generator().manual_seed(1)
    q, k, v = (torch.randn(2, 3, 4, generator=g, dtype=D) for _ in range(3))
    out, w = attention_forward(q, k, v, return_weights=True)
    for b in range(2):
        for i in range(3):
            s = [sum(q[b, i, c].item() * k[b, j, c].item() for c in range(4)) / 2.0 for j in range(3)]
            m = max(s)
            e = [math.exp(x - m) for x in s]
            z = sum(e)
            for c in range(4):
                ref = sum(e[j] / z * v[b, j, c].item() for j in range(3))
                assert abs(out[b, i, c].item() - ref) < 1e-6
    np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-6)


def test_attention_mask_zero_weight():
    q, k, v = (torch.randn(1, 4, 4, dtype=D) for _ in range(3))
    _, w = attention_forward(q, k, v, causal_mask(4), return_weights=True)
    assert torch.all(w[0][~causal_mask(4)] == 0)
    np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-6)


def test_attention_shape_mismatch():
    with pytest.raises(ValueError):
        attention_forward(torch.randn(1, 2, 4), torch.randn(1, 3, 5), torch.randn(1, 3, 2))


def test_causal_block_perturbation():
    blk = TransformerBlock(16, 4, causal=True).to(D)
    x = torch.randn(1, 6, 16, dtype=D)
    y = blk(x)
    for j in range(6):
        x2 = x.clone()
        x2[0, j] += torch.randn(16, dtype=D)
        y2 = blk(x2)
        assert torch.equal(y2[0, :j], y[0, :j])
        assert not torch.allclose(y2[0, j:], y[0, j:])


def test_block_preserves_shape():
    blk = TransformerBlock(16, 2)
    assert blk(torch.randn(3, 7, 16)).shape == (3, 7, 16)


def test_layer_norm_statistics():
    ln = torch.nn.LayerNorm(16).to(D)
    with torch.no_grad():
        y = ln(torch.randn(8, 16, dtype=D) * 5 + 3)
    assert y.mean(-1).abs().max() < 1e-6
    np.testing.assert_allclose(y.var(-1, unbiased=False), 1.0, atol=1e-4)


def test_grad_check_trivial():
    x = torch.randn(6, dtype=D)
    assert grad_check(lambda v: v.sum(), x) < 1e-8
    assert grad_check(lambda v: (v ** 2).sum(), x) < 1e-6
    with pytest.raises(ValueError):
        grad_check(lambda v: v * 2, x)


LAYERS = {
    "linear": (lambda: torch.nn.Linear(8, 5), (4, 8)),
    "mlp": (lambda: mlp([8, 16, 3]), (4, 8)),
    "feedforward": (lambda: FeedForward(8, 16), (2, 3, 8)),
    "layernorm": (lambda: torch.nn.LayerNorm(8), (4, 8)),
    "attention": (lambda: MultiHeadAttention(8, 2), (2, 4, 8)),
    "block": (lambda: TransformerBlock(8, 2), (2, 4, 8)),
    "causal_block": (lambda: TransformerBlock(8, 2, causal=True), (2, 4, 8)),
    "embedding": (lambda: torch.nn.Embedding(6, 8), None),
}


@pytest.mark.parametrize("name", list(LAYERS))
def test_layer_grad_check(name):
    make, shape = LAYERS[name]
    module = make().to(D)
    torch.manual_seed(1)
    if shape is None:
        inp = torch.tensor([0, 3, 5, 3])
    else:
        inp = torch.randn(*shape, dtype=D)
        errs = grad_check(lambda x: torch.sin(module(x)).mean(), inp)
        assert errs < 1e-4
    target = torch.randn_like(module(inp))
    errs = grad_check_module(module, lambda call: ((call(inp) - target) ** 2).mean())
    assert max(errs.values()) < 1e-4, errs


def test_adam_zero_gradient_no_update():
    p = torch.ones(3, dtype=D)
    adam_step([p], [torch.zeros(3, dtype=D)], AdamState())
    np.testing.assert_array_equal(p, 1.0)


def test_adam_first_step_hand_value():
    p = torch.zeros(1, dtype=D)
    st = AdamState(lr=1e-4)
    adam_step([p], [torch.ones(1, dtype=D)], st)
    # m_hat = 1, v_hat = 1 -> delta = -lr / (1 + eps)
    assert abs(p.item() + 1e-4 / (1 + 1e-8)) < 1e-16


def test_adam_matches_manual_formula():
    rng = np.random.default_rng(0)
    p = torch.tensor(rng.normal(size=4))
    ref = p.clone().numpy()
    m = np.zeros(4)
    v = np.zeros(4)
    st = AdamState(lr=1e-2)
    for t in range(1, 6):
        g = rng.normal(size=4)
        adam_step([p], [torch.tensor(g)], st)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.numpy(), ref, atol=1e-14)


def test_adam_descends_quadratic():
    p = torch.tensor([3.0, -2.0], dtype=D, requires_grad=True)
    opt = Adam([p], lr=0.1)
    losses = []
    for _ in range(2):
        opt.zero_grad()
        loss = (p ** 2).sum()
        loss.backward()
        losses.append(loss.item())
        opt.step()
    losses.append((p ** 2).sum().item())
    assert losses[0] > losses[1] > losses[2]


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step([torch.zeros(3)], [torch.zeros(4)], AdamState())
    with pytest.raises(ValueError):
        adam_step([torch.zeros(3)], [], AdamState())


def test_standardizer_round_trip():
    data = np.random.default_rng(0).normal(3, 2, (100, 4))
    s = Standardizer(4).to(D).fit(data)
    x = torch.tensor(data)
    np.testing.assert_allclose(s.inverse(s(x)), x, atol=1e-12)
    np.testing.assert_allclose(s(x).mean(0), 0.0, atol=1e-12)


def test_checkpoint_round_trip(tmp_path):
    tensors = {"a.w": torch.randn(3, 4), "b": torch.randn(2, dtype=D), "n": torch.tensor([1, 2, 3])}
    digest = checkpoint.save(tmp_path / "x.ckpt", tensors, {"kind": "demo", "dims": [3, 4]})
    assert digest == checkpoint.file_hash(tmp_path / "x.ckpt")
    back, cfg = checkpoint.load(tmp_path / "x.ckpt")
    assert cfg == {"kind": "demo", "dims": [3, 4]}
    for k, v in tensors.items():
        assert back[k].dtype == v.dtype and torch.equal(back[k], v)
    blob = (tmp_path / "x.ckpt").read_bytes()
    assert blob[:8] == checkpoint.MAGIC


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(tmp_path / "bad.ckpt")


def test_checkpoint_bytes_are_deterministic():
    t = {"w": torch.arange(6, dtype=torch.float32).reshape(2, 3)}
    assert checkpoint.dump_bytes(t, {"x": 1}) == checkpoint.dump_bytes(dict(t), {"x": 1})
