import numpy as np
import pytest
import torch

from charalign.text_encoder import (
    SequenceEncoder,
    SymmetricCrossBlock,
    TextEncoderConfig,
    TextFusion,
    TooLong,
)
from charalign.vocab import EOS_ID, PAD_ID

CFG = TextEncoderConfig(
    depth=2, fusion_depth=2, embed_dim=8, heads=2,
    radical_vocab_size=20, stroke_vocab_size=20,
)


def make(cfg=CFG):
    torch.manual_seed(0)
    enc = SequenceEncoder(cfg.radical_vocab_size, cfg).to(torch.float64).eval()
    fusion = TextFusion(cfg).to(torch.float64).eval()
    return enc, fusion


def ids_batch(rows, pad_to=None):
    n = pad_to or max(len(r) for r in rows)
    ids = torch.full((len(rows), n), PAD_ID, dtype=torch.long)
    valid = torch.zeros(len(rows), n, dtype=torch.bool)
    for i, row in enumerate(rows):
        ids[i, : len(row)] = torch.tensor(row)
        valid[i, : len(row)] = True
    return ids, valid


def test_encode_shapes_and_valid_len():
    enc, _ = make()
    ids, valid = ids_batch([[3, EOS_ID]])
    out = enc(ids, valid)
    assert out.shape == (1, 2, CFG.embed_dim)
    # K=5 radical sequence -> valid length 6
    ids6, valid6 = ids_batch([[2, 3, 4, 5, 6, EOS_ID]])
    assert valid6.sum() == 6
    assert enc(ids6, valid6).shape[1] == 6


def test_too_long():
    enc, _ = make()
    ids, valid = ids_batch([[2] * 51])
    with pytest.raises(TooLong):
        enc(ids, valid)


def test_padding_invariance():
    enc, fusion = make()
    row = [2, 5, 7, EOS_ID]
    ids_a, valid_a = ids_batch([row])
    ids_b, valid_b = ids_batch([row], pad_to=9)
    out_a, out_b = enc(ids_a, valid_a), enc(ids_b, valid_b)
    assert torch.allclose(out_a, out_b[:, :4], atol=1e-12)
    other_ids, other_valid = ids_batch([[3, 4, EOS_ID]])
    other = enc(other_ids, other_valid)
    fa, _ = fusion(out_a, other, valid_a, other_valid)
    fb, _ = fusion(out_b, other, valid_b, other_valid)
    assert torch.allclose(fa, fb[:, :4], atol=1e-12)


def test_scab_preserves_query_length():
    _, fusion = make()
    block = fusion.cross_blocks[0]
    q_rad = torch.randn(2, 5, CFG.embed_dim, dtype=torch.float64)
    q_stk = torch.randn(2, 9, CFG.embed_dim, dtype=torch.float64)
    rad_valid = torch.ones(2, 5, dtype=torch.bool)
    stk_valid = torch.ones(2, 9, dtype=torch.bool)
    rad_out, stk_out = block(q_rad, q_stk, rad_valid, stk_valid)
    assert rad_out.shape == q_rad.shape
    assert stk_out.shape == q_stk.shape


def test_masked_keys_get_zero_attention():
    torch.manual_seed(1)
    attn = torch.nn.MultiheadAttention(8, 2, batch_first=True).to(torch.float64)
    q = torch.randn(1, 3, 8, dtype=torch.float64)
    kv = torch.randn(1, 6, 8, dtype=torch.float64)
    valid = torch.tensor([[True, True, True, True, False, False]])
    _, weights = attn(q, kv, kv, key_padding_mask=~valid, need_weights=True)
    assert torch.all(weights[0, :, 4:] == 0)
    assert torch.allclose(weights.sum(-1), torch.ones(1, 3, dtype=torch.float64), atol=1e-6)


def test_fusion_depth_zero_identity():
    cfg = TextEncoderConfig(
        depth=1, fusion_depth=0, embed_dim=8, heads=2,
        radical_vocab_size=20, stroke_vocab_size=20,
    )
    fusion = TextFusion(cfg).to(torch.float64)
    q_rad = torch.randn(1, 4, 8, dtype=torch.float64)
    q_stk = torch.randn(1, 7, 8, dtype=torch.float64)
    out_rad, out_stk = fusion(
        q_rad, q_stk, torch.ones(1, 4, dtype=torch.bool), torch.ones(1, 7, dtype=torch.bool)
    )
    assert torch.equal(out_rad, q_rad)
    assert torch.equal(out_stk, q_stk)


def test_zero_weight_residual_identity():
    _, fusion = make()
    with torch.no_grad():
        for mod in fusion.modules():
            if isinstance(mod, torch.nn.MultiheadAttention):
                mod.out_proj.weight.zero_()
                mod.out_proj.bias.zero_()
            if isinstance(mod, torch.nn.Sequential):  # feed-forward
                last_linear = [m for m in mod if isinstance(m, torch.nn.Linear)][-1]
                last_linear.weight.zero_()
                last_linear.bias.zero_()
    q_rad = torch.randn(1, 4, 8, dtype=torch.float64)
    q_stk = torch.randn(1, 7, 8, dtype=torch.float64)
    out_rad, out_stk = fusion(
        q_rad, q_stk, torch.ones(1, 4, dtype=torch.bool), torch.ones(1, 7, dtype=torch.bool)
    )
    assert torch.allclose(out_rad, q_rad, atol=1e-12)
    assert torch.allclose(out_stk, q_stk, atol=1e-12)


def test_split_lengths_random():
    _, fusion = make()
    rng = np.random.default_rng(0)
    for _ in range(25):
        k, j = int(rng.integers(1, 10)), int(rng.integers(1, 10))
        q_rad = torch.randn(1, k + 1, 8, dtype=torch.float64)
        q_stk = torch.randn(1, j + 1, 8, dtype=torch.float64)
        out_rad, out_stk = fusion(
            q_rad, q_stk,
            torch.ones(1, k + 1, dtype=torch.bool),
            torch.ones(1, j + 1, dtype=torch.bool),
        )
        assert out_rad.shape[1] == k + 1
        assert out_stk.shape[1] == j + 1
