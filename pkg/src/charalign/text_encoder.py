"""Radical/stroke sequence encoders and the text-side fusion module.

Two independent L-layer transformer encoders embed the radical and stroke
token sequences. The fusion module stacks O blocks of symmetric
cross-attention (each sequence attends to the other) followed by global
self-attention over the concatenation, then re-splits into refined radical
(first K+1 tokens) and refined stroke (remaining J+1) streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .lexicon import MAX_SEQ_LEN


class TooLong(ValueError):
    pass


@dataclass
class TextEncoderConfig:
    depth: int = 3  # L, per-sequence encoder layers
    fusion_depth: int = 3  # O, stacked cross+global blocks
    embed_dim: int = 128  # D
    heads: int = 4
    max_len: int = MAX_SEQ_LEN
    dropout: float = 0.0
    radical_vocab_size: int = 0
    stroke_vocab_size: int = 0

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")


def _feed_forward(dim, dropout):
    return nn.Sequential(
        nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim), nn.Dropout(dropout)
    )


class SelfAttentionBlock(nn.Module):
    """Pre-norm masked self-attention + feed-forward, both residual."""

    def __init__(self, dim, heads, dropout=0.0):
        super().__init__()
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = _feed_forward(dim, dropout)

    def forward(self, x, valid):
        h = self.norm_attn(x)
        attn_out, _ = self.attn(h, h, h, key_padding_mask=~valid, need_weights=False)
        x = x + attn_out
        return x + self.ffn(self.norm_ffn(x))


class CrossAttentionBlock(nn.Module):
    """Pre-norm cross-attention + feed-forward; query length is preserved."""

    def __init__(self, dim, heads, dropout=0.0):
        super().__init__()
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = _feed_forward(dim, dropout)

    def forward(self, query, keyval, keyval_valid):
        attn_out, _ = self.attn(
            self.norm_q(query),
            self.norm_kv(keyval),
            self.norm_kv(keyval),
            key_padding_mask=~keyval_valid,
            need_weights=False,
        )
        x = query + attn_out
        return x + self.ffn(self.norm_ffn(x))


class SequenceEncoder(nn.Module):
    """Token + learned positional embeddings, then L self-attention blocks."""

    def __init__(self, vocab_size, cfg: TextEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.token_embed = nn.Embedding(vocab_size, cfg.embed_dim, padding_idx=0)
        self.pos_embed = nn.Embedding(cfg.max_len, cfg.embed_dim)
        self.blocks = nn.ModuleList(
            SelfAttentionBlock(cfg.embed_dim, cfg.heads, cfg.dropout)
            for _ in range(cfg.depth)
        )

    def forward(self, ids, valid):
        if ids.shape[1] > self.cfg.max_len:
            raise TooLong(f"sequence length {ids.shape[1]} exceeds {self.cfg.max_len}")
        positions = torch.arange(ids.shape[1], device=ids.device)
        x = self.token_embed(ids) + self.pos_embed(positions)
        for block in self.blocks:
            x = block(x, valid)
        return x


class SymmetricCrossBlock(nn.Module):
    """Each stream attends to the other; independent weights per direction."""

    def __init__(self, dim, heads, dropout=0.0):
        super().__init__()
        self.rad_from_stk = CrossAttentionBlock(dim, heads, dropout)
        self.stk_from_rad = CrossAttentionBlock(dim, heads, dropout)

    def forward(self, q_rad, q_stk, rad_valid, stk_valid):
        rad_out = self.rad_from_stk(q_rad, q_stk, stk_valid)
        stk_out = self.stk_from_rad(q_stk, q_rad, rad_valid)
        return rad_out, stk_out


class TextFusion(nn.Module):
    """O stacked (symmetric cross-attention, global self-attention) blocks.

    With fusion_depth 0 this is the identity on both streams.
    """

    def __init__(self, cfg: TextEncoderConfig):
        super().__init__()
        self.cross_blocks = nn.ModuleList(
            SymmetricCrossBlock(cfg.embed_dim, cfg.heads, cfg.dropout)
            for _ in range(cfg.fusion_depth)
        )
        self.global_blocks = nn.ModuleList(
            SelfAttentionBlock(cfg.embed_dim, cfg.heads, cfg.dropout)
            for _ in range(cfg.fusion_depth)
        )

    def forward(self, q_rad, q_stk, rad_valid, stk_valid):
        n_rad = q_rad.shape[1]
        for cross, global_sa in zip(self.cross_blocks, self.global_blocks):
            q_rad, q_stk = cross(q_rad, q_stk, rad_valid, stk_valid)
            merged = global_sa(
                torch.cat([q_rad, q_stk], dim=1),
                torch.cat([rad_valid, stk_valid], dim=1),
            )
            q_rad, q_stk = merged[:, :n_rad], merged[:, n_rad:]
        return q_rad, q_stk
