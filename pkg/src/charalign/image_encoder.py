"""Hierarchical image encoder producing five feature grids.

A small residual trunk yields low-level features F at 1/4 resolution; two
stride-2 heads derive stroke-level (1/8) and radical-level (1/16) grids; the
image fusion module refines each with the other; a final stride-2 head maps
the refined radical grid to the structure grid at 1/32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn


class BadShape(ValueError):
    pass


@dataclass
class ImageEncoderConfig:
    input_size: int = 128
    trunk_widths: tuple = (32, 64, 128)  # three residual stages
    embed_dim: int = 128  # D, shared with the text side
    blocks_per_stage: int = 1


@dataclass
class ImageFeatures:
    """The five grids (plus the trunk output), NCHW."""

    trunk: torch.Tensor  # b x D' x H/4 x W/4
    stroke: torch.Tensor  # b x D x H/8 x W/8
    radical: torch.Tensor  # b x D x H/16 x W/16
    stroke_refined: torch.Tensor  # b x D x H/8 x W/8
    radical_refined: torch.Tensor  # b x D x H/16 x W/16
    structure: torch.Tensor  # b x D x H/32 x W/32

    def grid(self, level):
        return {
            "stroke": self.stroke,
            "refined_stroke": self.stroke_refined,
            "radical": self.radical,
            "refined_radical": self.radical_refined,
            "structure": self.structure,
        }[level]


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(channels)
        self.act = nn.GELU()

    def forward(self, x):
        out = self.act(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.act(out + x)


class ImageEncoder(nn.Module):
    def __init__(self, cfg: ImageEncoderConfig):
        super().__init__()
        self.cfg = cfg
        w1, w2, w3 = cfg.trunk_widths
        d = cfg.embed_dim

        def stage(c_in, c_out, stride):
            layers = [
                nn.Conv2d(c_in, c_out, 3, stride, 1, bias=False),
                nn.BatchNorm2d(c_out),
                nn.GELU(),
            ]
            layers += [ResidualBlock(c_out) for _ in range(cfg.blocks_per_stage)]
            return nn.Sequential(*layers)

        # two stride-2 stages bring the trunk output to 1/4 resolution
        self.trunk = nn.Sequential(stage(3, w1, 2), stage(w1, w2, 2), stage(w2, w3, 1))
        self.head_stroke = nn.Conv2d(w3, d, 3, 2, 1)  # 1/4 -> 1/8
        self.head_radical = nn.Conv2d(d, d, 3, 2, 1)  # 1/8 -> 1/16
        # mutual refinement: radical -> stroke via deconv, stroke -> radical back
        self.fuse_up = nn.ConvTranspose2d(d, d, 4, 2, 1)
        self.fuse_down = nn.Conv2d(d, d, 3, 2, 1)
        self.head_structure = nn.Conv2d(d, d, 3, 2, 1)  # 1/16 -> 1/32

    def trunk_forward(self, image):
        if image.dim() != 4 or image.shape[1] != 3:
            raise BadShape(f"expected b x 3 x H x W, got {tuple(image.shape)}")
        if image.shape[2] % 32 or image.shape[3] % 32:
            raise BadShape("input size must be divisible by 32")
        return self.trunk((image - 0.5) / 0.5)

    def granularity_heads(self, trunk_feat):
        f_s = self.head_stroke(trunk_feat)
        f_r = self.head_radical(f_s)
        return f_s, f_r

    def fuse(self, f_s, f_r):
        up = self.fuse_up(f_r)
        if up.shape != f_s.shape:
            raise BadShape(f"deconv output {tuple(up.shape)} != stroke grid {tuple(f_s.shape)}")
        f_s_hat = f_s + up
        f_r_hat = f_r + self.fuse_down(f_s_hat)
        return f_s_hat, f_r_hat

    def structure_head(self, f_r_hat):
        return self.head_structure(f_r_hat)

    def forward(self, image) -> ImageFeatures:
        trunk_feat = self.trunk_forward(image)
        f_s, f_r = self.granularity_heads(trunk_feat)
        f_s_hat, f_r_hat = self.fuse(f_s, f_r)
        f_u = self.structure_head(f_r_hat)
        return ImageFeatures(trunk_feat, f_s, f_r, f_s_hat, f_r_hat, f_u)


def image_tokens(grid):
    """Row-major flatten of an NCHW grid to b x (h*w) x C tokens."""
    b, c, h, w = grid.shape
    return grid.permute(0, 2, 3, 1).reshape(b, h * w, c)
