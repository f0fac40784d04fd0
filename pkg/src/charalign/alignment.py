"""Fine-grained text-to-image matching and the decoupled contrastive loss.

Each text sequence splits into a detail part (leaf tokens + eos) and a
structure part (operator tokens). The matching function psi scores one text
token set against one image token grid: per text token, image-token inner
products are L2-normalized, softmax-weighted with a learnable temperature,
and the reweighted similarities are summed. A level similarity adds the
detail part (against its level grid) and the structure part (always against
the structure grid) and divides once by the sequence length.

The contrastive loss is symmetric InfoNCE over the batch similarity matrix,
with in-batch duplicate texts of each anchor excluded from its denominators.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .image_encoder import ImageFeatures, image_tokens

LEVELS = ("stroke", "refined_stroke", "radical", "refined_radical")
_NORM_EPS = 1e-12


class LevelMismatch(ValueError):
    pass


@dataclass
class DecoupledRepr:
    """Batched decoupled text tokens for one level.

    tokens stay at their padded positions; the two boolean masks select the
    detail and structure parts. lengths holds E (valid length) per sample.
    """

    family: str  # "stroke" or "radical"
    tokens: torch.Tensor  # b x N x D
    detail_mask: torch.Tensor  # b x N bool
    structure_mask: torch.Tensor  # b x N bool
    lengths: torch.Tensor  # b

    @property
    def n_detail(self):
        return self.detail_mask.sum(dim=1)

    @property
    def n_structure(self):
        return self.structure_mask.sum(dim=1)


def decouple(tokens, detail_mask, structure_mask, family) -> DecoupledRepr:
    """Partition valid tokens into detail and structure parts (TS-D)."""
    lengths = (detail_mask | structure_mask).sum(dim=1)
    return DecoupledRepr(family, tokens, detail_mask, structure_mask, lengths)


def psi_pairwise(text_tokens, text_mask, img_tokens, lam):
    """All-pairs psi: (b_t, N, D) texts vs (b_i, M, D) images -> (b_t, b_i).

    text_mask selects which text tokens participate; masked-out tokens
    contribute zero. The result is the plain sum over text tokens (the
    per-sequence normalization is applied once in sim_level).
    """
    sims = torch.einsum("tnd,imd->tinm", text_tokens, img_tokens)
    norm = sims.norm(dim=-1, keepdim=True).clamp_min(_NORM_EPS)
    alpha = torch.softmax(lam * sims / norm, dim=-1)
    per_token = (alpha * sims).sum(dim=-1)  # (b_t, b_i, N)
    return (per_token * text_mask[:, None, :]).sum(dim=-1)


def psi(text_tokens, img_tokens, lam):
    """Single-pair psi on (N, D) text tokens and (M, D) image tokens."""
    if text_tokens.shape[0] == 0:
        return text_tokens.new_zeros(())
    mask = torch.ones(1, text_tokens.shape[0], dtype=torch.bool, device=text_tokens.device)
    if not torch.is_tensor(lam):
        lam = text_tokens.new_tensor(lam)
    return psi_pairwise(text_tokens[None], mask, img_tokens[None], lam)[0, 0]


def _detail_grid(feats: ImageFeatures, level):
    if level not in LEVELS:
        raise LevelMismatch(f"unknown level {level!r}")
    return feats.grid(level)


def check_level(level, decoupled: DecoupledRepr):
    family = "stroke" if "stroke" in level else "radical"
    if decoupled.family != family:
        raise LevelMismatch(f"{level} level needs {family} sequences, got {decoupled.family}")


def sim_level(feats: ImageFeatures, decoupled: DecoupledRepr, level, lam, components="both"):
    """Single-pair level similarity: [psi(detail) + psi(structure)] / E."""
    check_level(level, decoupled)
    matrix = batch_sim(level, feats, decoupled, lam, components)
    if matrix.shape != (1, 1):
        raise LevelMismatch("sim_level expects a single image and a single text")
    return matrix[0, 0]


def batch_sim(level, feats: ImageFeatures, decoupled: DecoupledRepr, lam, components="both"):
    """All-pairs level similarity matrix, entry (i, j) = text i vs image j."""
    check_level(level, decoupled)
    total = 0.0
    if components in ("both", "detail_only"):
        grid = image_tokens(_detail_grid(feats, level))
        total = psi_pairwise(decoupled.tokens, decoupled.detail_mask, grid, lam)
    if components in ("both", "structure_only"):
        structure_grid = image_tokens(feats.structure)
        total = total + psi_pairwise(
            decoupled.tokens, decoupled.structure_mask, structure_grid, lam
        )
    if components not in ("both", "detail_only", "structure_only"):
        raise ValueError(f"unknown components {components!r}")
    return total / decoupled.lengths[:, None].to(decoupled.tokens.dtype)


def contrastive_loss(sim_matrix, text_ids):
    """Deduplicated symmetric InfoNCE over a (b, b) text-vs-image matrix.

    For anchor i, batch entries with the same text (other than i itself) are
    dropped from both the text-to-image and image-to-text denominators.
    """
    b = sim_matrix.shape[0]
    ids = text_ids if torch.is_tensor(text_ids) else torch.tensor(text_ids)
    dup = (ids[:, None] == ids[None, :]) & ~torch.eye(b, dtype=torch.bool, device=ids.device)
    keep = ~dup
    neg_inf = torch.finfo(sim_matrix.dtype).min
    diag = sim_matrix.diagonal()
    row_lse = sim_matrix.masked_fill(~keep, neg_inf).logsumexp(dim=1)
    col_lse = sim_matrix.t().masked_fill(~keep, neg_inf).logsumexp(dim=1)
    return -((diag - row_lse) + (diag - col_lse)).sum() / (2 * b)


def multi_level_loss(level_sims, alpha, beta, text_ids):
    """Weighted sum of the four per-level contrastive losses.

    level_sims maps each of the four level names to its (b, b) matrix.
    alpha weights the stroke-family terms, beta the radical-family terms.
    """
    losses = {level: contrastive_loss(level_sims[level], text_ids) for level in LEVELS}
    total = alpha * (losses["stroke"] + losses["refined_stroke"]) + beta * (
        losses["radical"] + losses["refined_radical"]
    )
    return total, losses
