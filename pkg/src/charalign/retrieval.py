"""Gallery-based recognition, evaluation, and attention-map dumps.

Text representations for all candidate characters are computed once and
frozen; a query image is scored against every gallery entry with the same
fine-grained matching used in training, and candidates are ranked by score.
"""

from __future__ import annotations

import csv
import sys
from dataclasses import dataclass

import numpy as np
import torch

from . import alignment
from .alignment import DecoupledRepr
from .checkpoint import load_tensors, save_tensors
from .dataset import collate, make_samples
from .image_encoder import image_tokens
from .lexicon import Lexicon
from .model import Aligner
from .render import CharNotInLexicon, write_pgm
from .vocab import Vocab


class DuplicateCandidate(ValueError):
    pass


class EmptySplit(ValueError):
    pass


@dataclass
class ReprChoice:
    level: str = "refined_stroke"  # inference default
    components: str = "both"  # both | detail_only | structure_only

    def __post_init__(self):
        if self.level not in alignment.LEVELS:
            raise ValueError(f"unknown level {self.level!r}")
        if self.components not in ("both", "detail_only", "structure_only"):
            raise ValueError(f"unknown components {self.components!r}")


@dataclass
class Gallery:
    candidates: list
    level: str
    repr: DecoupledRepr  # stacked over candidates

    def __len__(self):
        return len(self.candidates)


def _text_batch(chars, lexicon, rad_vocab, stk_vocab, size, dtype):
    # collate needs images; a 32x32 blank is enough for the text-only path
    samples = make_samples(chars, lexicon, 32, (0,))
    return collate(samples, rad_vocab, stk_vocab, dtype)


@torch.no_grad()
def embed_gallery(model: Aligner, lexicon: Lexicon, candidates, choice: ReprChoice,
                  rad_vocab: Vocab, stk_vocab: Vocab) -> Gallery:
    if len(set(candidates)) != len(candidates):
        raise DuplicateCandidate("candidate list contains duplicates")
    for c in candidates:
        if c not in lexicon:
            raise CharNotInLexicon(c)
    dtype = next(model.parameters()).dtype
    model.eval()
    reps = []
    for start in range(0, len(candidates), 64):
        chunk = candidates[start : start + 64]
        batch = _text_batch(chunk, lexicon, rad_vocab, stk_vocab, 32, dtype)
        reps.append(model.encode_text(batch)[choice.level])
    max_n = max(r.tokens.shape[1] for r in reps)

    def pad(t, value=0):
        out = t.new_zeros((t.shape[0], max_n) + t.shape[2:])
        out[:, : t.shape[1]] = t
        return out

    merged = DecoupledRepr(
        family=reps[0].family,
        tokens=torch.cat([pad(r.tokens) for r in reps]),
        detail_mask=torch.cat([pad(r.detail_mask) for r in reps]),
        structure_mask=torch.cat([pad(r.structure_mask) for r in reps]),
        lengths=torch.cat([r.lengths for r in reps]),
    )
    return Gallery(list(candidates), choice.level, merged)


@torch.no_grad()
def recognize(model: Aligner, image, gallery: Gallery, choice: ReprChoice):
    """Rank gallery characters against one H x W x 3 image (or b x 3 x H x W)."""
    if len(gallery) == 0:
        raise EmptySplit("gallery is empty")
    if choice.level != gallery.level:
        raise alignment.LevelMismatch(
            f"gallery holds {gallery.level}, requested {choice.level}"
        )
    dtype = next(model.parameters()).dtype
    if not torch.is_tensor(image):
        image = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))[None]
    image = image.to(dtype)
    model.eval()
    feats = model.image_encoder(image)
    scores = alignment.batch_sim(
        choice.level, feats, gallery.repr, model.lam, choice.components
    )[:, 0]
    order = np.argsort(-scores.numpy(), kind="stable")  # ties: candidate order
    return [(gallery.candidates[i], float(scores[i])) for i in order]


@torch.no_grad()
def evaluate_cacc(model, samples, gallery, choice: ReprChoice, predictions_out=None,
                  per_class_out=None):
    """Top-1 character accuracy over samples; optional TSV/CSV dumps."""
    if not samples:
        raise EmptySplit("no evaluation samples")
    rows = []
    per_class = {}
    correct = 0
    for i, sample in enumerate(samples):
        ranked = recognize(model, sample.image, gallery, choice)
        top1, score = ranked[0]
        hit = top1 == sample.char
        correct += hit
        rows.append((f"{i}", sample.char, top1, f"{score:.6f}"))
        got, total = per_class.get(sample.char, (0, 0))
        per_class[sample.char] = (got + hit, total + 1)
    if predictions_out:
        with open(predictions_out, "w", encoding="utf-8") as fh:
            fh.write("image_id\tgold\ttop1\ttop1_score\n")
            for row in rows:
                fh.write("\t".join(row) + "\n")
    if per_class_out:
        with open(per_class_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["char", "correct", "total", "accuracy"])
            for char, (got, total) in per_class.items():
                writer.writerow([char, got, total, f"{got / total:.6f}"])
    return correct / len(samples)


def save_gallery(path, gallery: Gallery):
    save_tensors(
        path,
        {
            "tokens": gallery.repr.tokens,
            "detail_mask": gallery.repr.detail_mask,
            "structure_mask": gallery.repr.structure_mask,
            "lengths": gallery.repr.lengths,
        },
        {"candidates": gallery.candidates, "level": gallery.level,
         "family": gallery.repr.family},
    )


def load_gallery(path) -> Gallery:
    tensors, meta = load_tensors(path)
    repr_ = DecoupledRepr(
        family=meta["family"],
        tokens=tensors["tokens"],
        detail_mask=tensors["detail_mask"],
        structure_mask=tensors["structure_mask"],
        lengths=tensors["lengths"],
    )
    return Gallery(meta["candidates"], meta["level"], repr_)


@torch.no_grad()
def emit_attention_maps(model: Aligner, image, char, lexicon: Lexicon,
                        rad_vocab: Vocab, stk_vocab: Vocab, out_dir):
    """Write per-token similarity heatmaps as PGM files.

    For each of the four sequence levels, every valid token is scored against
    that level's image grid; the structure level scores the refined stroke
    sequence's operator tokens against the structure grid.
    """
    from pathlib import Path

    if char not in lexicon:
        raise CharNotInLexicon(char)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dtype = next(model.parameters()).dtype
    model.eval()
    if not torch.is_tensor(image):
        image = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))[None]
    image = image.to(dtype)
    size = image.shape[-1]
    feats = model.image_encoder(image)
    batch = _text_batch([char], lexicon, rad_vocab, stk_vocab, 32, dtype)
    texts = model.encode_text(batch)

    def dump(level_name, tokens, grid):
        b, c, h, w = grid.shape
        img_toks = image_tokens(grid)[0]  # M x D
        written = []
        for idx in range(tokens.shape[0]):
            sims = (img_toks @ tokens[idx]).numpy()
            span = sims.max() - sims.min()
            norm = (sims - sims.min()) / span if span > 0 else np.zeros_like(sims)
            gray = np.round(norm * 255).astype(np.uint8).reshape(h, w)
            up = np.repeat(np.repeat(gray, size // h, 0), size // w, 1)
            path = out_dir / f"{level_name}_{idx}.pgm"
            write_pgm(path, up)
            written.append(path)
        return written

    written = []
    for level in alignment.LEVELS:
        rep = texts[level]
        valid = rep.detail_mask[0] | rep.structure_mask[0]
        written += dump(level, rep.tokens[0][valid], feats.grid(level))
    stk_hat = texts["refined_stroke"]
    written += dump(
        "structure", stk_hat.tokens[0][stk_hat.structure_mask[0]], feats.structure
    )
    return written
