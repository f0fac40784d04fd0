"""Image-text sample assembly: rendering, manifest ingestion, batching."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .lexicon import Flag, Lexicon, TokenSequence
from .render import CharNotInLexicon, render_procedural, write_pgm
from .vocab import PAD_ID, Vocab


class MissingImage(FileNotFoundError):
    pass


class UnreadableImage(ValueError):
    pass


@dataclass
class Sample:
    image: np.ndarray  # H x W x 3 float in [0, 1]
    char: str
    radical_seq: TokenSequence
    stroke_seq: TokenSequence


@dataclass
class Batch:
    """Padded tensors for one training step.

    valid masks flag real tokens; detail/structure masks partition the valid
    positions, so detail + structure + pad = padded length everywhere.
    text_ids give one integer per sample, equal iff the characters are equal.
    """

    images: torch.Tensor  # b x 3 x H x W
    radical_ids: torch.Tensor  # b x Nr long
    radical_valid: torch.Tensor  # b x Nr bool
    radical_detail: torch.Tensor  # b x Nr bool
    radical_structure: torch.Tensor
    stroke_ids: torch.Tensor
    stroke_valid: torch.Tensor
    stroke_detail: torch.Tensor
    stroke_structure: torch.Tensor
    text_ids: torch.Tensor  # b long
    chars: list

    def __len__(self):
        return self.images.shape[0]


def make_samples(chars, lexicon: Lexicon, size=128, style_seeds=(0,)):
    """Render one sample per (char, style_seed) pair."""
    samples = []
    for seed in style_seeds:
        for char in chars:
            entry = lexicon.entries[char]
            samples.append(
                Sample(
                    render_procedural(char, lexicon, size, seed),
                    char,
                    entry.radical_seq,
                    entry.stroke_seq,
                )
            )
    return samples


def ingest_manifest(directory, lexicon: Lexicon, size=128):
    """Load samples listed in directory/manifest.tsv (rel_path \\t CHAR)."""
    from PIL import Image

    directory = Path(directory)
    manifest = directory / "manifest.tsv"
    if not manifest.exists():
        raise MissingImage(f"no manifest.tsv in {directory}")
    samples = []
    with open(manifest, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            rel, _, char = line.partition("\t")
            if char not in lexicon:
                raise CharNotInLexicon(f"line {line_no}: {char!r} not in lexicon")
            path = directory / rel
            if not path.exists():
                raise MissingImage(f"line {line_no}: {path}")
            try:
                with Image.open(path) as img:
                    img = img.convert("L").resize((size, size), Image.BILINEAR)
                    gray = np.asarray(img, dtype=np.float64) / 255.0
            except CharNotInLexicon:
                raise
            except Exception as exc:
                raise UnreadableImage(f"line {line_no}: {path}: {exc}") from exc
            entry = lexicon.entries[char]
            samples.append(
                Sample(
                    np.repeat(gray[:, :, None], 3, axis=2),
                    char,
                    entry.radical_seq,
                    entry.stroke_seq,
                )
            )
    return samples


def render_dataset(chars, lexicon: Lexicon, out_dir, size=128, style_seeds=(0,)):
    """Render chars to 8-bit PGM files with a generated manifest.tsv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for seed in style_seeds:
        for i, char in enumerate(chars):
            img = render_procedural(char, lexicon, size, seed)
            name = f"u{ord(char):05x}_s{seed}.pgm"
            write_pgm(out_dir / name, np.round(img[:, :, 0] * 255).astype(np.uint8))
            lines.append(f"{name}\t{char}")
    with open(out_dir / "manifest.tsv", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    return out_dir / "manifest.tsv"


def _encode_padded(seqs, vocab: Vocab, dtype=torch.float32):
    """Pad encoded sequences and build valid/detail/structure masks."""
    max_len = max(len(s) for s in seqs)
    b = len(seqs)
    ids = torch.full((b, max_len), PAD_ID, dtype=torch.long)
    valid = torch.zeros(b, max_len, dtype=torch.bool)
    detail = torch.zeros(b, max_len, dtype=torch.bool)
    structure = torch.zeros(b, max_len, dtype=torch.bool)
    for i, seq in enumerate(seqs):
        n = len(seq)
        ids[i, :n] = torch.tensor(vocab.encode(seq), dtype=torch.long)
        valid[i, :n] = True
        for j, f in enumerate(seq.flags):
            (detail if f == Flag.DETAIL else structure)[i, j] = True
    return ids, valid, detail, structure


def collate(samples, rad_vocab: Vocab, stk_vocab: Vocab, dtype=torch.float32) -> Batch:
    images = torch.from_numpy(
        np.stack([s.image for s in samples]).transpose(0, 3, 1, 2)
    ).to(dtype)
    rid, rvalid, rdet, rstr = _encode_padded([s.radical_seq for s in samples], rad_vocab)
    sid, svalid, sdet, sstr = _encode_padded([s.stroke_seq for s in samples], stk_vocab)
    first_seen = {}
    text_ids = []
    for s in samples:
        text_ids.append(first_seen.setdefault(s.char, len(first_seen)))
    return Batch(
        images=images,
        radical_ids=rid,
        radical_valid=rvalid,
        radical_detail=rdet,
        radical_structure=rstr,
        stroke_ids=sid,
        stroke_valid=svalid,
        stroke_detail=sdet,
        stroke_structure=sstr,
        text_ids=torch.tensor(text_ids, dtype=torch.long),
        chars=[s.char for s in samples],
    )


def make_batches(samples, batch_size, shuffle_seed, rad_vocab, stk_vocab, dtype=torch.float32):
    """Deterministically shuffled batches; the final short batch is emitted."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng(shuffle_seed).permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[start : start + batch_size]]
        yield collate(chunk, rad_vocab, stk_vocab, dtype)
