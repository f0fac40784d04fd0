"""Full aligner: image encoder, two sequence encoders, fusion, temperature."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

from . import alignment
from .dataset import Batch
from .image_encoder import ImageEncoder, ImageEncoderConfig
from .lexicon import Lexicon
from .text_encoder import SequenceEncoder, TextEncoderConfig, TextFusion
from .vocab import Vocab, radical_vocab, stroke_vocab

LAMBDA_INIT = 10.0  # sharpens the softmax over L2-normalized similarities


@dataclass
class ModelConfig:
    image: ImageEncoderConfig = field(default_factory=ImageEncoderConfig)
    text: TextEncoderConfig = field(default_factory=TextEncoderConfig)

    def to_dict(self):
        return {"image": asdict(self.image), "text": asdict(self.text)}

    @classmethod
    def from_dict(cls, d):
        img = ImageEncoderConfig(**d["image"])
        img.trunk_widths = tuple(img.trunk_widths)
        return cls(image=img, text=TextEncoderConfig(**d["text"]))


def config_for_lexicon(lexicon: Lexicon, **kwargs) -> ModelConfig:
    """ModelConfig with vocab sizes derived from the lexicon."""
    cfg = ModelConfig(**kwargs)
    cfg.text.radical_vocab_size = len(radical_vocab(lexicon))
    cfg.text.stroke_vocab_size = len(stroke_vocab())
    if cfg.image.embed_dim != cfg.text.embed_dim:
        raise ValueError("image and text embed dims must match")
    return cfg


class Aligner(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.image_encoder = ImageEncoder(cfg.image)
        self.radical_encoder = SequenceEncoder(cfg.text.radical_vocab_size, cfg.text)
        self.stroke_encoder = SequenceEncoder(cfg.text.stroke_vocab_size, cfg.text)
        self.fusion = TextFusion(cfg.text)
        self.lam = nn.Parameter(torch.tensor(float(LAMBDA_INIT)))

    def encode_text(self, batch: Batch):
        """Four decoupled sequence representations keyed by level name."""
        q_rad = self.radical_encoder(batch.radical_ids, batch.radical_valid)
        q_stk = self.stroke_encoder(batch.stroke_ids, batch.stroke_valid)
        q_rad_hat, q_stk_hat = self.fusion(
            q_rad, q_stk, batch.radical_valid, batch.stroke_valid
        )
        return {
            "stroke": alignment.decouple(
                q_stk, batch.stroke_detail, batch.stroke_structure, "stroke"
            ),
            "refined_stroke": alignment.decouple(
                q_stk_hat, batch.stroke_detail, batch.stroke_structure, "stroke"
            ),
            "radical": alignment.decouple(
                q_rad, batch.radical_detail, batch.radical_structure, "radical"
            ),
            "refined_radical": alignment.decouple(
                q_rad_hat, batch.radical_detail, batch.radical_structure, "radical"
            ),
        }

    def level_sims(self, batch: Batch):
        feats = self.image_encoder(batch.images)
        texts = self.encode_text(batch)
        return {
            level: alignment.batch_sim(level, feats, texts[level], self.lam)
            for level in alignment.LEVELS
        }

    def compute_loss(self, batch: Batch, alpha=1.0, beta=0.1):
        sims = self.level_sims(batch)
        return alignment.multi_level_loss(sims, alpha, beta, batch.text_ids)


def build_model(lexicon: Lexicon, **kwargs):
    """Convenience: (model, radical vocab, stroke vocab) for a lexicon."""
    cfg = config_for_lexicon(lexicon, **kwargs)
    return Aligner(cfg), radical_vocab(lexicon), stroke_vocab()
