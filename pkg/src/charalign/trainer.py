"""End-to-end training of the aligner with the multi-level contrastive loss."""

from __future__ import annotations

import csv
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import torch

from .checkpoint import load_tensors, save_tensors
from .dataset import make_batches, make_samples
from .lexicon import Lexicon, load_lexicon, load_split
from .model import Aligner, ModelConfig, build_model


class NonFiniteLoss(RuntimeError):
    pass


@dataclass
class TrainConfig:
    """Flat training configuration; every field is a config-file key."""

    lexicon: str = ""
    train_split: str = ""  # optional; default = all lexicon classes
    manifest_dir: str = ""  # optional; default = procedural rendering
    image_size: int = 64
    style_seeds: int = 4  # rendered styles per character
    batch_size: int = 32
    learning_rate: float = 1e-4
    epochs: int = 20
    seed: int = 0
    alpha: float = 1.0
    beta: float = 0.1
    embed_dim: int = 64
    trunk_widths: str = "16,32,64"
    encoder_depth: int = 3
    fusion_depth: int = 3
    heads: int = 4
    dropout: float = 0.0
    dtype: str = "float32"
    checkpoint: str = "model.ckpt"
    log: str = "train_log.csv"

    @classmethod
    def from_file(cls, path):
        values = {}
        types = {f.name: f.type for f in fields(cls)}
        with open(path, encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if not sep or key not in types:
                    raise ValueError(f"{path}:{line_no}: unknown config key {key!r}")
                caster = {"int": int, "float": float, "str": str}[types[key]]
                values[key] = caster(value)
        return cls(**values)


def _torch_dtype(name):
    return {"float32": torch.float32, "float64": torch.float64}[name]


def model_config_from_train(cfg: TrainConfig, lexicon: Lexicon):
    from .model import config_for_lexicon

    mc = config_for_lexicon(lexicon)
    mc.image.input_size = cfg.image_size
    mc.image.trunk_widths = tuple(int(w) for w in cfg.trunk_widths.split(","))
    mc.image.embed_dim = cfg.embed_dim
    mc.text.embed_dim = cfg.embed_dim
    mc.text.depth = cfg.encoder_depth
    mc.text.fusion_depth = cfg.fusion_depth
    mc.text.heads = cfg.heads
    mc.text.dropout = cfg.dropout
    return mc


def save_checkpoint(path, model: Aligner, optimizer=None, epoch=0, extra=None):
    tensors = {f"model/{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        names = [n for n, _ in model.named_parameters()]
        params = [p for _, p in model.named_parameters()]
        for name, p in zip(names, params):
            state = optimizer.state.get(p)
            if not state:
                continue
            for key, val in state.items():
                if torch.is_tensor(val):
                    tensors[f"opt/{name}/{key}"] = val
    tensors["rng/torch"] = torch.get_rng_state()
    meta = {
        "epoch": epoch,
        "model_config": model.cfg.to_dict(),
        "dtype": str(next(model.parameters()).dtype).removeprefix("torch."),
    }
    if extra:
        meta.update(extra)
    save_tensors(path, tensors, meta)


def load_checkpoint(path, model: Aligner = None, optimizer=None, restore_rng=False):
    """Restore (and if needed build) a model; returns (model, meta)."""
    tensors, meta = load_tensors(path)
    if model is None:
        model = Aligner(ModelConfig.from_dict(meta["model_config"]))
        model.to(_torch_dtype(meta.get("dtype", "float32")))
    state = {
        k.removeprefix("model/"): v for k, v in tensors.items() if k.startswith("model/")
    }
    model.load_state_dict(state)
    if optimizer is not None:
        for name, p in model.named_parameters():
            entry = {
                k.rsplit("/", 1)[1]: v
                for k, v in tensors.items()
                if k.startswith(f"opt/{name}/")
            }
            if entry:
                optimizer.state[p] = entry
    if restore_rng and "rng/torch" in tensors:
        torch.set_rng_state(tensors["rng/torch"].to(torch.uint8))
    return model, meta


def train_steps(model, samples, rad_vocab, stk_vocab, cfg: TrainConfig, log_rows=None,
                optimizer=None):
    """Run the optimization loop; mutates model in place, returns the optimizer."""
    dtype = _torch_dtype(cfg.dtype)
    if optimizer is None:
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    step = 0
    for epoch in range(cfg.epochs):
        batches = make_batches(
            samples, cfg.batch_size, cfg.seed + epoch, rad_vocab, stk_vocab, dtype
        )
        for batch in batches:
            total, per_level = model.compute_loss(batch, cfg.alpha, cfg.beta)
            if not torch.isfinite(total):
                raise NonFiniteLoss(f"step {step}: loss = {total.item()}")
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            if log_rows is not None:
                log_rows.append(
                    [step]
                    + [per_level[lv].item() for lv in sorted(per_level)]
                    + [total.item()]
                )
            step += 1
    return optimizer


def train(cfg: TrainConfig, lexicon: Lexicon = None, samples=None, quiet=False):
    """Full training entry point; writes checkpoint and CSV log, returns model."""
    if lexicon is None:
        lexicon = load_lexicon(cfg.lexicon)
    torch.manual_seed(cfg.seed)
    if not quiet:
        print(f"seed: {cfg.seed}", file=sys.stderr)
    mc = model_config_from_train(cfg, lexicon)
    model = Aligner(mc).to(_torch_dtype(cfg.dtype))
    from .vocab import radical_vocab, stroke_vocab

    rad_vocab, stk_vocab = radical_vocab(lexicon), stroke_vocab()
    if samples is None:
        if cfg.manifest_dir:
            from .dataset import ingest_manifest

            samples = ingest_manifest(cfg.manifest_dir, lexicon, cfg.image_size)
        else:
            chars = load_split(cfg.train_split) if cfg.train_split else lexicon.chars
            samples = make_samples(
                chars, lexicon, cfg.image_size, range(cfg.style_seeds)
            )
    log_rows = []
    model.train()
    optimizer = train_steps(model, samples, rad_vocab, stk_vocab, cfg, log_rows)
    if cfg.log:
        with open(cfg.log, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["step", "loss_radical", "loss_refined_radical",
                 "loss_refined_stroke", "loss_stroke", "total"]
            )
            writer.writerows(
                [row[0]] + [f"{v:.6f}" for v in row[1:]] for row in log_rows
            )
    if cfg.checkpoint:
        save_checkpoint(cfg.checkpoint, model, optimizer, cfg.epochs)
    model.eval()
    return model
