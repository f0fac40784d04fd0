"""Command-line entry point for the full pipeline.

Exit codes: 0 success, 2 usage error, 1 operational failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np


def _add_lexicon(p):
    p.add_argument("--lexicon", required=True, help="lexicon TSV file")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="charalign",
        description="Multi-granularity glyph-text alignment for zero-shot "
        "character recognition",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lexicon-validate", help="parse a lexicon and report stats")
    _add_lexicon(p)

    p = sub.add_parser("make-splits", help="write train/test class splits")
    _add_lexicon(p)
    p.add_argument("--mode", choices=["char", "radical"], required=True)
    p.add_argument("--m", type=int, help="train class count (char mode)")
    p.add_argument("--k", type=int, help="test class count (char mode)")
    p.add_argument("--n", type=int, help="radical frequency threshold (radical mode)")
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", required=True)

    p = sub.add_parser("render-dataset", help="render PGM glyphs plus manifest")
    _add_lexicon(p)
    p.add_argument("--split", help="class list file; default: all lexicon classes")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--styles", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="flat key=value config file")

    p = sub.add_parser("embed-gallery", help="precompute candidate text embeddings")
    _add_lexicon(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--candidates", required=True, help="one character per line")
    p.add_argument("--repr", default="refined_stroke",
                   choices=["stroke", "refined_stroke", "radical", "refined_radical"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="compute CACC over a split")
    _add_lexicon(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--gallery", help="prebuilt gallery; default: embed the split")
    p.add_argument("--manifest-dir", help="evaluate external images instead of rendering")
    p.add_argument("--repr", default="refined_stroke",
                   choices=["stroke", "refined_stroke", "radical", "refined_radical"])
    p.add_argument("--components", default="both",
                   choices=["both", "detail_only", "structure_only"])
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--styles", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-predictions")
    p.add_argument("--out-per-class")

    p = sub.add_parser("recognize", help="rank gallery characters for one image")
    _add_lexicon(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--image", required=True, help="PGM or any PIL-readable image")
    p.add_argument("--components", default="both",
                   choices=["both", "detail_only", "structure_only"])
    p.add_argument("--top", type=int, default=5)

    p = sub.add_parser("visualize-attention", help="dump per-token similarity maps")
    _add_lexicon(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--char", required=True)
    p.add_argument("--image", help="query image; default: render the character")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    return parser


def _load_image(path, size):
    from .render import read_pgm

    if str(path).endswith(".pgm"):
        gray = read_pgm(path)
    else:
        from PIL import Image

        with Image.open(path) as img:
            gray = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    if gray.shape != (size, size):
        from PIL import Image

        img = Image.fromarray(np.round(gray * 255).astype(np.uint8))
        gray = np.asarray(img.resize((size, size), Image.BILINEAR), dtype=np.float64) / 255.0
    return np.repeat(gray[:, :, None], 3, axis=2)


def run(args) -> int:
    from . import retrieval
    from .lexicon import (character_zero_shot_split, load_lexicon, load_split,
                          radical_zero_shot_split, save_split)
    from .vocab import radical_vocab, stroke_vocab

    cmd = args.command
    if cmd == "train":
        from .trainer import TrainConfig, train

        cfg = TrainConfig.from_file(args.config)
        train(cfg)
        print(f"checkpoint written to {cfg.checkpoint}", file=sys.stderr)
        return 0

    lexicon = load_lexicon(args.lexicon)
    if cmd == "lexicon-validate":
        print(f"entries: {len(lexicon)}")
        print(f"radicals: {len(lexicon.radicals)}")
        max_r = max(len(e.radical_seq) for e in lexicon.entries.values())
        max_s = max(len(e.stroke_seq) for e in lexicon.entries.values())
        print(f"max radical sequence length: {max_r}")
        print(f"max stroke sequence length: {max_s}")
        return 0

    if cmd == "make-splits":
        if args.mode == "char":
            if args.m is None or args.k is None:
                raise SystemExit("--mode char requires --m and --k")
            train_cls, test_cls = character_zero_shot_split(lexicon, args.m, args.k)
        else:
            if args.n is None:
                raise SystemExit("--mode radical requires --n")
            train_cls, test_cls = radical_zero_shot_split(lexicon, args.n)
        save_split(train_cls, args.out_train)
        save_split(test_cls, args.out_test)
        print(f"train classes: {len(train_cls)}, test classes: {len(test_cls)}",
              file=sys.stderr)
        return 0

    if cmd == "render-dataset":
        from .dataset import render_dataset

        chars = load_split(args.split) if args.split else lexicon.chars
        print(f"seed: {args.seed}", file=sys.stderr)
        manifest = render_dataset(
            chars, lexicon, args.out, args.size,
            range(args.seed, args.seed + args.styles),
        )
        print(f"manifest written to {manifest}", file=sys.stderr)
        return 0

    from .trainer import load_checkpoint

    model, meta = load_checkpoint(args.checkpoint)
    rad_vocab, stk_vocab = radical_vocab(lexicon), stroke_vocab()

    if cmd == "embed-gallery":
        candidates = load_split(args.candidates)
        gallery = retrieval.embed_gallery(
            model, lexicon, candidates, retrieval.ReprChoice(args.repr),
            rad_vocab, stk_vocab,
        )
        retrieval.save_gallery(args.out, gallery)
        print(f"gallery of {len(gallery)} candidates written to {args.out}",
              file=sys.stderr)
        return 0

    if cmd == "evaluate":
        choice = retrieval.ReprChoice(args.repr, args.components)
        split = load_split(args.split)
        if args.gallery:
            gallery = retrieval.load_gallery(args.gallery)
        else:
            gallery = retrieval.embed_gallery(
                model, lexicon, split, retrieval.ReprChoice(args.repr),
                rad_vocab, stk_vocab,
            )
        if args.manifest_dir:
            from .dataset import ingest_manifest

            samples = [s for s in ingest_manifest(args.manifest_dir, lexicon, args.size)
                       if s.char in set(split)]
        else:
            from .dataset import make_samples

            print(f"seed: {args.seed}", file=sys.stderr)
            samples = make_samples(split, lexicon, args.size,
                                   range(args.seed, args.seed + args.styles))
        acc = retrieval.evaluate_cacc(
            model, samples, gallery, choice,
            predictions_out=args.out_predictions, per_class_out=args.out_per_class,
        )
        print(f"CACC: {acc:.4f}")
        return 0

    if cmd == "recognize":
        gallery = retrieval.load_gallery(args.gallery)
        size = model.cfg.image.input_size
        image = _load_image(args.image, size)
        choice = retrieval.ReprChoice(gallery.level, args.components)
        for char, score in retrieval.recognize(model, image, gallery, choice)[: args.top]:
            print(f"{char}\t{score:.6f}")
        return 0

    if cmd == "visualize-attention":
        from .render import render_procedural

        size = model.cfg.image.input_size
        if args.image:
            image = _load_image(args.image, size)
        else:
            print(f"seed: {args.seed}", file=sys.stderr)
            image = render_procedural(args.char, lexicon, size, args.seed)
        written = retrieval.emit_attention_maps(
            model, image, args.char, lexicon, rad_vocab, stk_vocab, args.out_dir
        )
        print(f"{len(written)} maps written to {args.out_dir}", file=sys.stderr)
        return 0

    raise SystemExit(f"unhandled command {cmd}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except SystemExit:
        raise
    except Exception as exc:  # operational failure: named error to stderr
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
