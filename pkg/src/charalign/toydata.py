"""Procedural toy lexicon generator.

Builds a small closed world of characters, each a two-radical composition
over a fixed pool of radicals (each itself a small stroke tree). Unseen
characters are novel compositions of seen radicals, which is exactly the
character zero-shot setting at desk scale.
"""

from __future__ import annotations

import numpy as np

from .lexicon import Internal, Lexicon, RadicalLeaf, StrokeLeaf, serialize

DEFAULT_OPS = ("⿰",)


def _random_stroke_tree(rng, n_strokes=3):
    # Every radical shares one tree shape (a ⿱ chain of n_strokes strokes),
    # so the operator subsequence carries no radical identity: characters are
    # distinguishable only by their stroke/radical detail tokens, which keeps
    # structure-only matching near chance, as in real character inventories
    # where a handful of layouts covers most characters.
    nodes = [StrokeLeaf(int(rng.integers(1, 6))) for _ in range(n_strokes)]
    while len(nodes) > 1:
        b = nodes.pop()
        a = nodes.pop()
        nodes.append(Internal("⿱", (a, b)))
    return nodes[0]


def make_toy_lexicon(num_chars=200, num_radicals=30, seed=0, ops=DEFAULT_OPS) -> Lexicon:
    """Generate a lexicon of num_chars distinct two-radical compositions.

    Every radical is guaranteed to appear within the first num_radicals
    characters, so a front-of-file training split covers the radical pool.
    Compositions draw operators from `ops`; the default single-operator corpus
    makes the operator subsequence carry no character identity at all, so
    structure tokens alone cannot identify a character.
    """
    rng = np.random.default_rng(seed)
    rad_glyphs = [chr(0x2F00 + i) for i in range(num_radicals)]  # Kangxi block
    rad_strokes = {}
    seen_shapes = set()
    for glyph in rad_glyphs:
        while True:
            tree = _random_stroke_tree(rng)
            key = serialize(tree)
            if key not in seen_shapes:
                seen_shapes.add(key)
                rad_strokes[glyph] = tree
                break

    def substitute(node):
        if isinstance(node, RadicalLeaf):
            return rad_strokes[node.glyph]
        return Internal(node.op, tuple(substitute(c) for c in node.children))

    lex = Lexicon()
    seen_chars = set()
    i = 0
    while len(lex) < num_chars:
        char = chr(0x4E00 + len(lex))
        while True:
            if i < num_radicals:
                # seed coverage: character i contains radical i
                parts = [rad_glyphs[i], rad_glyphs[int(rng.integers(0, num_radicals))]]
            else:
                parts = [rad_glyphs[int(rng.integers(0, num_radicals))] for _ in range(2)]
            op = ops[int(rng.integers(0, len(ops)))]
            tree = Internal(op, (RadicalLeaf(parts[0]), RadicalLeaf(parts[1])))
            key = serialize(tree)
            if key not in seen_chars:
                seen_chars.add(key)
                break
        lex.add(char, tree, substitute(tree))
        i += 1
    return lex
