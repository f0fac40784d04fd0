"""Character decomposition lexicon: IDS trees, token sequences, splits.

A character is described by two ordered decomposition trees: a radical tree
(leaves are radicals) and a stroke tree (leaves are the five stroke classes).
Internal nodes are the 12 Ideographic Description Characters (IDC). Trees are
serialized as whitespace-separated pre-order token lines.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

logger = logging.getLogger(__name__)

MAX_SEQ_LEN = 50  # tokens including eos
EOS_TOKEN = "<eos>"

STROKE_NAMES = {
    1: "Horizontal",
    2: "Vertical",
    3: "LeftFalling",
    4: "RightFalling",
    5: "Turning",
}

# The 12 IDC structure operators, U+2FF0..U+2FFB. The two "middle" variants
# are ternary, the rest binary.
STRUCTURE_OPS = {
    "⿰": ("left-to-right", 2),
    "⿱": ("above-to-below", 2),
    "⿲": ("left-middle-right", 3),
    "⿳": ("above-middle-below", 3),
    "⿴": ("full-surround", 2),
    "⿵": ("above-surround", 2),
    "⿶": ("below-surround", 2),
    "⿷": ("left-surround", 2),
    "⿸": ("upper-left-surround", 2),
    "⿹": ("upper-right-surround", 2),
    "⿺": ("lower-left-surround", 2),
    "⿻": ("overlaid", 2),
}
STRUCTURE_LIST = sorted(STRUCTURE_OPS)  # U+2FF0..U+2FFB in codepoint order

RADICAL_WARN_THRESHOLD = 401  # national standard radical count; soft limit


class LexiconError(Exception):
    pass


class UnknownToken(LexiconError):
    pass


class ArityMismatch(LexiconError):
    pass


class TrailingTokens(LexiconError):
    pass


class SequenceTooLong(LexiconError):
    pass


class ParseError(LexiconError):
    def __init__(self, msg, line_no=None):
        if line_no is not None:
            msg = f"line {line_no}: {msg}"
        super().__init__(msg)
        self.line_no = line_no


class DuplicateCharacter(LexiconError):
    pass


class SplitOverlap(LexiconError):
    pass


class EmptyTrain(LexiconError):
    pass


class Flag(IntEnum):
    DETAIL = 0
    STRUCTURE = 1


@dataclass(frozen=True)
class Internal:
    op: str
    children: tuple

    def __post_init__(self):
        if self.op not in STRUCTURE_OPS:
            raise UnknownToken(f"not a structure operator: {self.op!r}")
        arity = STRUCTURE_OPS[self.op][1]
        if len(self.children) != arity:
            raise ArityMismatch(
                f"{self.op} expects {arity} children, got {len(self.children)}"
            )


@dataclass(frozen=True)
class RadicalLeaf:
    glyph: str


@dataclass(frozen=True)
class StrokeLeaf:
    stroke: int

    def __post_init__(self):
        if self.stroke not in STROKE_NAMES:
            raise UnknownToken(f"stroke class must be 1..5, got {self.stroke}")


def parse_ids(line: str, radical_vocab=None):
    """Parse a whitespace-separated pre-order IDS line into a tree.

    Leaves that are single digits 1-5 become stroke leaves; any other
    non-operator token is a radical glyph. If radical_vocab is given,
    radical glyphs outside it raise UnknownToken.
    """
    tokens = line.split()
    if not tokens:
        raise ParseError("empty IDS line")
    pos = 0

    def parse_node():
        nonlocal pos
        if pos >= len(tokens):
            raise ArityMismatch("operator missing children")
        tok = tokens[pos]
        pos += 1
        if tok in STRUCTURE_OPS:
            arity = STRUCTURE_OPS[tok][1]
            return Internal(tok, tuple(parse_node() for _ in range(arity)))
        if len(tok) == 1 and tok in "12345":
            return StrokeLeaf(int(tok))
        if radical_vocab is not None and tok not in radical_vocab:
            raise UnknownToken(f"radical not in vocabulary: {tok!r}")
        return RadicalLeaf(tok)

    tree = parse_node()
    if pos != len(tokens):
        raise TrailingTokens(f"{len(tokens) - pos} tokens after complete tree")
    return tree


def serialize(tree) -> str:
    """Pre-order whitespace-joined serialization; inverse of parse_ids."""
    out = []

    def walk(node):
        if isinstance(node, Internal):
            out.append(node.op)
            for c in node.children:
                walk(c)
        elif isinstance(node, StrokeLeaf):
            out.append(str(node.stroke))
        else:
            out.append(node.glyph)

    walk(tree)
    return " ".join(out)


def node_count(tree) -> int:
    if isinstance(tree, Internal):
        return 1 + sum(node_count(c) for c in tree.children)
    return 1


def leaves(tree):
    if isinstance(tree, Internal):
        for c in tree.children:
            yield from leaves(c)
    else:
        yield tree


@dataclass
class TokenSequence:
    """Pre-order token strings plus eos, with per-token component flags."""

    tokens: list
    flags: list  # Flag per token; structure ops STRUCTURE, leaves/eos DETAIL

    def __post_init__(self):
        assert len(self.tokens) == len(self.flags)

    def __len__(self):
        return len(self.tokens)

    @property
    def n_detail(self):
        return sum(1 for f in self.flags if f == Flag.DETAIL)

    @property
    def n_structure(self):
        return sum(1 for f in self.flags if f == Flag.STRUCTURE)


def flatten(tree) -> TokenSequence:
    """Flatten a tree to its pre-order TokenSequence with eos appended."""
    tokens, flags = [], []

    def walk(node):
        if isinstance(node, Internal):
            tokens.append(node.op)
            flags.append(Flag.STRUCTURE)
            for c in node.children:
                walk(c)
        elif isinstance(node, StrokeLeaf):
            tokens.append(str(node.stroke))
            flags.append(Flag.DETAIL)
        else:
            tokens.append(node.glyph)
            flags.append(Flag.DETAIL)

    walk(tree)
    tokens.append(EOS_TOKEN)
    flags.append(Flag.DETAIL)  # eos terminates the description
    if len(tokens) > MAX_SEQ_LEN:
        raise SequenceTooLong(f"{len(tokens)} tokens exceeds {MAX_SEQ_LEN}")
    return TokenSequence(tokens, flags)


@dataclass
class LexiconEntry:
    char: str
    radical_tree: object
    stroke_tree: object
    radical_seq: TokenSequence
    stroke_seq: TokenSequence


@dataclass
class Lexicon:
    """Immutable after load; maps characters to their two decompositions."""

    entries: dict = field(default_factory=dict)  # char -> LexiconEntry
    radicals: list = field(default_factory=list)  # dense id -> glyph

    def __len__(self):
        return len(self.entries)

    def __contains__(self, char):
        return char in self.entries

    @property
    def chars(self):
        return list(self.entries)

    def radical_id(self, glyph):
        return self.radicals.index(glyph)

    def add(self, char, radical_tree, stroke_tree):
        if char in self.entries:
            raise DuplicateCharacter(char)
        for leaf in leaves(radical_tree):
            if not isinstance(leaf, RadicalLeaf):
                raise ParseError(f"{char}: radical tree has a non-radical leaf")
        for leaf in leaves(stroke_tree):
            if not isinstance(leaf, StrokeLeaf):
                raise ParseError(f"{char}: stroke tree has a non-stroke leaf")
        self.entries[char] = LexiconEntry(
            char, radical_tree, stroke_tree, flatten(radical_tree), flatten(stroke_tree)
        )
        for leaf in leaves(radical_tree):
            if leaf.glyph not in self.radicals:
                self.radicals.append(leaf.glyph)
        if len(self.radicals) > RADICAL_WARN_THRESHOLD:
            logger.warning(
                "radical vocabulary (%d) exceeds the standard %d",
                len(self.radicals),
                RADICAL_WARN_THRESHOLD,
            )

    def radical_frequency(self) -> Counter:
        """Leaf-occurrence count of each radical over all entries."""
        freq = Counter()
        for e in self.entries.values():
            for leaf in leaves(e.radical_tree):
                freq[leaf.glyph] += 1
        return freq


def load_lexicon(path) -> Lexicon:
    """Load a tab-separated lexicon file: CHAR \\t RADICAL_IDS \\t STROKE_IDS."""
    lex = Lexicon()
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", line_no)
            char, rad_line, stk_line = parts
            try:
                rad_tree = parse_ids(rad_line)
                stk_tree = parse_ids(stk_line)
                lex.add(char, rad_tree, stk_tree)
            except DuplicateCharacter:
                raise DuplicateCharacter(f"line {line_no}: duplicate character {char!r}")
            except LexiconError as exc:
                raise ParseError(str(exc), line_no) from exc
    return lex


def save_lexicon(lexicon: Lexicon, path):
    with open(path, "w", encoding="utf-8") as fh:
        for e in lexicon.entries.values():
            fh.write(f"{e.char}\t{serialize(e.radical_tree)}\t{serialize(e.stroke_tree)}\n")


def character_zero_shot_split(lexicon: Lexicon, m: int, k: int, class_order=None):
    """First m classes train, last k classes test, in lexicon file order."""
    order = list(class_order) if class_order is not None else lexicon.chars
    if m + k > len(order):
        raise SplitOverlap(f"m+k = {m + k} exceeds {len(order)} classes")
    if m == 0:
        raise EmptyTrain("m must be positive")
    return order[:m], order[-k:] if k else []


def radical_zero_shot_split(lexicon: Lexicon, n: int):
    """Characters containing any radical with lexicon frequency < n go to test."""
    if n < 1:
        raise LexiconError("n must be >= 1")
    freq = lexicon.radical_frequency()
    train, test = [], []
    for char, e in lexicon.entries.items():
        rare = any(freq[leaf.glyph] < n for leaf in leaves(e.radical_tree))
        (test if rare else train).append(char)
    return train, test


def save_split(chars, path):
    with open(path, "w", encoding="utf-8") as fh:
        for c in chars:
            fh.write(c + "\n")


def load_split(path):
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]
