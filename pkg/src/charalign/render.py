"""Deterministic procedural glyph renderer.

A character's stroke tree is rasterized by recursively partitioning the
canvas with its structure operators and drawing each stroke class as a line
primitive inside its cell. The result is a pure function of
(char, size, style_seed), so rendered datasets are reproducible and unseen
characters are novel layouts of seen primitives.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .lexicon import Internal, Lexicon, StrokeLeaf

JITTER_FRAC = 0.05  # endpoint jitter, fraction of cell extent


class CharNotInLexicon(KeyError):
    pass


def _seed_for(char, size, style_seed):
    digest = hashlib.sha256(f"{char}|{size}|{style_seed}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _split_box(op, box):
    """Child boxes for a structure operator; fractions are a fixed convention."""
    x0, y0, x1, y1 = box
    w, h = x1 - x0, y1 - y0
    if op == "⿰":  # left-to-right
        return [(x0, y0, x0 + w / 2, y1), (x0 + w / 2, y0, x1, y1)]
    if op == "⿱":  # above-to-below
        return [(x0, y0, x1, y0 + h / 2), (x0, y0 + h / 2, x1, y1)]
    if op == "⿲":  # left-middle-right, 34/33/33
        a, b = x0 + 0.34 * w, x0 + 0.67 * w
        return [(x0, y0, a, y1), (a, y0, b, y1), (b, y0, x1, y1)]
    if op == "⿳":  # above-middle-below
        a, b = y0 + 0.34 * h, y0 + 0.67 * h
        return [(x0, y0, x1, a), (x0, a, x1, b), (x0, b, x1, y1)]
    # Surround family: first child spans the cell, inner child is a 60% box
    # positioned toward the operator's opening. Overlaid stacks both full.
    iw, ih = 0.6 * w, 0.6 * h
    anchors = {
        "⿴": (0.5, 0.5),  # full-surround: centered
        "⿵": (0.5, 0.7),  # opening below
        "⿶": (0.5, 0.3),  # opening above
        "⿷": (0.7, 0.5),  # opening right
        "⿸": (0.7, 0.7),  # opening lower-right
        "⿹": (0.3, 0.7),  # opening lower-left
        "⿺": (0.7, 0.3),  # opening upper-right
    }
    if op == "⿻":  # overlaid
        return [box, box]
    ax, ay = anchors[op]
    cx, cy = x0 + ax * w, y0 + ay * h
    return [box, (cx - iw / 2, cy - ih / 2, cx + iw / 2, cy + ih / 2)]


def _stroke_path(kind, box):
    """Polyline control points for a stroke class within its cell."""
    x0, y0, x1, y1 = box
    w, h = x1 - x0, y1 - y0
    m = 0.12  # inset margin fraction
    xa, xb = x0 + m * w, x1 - m * w
    ya, yb = y0 + m * h, y1 - m * h
    xc, yc = (x0 + x1) / 2, (y0 + y1) / 2
    if kind == 1:  # horizontal
        return [(xa, yc), (xb, yc)]
    if kind == 2:  # vertical
        return [(xc, ya), (xc, yb)]
    if kind == 3:  # left-falling: upper right to lower left
        return [(xb, ya), (xa, yb)]
    if kind == 4:  # right-falling
        return [(xa, ya), (xb, yb)]
    # turning: horizontal run then vertical drop
    return [(xa, ya), (xb, ya), (xb, yb)]


def _stamp_segment(canvas, p0, p1, radius):
    size = canvas.shape[0]
    length = float(np.hypot(p1[0] - p0[0], p1[1] - p0[1]))
    steps = max(2, int(length * 2) + 1)
    ts = np.linspace(0.0, 1.0, steps)
    r = max(1, int(round(radius)))
    for t in ts:
        x = p0[0] + t * (p1[0] - p0[0])
        y = p0[1] + t * (p1[1] - p0[1])
        xi, yi = int(round(x)), int(round(y))
        canvas[
            max(0, yi - r) : min(size, yi + r),
            max(0, xi - r) : min(size, xi + r),
        ] = 0.0


def render_procedural(char, lexicon: Lexicon, size=128, style_seed=0):
    """Render a character as an H x W x 3 float image in [0, 1] (ink = 0)."""
    if char not in lexicon:
        raise CharNotInLexicon(char)
    if size % 32:
        raise ValueError("size must be divisible by 32")
    rng = np.random.default_rng(_seed_for(char, size, style_seed))
    canvas = np.ones((size, size), dtype=np.float64)
    thickness = size * 0.015 + rng.uniform(0.0, size * 0.01)

    def draw(node, box):
        if isinstance(node, Internal):
            for child, sub in zip(node.children, _split_box(node.op, box)):
                draw(child, sub)
            return
        assert isinstance(node, StrokeLeaf)
        x0, y0, x1, y1 = box
        w, h = x1 - x0, y1 - y0
        path = []
        for px, py in _stroke_path(node.stroke, box):
            px += rng.uniform(-JITTER_FRAC, JITTER_FRAC) * w
            py += rng.uniform(-JITTER_FRAC, JITTER_FRAC) * h
            path.append((px, py))
        for p0, p1 in zip(path, path[1:]):
            _stamp_segment(canvas, p0, p1, thickness)

    # Global placement jitter: the glyph box is scaled and positioned
    # randomly per style, so absolute pixel location carries no character
    # identity — recognition has to rely on the strokes themselves.
    pad = size * 0.04
    usable = size - 2 * pad
    scale = rng.uniform(0.65, 1.0)
    extent = usable * scale
    ox = pad + rng.uniform(0.0, usable - extent)
    oy = pad + rng.uniform(0.0, usable - extent)
    draw(lexicon.entries[char].stroke_tree, (ox, oy, ox + extent, oy + extent))
    return np.repeat(canvas[:, :, None], 3, axis=2)


def write_pgm(path, gray_u8):
    """Write an 8-bit grayscale array as binary PGM (P5, maxval 255)."""
    h, w = gray_u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(gray_u8, dtype=np.uint8).tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return pixels.reshape(h, w).astype(np.float64) / maxval
