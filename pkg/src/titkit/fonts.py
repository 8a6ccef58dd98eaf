"""Built-in 5x7 monospace bitmap font.

Rendering never touches system fonts, so synthesized images are bit-exact
across machines. Letters use block-capital shapes regardless of case;
characters without a glyph fall back to a checker block.
"""

from __future__ import annotations

import numpy as np

GLYPH_H = 7
GLYPH_W = 5
ADVANCE = 6  # glyph width plus one column of spacing

_RAW = {
    "a": "01110 10001 10001 11111 10001 10001 10001",
    "b": "11110 10001 10001 11110 10001 10001 11110",
    "c": "01110 10001 10000 10000 10000 10001 01110",
    "d": "11100 10010 10001 10001 10001 10010 11100",
    "e": "11111 10000 10000 11110 10000 10000 11111",
    "f": "11111 10000 10000 11110 10000 10000 10000",
    "g": "01110 10001 10000 10111 10001 10001 01111",
    "h": "10001 10001 10001 11111 10001 10001 10001",
    "i": "01110 00100 00100 00100 00100 00100 01110",
    "j": "00111 00010 00010 00010 00010 10010 01100",
    "k": "10001 10010 10100 11000 10100 10010 10001",
    "l": "10000 10000 10000 10000 10000 10000 11111",
    "m": "10001 11011 10101 10101 10001 10001 10001",
    "n": "10001 10001 11001 10101 10011 10001 10001",
    "o": "01110 10001 10001 10001 10001 10001 01110",
    "p": "11110 10001 10001 11110 10000 10000 10000",
    "q": "01110 10001 10001 10001 10101 10010 01101",
    "r": "11110 10001 10001 11110 10100 10010 10001",
    "s": "01111 10000 10000 01110 00001 00001 11110",
    "t": "11111 00100 00100 00100 00100 00100 00100",
    "u": "10001 10001 10001 10001 10001 10001 01110",
    "v": "10001 10001 10001 10001 10001 01010 00100",
    "w": "10001 10001 10001 10101 10101 10101 01010",
    "x": "10001 10001 01010 00100 01010 10001 10001",
    "y": "10001 10001 01010 00100 00100 00100 00100",
    "z": "11111 00001 00010 00100 01000 10000 11111",
    "0": "01110 10001 10011 10101 11001 10001 01110",
    "1": "00100 01100 00100 00100 00100 00100 01110",
    "2": "01110 10001 00001 00010 00100 01000 11111",
    "3": "11111 00010 00100 00010 00001 10001 01110",
    "4": "00010 00110 01010 10010 11111 00010 00010",
    "5": "11111 10000 11110 00001 00001 10001 01110",
    "6": "00110 01000 10000 11110 10001 10001 01110",
    "7": "11111 00001 00010 00100 01000 01000 01000",
    "8": "01110 10001 10001 01110 10001 10001 01110",
    "9": "01110 10001 10001 01111 00001 00010 01100",
    " ": "00000 00000 00000 00000 00000 00000 00000",
    ".": "00000 00000 00000 00000 00000 01100 01100",
    "-": "00000 00000 00000 11111 00000 00000 00000",
    "?": "01110 10001 00001 00010 00100 00000 00100",
}
_FALLBACK = "10101 01010 10101 01010 10101 01010 10101"


def _parse(rows):
    bits = [[int(b) for b in row] for row in rows.split()]
    return np.array(bits, dtype=np.uint8)


_GLYPHS = {ch: _parse(rows) for ch, rows in _RAW.items()}
_FALLBACK_GLYPH = _parse(_FALLBACK)


def glyph(ch):
    """7x5 uint8 bitmap for a character (1 = ink)."""
    return _GLYPHS.get(ch.lower(), _FALLBACK_GLYPH)


def text_mask(text, scale=1):
    """Render a text line as a binary ink mask.

    Returns an array of shape (GLYPH_H*scale, (ADVANCE*len(text)-1)*scale).
    """
    if not text:
        raise ValueError("empty text")
    w = ADVANCE * len(text) - 1
    mask = np.zeros((GLYPH_H, w), dtype=np.uint8)
    for i, ch in enumerate(text):
        mask[:, i * ADVANCE: i * ADVANCE + GLYPH_W] = glyph(ch)
    if scale > 1:
        mask = np.kron(mask, np.ones((scale, scale), dtype=np.uint8))
    return mask
