"""Deterministic pseudo-renderer: kern documents to staff-band images.

Stand-in for a real engraving tool. Each spine gets a five-line staff band
(spine 0 at the bottom, matching kern's bottom-up staff order); each record
occupies one glyph column, so simultaneous cells are vertically aligned.
Notes get pitch-positioned heads with duration marks; everything else gets a
content-hashed dot glyph, so every record leaves learnable ink. Rendering is
a pure function of (document, style, height): identical inputs give
bit-identical pixels.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from .errors import SpineCountMismatch
from .grammar import STYLE_SPINES
from .kern import KernDocument, validate_structure

LEFT_MARGIN = 10
RIGHT_MARGIN = 6
COLUMN_PITCH = 14
GLYPH_WIDTH = 10
MIN_WIDTH = 64
MIN_HEIGHT = 32
VERTICAL_MARGIN = 6

# Pitch whose head sits on the band's middle line, per staff bottom-to-top.
STYLE_ANCHORS = {
    "grandstaff": ("E", "b"),
    "quartet": ("E", "c", "b", "dd"),
}

_NOTE_RE = re.compile(r"(\d+)(\.*)([a-gA-G]+)([#\-n]*)")
_REST_RE = re.compile(r"(\d+)(\.*)r")


@dataclass
class ImageSample:
    """A system image with its reference document and split bookkeeping."""

    pixels: np.ndarray  # (h, w) float32 in [0, 1]; 0 is ink
    kern: KernDocument
    piece_id: str
    split: str | None = None

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ValueError("pixels must be a 2D grayscale array")
        h, w = self.pixels.shape
        if h < MIN_HEIGHT or w < MIN_WIDTH:
            raise ValueError(f"image {h}x{w} below minimum {MIN_HEIGHT}x{MIN_WIDTH}")
        if float(self.pixels.min()) < 0.0 or float(self.pixels.max()) > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        if self.split not in (None, "train", "validation", "test"):
            raise ValueError(f"unknown split {self.split!r}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def diatonic_number(pitch: str) -> int:
    """Diatonic staff index of a kern pitch (octave * 7 + step)."""
    letter = pitch[0]
    if letter.islower():
        octave = 3 + len(pitch)
    else:
        octave = 4 - len(pitch)
    return octave * 7 + "CDEFGAB".index(letter.upper())


@dataclass(frozen=True)
class _Band:
    top: int          # first staff-line row
    gap: int          # rows between staff lines
    anchor_diatonic: int

    @property
    def bottom(self) -> int:
        return self.top + 4 * self.gap

    @property
    def middle(self) -> int:
        return self.top + 2 * self.gap

    def y_for(self, diatonic: int) -> int:
        half = max(self.gap // 2, 1)
        y = self.middle - (diatonic - self.anchor_diatonic) * half
        return int(np.clip(y, self.top - 2 * self.gap, self.bottom + 2 * self.gap))


def _bands(style: str, spines: int, height: int) -> list[_Band]:
    region = (height - 2 * VERTICAL_MARGIN) // spines
    gap = max(region // 8, 2)
    bands = []
    for s in range(spines):  # spine 0 at the bottom
        region_top = VERTICAL_MARGIN + (spines - 1 - s) * region
        top = region_top + (region - 4 * gap) // 2
        bands.append(_Band(top=top, gap=gap, anchor_diatonic=diatonic_number(STYLE_ANCHORS[style][s])))
    return bands


def _draw_note(img: np.ndarray, band: _Band, x0: int, duration: int, dots: int,
               pitch: str, accidentals: str) -> None:
    y = band.y_for(diatonic_number(pitch))
    h, w = img.shape
    img[max(y - 1, 0) : min(y + 2, h), x0 + 2 : x0 + 6] = 0.0
    stem_top = max(y - 3 * band.gap, 0)
    img[stem_top:y, x0 + 6] = 0.0
    if duration >= 8:  # flag on the stem
        img[stem_top : stem_top + 2, x0 + 7 : x0 + 9] = 0.0
    if duration >= 16:
        img[stem_top + 3 : stem_top + 5, x0 + 7 : x0 + 9] = 0.0
    for d in range(dots):
        img[y, min(x0 + 8 + d, w - 1)] = 0.0
    if "#" in accidentals:
        img[max(y - 2, 0), x0] = 0.0
        img[min(y + 2, h - 1), x0] = 0.0
    if "-" in accidentals:
        img[y, x0] = 0.0
    if "n" in accidentals:
        img[max(y - 2, 0), x0] = 0.0


def _draw_rest(img: np.ndarray, band: _Band, x0: int, duration: int) -> None:
    c = band.middle
    img[c - 1 : c + 2, x0 + 3 : x0 + 7] = 0.0
    if duration >= 8:
        img[c - 3, x0 + 4] = 0.0


def _draw_barline(img: np.ndarray, band: _Band, x0: int, cell: str) -> None:
    img[band.top : band.bottom + 1, x0 + 4] = 0.0
    if cell.startswith("=="):
        img[band.top : band.bottom + 1, x0 + 6] = 0.0
    # bar label mark: the number must be legible, not only the line
    digest = hashlib.blake2b(cell.encode("utf-8"), digest_size=2).digest()
    bits = int.from_bytes(digest, "big")
    h = img.shape[0]
    for r in range(4):
        for c in range(4):
            if bits >> (r * 4 + c) & 1:
                y = band.top - 3 + r
                if 0 <= y < h:
                    img[y, x0 + c] = 0.0


def _draw_hash_glyph(img: np.ndarray, band: _Band, x0: int, text: str) -> None:
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=6).digest()
    bits = int.from_bytes(digest, "big")
    top = band.middle - 3
    h = img.shape[0]
    for r in range(6):
        for c in range(8):
            if bits >> (r * 8 + c) & 1:
                y = top + r
                if 0 <= y < h:
                    img[y, x0 + 1 + c] = 0.0


def _draw_cell(img: np.ndarray, band: _Band, x0: int, cell: str) -> None:
    if cell == ".":
        return
    if cell.startswith("="):
        _draw_barline(img, band, x0, cell)
        return
    m = _NOTE_RE.fullmatch(cell)
    if m:
        _draw_note(img, band, x0, int(m.group(1)), len(m.group(2)), m.group(3), m.group(4))
        return
    m = _REST_RE.fullmatch(cell)
    if m:
        _draw_rest(img, band, x0, int(m.group(1)))
        return
    _draw_hash_glyph(img, band, x0, cell)


def pseudo_render(
    doc: KernDocument,
    style: str,
    *,
    height: int = 128,
    piece_id: str = "",
) -> ImageSample:
    """Render a document to a clean grayscale system image.

    The document must be valid, keep a constant spine count equal to the
    style's staff count, and use no split/merge manipulators.
    """
    if style not in STYLE_SPINES:
        raise SpineCountMismatch(f"unknown style {style!r}")
    spines = STYLE_SPINES[style]
    ok, violations = validate_structure(doc)
    if not ok:
        raise SpineCountMismatch(f"document is not structurally valid: {violations[0]}")
    if doc.spine_count != spines:
        raise SpineCountMismatch(
            f"style {style} needs {spines} spines, document opens {doc.spine_count}"
        )
    for cells in doc.records:
        if len(cells) != spines or any(c in ("*^", "*v") for c in cells):
            raise SpineCountMismatch("document changes spine count mid-system")
    if height < MIN_HEIGHT:
        raise ValueError(f"render height must be >= {MIN_HEIGHT}")

    width = max(MIN_WIDTH, LEFT_MARGIN + len(doc.records) * COLUMN_PITCH + RIGHT_MARGIN)
    img = np.ones((height, width), dtype=np.float32)
    bands = _bands(style, spines, height)

    for band in bands:
        for k in range(5):
            img[band.top + k * band.gap, LEFT_MARGIN - 4 : width - 4] = 0.0

    for j, cells in enumerate(doc.records):
        x0 = LEFT_MARGIN + j * COLUMN_PITCH
        for s, cell in enumerate(cells):
            _draw_cell(img, bands[s], x0, cell)

    return ImageSample(pixels=img, kern=doc, piece_id=piece_id)
