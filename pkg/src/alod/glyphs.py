"""Glyph sources for the dataset generator.

Glyphs come either from IDX files (the classic digit/letter archives) or
from a built-in procedural bitmap font, so the generator runs without any
external download.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from alod.idx import IdxParseError, parse_idx

# Classic 5x7 dot-matrix typeface, one string per row, '1' marks ink.
_FONT: dict[str, tuple[str, ...]] = {
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
    "A": ("01110", "10001", "10001", "11111", "10001", "10001", "10001"),
    "B": ("11110", "10001", "10001", "11110", "10001", "10001", "11110"),
    "C": ("01110", "10001", "10000", "10000", "10000", "10001", "01110"),
    "D": ("11100", "10010", "10001", "10001", "10001", "10010", "11100"),
    "E": ("11111", "10000", "10000", "11110", "10000", "10000", "11111"),
    "F": ("11111", "10000", "10000", "11110", "10000", "10000", "10000"),
    "G": ("01110", "10001", "10000", "10111", "10001", "10001", "01111"),
    "H": ("10001", "10001", "10001", "11111", "10001", "10001", "10001"),
    "I": ("01110", "00100", "00100", "00100", "00100", "00100", "01110"),
    "J": ("00111", "00010", "00010", "00010", "00010", "10010", "01100"),
    "K": ("10001", "10010", "10100", "11000", "10100", "10010", "10001"),
    "L": ("10000", "10000", "10000", "10000", "10000", "10000", "11111"),
    "M": ("10001", "11011", "10101", "10101", "10001", "10001", "10001"),
    "N": ("10001", "10001", "11001", "10101", "10011", "10001", "10001"),
    "O": ("01110", "10001", "10001", "10001", "10001", "10001", "01110"),
    "P": ("11110", "10001", "10001", "11110", "10000", "10000", "10000"),
    "Q": ("01110", "10001", "10001", "10001", "10101", "10010", "01101"),
    "R": ("11110", "10001", "10001", "11110", "10100", "10010", "10001"),
    "S": ("01111", "10000", "10000", "01110", "00001", "00001", "11110"),
    "T": ("11111", "00100", "00100", "00100", "00100", "00100", "00100"),
    "U": ("10001", "10001", "10001", "10001", "10001", "10001", "01110"),
    "V": ("10001", "10001", "10001", "10001", "10001", "01010", "00100"),
    "W": ("10001", "10001", "10001", "10101", "10101", "10101", "01010"),
    "X": ("10001", "10001", "01010", "00100", "01010", "10001", "10001"),
    "Y": ("10001", "10001", "01010", "00100", "00100", "00100", "00100"),
    "Z": ("11111", "00001", "00010", "00100", "01000", "10000", "11111"),
}

_DIGITS = "0123456789"
_LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


@dataclass(frozen=True)
class GlyphArchive:
    """Grayscale rasters paired with class labels."""

    glyphs: tuple[np.ndarray, ...]
    labels: tuple[int, ...]
    class_count: int
    source: str

    def __post_init__(self):
        if len(self.glyphs) != len(self.labels):
            raise ValueError(
                f"{len(self.glyphs)} glyphs but {len(self.labels)} labels"
            )
        if not self.glyphs:
            raise ValueError("empty glyph archive")
        for g in self.glyphs:
            if g.ndim != 2 or g.size == 0:
                raise ValueError("glyph rasters must be nonempty 2-d arrays")
        for lab in self.labels:
            if not 0 <= lab < self.class_count:
                raise ValueError(f"label {lab} out of range [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.glyphs)

    @classmethod
    def from_idx(
        cls,
        image_data: bytes,
        label_data: bytes,
        source: str = "idx",
        class_count: int | None = None,
        label_offset: int = 0,
    ) -> "GlyphArchive":
        """Pair an IDX image tensor with an IDX label vector.

        label_offset shifts raw labels down (the letter archives are 1-based).
        """
        images = parse_idx(image_data)
        labels = parse_idx(label_data)
        if images.ndim != 3:
            raise IdxParseError(f"expected a 3-d image tensor, got {images.ndim}-d", 3)
        if labels.ndim != 1:
            raise IdxParseError(f"expected a 1-d label vector, got {labels.ndim}-d", 3)
        if images.shape[0] != labels.shape[0]:
            raise IdxParseError(
                f"image/label count mismatch: {images.shape[0]} vs {labels.shape[0]}", 4
            )
        shifted = [int(v) - label_offset for v in labels]
        count = class_count if class_count is not None else max(shifted) + 1
        rasters = tuple(np.ascontiguousarray(images[i]).astype(np.uint8) for i in range(images.shape[0]))
        return cls(glyphs=rasters, labels=tuple(shifted), class_count=count, source=source)


def _render_char(char: str, jitter_rng: np.random.Generator | None) -> np.ndarray:
    """Rasterize one 5x7 bitmap to a smoothed 28x28 grayscale glyph."""
    bits = np.array([[c == "1" for c in row] for row in _FONT[char]], dtype=np.float64)
    raster = np.kron(bits, np.ones((4, 4)))  # 28 x 20
    canvas = np.zeros((28, 28))
    canvas[:, 4:24] = raster
    if jitter_rng is not None:
        shear = jitter_rng.uniform(-0.12, 0.12)
        scale = jitter_rng.uniform(0.9, 1.05)
        matrix = np.array([[1.0 / scale, 0.0], [shear, 1.0 / scale]])
        center = np.array([13.5, 13.5])
        offset = center - matrix @ center
        canvas = ndimage.affine_transform(canvas, matrix, offset=offset, order=1)
    canvas = ndimage.gaussian_filter(canvas, sigma=1.0)
    peak = canvas.max()
    if peak > 0:
        canvas = canvas / peak
    canvas[canvas < 0.02] = 0.0
    return np.round(canvas * 255.0).astype(np.uint8)


def builtin_glyphs(source: str = "digits", variants: int = 8) -> GlyphArchive:
    """Procedural glyph archive: digits (10 classes) or letters (26 classes).

    Variants of each class differ by a small deterministic shear/scale jitter,
    so the archive offers some shape variety without any external file.
    """
    if source == "digits":
        chars = _DIGITS
    elif source == "letters":
        chars = _LETTERS
    else:
        raise ValueError(f"unknown builtin glyph source {source!r}")
    glyphs: list[np.ndarray] = []
    labels: list[int] = []
    for label, char in enumerate(chars):
        glyphs.append(_render_char(char, None))
        labels.append(label)
        for variant in range(1, variants):
            rng = np.random.default_rng(
                np.random.SeedSequence((867, label, variant))
            )
            glyphs.append(_render_char(char, rng))
            labels.append(label)
    return GlyphArchive(
        glyphs=tuple(glyphs),
        labels=tuple(labels),
        class_count=len(chars),
        source=f"builtin-{source}",
    )
