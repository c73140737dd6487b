"""Semi-synthetic detection datasets: colorized, transformed glyphs composited
onto photographic (or procedural) backgrounds, with tight-box annotations.

Per-image randomness is derived solely from (master seed, split, index), so
regeneration is byte-identical and images can be produced in any order.
"""

from __future__ import annotations

import colorsys
import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from alod import coco
from alod.glyphs import GlyphArchive, builtin_glyphs
from alod.types import Annotation, BoundingBox, DatasetManifest, ImageRecord

log = logging.getLogger(__name__)

# Color and opacity sampling intervals for foreground instances.
HUE_RANGE = (0.0, 1.0)
SAT_RANGE = (0.05, 1.0)
VAL_RANGE = (0.1, 1.0)
OPACITY_RANGE = (0.5, 0.9)


class PlacementRejected(Exception):
    """A transformed glyph degenerated or cannot fit the image."""


@dataclass(frozen=True)
class GlyphRenderParams:
    """Sampled appearance and geometry for one glyph instance.

    scale is the raster multiplier handed to the affine transform; tx/ty are
    pixel translations (zero when placement happens at composite time).
    """

    hue: float
    saturation: float
    value: float
    opacity: float
    scale: float
    shear: float
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        checks = (
            ("hue", self.hue, HUE_RANGE),
            ("saturation", self.saturation, SAT_RANGE),
            ("value", self.value, VAL_RANGE),
            ("opacity", self.opacity, OPACITY_RANGE),
        )
        for name, v, (lo, hi) in checks:
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings; defaults target the digit-variant dataset."""

    source: str = "digits"
    instance_rate: float = 3.0
    image_size: tuple[int, int] = (300, 300)  # (width, height)
    # Rendered glyph height as a fraction of image height.
    scale_range: tuple[float, float] = (0.04, 0.18)
    shear_range: tuple[float, float] = (-0.3, 0.3)
    # Pre-opacity gray level below which a pixel counts as background.
    alpha_mask_threshold: float = 0.05
    split_sizes: dict[str, int] = field(
        default_factory=lambda: {"train": 20000, "val": 500, "test": 2000}
    )
    background_dir: str | None = None
    seed: int = 0
    max_placement_retries: int = 10
    # Extra border kept free on each side when placing boxes, as a fraction
    # of the image dimension; boxes too large for the margin ignore it.
    placement_margin: float = 0.05

    def __post_init__(self):
        if self.instance_rate <= 0:
            raise ValueError(f"instance_rate must be > 0, got {self.instance_rate}")
        if self.scale_range[0] <= 0 or self.scale_range[1] < self.scale_range[0]:
            raise ValueError(f"bad scale_range {self.scale_range}")
        for split, size in self.split_sizes.items():
            if size < 0:
                raise ValueError(f"split {split!r} has negative size {size}")


def sample_render_params(
    rng: np.random.Generator,
    config: SynthConfig = SynthConfig(),
    glyph_height_px: float = 28.0,
    image_height_px: float | None = None,
) -> GlyphRenderParams:
    """Draw appearance and geometry uniformly from the configured intervals."""
    if image_height_px is None:
        image_height_px = config.image_size[1]
    hue = rng.uniform(*HUE_RANGE)
    saturation = rng.uniform(*SAT_RANGE)
    value = rng.uniform(*VAL_RANGE)
    opacity = rng.uniform(*OPACITY_RANGE)
    rel_height = rng.uniform(*config.scale_range)
    shear = rng.uniform(*config.shear_range)
    return GlyphRenderParams(
        hue=hue,
        saturation=saturation,
        value=value,
        opacity=opacity,
        scale=rel_height * image_height_px / glyph_height_px,
        shear=shear,
    )


def shade_hsv(
    gray: np.ndarray,
    hue: float,
    saturation: float,
    value: float,
    opacity: float,
    support_threshold: float = 0.0,
) -> np.ndarray:
    """Turn a grayscale raster in [0,1] into an RGBA patch.

    The HSV color is multiplied per pixel by the gray value; alpha is the
    instance opacity where the pre-opacity gray exceeds the support cutoff
    and zero elsewhere.
    """
    gray = np.asarray(gray, dtype=np.float64)
    if gray.min() < 0 or gray.max() > 1:
        raise ValueError("grayscale values must lie in [0, 1]")
    r, g, b = colorsys.hsv_to_rgb(hue, saturation, value)
    patch = np.empty(gray.shape + (4,), dtype=np.float64)
    patch[..., 0] = gray * r
    patch[..., 1] = gray * g
    patch[..., 2] = gray * b
    patch[..., 3] = opacity * (gray > support_threshold)
    return patch


def colorize_glyph(
    gray: np.ndarray, params: GlyphRenderParams, support_threshold: float = 0.05
) -> np.ndarray:
    return shade_hsv(
        gray, params.hue, params.saturation, params.value, params.opacity,
        support_threshold,
    )


@dataclass(frozen=True)
class TransformedGlyph:
    patch: np.ndarray  # (H, W, 4) canvas holding the warped glyph
    box: BoundingBox  # tight box in the coordinate frame of the affine map
    origin: tuple[int, int]  # (x, y) of the canvas corner in that frame

    @property
    def box_in_canvas(self) -> BoundingBox:
        return BoundingBox(
            self.box.x_min - self.origin[0],
            self.box.y_min - self.origin[1],
            self.box.x_max - self.origin[0],
            self.box.y_max - self.origin[1],
        )


def transform_glyph(patch: np.ndarray, params: GlyphRenderParams) -> TransformedGlyph:
    """Apply scale, shear and translation with bilinear resampling.

    The tight box is the axis-aligned extent of pixels covered by more than
    half of the glyph support (resampled alpha above half the opacity), so
    box extents scale geometrically with the transform. Raises
    PlacementRejected when the result degenerates below 2x2 pixels.
    """
    patch = np.asarray(patch, dtype=np.float64)
    h_in, w_in = patch.shape[:2]
    s, k = params.scale, params.shear
    # Forward map about the patch center, (row, col) index order:
    # shear acts on x (col' = col + k * row), scale is isotropic.
    fwd = np.array([[s, 0.0], [k * s, s]])
    center = np.array([(h_in - 1) / 2.0, (w_in - 1) / 2.0])
    shift = np.array([params.ty, params.tx])

    corners = np.array([[0.0, 0.0], [0.0, w_in - 1], [h_in - 1, 0.0], [h_in - 1, w_in - 1]])
    mapped = (fwd @ (corners - center).T).T + center + shift
    lo = np.floor(mapped.min(axis=0)).astype(int) - 1
    hi = np.ceil(mapped.max(axis=0)).astype(int) + 1
    out_shape = (hi[0] - lo[0] + 1, hi[1] - lo[1] + 1)
    if out_shape[0] < 2 or out_shape[1] < 2 or out_shape[0] * out_shape[1] > 16_000_000:
        raise PlacementRejected(f"transform produced an unusable canvas {out_shape}")

    inv = np.linalg.inv(fwd)
    # output index u maps to input coordinate inv @ (u + lo - center - shift) + center
    offset = inv @ (lo - center - shift) + center
    warped = np.empty(out_shape + (4,), dtype=np.float64)
    for ch in range(4):
        warped[..., ch] = ndimage.affine_transform(
            patch[..., ch], inv, offset=offset, output_shape=out_shape, order=1
        )

    mask = warped[..., 3] > 0.5 * params.opacity
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    if rows.size == 0 or cols.size == 0:
        raise PlacementRejected("transform erased the glyph support")
    height = int(rows[-1] - rows[0] + 1)
    width = int(cols[-1] - cols[0] + 1)
    if height < 2 or width < 2:
        raise PlacementRejected(f"glyph degenerated to {width}x{height} pixels")
    box = BoundingBox(
        float(cols[0] + lo[1]),
        float(rows[0] + lo[0]),
        float(cols[-1] + 1 + lo[1]),
        float(rows[-1] + 1 + lo[0]),
    )
    return TransformedGlyph(patch=warped, box=box, origin=(int(lo[1]), int(lo[0])))


def _blend(image: np.ndarray, canvas: np.ndarray, x: int, y: int) -> None:
    """Alpha-blend an RGBA canvas over the image at (x, y), clipped in place."""
    h, w = image.shape[:2]
    ch, cw = canvas.shape[:2]
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + cw, w), min(y + ch, h)
    if x0 >= x1 or y0 >= y1:
        return
    region = canvas[y0 - y : y1 - y, x0 - x : x1 - x]
    alpha = region[..., 3:4]
    image[y0:y1, x0:x1, :] = region[..., :3] * alpha + image[y0:y1, x0:x1, :] * (1.0 - alpha)


def composite_image(
    background: np.ndarray,
    archive: GlyphArchive,
    config: SynthConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, list[Annotation]]:
    """Scatter a Poisson-distributed number of glyph instances over a background.

    Each instance is placed so its tight box lies fully inside the image;
    instances that cannot be placed within the retry budget are skipped.
    """
    background = np.asarray(background, dtype=np.float64)
    h, w = background.shape[:2]
    if h < 64 or w < 64:
        raise ValueError(f"background too small: {w}x{h}, need at least 64x64")
    image = background.copy()
    annotations: list[Annotation] = []
    count = int(rng.poisson(config.instance_rate))
    for _ in range(count):
        placed = False
        for _attempt in range(config.max_placement_retries):
            glyph_idx = int(rng.integers(len(archive)))
            gray = archive.glyphs[glyph_idx].astype(np.float64) / 255.0
            params = sample_render_params(
                rng, config, glyph_height_px=gray.shape[0], image_height_px=h
            )
            patch = colorize_glyph(gray, params, config.alpha_mask_threshold)
            try:
                warped = transform_glyph(patch, params)
            except PlacementRejected:
                continue
            bw = int(round(warped.box.width))
            bh = int(round(warped.box.height))
            if bw > w or bh > h:
                continue
            mx = int(round(config.placement_margin * w))
            my = int(round(config.placement_margin * h))
            if bw + 2 * mx > w:
                mx = 0
            if bh + 2 * my > h:
                my = 0
            x0 = int(rng.integers(mx, w - bw - mx + 1))
            y0 = int(rng.integers(my, h - bh - my + 1))
            cbox = warped.box_in_canvas
            _blend(image, warped.patch, x0 - int(cbox.x_min), y0 - int(cbox.y_min))
            annotations.append(
                Annotation(
                    box=BoundingBox(float(x0), float(y0), float(x0 + bw), float(y0 + bh)),
                    category_id=archive.labels[glyph_idx],
                )
            )
            placed = True
            break
        if not placed:
            log.warning("skipped one instance after %d placement attempts", config.max_placement_retries)
    return image, annotations


def _split_key(split: str) -> int:
    return int.from_bytes(hashlib.sha256(split.encode()).digest()[:4], "big")


def image_rng(seed: int, split: str, index: int) -> np.random.Generator:
    """The per-image generator; depends only on (master seed, split, index)."""
    return np.random.default_rng(np.random.SeedSequence((seed, _split_key(split), index)))


def _bilinear_resize(field: np.ndarray, height: int, width: int) -> np.ndarray:
    fh, fw = field.shape[:2]
    r = np.linspace(0.0, fh - 1, height)
    c = np.linspace(0.0, fw - 1, width)
    r0 = np.floor(r).astype(int)
    c0 = np.floor(c).astype(int)
    r1 = np.minimum(r0 + 1, fh - 1)
    c1 = np.minimum(c0 + 1, fw - 1)
    fr = (r - r0)[:, None, None]
    fc = (c - c0)[None, :, None]
    top = field[r0][:, c0] * (1.0 - fc) + field[r0][:, c1] * fc
    bottom = field[r1][:, c0] * (1.0 - fc) + field[r1][:, c1] * fc
    return top * (1.0 - fr) + bottom * fr


def noise_background(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    """Smooth two-octave random field standing in for a photograph."""
    coarse = rng.uniform(0.0, 1.0, (4, 4, 3))
    fine = rng.uniform(0.0, 1.0, (16, 16, 3))
    img = 0.72 * _bilinear_resize(coarse, height, width) + 0.28 * _bilinear_resize(
        fine, height, width
    )
    return np.clip(img, 0.0, 1.0)


def _load_background(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def category_names(source: str, class_count: int) -> tuple[str, ...]:
    if source.endswith("letters"):
        return tuple("ABCDEFGHIJKLMNOPQRSTUVWXYZ"[:class_count])
    return tuple(str(d) for d in range(class_count))


def _render_one(
    config: SynthConfig,
    archive: GlyphArchive,
    backgrounds: list[Path],
    split: str,
    index: int,
    image_id: int,
    out_root: Path | None,
) -> ImageRecord:
    rng = image_rng(config.seed, split, index)
    if backgrounds:
        bg = _load_background(backgrounds[int(rng.integers(len(backgrounds)))])
    else:
        bg = noise_background(rng, config.image_size[0], config.image_size[1])
    pixels, annotations = composite_image(bg, archive, config, rng)
    rel_path = f"{split}/images/{index:06d}.png"
    if out_root is not None:
        target = out_root / rel_path
        target.parent.mkdir(parents=True, exist_ok=True)
        data = np.round(pixels * 255.0).astype(np.uint8)
        Image.fromarray(data).save(target, compress_level=1)
    return ImageRecord(
        image_id=image_id,
        file_path=rel_path,
        width=pixels.shape[1],
        height=pixels.shape[0],
        annotations=tuple(annotations),
    )


def generate_dataset(
    config: SynthConfig,
    out_root: str | Path | None,
    archive: GlyphArchive | None = None,
    jobs: int = 1,
) -> DatasetManifest:
    """Generate all configured splits and write images plus annotation files.

    out_root=None skips the image files and returns the manifest only.
    """
    if archive is None:
        archive = builtin_glyphs(config.source)
    backgrounds: list[Path] = []
    if config.background_dir:
        bg_dir = Path(config.background_dir)
        backgrounds = sorted(
            p for p in bg_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )
        if not backgrounds:
            raise FileNotFoundError(f"no background images in {bg_dir}")
    root = Path(out_root) if out_root is not None else None

    splits: dict[str, tuple[ImageRecord, ...]] = {}
    next_id = 0
    for split, size in config.split_sizes.items():
        ids = range(next_id, next_id + size)
        next_id += size
        tasks = [
            (config, archive, backgrounds, split, index, image_id, root)
            for index, image_id in enumerate(ids)
        ]
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                records = list(pool.map(lambda args: _render_one(*args), tasks))
        else:
            records = [_render_one(*args) for args in tasks]
        splits[split] = tuple(records)

    names = category_names(archive.source, archive.class_count)
    manifest = DatasetManifest(name=f"synth-{config.source}", categories=names, splits=splits)
    if root is not None:
        coco.write_manifest(root, manifest)
    return manifest


@dataclass(frozen=True)
class DatasetStats:
    """Box variability relative to image size, plus instance density."""

    std_cx: float
    std_cy: float
    std_w: float
    std_h: float
    mean_instances: float
    num_images: int
    num_annotations: int


def dataset_stats(manifest: DatasetManifest, split: str) -> DatasetStats:
    """Population standard deviations of relative box centers and sizes."""
    records = manifest.split(split)
    if not records:
        raise ValueError(f"split {split!r} is empty")
    cx, cy, ws, hs = [], [], [], []
    for rec in records:
        for ann in rec.annotations:
            b = ann.box
            cx.append((b.x_min + b.x_max) / 2.0 / rec.width)
            cy.append((b.y_min + b.y_max) / 2.0 / rec.height)
            ws.append(b.width / rec.width)
            hs.append(b.height / rec.height)
    if not cx:
        raise ValueError(f"split {split!r} has no annotations")
    return DatasetStats(
        std_cx=float(np.std(cx)),
        std_cy=float(np.std(cy)),
        std_w=float(np.std(ws)),
        std_h=float(np.std(hs)),
        mean_instances=len(cx) / len(records),
        num_images=len(records),
        num_annotations=len(cx),
    )
