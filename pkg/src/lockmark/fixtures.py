"""Procedural fixtures for desk-scale experiments and tests.

The synthetic two-class world: each class owns one half ("band") of the
image and a small bright hotspot inside it. The matching template oracle
weights the band lightly and the hotspot heavily, so a dark watermark only
flips the prediction when it covers most of the hotspot at high opacity.
Per-image band brightness is adjusted so the decision margin is a controlled
fraction of the maximum removable hotspot mass, which makes a blind random
placement unlikely to flip while a hill climber that reaches the hotspot
can finish the job.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .harness import LabeledDataset
from .lesion_mask import BBox, BinaryMask, MaskConfig
from .oracle import ToyTemplateOracle
from .raster import RgbaImage, WatermarkLogo, encode_png, save_png

import hashlib


@dataclass(frozen=True)
class PatchLandscape:
    """Templates plus the geometry they are sensitive to."""

    templates: np.ndarray  # (2, S, S) float64
    hotspots: tuple[BBox, BBox]
    band_weight: float
    hot_weight: float

    @property
    def size(self) -> int:
        return self.templates.shape[1]

    def band_columns(self, label: int) -> slice:
        half = self.size // 2
        return slice(0, half) if label == 0 else slice(half, self.size)

    def oracle(self) -> ToyTemplateOracle:
        # spec derived from the weights so distinct landscapes are distinct
        # models to ensemble-membership checks
        digest = hashlib.sha256(self.templates.tobytes()).hexdigest()[:12]
        return ToyTemplateOracle(self.templates, spec=f"toy:template:<fixture-{digest}>")


def make_landscape(
    size: int = 64,
    hotspot_size: int = 8,
    band_weight: float = 0.02,
    hot_weight: float = 1.2,
) -> PatchLandscape:
    """Two-class patch-sensitive landscape over a size x size image."""
    half = size // 2
    q = size // 8
    hotspots = (
        BBox(x=q, y=q + 4, w=hotspot_size, h=hotspot_size),
        BBox(x=half + q + 2, y=size - q - 4 - hotspot_size, w=hotspot_size, h=hotspot_size),
    )
    templates = np.zeros((2, size, size), dtype=np.float64)
    for k in (0, 1):
        cols = slice(0, half) if k == 0 else slice(half, size)
        templates[k, :, cols] = band_weight
        hs = hotspots[k]
        templates[k, hs.y : hs.y2, hs.x : hs.x2] = hot_weight
    return PatchLandscape(
        templates=templates, hotspots=hotspots,
        band_weight=band_weight, hot_weight=hot_weight,
    )


def make_small_landscape(
    size: int = 16, logo_size: int = 9, hotspot_size: int = 6, hot_weight: float = 1.0
) -> PatchLandscape:
    """Tiny landscape whose placement grid is exhaustively enumerable.

    With a logo of ``logo_size`` the valid top-left grid is
    (size - logo_size + 1)^2; the single hotspot sits strictly inside it so
    full coverage is reachable from every side.
    """
    hx = (size - hotspot_size) // 2
    hs = BBox(x=hx, y=hx, w=hotspot_size, h=hotspot_size)
    templates = np.zeros((2, size, size), dtype=np.float64)
    templates[0, hs.y : hs.y2, hs.x : hs.x2] = hot_weight
    return PatchLandscape(
        templates=templates, hotspots=(hs, hs), band_weight=0.0, hot_weight=hot_weight
    )


def make_dark_logo(size: int = 16, logo_id: str = "fixture-dark") -> WatermarkLogo:
    """Near-black fully opaque logo with a faint diagonal texture."""
    p, q = np.meshgrid(np.arange(size), np.arange(size), indexing="xy")
    base = (4 + 4 * ((p + q) % 4)).astype(np.uint8)
    arr = np.empty((size, size, 4), dtype=np.uint8)
    arr[:, :, 0] = base
    arr[:, :, 1] = base
    arr[:, :, 2] = np.minimum(base + 8, 255).astype(np.uint8)
    arr[:, :, 3] = 255
    image = RgbaImage(arr)
    digest = hashlib.sha256(encode_png(image)).hexdigest()
    return WatermarkLogo(image=image, logo_id=logo_id, content_hash=digest)


def _gray_sum(pixels: np.ndarray, box: BBox) -> float:
    region = pixels[box.y : box.y2, box.x : box.x2, :3].astype(np.float64)
    return float(region.mean(axis=2).sum()) / 255.0


def paint_image(
    landscape: PatchLandscape,
    label: int,
    rng: np.random.Generator,
    margin_ratio: float,
    logo_mean_gray: float,
    extra_bright: list[BBox] | None = None,
) -> RgbaImage:
    """One synthetic sample of the given class.

    The off-class band is brightened until the clean decision margin equals
    ``margin_ratio`` times the hotspot mass a fully opaque dark logo could
    remove, so flipping requires roughly that fraction of coverage-times-
    opacity.
    """
    size = landscape.size
    base = rng.integers(67, 88, size=(size, size), dtype=np.int64)
    img = np.repeat(base[:, :, None], 3, axis=2)
    band = landscape.band_columns(label)
    img[:, band, :] += 56
    hs = landscape.hotspots[label]
    img[hs.y : hs.y2, hs.x : hs.x2, :] = rng.integers(214, 231, size=(hs.h, hs.w, 1))
    for box in extra_bright or []:
        img[box.y : box.y2, box.x : box.x2, :] = rng.integers(214, 231, size=(box.h, box.w, 1))
    pixels = np.clip(img, 0, 255).astype(np.uint8)

    # removable hotspot mass at full coverage and full opacity
    hot_sum = _gray_sum(pixels, hs)
    removable = landscape.hot_weight * (hot_sum - hs.area * logo_mean_gray)
    target_margin = margin_ratio * removable

    gray = pixels.astype(np.float64).mean(axis=2) / 255.0
    logits = (landscape.templates.reshape(2, -1) @ gray.ravel()).tolist()
    other = 1 - label
    margin_now = logits[label] - logits[other]
    # exact slope: adding one gray level to every off-band pixel raises the
    # off-class logit by its total template weight there / 255
    other_cols = landscape.band_columns(other)
    per_level = float(landscape.templates[other][:, other_cols].sum()) / 255.0
    k = int(np.floor((margin_now - target_margin) / per_level + 0.5))

    out = pixels.astype(np.int64)
    out[:, landscape.band_columns(other), :] += k
    rgba = np.empty((size, size, 4), dtype=np.uint8)
    rgba[:, :, :3] = np.clip(out, 0, 255).astype(np.uint8)[:, :, :3]
    rgba[:, :, 3] = 255
    return RgbaImage(rgba)


def paint_mask(landscape: PatchLandscape, label: int, pad: int = 1) -> BinaryMask:
    """Mask blob over the class hotspot (the "diagnostic" region)."""
    size = landscape.size
    bits = np.zeros((size, size), dtype=bool)
    hs = landscape.hotspots[label]
    bits[
        max(0, hs.y - pad) : min(size, hs.y2 + pad),
        max(0, hs.x - pad) : min(size, hs.x2 + pad),
    ] = True
    return BinaryMask(bits)


def fixture_mask_config() -> MaskConfig:
    return MaskConfig(kernel_size=3, dilate_iters=1, min_area=50, iou_merge_threshold=0.5)


def write_dataset(
    out_dir: str | Path,
    count: int,
    seed: int,
    landscape: PatchLandscape | None = None,
    logo: WatermarkLogo | None = None,
    margin_low: float = 0.92,
    margin_high: float = 0.985,
    with_masks: bool = True,
) -> tuple[LabeledDataset, Path | None, Path]:
    """Write a ready-to-run fixture: images/, labels.csv, masks/, logo.png,
    templates.npz. Returns (dataset, masks dir, oracle templates path)."""
    out_dir = Path(out_dir)
    landscape = landscape or make_landscape()
    logo = logo or make_dark_logo()
    logo_gray = float(logo.image.array[:, :, :3].astype(np.float64).mean()) / 255.0

    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    masks_dir = out_dir / "masks" if with_masks else None
    if masks_dir is not None:
        masks_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    samples = []
    for i in range(count):
        label = i % 2
        image_id = f"img_{i:04d}.png"
        ratio = float(rng.uniform(margin_low, margin_high))
        image = paint_image(landscape, label, rng, ratio, logo_gray)
        save_png(image, images_dir / image_id)
        if masks_dir is not None:
            mask = paint_mask(landscape, label)
            mask_rgba = np.zeros((landscape.size, landscape.size, 4), dtype=np.uint8)
            mask_rgba[:, :, :3] = np.where(mask.bits[:, :, None], 255, 0).astype(np.uint8)
            mask_rgba[:, :, 3] = 255
            save_png(RgbaImage(mask_rgba), masks_dir / image_id)
        samples.append((image_id, label))

    with open(out_dir / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "label"])
        writer.writerows(samples)

    logo_path = out_dir / "logo.png"
    save_png(logo.image, logo_path)
    templates_path = out_dir / "templates.npz"
    ToyTemplateOracle.save_templates(landscape.templates, templates_path)

    dataset = LabeledDataset(root=images_dir, samples=tuple(samples), class_count=2)
    return dataset, masks_dir, templates_path
