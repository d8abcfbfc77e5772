"""Reference-image embedding export.

Every category directory named by the manifest is swept in sorted
filename order. Each readable image contributes one embedding row per
augmentation variant: ``crops`` seeded random-resized crops plus
``flips`` mirrored crops. Rows are l2-normalized in the joint space, so
a consumer can treat them directly as unit reference embeddings.

Augmentation randomness is keyed by (manifest seed, crc32 of the file
name), never by position in the listing: dropping one corrupt file from
a directory does not disturb the variants of its neighbours.
"""

from __future__ import annotations

import warnings
import zlib
from pathlib import Path

import numpy as np
import torch

from .bundle_io import write_bundle
from .errors import ExportDataError, ManifestError, UnsupportedModelError
from .manifest import ExportManifest

__all__ = ["load_vision_model", "embed_directory", "export_image_embeddings"]

_IMAGE_MEAN = np.array([0.48145466, 0.4578275, 0.40821073], dtype=np.float32)
_IMAGE_STD = np.array([0.26862954, 0.26130258, 0.27577711], dtype=np.float32)


def load_vision_model(source):
    from transformers import CLIPVisionModelWithProjection

    try:
        model = CLIPVisionModelWithProjection.from_pretrained(source)
    except (OSError, ValueError, KeyError) as exc:
        raise UnsupportedModelError(
            f"{source}: not a loadable CLIP vision model ({exc})"
        ) from exc
    return model.eval()


def _crop_box(rng: np.random.Generator, width: int, height: int):
    """Random area-in-[0.7, 1.0] crop box, aspect jittered within 3:4."""
    area = width * height
    for _ in range(10):
        target = area * rng.uniform(0.7, 1.0)
        aspect = np.exp(rng.uniform(np.log(3 / 4), np.log(4 / 3)))
        w = int(round(np.sqrt(target * aspect)))
        h = int(round(np.sqrt(target / aspect)))
        if 0 < w <= width and 0 < h <= height:
            left = int(rng.integers(0, width - w + 1))
            top = int(rng.integers(0, height - h + 1))
            return left, top, left + w, top + h
    side = min(width, height)
    left = (width - side) // 2
    top = (height - side) // 2
    return left, top, left + side, top + side


def _pixels(image, size: int) -> np.ndarray:
    """PIL image -> normalized (3, size, size) float32 tensor."""
    from PIL import Image

    resized = image.convert("RGB").resize((size, size), Image.BICUBIC)
    arr = np.asarray(resized, dtype=np.float32) / 255.0
    arr = (arr - _IMAGE_MEAN) / _IMAGE_STD
    return arr.transpose(2, 0, 1)


def _image_variants(path: Path, size: int, crops: int, flips: int, seed: int):
    """Augmented pixel tensors for one file, or None when unreadable."""
    from PIL import Image

    rng = np.random.default_rng([seed, zlib.crc32(path.name.encode("utf-8"))])
    try:
        with Image.open(path) as image:
            image.load()
            variants = []
            for _ in range(crops):
                variants.append(_pixels(image.crop(_crop_box(rng, *image.size)), size))
            for _ in range(flips):
                crop = image.crop(_crop_box(rng, *image.size))
                variants.append(_pixels(crop.transpose(Image.FLIP_LEFT_RIGHT), size))
    except (OSError, ValueError) as exc:
        warnings.warn(f"skipping unreadable image {path}: {exc}", stacklevel=2)
        return None
    return variants


def embed_directory(model, directory: Path, *, crops: int, flips: int, seed: int):
    """Embed every readable image; returns (rows, skipped file names)."""
    size = model.config.image_size
    batches, skipped = [], []
    files = sorted(p for p in directory.iterdir() if p.is_file())
    for path in files:
        variants = _image_variants(path, size, crops, flips, seed)
        if variants is None:
            skipped.append(path.name)
            continue
        batches.extend(variants)
    if not batches:
        raise ExportDataError(
            f"{directory}: no readable images "
            f"({len(skipped)} file(s) skipped, nothing left to embed)"
        )
    pixels = torch.from_numpy(np.stack(batches))
    with torch.inference_mode():
        embeds = model(pixel_values=pixels).image_embeds
    rows = embeds.cpu().numpy().astype(np.float32)
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows, skipped


def export_image_embeddings(manifest: ExportManifest) -> dict[str, Path]:
    """Write one reference bundle per attribute; returns attribute -> path."""
    if not manifest.image_dirs:
        raise ManifestError("manifest declares no image directories")
    crops = int(manifest.augmentation["crops"])
    flips = int(manifest.augmentation["flips"])
    if crops + flips < 1:
        raise ManifestError("augmentation recipe produces zero variants per image")
    model = load_vision_model(manifest.source_path())
    written = {}
    for attribute, categories in manifest.image_dirs.items():
        out = manifest.image_outs[attribute]
        tensors, skipped = {}, {}
        for category, directory in categories.items():
            rows, dropped = embed_directory(
                model, directory, crops=crops, flips=flips, seed=manifest.seed
            )
            tensors[f"refs/{category}"] = rows
            skipped[category] = dropped
        out.parent.mkdir(parents=True, exist_ok=True)
        write_bundle(
            out,
            tensors,
            {
                "format": "reference-embeddings",
                "attribute": attribute,
                "seed": manifest.seed,
                "augmentation": {"crops": crops, "flips": flips},
                "source_model": manifest.source,
                "skipped": skipped,
            },
        )
        written[attribute] = out
    return written
