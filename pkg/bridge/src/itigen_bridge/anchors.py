"""Category anchor export.

The manifest may attach a list of descriptive texts to each category of
an attribute. Each text is embedded by the source text tower and
l2-normalized; the category anchor is the renormalized mean of its text
embeddings. One bundle holds a (K, joint_dim) anchor matrix per
attribute, rows following the manifest's category order.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .bundle_io import write_bundle
from .clip_export import load_text_model, tokenizer_fingerprint
from .errors import ExportDataError, ManifestError
from .manifest import ExportManifest

__all__ = ["text_anchor", "export_anchors"]


def text_anchor(model, tokenizer, texts) -> np.ndarray:
    """Unit anchor: renormalized mean of the texts' unit embeddings."""
    rows = []
    for text in texts:
        ids = torch.tensor([tokenizer(text).input_ids], dtype=torch.long)
        with torch.inference_mode():
            vec = model(input_ids=ids).text_embeds[0].cpu().numpy()
        rows.append(vec / np.linalg.norm(vec))
    mean = np.mean(rows, axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise ExportDataError(
            f"anchor texts {list(texts)!r} embed to a zero mean direction"
        )
    return (mean / norm).astype(np.float32)


def export_anchors(manifest: ExportManifest) -> Path:
    """Write one anchors/<attribute> matrix per attribute with texts."""
    if not manifest.anchor_texts:
        raise ManifestError("manifest declares no anchor texts")
    if manifest.anchors_out is None:
        raise ManifestError("manifest outputs must name an 'anchors' path")
    model, tokenizer = load_text_model(manifest.source_path())
    if tokenizer is None:
        raise ExportDataError(
            f"{manifest.source}: no tokenizer available, cannot embed anchor texts"
        )
    tensors = {}
    for attribute, categories in manifest.anchor_texts.items():
        matrix = [
            text_anchor(model, tokenizer, texts) for texts in categories.values()
        ]
        tensors[f"anchors/{attribute}"] = np.stack(matrix)
    manifest.anchors_out.parent.mkdir(parents=True, exist_ok=True)
    write_bundle(
        manifest.anchors_out,
        tensors,
        {
            "format": "anchors",
            "source_model": manifest.source,
            "tokenizer_fingerprint": tokenizer_fingerprint(tokenizer),
        },
    )
    return manifest.anchors_out
