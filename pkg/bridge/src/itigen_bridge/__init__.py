"""Export bridge between CLIP checkpoints and tensor-bundle consumers.

This package owns every dependency on torch, transformers, and raw
pixels. It reads an export manifest, pulls a CLIP text or vision tower,
and writes self-describing tensor bundles that a pure-numpy consumer
loads without any deep-learning runtime. The two sides share no code,
only bytes.
"""

from .anchors import export_anchors, text_anchor
from .bundle_io import LoadedBundle, read_bundle, write_bundle
from .clip_export import (
    export_text_encoder,
    generate_fixture_cases,
    load_text_model,
    reference_embedding,
    text_encoder_metadata,
    text_encoder_tensors,
    tokenizer_fingerprint,
)
from .errors import (
    BridgeError,
    ExportDataError,
    ManifestError,
    UnsupportedModelError,
)
from .generate import handoff_generate
from .images import embed_directory, export_image_embeddings, load_vision_model
from .manifest import ExportManifest, load_manifest

__all__ = [
    "BridgeError",
    "ExportDataError",
    "ExportManifest",
    "LoadedBundle",
    "ManifestError",
    "UnsupportedModelError",
    "embed_directory",
    "export_anchors",
    "export_image_embeddings",
    "export_text_encoder",
    "generate_fixture_cases",
    "handoff_generate",
    "load_manifest",
    "load_text_model",
    "load_vision_model",
    "read_bundle",
    "reference_embedding",
    "text_anchor",
    "text_encoder_metadata",
    "text_encoder_tensors",
    "tokenizer_fingerprint",
    "write_bundle",
]

__version__ = "0.1.0"
