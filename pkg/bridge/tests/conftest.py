"""Shared fixtures: a deterministic tiny CLIP checkpoint on disk.

The checkpoint is built once per session with seeded weights and a
hand-written 54-token vocabulary (a-z, their end-of-word forms, and the
two delimiters), so every test runs fully offline and reproducibly. One
full CLIPModel directory serves both towers, the way published CLIP
checkpoints do.
"""

from __future__ import annotations

import json

import numpy as np
import pytest
import torch
from PIL import Image
from transformers import CLIPConfig, CLIPModel, CLIPTokenizer
from transformers.utils import logging as hf_logging

hf_logging.set_verbosity_error()

LETTERS = [chr(c) for c in range(ord("a"), ord("z") + 1)]
VOCAB = (
    {tok: i for i, tok in enumerate(LETTERS)}
    | {f"{tok}</w>": 26 + i for i, tok in enumerate(LETTERS)}
    | {"<|startoftext|>": 52, "<|endoftext|>": 53}
)

TEXT_CONFIG = dict(
    vocab_size=54,
    hidden_size=16,
    intermediate_size=64,
    num_hidden_layers=2,
    num_attention_heads=2,
    max_position_embeddings=24,
    projection_dim=12,
    hidden_act="gelu",
    bos_token_id=52,
    eos_token_id=53,
)

VISION_CONFIG = dict(
    hidden_size=16,
    intermediate_size=64,
    num_hidden_layers=2,
    num_attention_heads=2,
    image_size=32,
    patch_size=16,
    projection_dim=12,
    hidden_act="gelu",
)


def build_checkpoint(root, *, text_overrides=None, weight_seed=7) -> str:
    """Write a tokenizer plus a full two-tower model under ``root``."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "vocab.json").write_text(json.dumps(VOCAB))
    (root / "merges.txt").write_text("#version: 0.2\n")
    tokenizer = CLIPTokenizer(
        str(root / "vocab.json"), str(root / "merges.txt"), model_max_length=24
    )
    tokenizer.save_pretrained(root)

    text_config = TEXT_CONFIG | (text_overrides or {})
    torch.manual_seed(weight_seed)
    model = CLIPModel(
        CLIPConfig(
            text_config=text_config, vision_config=VISION_CONFIG, projection_dim=12
        )
    )
    model.save_pretrained(root)
    return str(root)


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    return build_checkpoint(tmp_path_factory.mktemp("ckpt") / "tiny-clip")


@pytest.fixture(scope="session")
def image_tree(tmp_path_factory):
    """25 tiny PNGs per category for a two-category attribute."""
    root = tmp_path_factory.mktemp("refs")
    rng = np.random.default_rng(5)
    for category in ("first", "second"):
        directory = root / "style" / category
        directory.mkdir(parents=True)
        for i in range(25):
            arr = rng.integers(0, 256, size=(40, 48, 3), dtype=np.uint8)
            Image.fromarray(arr, "RGB").save(directory / f"img_{i:02d}.png")
    return root


def write_manifest(path, body) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, indent=2))
    return str(path)
