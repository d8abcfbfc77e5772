#!/usr/bin/env python3
"""Regenerate the committed parity fixtures in the consumer's test tree.

Builds a seeded tiny two-tower checkpoint from scratch, exports its text
encoder plus reference fixture cases through the normal manifest path,
and copies the two bundles into ``tests/fixtures/`` at the repository
root. The consumer's parity tests replay those files with no torch or
transformers installed, so this script is the single point where the
fixture bytes originate.

Run from anywhere:

    python3 bridge/scripts/regenerate_primary_fixtures.py
"""

from __future__ import annotations

import hashlib
import json
import shutil
import sys
import tempfile
from pathlib import Path

import torch
from transformers import CLIPConfig, CLIPModel, CLIPTokenizer

from itigen_bridge import export_text_encoder, load_manifest

REPO_ROOT = Path(__file__).resolve().parents[2]
FIXTURE_DIR = REPO_ROOT / "tests" / "fixtures"

WEIGHT_SEED = 7
CASE_SEED = 12

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


def build_checkpoint(root: Path) -> Path:
    root.mkdir(parents=True)
    (root / "vocab.json").write_text(json.dumps(VOCAB))
    (root / "merges.txt").write_text("#version: 0.2\n")
    CLIPTokenizer(
        str(root / "vocab.json"), str(root / "merges.txt"), model_max_length=24
    ).save_pretrained(root)
    torch.manual_seed(WEIGHT_SEED)
    CLIPModel(
        CLIPConfig(
            text_config=TEXT_CONFIG, vision_config=VISION_CONFIG, projection_dim=12
        )
    ).save_pretrained(root)
    return root


def main() -> int:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(prefix="fixture-export-") as scratch:
        scratch = Path(scratch)
        checkpoint = build_checkpoint(scratch / "tiny-clip")
        manifest_path = scratch / "manifest.json"
        manifest_path.write_text(
            json.dumps(
                {
                    "source": str(checkpoint),
                    "seed": CASE_SEED,
                    "fixtures": {"count": 24, "max_length": 16},
                    "outputs": {
                        "encoder": "out/text_encoder.itb",
                        "fixtures": "out/encoder_cases.itb",
                    },
                },
                indent=2,
            )
        )
        encoder_path, cases_path = export_text_encoder(load_manifest(manifest_path))
        for produced in (encoder_path, cases_path):
            target = FIXTURE_DIR / produced.name
            shutil.copyfile(produced, target)
            digest = hashlib.sha256(target.read_bytes()).hexdigest()
            print(f"wrote {target} ({target.stat().st_size} bytes, sha256 {digest})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
