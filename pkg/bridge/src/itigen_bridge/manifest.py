"""Export manifest: one JSON document describing a whole export job.

Example::

    {
      "source": "models/tiny-clip",
      "tokenizer_fingerprint": "9c2f6a1b44f0e713",
      "augmentation": {"crops": 1, "flips": 1},
      "seed": 0,
      "images": {
        "eyewear": {"glasses": "data/glasses", "no_glasses": "data/plain"}
      },
      "anchors": {
        "eyewear": {
          "glasses": ["a photo of a person wearing glasses"],
          "no_glasses": ["a photo of a person"]
        }
      },
      "outputs": {
        "encoder": "out/encoder.itb",
        "fixtures": "out/encoder_fixtures.itb",
        "images": {"eyewear": "out/refs_eyewear.itb"},
        "anchors": "out/anchors.itb"
      },
      "fixtures": {"count": 24, "max_length": 16}
    }

Relative paths resolve against the manifest file's directory. Category
order inside each attribute follows the document order, and the image
and anchor sections must agree on it when both name an attribute. Every
declared image directory must exist and contain at least one file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .errors import ManifestError

__all__ = ["MANIFEST_SCHEMA", "ExportManifest", "load_manifest"]

MANIFEST_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["source", "outputs"],
    "additionalProperties": False,
    "properties": {
        "source": {"type": "string", "minLength": 1},
        "tokenizer_fingerprint": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "augmentation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "crops": {"type": "integer", "minimum": 0},
                "flips": {"type": "integer", "minimum": 0},
            },
        },
        "images": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "minProperties": 1,
                "additionalProperties": {"type": "string"},
            },
        },
        "anchors": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "minProperties": 1,
                "additionalProperties": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "string", "minLength": 1},
                },
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "encoder": {"type": "string"},
                "fixtures": {"type": "string"},
                "images": {
                    "type": "object",
                    "additionalProperties": {"type": "string"},
                },
                "anchors": {"type": "string"},
                "generated": {"type": "string"},
            },
        },
        "fixtures": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "max_length": {"type": "integer", "minimum": 3},
            },
        },
        "generation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pipeline": {"type": "string"},
                "prompts": {"type": "string"},
                "per_combination": {"type": "integer", "minimum": 1},
            },
        },
    },
}

DEFAULT_AUGMENTATION = {"crops": 1, "flips": 1}
DEFAULT_FIXTURES = {"count": 24, "max_length": 16}


@dataclass
class ExportManifest:
    """Validated manifest with every path resolved to an absolute one."""

    source: str
    tokenizer_fingerprint: str
    seed: int
    augmentation: dict
    image_dirs: dict[str, dict[str, Path]]
    anchor_texts: dict[str, dict[str, list[str]]]
    encoder_out: Path | None
    fixtures_out: Path | None
    image_outs: dict[str, Path]
    anchors_out: Path | None
    generated_out: Path | None
    fixtures: dict
    generation: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def source_path(self) -> Path | str:
        """Local directory when the source names one, else the bare id."""
        candidate = Path(self.source)
        if not candidate.is_absolute():
            candidate = self.base_dir / candidate
        return candidate if candidate.exists() else self.source


def load_manifest(path) -> ExportManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    validator = jsonschema.Draft202012Validator(MANIFEST_SCHEMA)
    problems = sorted(validator.iter_errors(raw), key=lambda e: list(e.path))
    if problems:
        first = problems[0]
        where = "/".join(str(p) for p in first.path) or "<root>"
        raise ManifestError(f"{path}: at {where}: {first.message}")
    base = path.parent.resolve()

    def resolve(rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else base / p

    image_dirs: dict[str, dict[str, Path]] = {}
    for attribute, categories in raw.get("images", {}).items():
        image_dirs[attribute] = {}
        for category, rel in categories.items():
            directory = resolve(rel)
            if not directory.is_dir():
                raise ManifestError(
                    f"{path}: {attribute}/{category}: "
                    f"{directory} is not a directory"
                )
            if not any(directory.iterdir()):
                raise ManifestError(
                    f"{path}: {attribute}/{category}: {directory} is empty"
                )
            image_dirs[attribute][category] = directory

    anchor_texts = {
        attribute: {cat: list(texts) for cat, texts in categories.items()}
        for attribute, categories in raw.get("anchors", {}).items()
    }
    for attribute in set(image_dirs) & set(anchor_texts):
        image_cats = list(image_dirs[attribute])
        anchor_cats = list(anchor_texts[attribute])
        if image_cats != anchor_cats:
            raise ManifestError(
                f"{path}: attribute {attribute!r} lists categories "
                f"{image_cats} for images but {anchor_cats} for anchors"
            )

    outputs = raw["outputs"]
    image_outs = {
        attribute: resolve(rel)
        for attribute, rel in outputs.get("images", {}).items()
    }
    for attribute in image_dirs:
        if attribute not in image_outs:
            raise ManifestError(
                f"{path}: no output path for image attribute {attribute!r}"
            )

    return ExportManifest(
        source=raw["source"],
        tokenizer_fingerprint=raw.get("tokenizer_fingerprint", ""),
        seed=int(raw.get("seed", 0)),
        augmentation={**DEFAULT_AUGMENTATION, **raw.get("augmentation", {})},
        image_dirs=image_dirs,
        anchor_texts=anchor_texts,
        encoder_out=resolve(outputs["encoder"]) if "encoder" in outputs else None,
        fixtures_out=(
            resolve(outputs["fixtures"]) if "fixtures" in outputs else None
        ),
        image_outs=image_outs,
        anchors_out=resolve(outputs["anchors"]) if "anchors" in outputs else None,
        generated_out=(
            resolve(outputs["generated"]) if "generated" in outputs else None
        ),
        fixtures={**DEFAULT_FIXTURES, **raw.get("fixtures", {})},
        generation=dict(raw.get("generation", {})),
        base_dir=base,
    )
