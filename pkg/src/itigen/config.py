"""Run configuration: a validated JSON document wiring files together.

A run config names the attribute taxonomy and points at the bundles holding
the template, the encoder weights, and the per-attribute reference
embeddings, plus optional training, sampling, and evaluation overrides.
Relative paths resolve against the config file's directory.

Bundle formats referenced here (all TensorBundle files):

* prompt template   -- tensor "rows" (p, e); metadata format="prompt-template",
  optional source_text, token_ids
* reference source  -- tensors "refs/<category>" (n, d); metadata
  format="reference-embeddings", attribute=<name>
* toy encoder       -- tensor "projection" (joint_dim, e); metadata
  format="toy-encoder", version=1
* transformer       -- see the text-encoder naming contract in encoders
* anchors           -- tensors "anchors/<attribute>" (K, d); metadata
  format="anchors"
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import jsonschema
import numpy as np

from .attributes import AttributeSet, PromptTemplate
from .bundle import read_bundle, write_bundle
from .encoders import (
    ImageEmbeddingSource,
    TextEncoder,
    ToyLinearEncoder,
    TransformerTextEncoder,
)
from .errors import ConfigError, SchemaError
from .sampling import SamplingPlan
from .training import TrainConfig

__all__ = [
    "RUN_CONFIG_SCHEMA",
    "RunConfig",
    "load_run_config",
    "load_template",
    "template_from_token_ids",
    "load_reference_source",
    "load_baseline_rows",
    "load_encoder",
    "load_anchors",
    "write_template_bundle",
    "write_reference_bundle",
    "write_toy_encoder_bundle",
    "write_anchors_bundle",
]

RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["attributes", "template", "encoder", "references"],
    "additionalProperties": False,
    "properties": {
        "attributes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "categories"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "categories": {
                        "type": "array",
                        "minItems": 1,
                        "items": {"type": "string", "minLength": 1},
                    },
                },
            },
        },
        "template": {
            "type": "object",
            "oneOf": [{"required": ["bundle"]}, {"required": ["token_ids"]}],
            "additionalProperties": False,
            "properties": {
                "bundle": {"type": "string"},
                "token_ids": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "integer", "minimum": 0},
                },
            },
        },
        "encoder": {
            "type": "object",
            "required": ["kind", "bundle"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["toy", "transformer"]},
                "bundle": {"type": "string"},
            },
        },
        "references": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {"type": "string"},
        },
        "baseline_references": {
            "type": "object",
            "additionalProperties": {"type": "string"},
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "token_length": {"type": "integer", "minimum": 1},
                "semantic_margin": {"type": "number", "minimum": 0, "maximum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "optimizer": {"enum": ["sgd", "adam"]},
                "subset_cap": {"type": "integer", "minimum": 1},
                "aggregation": {"enum": ["sum", "concat"]},
            },
        },
        "sampling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "total": {"type": "integer", "minimum": 1},
                "distribution": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "number", "minimum": 0},
                },
                "seed": {"type": "integer", "minimum": 0},
                "method": {"enum": ["exact_quota", "multinomial"]},
            },
        },
        "evaluation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma": {"type": "number", "minimum": 0},
                "mode": {"enum": ["plain", "centered"]},
                "anchors": {"type": "string"},
            },
        },
    },
}


@dataclass
class RunConfig:
    """Parsed and path-resolved run configuration."""

    attribute_set: AttributeSet
    template_path: Path | None
    template_token_ids: tuple[int, ...] | None
    encoder_kind: str
    encoder_path: Path
    reference_paths: dict[str, Path]
    baseline_paths: dict[str, Path]
    train: TrainConfig
    sampling: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def sampling_plan(self, n_combos: int, default_total: int) -> SamplingPlan:
        spec = dict(self.sampling)
        distribution = spec.get("distribution")
        return SamplingPlan(
            total=int(spec.get("total", default_total)),
            distribution=tuple(distribution) if distribution is not None else None,
            seed=int(spec.get("seed", self.train.seed)),
            method=spec.get("method", "exact_quota"),
        )


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    validator = jsonschema.Draft202012Validator(RUN_CONFIG_SCHEMA)
    problems = sorted(validator.iter_errors(raw), key=lambda e: list(e.path))
    if problems:
        first = problems[0]
        where = "/".join(str(p) for p in first.path) or "<root>"
        raise SchemaError(f"{path}: at {where}: {first.message}")

    attribute_set = AttributeSet.from_json_obj(raw["attributes"])
    base = path.parent

    def resolve(rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else base / p

    reference_paths = {
        name: resolve(rel) for name, rel in raw["references"].items()
    }
    for spec in attribute_set:
        if spec.name not in reference_paths:
            raise ConfigError(
                f"{path}: no reference bundle for attribute {spec.name!r}"
            )
    for name in reference_paths:
        if name not in {a.name for a in attribute_set}:
            raise ConfigError(f"{path}: references name unknown attribute {name!r}")
    baseline_paths = {
        name: resolve(rel)
        for name, rel in raw.get("baseline_references", {}).items()
    }
    train = TrainConfig(**raw.get("train", {}))
    template_raw = raw["template"]
    template_ids = template_raw.get("token_ids")
    return RunConfig(
        attribute_set=attribute_set,
        template_path=(
            resolve(template_raw["bundle"]) if "bundle" in template_raw else None
        ),
        template_token_ids=(
            tuple(int(t) for t in template_ids) if template_ids is not None else None
        ),
        encoder_kind=raw["encoder"]["kind"],
        encoder_path=resolve(raw["encoder"]["bundle"]),
        reference_paths=reference_paths,
        baseline_paths=baseline_paths,
        train=train,
        sampling=dict(raw.get("sampling", {})),
        evaluation=dict(raw.get("evaluation", {})),
        base_dir=base,
    )


# ---------------------------------------------------------------------------
# bundle loaders and writers for the formats the config references


def load_template(path) -> PromptTemplate:
    bundle = read_bundle(path)
    if bundle.metadata.get("format") != "prompt-template":
        raise SchemaError(f"{path}: not a prompt-template bundle")
    if "rows" not in bundle.tensors:
        raise SchemaError(f"{path}: template bundle is missing 'rows'")
    return PromptTemplate(
        bundle.tensors["rows"],
        source_text=bundle.metadata.get("source_text", ""),
        token_ids=bundle.metadata.get("token_ids"),
    )


def write_template_bundle(
    path, rows: np.ndarray, *, source_text: str = "", token_ids=None
) -> None:
    metadata = {"format": "prompt-template", "source_text": source_text}
    if token_ids is not None:
        metadata["token_ids"] = [int(t) for t in token_ids]
    write_bundle(path, {"rows": np.asarray(rows)}, metadata)


def template_from_token_ids(encoder, token_ids) -> PromptTemplate:
    """Resolve a token-id template through the encoder's vocabulary."""
    lookup = getattr(encoder, "token_rows", None)
    if lookup is None:
        raise ConfigError(
            "token-id templates need an encoder with a vocabulary; "
            "provide a template bundle instead"
        )
    ids = tuple(int(t) for t in token_ids)
    return PromptTemplate(lookup(ids), token_ids=ids)


def load_reference_source(path, *, expect_attribute: str | None = None) -> ImageEmbeddingSource:
    bundle = read_bundle(path)
    if bundle.metadata.get("format") != "reference-embeddings":
        raise SchemaError(f"{path}: not a reference-embeddings bundle")
    declared = bundle.metadata.get("attribute", "")
    if expect_attribute and declared and declared != expect_attribute:
        raise SchemaError(
            f"{path}: bundle declares attribute {declared!r}, "
            f"config expects {expect_attribute!r}"
        )
    rows = {}
    for name, arr in bundle.tensors.items():
        if not name.startswith("refs/"):
            raise SchemaError(f"{path}: unexpected tensor {name!r}")
        rows[name[len("refs/"):]] = arr
    if not rows:
        raise SchemaError(f"{path}: reference bundle has no refs/* tensors")
    return ImageEmbeddingSource(rows)


def write_reference_bundle(
    path, rows_by_category: Mapping[str, np.ndarray], *, attribute: str = ""
) -> None:
    tensors = {
        f"refs/{name}": np.asarray(rows) for name, rows in rows_by_category.items()
    }
    write_bundle(
        path, tensors, {"format": "reference-embeddings", "attribute": attribute}
    )


def load_baseline_rows(path) -> np.ndarray:
    source = load_reference_source(path)
    if source.categories != ("baseline",):
        raise SchemaError(
            f"{path}: baseline bundle must hold exactly refs/baseline, "
            f"got {source.categories}"
        )
    return source.rows("baseline")


def load_encoder(kind: str, path) -> TextEncoder:
    bundle = read_bundle(path)
    if kind == "toy":
        if bundle.metadata.get("format") != "toy-encoder":
            raise SchemaError(f"{path}: not a toy-encoder bundle")
        if "projection" not in bundle.tensors:
            raise SchemaError(f"{path}: toy-encoder bundle is missing 'projection'")
        return ToyLinearEncoder(bundle.tensors["projection"])
    if kind == "transformer":
        return TransformerTextEncoder.from_bundle(bundle)
    raise ConfigError(f"unknown encoder kind {kind!r}")


def write_toy_encoder_bundle(path, projection: np.ndarray) -> None:
    write_bundle(
        path,
        {"projection": np.asarray(projection)},
        {"format": "toy-encoder", "version": 1},
    )


def load_anchors(path) -> dict[str, np.ndarray]:
    bundle = read_bundle(path)
    if bundle.metadata.get("format") != "anchors":
        raise SchemaError(f"{path}: not an anchors bundle")
    anchors = {}
    for name, arr in bundle.tensors.items():
        if not name.startswith("anchors/"):
            raise SchemaError(f"{path}: unexpected tensor {name!r}")
        anchors[name[len("anchors/"):]] = arr
    if not anchors:
        raise SchemaError(f"{path}: anchors bundle has no anchors/* tensors")
    return anchors


def write_anchors_bundle(path, anchors: Mapping[str, np.ndarray]) -> None:
    tensors = {f"anchors/{name}": np.asarray(arr) for name, arr in anchors.items()}
    write_bundle(path, tensors, {"format": "anchors"})
