"""Training loop: attribute-alternating updates of the token table.

Iteration t trains attribute t mod M. One epoch runs steps_per_epoch
rounds over all attributes, where steps_per_epoch covers the largest
category of any attribute at the configured batch size. Minibatches draw
without replacement from an epoch-local permutation per (attribute,
category); a category that exhausts mid-epoch starts a fresh permutation.

Only the trained attribute's blocks become graph leaves in a given
iteration, so every other attribute's bytes are untouched by construction
(asserted in tests, relied on by the update rule).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from . import tensor as T
from .attributes import (
    BASELINE_CATEGORY,
    AttributeSet,
    InclusiveTokenTable,
    PromptTemplate,
    PromptSet,
    enumerate_prompt_set,
)
from .bundle import read_bundle, write_bundle
from .encoders import ImageEmbeddingSource, TextEncoder, ToyLinearEncoder, TransformerTextEncoder
from .errors import ConfigError, DataError, SchemaError
from .losses import PairRecord, attribute_loss, batch_stats

__all__ = [
    "TrainConfig",
    "Checkpoint",
    "sample_minibatch",
    "train",
    "train_step",
]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of a training run."""

    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 0.01
    token_length: int = 3
    semantic_margin: float = 0.8
    seed: int = 0
    optimizer: str = "sgd"
    subset_cap: int = 32
    aggregation: str = "sum"

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        for name in ("batch_size", "token_length", "subset_cap"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.semantic_margin <= 1.0:
            raise ConfigError(
                f"semantic_margin must be in [0, 1], got {self.semantic_margin}"
            )
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.aggregation not in ("sum", "concat"):
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")


def sample_minibatch(
    rows: np.ndarray, size: int, rng: np.random.Generator
) -> np.ndarray:
    """min(size, n) distinct rows drawn from a fresh permutation."""
    rows = np.asarray(rows)
    n = rows.shape[0]
    take = min(int(size), n)
    return rows[rng.permutation(n)[:take]]


class _PermutationSampler:
    """Without-replacement index stream over one category's rows."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self._perm = rng.permutation(n)
        self._cursor = 0

    def reshuffle(self) -> None:
        self._perm = self.rng.permutation(self.n)
        self._cursor = 0

    def draw(self, size: int) -> np.ndarray:
        take = min(size, self.n)
        if self._cursor + take > self.n:
            self.reshuffle()
        out = self._perm[self._cursor : self._cursor + take]
        self._cursor += take
        return out


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, key, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return param - param.dtype.type(self.lr) * grad


class _Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self._state: dict = {}

    def step(self, key, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        m, v, t = self._state.get(
            key, (np.zeros_like(param), np.zeros_like(param), 0)
        )
        t += 1
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        self._state[key] = (m, v, t)
        m_hat = m / (1.0 - self.beta1**t)
        v_hat = v / (1.0 - self.beta2**t)
        update = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return (param - update).astype(param.dtype)


def _steps_per_epoch(
    attribute_set: AttributeSet,
    references: Mapping[str, ImageEmbeddingSource],
    baseline_references: Mapping[str, np.ndarray],
    batch_size: int,
) -> int:
    largest = 1
    for spec in attribute_set:
        source = references[spec.name]
        counts = [source.count(c) for c in spec.categories]
        if spec.name in baseline_references:
            counts.append(np.asarray(baseline_references[spec.name]).shape[0])
        largest = max(largest, max(counts))
    return max(1, math.ceil(largest / batch_size))


def train_step(
    config: TrainConfig,
    encoder: TextEncoder,
    template: PromptTemplate,
    table: InclusiveTokenTable,
    attribute: int,
    rows_by_category: Mapping[int, np.ndarray],
    *,
    base_embedding: np.ndarray,
    optimizer=None,
    subset_rng: np.random.Generator | None = None,
) -> list[PairRecord]:
    """One iteration: update one attribute's blocks in place from one batch.

    Only the trained attribute's blocks become graph leaves, so every other
    attribute's bytes are untouched by construction. ``rows_by_category``
    maps category index (or BASELINE_CATEGORY) to sampled reference rows.
    """
    if optimizer is None:
        optimizer = _Sgd(config.learning_rate)
    if subset_rng is None:
        subset_rng = np.random.default_rng([config.seed, 2])
    spec = table.attribute_set[attribute]
    stats = batch_stats(attribute, rows_by_category)
    leaves = {
        (attribute, k): T.parameter(table.block(attribute, k))
        for k in range(spec.size)
    }
    loss, records = attribute_loss(
        encoder, template, table, stats,
        margin=config.semantic_margin,
        base_embedding=base_embedding,
        subset_cap=config.subset_cap,
        rng=subset_rng,
        mode=config.aggregation,
        leaves=leaves,
        on_degenerate="unnormalized",
    )
    T.backward(loss)
    for k in range(spec.size):
        leaf = leaves[(attribute, k)]
        if leaf.grad is None:
            continue
        table.set_block(
            attribute, k,
            optimizer.step((attribute, k), table.block(attribute, k), leaf.grad),
        )
    return records


def train(
    config: TrainConfig,
    encoder: TextEncoder,
    attribute_set: AttributeSet,
    references: Mapping[str, ImageEmbeddingSource],
    template: PromptTemplate,
    *,
    baseline_references: Mapping[str, np.ndarray] | None = None,
) -> "Checkpoint":
    """Learn the token table; returns a checkpoint with the loss history.

    ``references`` maps each attribute name to its reference source (unit
    rows in the joint space). Attributes with a single category must appear
    in ``baseline_references`` with reference rows for the bare template;
    they train their lone block against that baseline.
    """
    baseline_references = dict(baseline_references or {})
    if template.embed_dim != encoder.embed_dim:
        raise ConfigError(
            f"template width {template.embed_dim} != encoder width {encoder.embed_dim}"
        )
    for spec in attribute_set:
        if spec.name not in references:
            raise ConfigError(f"no reference source for attribute {spec.name!r}")
        source = references[spec.name]
        for category in spec.categories:
            if category not in source:
                raise ConfigError(
                    f"reference source for {spec.name!r} is missing "
                    f"category {category!r}"
                )
        if source.dim != encoder.joint_dim:
            raise ConfigError(
                f"reference dim {source.dim} != encoder joint dim {encoder.joint_dim}"
            )
        if spec.size == 1 and spec.name not in baseline_references:
            raise ConfigError(
                f"attribute {spec.name!r} has one category and needs baseline "
                "references for the bare template"
            )
        if spec.size > 1 and spec.name in baseline_references:
            raise ConfigError(
                f"attribute {spec.name!r} has {spec.size} categories; baseline "
                "references are only for single-category attributes"
            )
    for name, rows in baseline_references.items():
        rows = np.asarray(rows)
        if rows.ndim != 2 or rows.shape[1] != encoder.joint_dim:
            raise ConfigError(
                f"baseline references for {name!r} must be (n, {encoder.joint_dim})"
            )
        norms = np.linalg.norm(rows, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-3):
            raise DataError(f"baseline references for {name!r} must be unit rows")

    table = InclusiveTokenTable(
        attribute_set, config.token_length, encoder.embed_dim, dtype=template.dtype
    )
    encoder.check_capacity(template.length + _token_span(config, attribute_set))

    base_embedding = encoder.encode(T.constant(template.rows)).data.copy()

    sampler_rng = np.random.default_rng([config.seed, 1])
    subset_rng = np.random.default_rng([config.seed, 2])
    samplers: dict[tuple[int, int], _PermutationSampler] = {}
    for m, spec in enumerate(attribute_set):
        for k, category in enumerate(spec.categories):
            n = references[spec.name].count(category)
            samplers[(m, k)] = _PermutationSampler(n, sampler_rng)
        if spec.name in baseline_references:
            n = np.asarray(baseline_references[spec.name]).shape[0]
            samplers[(m, BASELINE_CATEGORY)] = _PermutationSampler(n, sampler_rng)

    if config.optimizer == "sgd":
        optimizer = _Sgd(config.learning_rate)
    else:
        optimizer = _Adam(config.learning_rate)

    steps = _steps_per_epoch(
        attribute_set, references, baseline_references, config.batch_size
    )
    history: list[tuple] = []
    step = 0
    for _epoch in range(config.epochs):
        for sampler in samplers.values():
            sampler.reshuffle()
        for _round in range(steps):
            for m, spec in enumerate(attribute_set):
                rows_by_category = {}
                source = references[spec.name]
                for k, category in enumerate(spec.categories):
                    idx = samplers[(m, k)].draw(config.batch_size)
                    rows_by_category[k] = source.rows(category)[idx]
                if spec.name in baseline_references:
                    idx = samplers[(m, BASELINE_CATEGORY)].draw(config.batch_size)
                    rows_by_category[BASELINE_CATEGORY] = np.asarray(
                        baseline_references[spec.name]
                    )[idx]
                records = train_step(
                    config, encoder, template, table, m, rows_by_category,
                    base_embedding=base_embedding,
                    optimizer=optimizer,
                    subset_rng=subset_rng,
                )
                for rec in records:
                    history.append(
                        (
                            step,
                            rec.attribute,
                            rec.category_i,
                            rec.category_j,
                            rec.direction_loss,
                            rec.semantic_loss,
                        )
                    )
                step += 1

    history_array = (
        np.asarray(history, dtype=np.float64)
        if history
        else np.zeros((0, 6), dtype=np.float64)
    )
    return Checkpoint(
        table=table,
        config=config,
        template=template,
        encoder_info=_encoder_info(encoder),
        history=history_array,
        steps=step,
        encoder=encoder,
    )


def _token_span(config: TrainConfig, attribute_set: AttributeSet) -> int:
    if config.aggregation == "concat":
        return config.token_length * len(attribute_set)
    return config.token_length


def _encoder_info(encoder: TextEncoder) -> dict:
    if isinstance(encoder, ToyLinearEncoder):
        return {"kind": "toy"}
    if isinstance(encoder, TransformerTextEncoder):
        weights = encoder.to_tensor_dict()
        digest = hashlib.sha256()
        for name in sorted(weights):
            digest.update(name.encode())
            digest.update(weights[name].tobytes())
        return {"kind": "transformer", "weights_sha256": digest.hexdigest()}
    return {"kind": type(encoder).__name__}


HISTORY_COLUMNS = (
    "step",
    "attribute_index",
    "category_i",
    "category_j",
    "direction_loss",
    "semantic_loss",
)


@dataclass
class Checkpoint:
    """Trained table plus everything needed to recompose and evaluate."""

    table: InclusiveTokenTable
    config: TrainConfig
    template: PromptTemplate
    encoder_info: dict
    history: np.ndarray
    steps: int
    encoder: TextEncoder | None = None

    @property
    def attribute_set(self) -> AttributeSet:
        return self.table.attribute_set

    def prompt_set(self, template: PromptTemplate | None = None) -> PromptSet:
        return enumerate_prompt_set(
            template or self.template, self.table, mode=self.config.aggregation
        )

    def require_encoder(self) -> TextEncoder:
        if self.encoder is None:
            raise ConfigError(
                "checkpoint has no attached encoder; pass one explicitly "
                "(transformer checkpoints store only a weight fingerprint)"
            )
        return self.encoder

    def metadata(self) -> dict:
        meta = {
            "format": "checkpoint",
            "version": 1,
            "config": asdict(self.config),
            "attributes": self.attribute_set.to_json_obj(),
            "attribute_fingerprint": self.attribute_set.fingerprint(),
            "template_fingerprint": self.template.fingerprint(),
            "template_source_text": self.template.source_text,
            "embed_dim": self.table.embed_dim,
            "token_length": self.table.token_length,
            "encoder": self.encoder_info,
            "steps": self.steps,
            "history_columns": list(HISTORY_COLUMNS),
        }
        if self.template.token_ids is not None:
            meta["template_token_ids"] = list(self.template.token_ids)
        return meta

    def save(self, path) -> None:
        tensors = dict(self.table.named_blocks())
        tensors["template/rows"] = self.template.rows
        tensors["history"] = self.history
        if isinstance(self.encoder, ToyLinearEncoder):
            tensors["encoder/projection"] = self.encoder.projection
        write_bundle(path, tensors, self.metadata())

    @classmethod
    def load(cls, path, *, encoder: TextEncoder | None = None) -> "Checkpoint":
        bundle = read_bundle(path)
        meta = bundle.metadata
        if meta.get("format") != "checkpoint":
            raise SchemaError(f"not a checkpoint bundle (format={meta.get('format')!r})")
        if meta.get("version") != 1:
            raise SchemaError(f"unsupported checkpoint version {meta.get('version')!r}")
        attribute_set = AttributeSet.from_json_obj(meta["attributes"])
        config = TrainConfig(**meta["config"])
        if "template/rows" not in bundle.tensors:
            raise SchemaError("checkpoint bundle is missing template/rows")
        template = PromptTemplate(
            bundle.tensors["template/rows"],
            source_text=meta.get("template_source_text", ""),
            token_ids=meta.get("template_token_ids"),
        )
        table = InclusiveTokenTable(
            attribute_set, int(meta["token_length"]), int(meta["embed_dim"]),
            dtype=template.dtype,
        )
        for m, spec in enumerate(attribute_set):
            for k, category in enumerate(spec.categories):
                name = f"tokens/{spec.name}/{category}"
                if name not in bundle.tensors:
                    raise SchemaError(f"checkpoint bundle is missing {name}")
                table.set_block(m, k, bundle.tensors[name])
        if encoder is None and meta.get("encoder", {}).get("kind") == "toy":
            if "encoder/projection" not in bundle.tensors:
                raise SchemaError("toy checkpoint is missing encoder/projection")
            encoder = ToyLinearEncoder(bundle.tensors["encoder/projection"])
        history = bundle.tensors.get("history", np.zeros((0, 6), dtype=np.float64))
        return cls(
            table=table,
            config=config,
            template=template,
            encoder_info=dict(meta.get("encoder", {})),
            history=np.asarray(history, dtype=np.float64),
            steps=int(meta.get("steps", 0)),
            encoder=encoder,
        )

    def history_csv_rows(self) -> list[str]:
        """Loss history as CSV lines (header first)."""
        lines = [",".join(HISTORY_COLUMNS)]
        for row in self.history:
            step, m, i, j, ldir, lsem = row
            lines.append(
                f"{int(step)},{int(m)},{int(i)},{int(j)},"
                f"{float(ldir)!r},{float(lsem)!r}"
            )
        return lines
