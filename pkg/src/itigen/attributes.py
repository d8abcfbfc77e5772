"""Attribute taxonomy, learnable token table, and prompt composition.

An attribute (e.g. a visual property with several categories) owns one
learnable token block per category: a (token_length, embed_dim) matrix,
zero-initialized. A composed prompt is the base template's rows followed by
the aggregated blocks of one chosen category per attribute. Enumerating one
prompt per combination of categories yields the full prompt set; fixing one
attribute's category selects a conditional subset.

Composition never mutates the template or the table: composed rows are new
tensors, so a table trained under one template can be transplanted under
another at no cost beyond re-encoding.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import (
    ConfigError,
    DimensionError,
    IncompleteTableError,
)

__all__ = [
    "AttributeSpec",
    "AttributeSet",
    "PromptTemplate",
    "InclusiveTokenTable",
    "AggregatedBlock",
    "ComposedPrompt",
    "PromptSet",
    "BASELINE_CATEGORY",
    "aggregate",
    "compose_prompt",
    "enumerate_prompt_set",
    "conditional_subset",
    "transplant",
    "parameter_count",
]

# pseudo-category index for single-category attributes trained against a
# baseline: its token block is a frozen zero matrix
BASELINE_CATEGORY = -1


@dataclass(frozen=True)
class AttributeSpec:
    """One attribute and its ordered category names."""

    name: str
    categories: tuple[str, ...]

    def __post_init__(self):
        if not self.name:
            raise ConfigError("attribute name must be non-empty")
        object.__setattr__(self, "categories", tuple(self.categories))
        if len(self.categories) < 1:
            raise ConfigError(f"attribute {self.name!r} needs at least one category")
        if len(set(self.categories)) != len(self.categories):
            raise ConfigError(f"attribute {self.name!r} has duplicate categories")

    @property
    def size(self) -> int:
        return len(self.categories)


class AttributeSet:
    """Ordered collection of attributes; order defines combination order."""

    def __init__(self, attributes: Sequence[AttributeSpec]):
        attributes = tuple(attributes)
        if not attributes:
            raise ConfigError("need at least one attribute")
        names = [a.name for a in attributes]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate attribute names: {names}")
        self.attributes = attributes
        self._index = {a.name: i for i, a in enumerate(attributes)}

    def __len__(self) -> int:
        return len(self.attributes)

    def __iter__(self) -> Iterator[AttributeSpec]:
        return iter(self.attributes)

    def __getitem__(self, key: int | str) -> AttributeSpec:
        return self.attributes[self.index(key)]

    def index(self, key: int | str) -> int:
        if isinstance(key, str):
            if key not in self._index:
                raise ConfigError(f"unknown attribute {key!r}")
            return self._index[key]
        if not 0 <= key < len(self.attributes):
            raise IndexError(f"attribute index {key} out of range")
        return key

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.attributes)

    @property
    def combination_count(self) -> int:
        n = 1
        for size in self.sizes:
            n *= size
        return n

    def combinations(self) -> Iterator[tuple[int, ...]]:
        """All category-index combinations in lexicographic order."""
        return itertools.product(*(range(size) for size in self.sizes))

    def combination_label(self, combo: Sequence[int]) -> str:
        parts = []
        for spec, k in zip(self.attributes, combo):
            name = "baseline" if k == BASELINE_CATEGORY else spec.categories[k]
            parts.append(f"{spec.name}={name}")
        return ", ".join(parts)

    def to_json_obj(self) -> list[dict]:
        return [
            {"name": a.name, "categories": list(a.categories)} for a in self.attributes
        ]

    @classmethod
    def from_json_obj(cls, obj: Sequence[Mapping]) -> "AttributeSet":
        return cls(
            [AttributeSpec(o["name"], tuple(o["categories"])) for o in obj]
        )

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_json_obj(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AttributeSet)
            and self.to_json_obj() == other.to_json_obj()
        )

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"AttributeSet({[a.name for a in self.attributes]!r}, sizes={self.sizes})"


class PromptTemplate:
    """Frozen embedding rows of the base prompt, plus provenance."""

    def __init__(
        self,
        rows: np.ndarray,
        *,
        source_text: str = "",
        token_ids: Sequence[int] | None = None,
    ):
        rows = np.asarray(rows)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise DimensionError(
                f"template rows must be a non-empty matrix, got shape {rows.shape}"
            )
        if rows.dtype not in (np.float32, np.float64):
            rows = rows.astype(np.float64)
        stored = rows.copy()
        stored.flags.writeable = False
        self.rows = stored
        self.source_text = str(source_text)
        self.token_ids = tuple(int(t) for t in token_ids) if token_ids is not None else None

    @property
    def length(self) -> int:
        return self.rows.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.rows.shape[1]

    @property
    def dtype(self) -> np.dtype:
        return self.rows.dtype

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(str(self.rows.shape).encode())
        digest.update(self.rows.tobytes())
        digest.update(self.source_text.encode())
        return digest.hexdigest()


class InclusiveTokenTable:
    """Zero-initialized learnable token blocks, one per category.

    Blocks are plain numpy state owned by the table; the trainer turns them
    into graph leaves for one attribute at a time and writes updates back,
    which keeps every other attribute's bytes untouched by construction.
    """

    def __init__(
        self,
        attribute_set: AttributeSet,
        token_length: int,
        embed_dim: int,
        dtype=np.float32,
    ):
        if token_length < 1:
            raise ConfigError(f"token_length must be positive, got {token_length}")
        if embed_dim < 1:
            raise ConfigError(f"embed_dim must be positive, got {embed_dim}")
        self.attribute_set = attribute_set
        self.token_length = int(token_length)
        self.embed_dim = int(embed_dim)
        self.dtype = np.dtype(dtype)
        self._blocks: dict[tuple[int, int], np.ndarray] = {}
        for m, spec in enumerate(attribute_set):
            for k in range(spec.size):
                self._blocks[(m, k)] = np.zeros(
                    (self.token_length, self.embed_dim), dtype=self.dtype
                )

    def block(self, attribute: int | str, category: int) -> np.ndarray:
        m = self.attribute_set.index(attribute)
        key = (m, int(category))
        if key not in self._blocks:
            raise IncompleteTableError(
                f"no token block for attribute {m}, category {category}"
            )
        return self._blocks[key]

    def set_block(self, attribute: int | str, category: int, value: np.ndarray) -> None:
        m = self.attribute_set.index(attribute)
        key = (m, int(category))
        if key not in self._blocks:
            raise IncompleteTableError(
                f"no token block for attribute {m}, category {category}"
            )
        value = np.asarray(value, dtype=self.dtype)
        if value.shape != (self.token_length, self.embed_dim):
            raise DimensionError(
                f"block shape {value.shape} != "
                f"{(self.token_length, self.embed_dim)}"
            )
        self._blocks[key] = value.copy()

    def copy(self) -> "InclusiveTokenTable":
        dup = InclusiveTokenTable(
            self.attribute_set, self.token_length, self.embed_dim, self.dtype
        )
        for key, arr in self._blocks.items():
            dup._blocks[key] = arr.copy()
        return dup

    def block_bytes(self, attribute: int | str, category: int) -> bytes:
        return self.block(attribute, category).tobytes()

    def named_blocks(self) -> dict[str, np.ndarray]:
        """Checkpoint-facing view: tokens/{attribute}/{category} -> block."""
        out = {}
        for (m, k), arr in sorted(self._blocks.items()):
            spec = self.attribute_set.attributes[m]
            out[f"tokens/{spec.name}/{spec.categories[k]}"] = arr
        return out

    def parameter_count(self) -> int:
        return parameter_count(self.attribute_set, self.token_length, self.embed_dim)


def parameter_count(attribute_set: AttributeSet, token_length: int, embed_dim: int) -> int:
    """Total learnable scalars: sum over attributes of K * token_length * embed_dim."""
    return sum(size * token_length * embed_dim for size in attribute_set.sizes)


@dataclass
class AggregatedBlock:
    """Result of merging per-attribute blocks into one token span."""

    rows: T.Tensor
    shared_position: bool  # concat mode reuses one positional slot for the span


def aggregate(
    blocks: Sequence[tuple[int, T.Tensor]], mode: str = "sum"
) -> AggregatedBlock:
    """Merge (attribute_index, block) pairs into the prompt's token span.

    Blocks are processed in ascending attribute index whatever order the
    caller supplies, so the result is bitwise identical under permutation.
    ``sum`` adds the blocks elementwise (all must share token_length);
    ``concat`` stacks them, and the composed prompt marks the span as
    sharing a single positional embedding.
    """
    if not blocks:
        raise ConfigError("aggregate needs at least one block")
    indices = [m for m, _ in blocks]
    if len(set(indices)) != len(indices):
        raise ConfigError(f"duplicate attribute indices in aggregate: {indices}")
    ordered = [blk for _, blk in sorted(blocks, key=lambda pair: pair[0])]
    if mode == "sum":
        shape = ordered[0].shape
        for blk in ordered[1:]:
            if blk.shape != shape:
                raise DimensionError(
                    f"sum aggregation needs equal block shapes, got {shape} vs {blk.shape}"
                )
        total = ordered[0]
        for blk in ordered[1:]:
            total = T.add(total, blk)
        return AggregatedBlock(rows=total, shared_position=False)
    if mode == "concat":
        rows = ordered[0] if len(ordered) == 1 else T.concat_rows(ordered)
        return AggregatedBlock(rows=rows, shared_position=True)
    raise ConfigError(f"unknown aggregation mode {mode!r}")


@dataclass
class ComposedPrompt:
    """Template rows followed by the aggregated token span for one combo."""

    combo: tuple[int, ...]
    rows: T.Tensor
    template_length: int
    token_span: int
    aggregation: str
    shared_position: bool
    label: str = ""

    @property
    def matrix(self) -> np.ndarray:
        return self.rows.data

    def encode(self, encoder) -> T.Tensor:
        span = (self.template_length, self.token_span) if self.shared_position else None
        return encoder.encode(self.rows, reuse_position_span=span)


def compose_prompt(
    template: PromptTemplate,
    table: InclusiveTokenTable,
    combo: Sequence[int],
    *,
    mode: str = "sum",
    leaves: Mapping[tuple[int, int], T.Tensor] | None = None,
) -> ComposedPrompt:
    """Build [template rows; aggregated category blocks] for one combination.

    ``leaves`` substitutes graph leaf tensors for specific (attribute,
    category) blocks so gradients can reach them; every other block enters
    the graph as a constant snapshot. Category index -1 stands for the
    baseline pseudo-category and contributes a frozen zero block.
    Neither the template nor the table is mutated.
    """
    combo = tuple(int(k) for k in combo)
    atts = table.attribute_set
    if len(combo) != len(atts):
        raise DimensionError(
            f"combo length {len(combo)} != number of attributes {len(atts)}"
        )
    if template.embed_dim != table.embed_dim:
        raise DimensionError(
            f"template width {template.embed_dim} != table width {table.embed_dim}"
        )
    if np.dtype(template.dtype) != table.dtype:
        raise DimensionError(
            f"template dtype {template.dtype} != table dtype {table.dtype}"
        )
    leaves = leaves or {}
    tagged: list[tuple[int, T.Tensor]] = []
    for m, (spec, k) in enumerate(zip(atts, combo)):
        if k == BASELINE_CATEGORY:
            tagged.append(
                (m, T.constant(
                    np.zeros((table.token_length, table.embed_dim), dtype=table.dtype)
                ))
            )
            continue
        if not 0 <= k < spec.size:
            raise IndexError(
                f"category index {k} out of range for attribute {spec.name!r} "
                f"({spec.size} categories)"
            )
        if (m, k) in leaves:
            tagged.append((m, leaves[(m, k)]))
        else:
            tagged.append((m, T.constant(table.block(m, k))))
    agg = aggregate(tagged, mode)
    rows = T.concat_rows([T.constant(template.rows), agg.rows])
    return ComposedPrompt(
        combo=combo,
        rows=rows,
        template_length=template.length,
        token_span=agg.rows.shape[0],
        aggregation=mode,
        shared_position=agg.shared_position,
        label=atts.combination_label(combo),
    )


class PromptSet:
    """The full prompt set: one composed prompt per category combination."""

    def __init__(
        self,
        template: PromptTemplate,
        table: InclusiveTokenTable,
        prompts: Sequence[ComposedPrompt],
    ):
        self.template = template
        self.table = table
        self.attribute_set = table.attribute_set
        self.prompts = tuple(prompts)
        self._by_combo = {p.combo: p for p in self.prompts}

    def __len__(self) -> int:
        return len(self.prompts)

    def __iter__(self) -> Iterator[ComposedPrompt]:
        return iter(self.prompts)

    def __getitem__(self, combo: Sequence[int]) -> ComposedPrompt:
        return self._by_combo[tuple(combo)]

    @property
    def combos(self) -> tuple[tuple[int, ...], ...]:
        return tuple(p.combo for p in self.prompts)


def enumerate_prompt_set(
    template: PromptTemplate,
    table: InclusiveTokenTable,
    *,
    mode: str = "sum",
    leaves: Mapping[tuple[int, int], T.Tensor] | None = None,
) -> PromptSet:
    """One composed prompt per combination, in lexicographic combo order."""
    prompts = [
        compose_prompt(template, table, combo, mode=mode, leaves=leaves)
        for combo in table.attribute_set.combinations()
    ]
    return PromptSet(template, table, prompts)


def conditional_subset(
    prompt_set: PromptSet, attribute: int | str, category: int
) -> tuple[ComposedPrompt, ...]:
    """Prompts whose combination fixes the given attribute to the category."""
    m = prompt_set.attribute_set.index(attribute)
    spec = prompt_set.attribute_set.attributes[m]
    if not 0 <= int(category) < spec.size:
        raise IndexError(
            f"category index {category} out of range for attribute {spec.name!r}"
        )
    return tuple(p for p in prompt_set.prompts if p.combo[m] == int(category))


def transplant(
    table: InclusiveTokenTable,
    new_template: PromptTemplate,
    *,
    mode: str = "sum",
) -> PromptSet:
    """Reuse a trained table under a different base template.

    Valid whenever the embedding widths match; the table is shared, not
    copied, and remains unmodified.
    """
    if new_template.embed_dim != table.embed_dim:
        raise DimensionError(
            f"template width {new_template.embed_dim} != table width {table.embed_dim}"
        )
    return enumerate_prompt_set(new_template, table, mode=mode)
