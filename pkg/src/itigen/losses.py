"""Direction-alignment and semantic-consistency losses.

For one attribute and a pair of its categories (i, j):

* the image direction is the normalized difference of the minibatch mean
  reference embeddings of i and j;
* the prompt direction is the normalized difference of the mean embeddings
  of the conditional prompt subsets (prompts whose combination fixes the
  attribute to i, respectively j, sharing the same sampled off-attribute
  combinations);
* the direction loss is 1 - <image direction, prompt direction>;
* the semantic loss is a hinge keeping every involved composed prompt
  within a margin of the base template embedding: mean of
  max(0, margin - cos(prompt, base)).

A freshly zero-initialized table makes all composed prompts equal, so the
prompt difference has no direction. ``prompt_direction`` raises by default;
the trainer opts into the epsilon rule (norm < 1e-8: skip normalization and
use the raw difference, whose gradient still breaks the symmetry).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .attributes import (
    BASELINE_CATEGORY,
    AttributeSet,
    InclusiveTokenTable,
    PromptTemplate,
    compose_prompt,
)
from .errors import ConfigError, DegenerateInputError, NumericalError

__all__ = [
    "DEGENERATE_NORM_THRESHOLD",
    "BatchStats",
    "PairRecord",
    "PairLoss",
    "batch_stats",
    "image_direction",
    "off_attribute_combos",
    "prompt_direction",
    "direction_alignment_loss",
    "semantic_consistency_loss",
    "pair_loss",
    "attribute_loss",
]

# below this norm a prompt difference is treated as directionless
DEGENERATE_NORM_THRESHOLD = 1e-8


@dataclass
class BatchStats:
    """Mean reference embedding per category for one attribute's minibatch."""

    attribute: int
    means: dict[int, np.ndarray]
    counts: dict[int, int]

    def categories(self) -> list[int]:
        """Real categories ascending; the baseline pseudo-category last."""
        real = sorted(k for k in self.means if k != BASELINE_CATEGORY)
        if BASELINE_CATEGORY in self.means:
            real.append(BASELINE_CATEGORY)
        return real


def batch_stats(attribute: int, rows_by_category: Mapping[int, np.ndarray]) -> BatchStats:
    if not rows_by_category:
        raise ConfigError("batch_stats needs at least one category")
    means, counts = {}, {}
    for k, rows in rows_by_category.items():
        rows = np.asarray(rows)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ConfigError(f"category {k}: need a non-empty (n, dim) matrix")
        means[int(k)] = rows.mean(axis=0)
        counts[int(k)] = rows.shape[0]
    return BatchStats(attribute=int(attribute), means=means, counts=counts)


def image_direction(stats: BatchStats, i: int, j: int) -> np.ndarray:
    """Unit vector from category j's mean toward category i's mean."""
    diff = stats.means[i] - stats.means[j]
    norm = float(np.linalg.norm(diff))
    if norm < 1e-12:
        raise DegenerateInputError(
            f"reference means for categories {i} and {j} coincide"
        )
    return diff / norm


def off_attribute_combos(
    attribute_set: AttributeSet,
    attribute: int | str,
    *,
    cap: int = 32,
    rng: np.random.Generator | None = None,
) -> list[tuple[int, ...]]:
    """Combinations over every attribute except the trained one.

    Entries are full-length combos with the trained attribute's slot set to
    None (callers fill it per category). At most ``cap`` combos: exhaustive
    lexicographic enumeration when the product space is small enough,
    otherwise ``cap`` distinct combos sampled with ``rng``.
    """
    if cap < 1:
        raise ConfigError(f"subset cap must be positive, got {cap}")
    m = attribute_set.index(attribute)
    other_sizes = [
        spec.size for idx, spec in enumerate(attribute_set) if idx != m
    ]
    total = 1
    for size in other_sizes:
        total *= size

    def decode(flat: int) -> tuple:
        digits = []
        for size in reversed(other_sizes):
            digits.append(flat % size)
            flat //= size
        digits.reverse()
        combo = list(digits)
        combo.insert(m, None)
        return tuple(combo)

    if total <= cap:
        chosen = range(total)
    else:
        if rng is None:
            raise ConfigError(
                f"{total} off-attribute combinations exceed cap {cap}; "
                "an rng is required to subsample"
            )
        chosen = np.sort(rng.choice(total, size=cap, replace=False))
    return [decode(int(c)) for c in chosen]


def _conditional_encodings(
    encoder,
    template: PromptTemplate,
    table: InclusiveTokenTable,
    attribute: int,
    category: int,
    others: Sequence[tuple],
    *,
    mode: str,
    leaves: Mapping[tuple[int, int], T.Tensor] | None,
    memo: dict | None,
) -> list[T.Tensor]:
    out = []
    for slot in others:
        combo = tuple(
            category if value is None else value for value in slot
        )
        key = (combo, mode)
        if memo is not None and key in memo:
            out.append(memo[key])
            continue
        composed = compose_prompt(template, table, combo, mode=mode, leaves=leaves)
        encoded = composed.encode(encoder)
        if memo is not None:
            memo[key] = encoded
        out.append(encoded)
    return out


def _mean_vectors(vectors: Sequence[T.Tensor]) -> T.Tensor:
    if len(vectors) == 1:
        return vectors[0]
    return T.mean_rows(T.stack_rows(vectors))


def prompt_direction(
    encoder,
    template: PromptTemplate,
    table: InclusiveTokenTable,
    attribute: int | str,
    i: int,
    j: int,
    *,
    subset_cap: int = 32,
    rng: np.random.Generator | None = None,
    mode: str = "sum",
    leaves: Mapping[tuple[int, int], T.Tensor] | None = None,
    memo: dict | None = None,
    on_degenerate: str = "raise",
) -> T.Tensor:
    """Normalized difference of conditional mean prompt embeddings (i - j).

    ``on_degenerate`` controls the near-zero-difference case: ``"raise"``
    (default) raises a degenerate-input error, ``"unnormalized"`` returns
    the raw difference so its gradient can break the zero-init symmetry.
    """
    direction, _, _ = _pair_directions(
        encoder, template, table, attribute, i, j,
        subset_cap=subset_cap, rng=rng, mode=mode, leaves=leaves, memo=memo,
        on_degenerate=on_degenerate,
    )
    return direction


def _pair_directions(
    encoder,
    template: PromptTemplate,
    table: InclusiveTokenTable,
    attribute: int | str,
    i: int,
    j: int,
    *,
    subset_cap: int,
    rng: np.random.Generator | None,
    mode: str,
    leaves: Mapping[tuple[int, int], T.Tensor] | None,
    memo: dict | None,
    on_degenerate: str,
) -> tuple[T.Tensor, list[T.Tensor], list[T.Tensor]]:
    if on_degenerate not in ("raise", "unnormalized"):
        raise ConfigError(f"unknown degenerate policy {on_degenerate!r}")
    m = table.attribute_set.index(attribute)
    others = off_attribute_combos(
        table.attribute_set, m, cap=subset_cap, rng=rng
    )
    enc_i = _conditional_encodings(
        encoder, template, table, m, i, others,
        mode=mode, leaves=leaves, memo=memo,
    )
    enc_j = _conditional_encodings(
        encoder, template, table, m, j, others,
        mode=mode, leaves=leaves, memo=memo,
    )
    diff = T.sub(_mean_vectors(enc_i), _mean_vectors(enc_j))
    norm = float(np.linalg.norm(diff.data))
    if norm < DEGENERATE_NORM_THRESHOLD:
        if on_degenerate == "raise":
            raise DegenerateInputError(
                f"conditional prompt means for categories {i} and {j} coincide "
                f"(difference norm {norm:.2e}); the table may be untrained"
            )
        return diff, enc_i, enc_j
    return T.l2_normalize(diff), enc_i, enc_j


def direction_alignment_loss(image_dir: np.ndarray, prompt_dir: T.Tensor) -> T.Tensor:
    """1 - <image direction, prompt direction>; zero when aligned."""
    anchor = T.constant(np.asarray(image_dir), dtype=prompt_dir.dtype)
    return T.add_scalar(T.neg(T.dot(prompt_dir, anchor)), 1.0)


def semantic_consistency_loss(
    embeddings: Sequence[T.Tensor],
    base_embedding: np.ndarray,
    margin: float = 0.8,
) -> T.Tensor:
    """Mean hinge max(0, margin - cos(prompt, base)) over the embeddings.

    Embeddings and the base are unit vectors (encoders normalize), so the
    cosine is a plain dot product.
    """
    if not embeddings:
        raise ConfigError("semantic_consistency_loss needs at least one embedding")
    if not 0.0 <= margin <= 1.0:
        raise ConfigError(f"margin must be in [0, 1], got {margin}")
    base = T.constant(np.asarray(base_embedding), dtype=embeddings[0].dtype)
    total = None
    for emb in embeddings:
        gap = T.relu(T.add_scalar(T.neg(T.dot(emb, base)), margin))
        total = gap if total is None else T.add(total, gap)
    return T.scale(total, 1.0 / len(embeddings))


@dataclass
class PairRecord:
    """Loss components for one category pair at one training step."""

    attribute: int
    category_i: int
    category_j: int
    direction_loss: float
    semantic_loss: float
    degenerate: bool


@dataclass
class PairLoss:
    total: T.Tensor
    record: PairRecord


def pair_loss(
    encoder,
    template: PromptTemplate,
    table: InclusiveTokenTable,
    stats: BatchStats,
    i: int,
    j: int,
    *,
    margin: float = 0.8,
    base_embedding: np.ndarray,
    subset_cap: int = 32,
    rng: np.random.Generator | None = None,
    mode: str = "sum",
    leaves: Mapping[tuple[int, int], T.Tensor] | None = None,
    memo: dict | None = None,
    on_degenerate: str = "raise",
) -> PairLoss:
    """Direction alignment plus semantic consistency for one category pair."""
    m = table.attribute_set.index(stats.attribute)
    direction, enc_i, enc_j = _pair_directions(
        encoder, template, table, m, i, j,
        subset_cap=subset_cap, rng=rng, mode=mode, leaves=leaves, memo=memo,
        on_degenerate=on_degenerate,
    )
    degenerate = float(np.linalg.norm(direction.data)) < 0.5  # raw diff kept
    image_dir = image_direction(stats, i, j)
    ldir = direction_alignment_loss(image_dir, direction)
    lsem = semantic_consistency_loss(
        list(enc_i) + list(enc_j), base_embedding, margin
    )
    total = T.add(ldir, lsem)
    record = PairRecord(
        attribute=m,
        category_i=i,
        category_j=j,
        direction_loss=ldir.item(),
        semantic_loss=lsem.item(),
        degenerate=degenerate,
    )
    return PairLoss(total=total, record=record)


def attribute_loss(
    encoder,
    template: PromptTemplate,
    table: InclusiveTokenTable,
    stats: BatchStats,
    *,
    margin: float = 0.8,
    base_embedding: np.ndarray,
    subset_cap: int = 32,
    rng: np.random.Generator | None = None,
    mode: str = "sum",
    leaves: Mapping[tuple[int, int], T.Tensor] | None = None,
    on_degenerate: str = "raise",
) -> tuple[T.Tensor, list[PairRecord]]:
    """Sum of pair losses over all category pairs of one attribute.

    Pairs iterate in ascending category order (baseline pseudo-category
    last), and prompt encodings are memoized across pairs within the call,
    so the reduction order and the graph are deterministic.
    """
    categories = stats.categories()
    if len(categories) < 2:
        raise ConfigError(
            "attribute_loss needs at least two categories "
            "(or one category plus baseline references)"
        )
    memo: dict = {}
    total = None
    records = []
    for i, j in itertools.combinations(categories, 2):
        part = pair_loss(
            encoder, template, table, stats, i, j,
            margin=margin, base_embedding=base_embedding,
            subset_cap=subset_cap, rng=rng, mode=mode, leaves=leaves,
            memo=memo, on_degenerate=on_degenerate,
        )
        total = part.total if total is None else T.add(total, part.total)
        records.append(part.record)
    if not np.isfinite(total.data):
        raise NumericalError("attribute loss is not finite")
    return total, records
