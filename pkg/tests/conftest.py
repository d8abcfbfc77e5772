"""Shared synthetic fixtures: a separable toy problem the suite trains on.

Cluster centers are orthonormal (pairwise cosine 0), reference rows are
renormalized noisy copies, the encoder is an orthogonal projection, and the
template is a few sub-unit rows so composed prompts have headroom to move.
The default seed and template scale were chosen once by running the
benchmark across a small grid and are frozen here; tests assert against
thresholds, not against the grid search.
"""

import numpy as np
import pytest

import itigen

CATEGORY_NAMES = ("first", "second", "third", "fourth", "fifth", "sixth")


def cluster_centers(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    basis, _ = np.linalg.qr(rng.normal(size=(dim, count)))
    return basis.T


def build_problem(
    seed: int = 2,
    dim: int = 16,
    sizes: tuple[int, ...] = (2, 3),
    n_refs: int = 25,
    noise: float = 0.05,
    template_scale: float = 0.6,
    ref_counts: dict | None = None,
):
    """Attribute set, reference sources, toy encoder, template, centers.

    ``ref_counts`` overrides per-category row counts, keyed by
    (attribute name, category name); used by the imbalance checks.
    """
    rng = np.random.default_rng(seed)
    total = sum(sizes)
    centers = cluster_centers(rng, dim, total)
    attrs = []
    refs = {}
    offset = 0
    for m, size in enumerate(sizes):
        cats = tuple(CATEGORY_NAMES[:size])
        name = f"attr{m}"
        attrs.append(itigen.AttributeSpec(name, cats))
        rows_by_cat = {}
        for i, cat in enumerate(cats):
            count = n_refs
            if ref_counts is not None:
                count = ref_counts.get((name, cat), n_refs)
            rows = centers[offset + i] + noise * rng.normal(size=(count, dim))
            rows /= np.linalg.norm(rows, axis=1, keepdims=True)
            rows_by_cat[cat] = rows
        refs[name] = itigen.ImageEmbeddingSource(rows_by_cat)
        offset += size
    attribute_set = itigen.AttributeSet(attrs)

    projection, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    encoder = itigen.ToyLinearEncoder(projection)
    t_rows = rng.normal(size=(4, dim))
    t_rows /= np.linalg.norm(t_rows, axis=1, keepdims=True)
    template = itigen.PromptTemplate(
        t_rows * template_scale, source_text="a synthetic base prompt"
    )
    return attribute_set, refs, encoder, template, centers


def pair_alignments(checkpoint, references) -> list[float]:
    """Alignment cosine of every category pair, full-batch image directions."""
    attribute_set = checkpoint.attribute_set
    encoder = checkpoint.require_encoder()
    out = []
    for m, spec in enumerate(attribute_set):
        full = {
            k: references[spec.name].rows(c)
            for k, c in enumerate(spec.categories)
        }
        stats = itigen.batch_stats(m, full)
        for i in range(spec.size):
            for j in range(i + 1, spec.size):
                img_dir = itigen.image_direction(stats, i, j)
                p_dir = itigen.prompt_direction(
                    encoder, checkpoint.template, checkpoint.table, m, i, j
                ).data
                out.append(float(img_dir @ p_dir))
    return out


def base_cosines(checkpoint) -> list[float]:
    """Cosine of every composed prompt's embedding to the base embedding."""
    encoder = checkpoint.require_encoder()
    base = encoder.encode(
        itigen.tensor.constant(checkpoint.template.rows)
    ).data
    return [
        float(p.encode(encoder).data @ base) for p in checkpoint.prompt_set()
    ]


@pytest.fixture(scope="session")
def toy_problem():
    return build_problem()


@pytest.fixture(scope="session")
def trained_checkpoint(toy_problem):
    attribute_set, refs, encoder, template, _ = toy_problem
    config = itigen.TrainConfig()
    return itigen.train(config, encoder, attribute_set, refs, template)
