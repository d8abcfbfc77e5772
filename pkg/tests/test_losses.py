"""Loss oracles and gradient cross-checks.

Hand-computed values asserted at 1e-12:
  direction loss        0 / 1 / 2 on aligned / orthogonal / antiparallel
  semantic hinge        0 at cos=1, margin at cos=0 (margin 0.8)
  semantic mean         (0 + 0.8 + 1.8) / 3 over {base, orthogonal, -base}
Gradients of the composed attribute loss are checked against central
finite differences through the toy encoder at a non-degenerate point.
"""

import numpy as np
import pytest

import itigen
from itigen import tensor as T
from itigen.attributes import (
    AttributeSet,
    AttributeSpec,
    InclusiveTokenTable,
    PromptTemplate,
)
from itigen.errors import ConfigError, DegenerateInputError, NumericalError
from itigen.losses import (
    DEGENERATE_NORM_THRESHOLD,
    attribute_loss,
    batch_stats,
    direction_alignment_loss,
    image_direction,
    off_attribute_combos,
    pair_loss,
    prompt_direction,
    semantic_consistency_loss,
)

from _oracles import fd_gradients, max_rel_error


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def make_problem(rng, sizes=(2, 2), dim=6, template_rows=2, token_length=2):
    """Small two-attribute setup with random (non-degenerate) blocks."""
    names = ("first", "second", "third")
    aset = AttributeSet(
        [AttributeSpec(f"attr{m}", names[:k]) for m, k in enumerate(sizes)]
    )
    table = InclusiveTokenTable(aset, token_length, dim, dtype=np.float64)
    for m, spec in enumerate(aset):
        for k in range(spec.size):
            table.set_block(m, k, 0.3 * rng.normal(size=(token_length, dim)))
    template = PromptTemplate(
        rng.normal(size=(template_rows, dim)), source_text="base"
    )
    projection, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    encoder = itigen.ToyLinearEncoder(projection)
    return aset, table, template, encoder


class TestDirectionLossOracles:
    def test_aligned_directions_cost_zero(self):
        d = unit([1.0, 2.0, -1.0])
        loss = direction_alignment_loss(d, T.constant(d))
        assert abs(loss.item()) < 1e-12

    def test_orthogonal_directions_cost_one(self):
        loss = direction_alignment_loss(
            np.array([1.0, 0.0]), T.constant(np.array([0.0, 1.0]))
        )
        assert abs(loss.item() - 1.0) < 1e-12

    def test_antiparallel_directions_cost_two(self):
        d = unit([3.0, -4.0])
        loss = direction_alignment_loss(d, T.constant(-d))
        assert abs(loss.item() - 2.0) < 1e-12


class TestSemanticLossOracles:
    base = unit([1.0, 0.0, 0.0])

    def test_identical_embedding_costs_zero(self):
        loss = semantic_consistency_loss(
            [T.constant(self.base)], self.base, margin=0.8
        )
        assert abs(loss.item()) < 1e-12

    def test_orthogonal_embedding_costs_the_margin(self):
        loss = semantic_consistency_loss(
            [T.constant(unit([0.0, 1.0, 0.0]))], self.base, margin=0.8
        )
        assert abs(loss.item() - 0.8) < 1e-12

    def test_mean_over_mixed_embeddings(self):
        embeddings = [
            T.constant(self.base),                  # hinge 0.0
            T.constant(unit([0.0, 1.0, 0.0])),      # hinge 0.8
            T.constant(-self.base),                 # hinge 1.8
        ]
        loss = semantic_consistency_loss(embeddings, self.base, margin=0.8)
        assert abs(loss.item() - (0.8 + 1.8) / 3.0) < 1e-12

    def test_hinge_is_inactive_above_the_margin(self):
        near = unit([1.0, 0.2, 0.0])  # cos ~ 0.98 > 0.8
        loss = semantic_consistency_loss([T.constant(near)], self.base)
        assert loss.item() == 0.0

    def test_margin_outside_unit_interval_rejected(self):
        for margin in (-0.1, 1.1):
            with pytest.raises(ConfigError):
                semantic_consistency_loss(
                    [T.constant(self.base)], self.base, margin=margin
                )

    def test_empty_embedding_list_rejected(self):
        with pytest.raises(ConfigError):
            semantic_consistency_loss([], self.base)


class TestBatchStats:
    def test_means_and_counts(self):
        rows = {
            0: np.array([[1.0, 0.0], [0.0, 1.0]]),
            1: np.array([[2.0, 2.0]]),
        }
        stats = batch_stats(0, rows)
        assert np.allclose(stats.means[0], [0.5, 0.5])
        assert np.allclose(stats.means[1], [2.0, 2.0])
        assert stats.counts == {0: 2, 1: 1}
        assert stats.categories() == [0, 1]

    def test_baseline_category_sorts_last(self):
        stats = batch_stats(
            0, {-1: np.ones((1, 2)), 0: np.ones((1, 2)), 1: np.ones((1, 2))}
        )
        assert stats.categories() == [0, 1, -1]

    def test_empty_category_rejected(self):
        with pytest.raises(ConfigError):
            batch_stats(0, {0: np.zeros((0, 2))})


class TestImageDirection:
    def test_unit_norm_and_orientation(self):
        stats = batch_stats(
            0, {0: np.array([[2.0, 0.0]]), 1: np.array([[0.0, 0.0]])}
        )
        direction = image_direction(stats, 0, 1)
        assert np.allclose(direction, [1.0, 0.0])
        assert abs(np.linalg.norm(direction) - 1.0) < 1e-12

    def test_antisymmetry(self):
        rng = np.random.default_rng(0)
        stats = batch_stats(
            0, {0: rng.normal(size=(4, 5)), 1: rng.normal(size=(3, 5))}
        )
        assert np.allclose(
            image_direction(stats, 0, 1), -image_direction(stats, 1, 0)
        )

    def test_coincident_means_raise(self):
        rows = np.array([[1.0, 0.0], [0.0, 1.0]])
        stats = batch_stats(0, {0: rows, 1: rows.copy()})
        with pytest.raises(DegenerateInputError):
            image_direction(stats, 0, 1)

    def test_duplicating_a_category_four_times_changes_nothing(self):
        rng = np.random.default_rng(1)
        rows_a = rng.normal(size=(5, 8))
        rows_b = rng.normal(size=(7, 8))
        plain = batch_stats(0, {0: rows_a, 1: rows_b})
        duplicated = batch_stats(0, {0: np.tile(rows_a, (4, 1)), 1: rows_b})
        assert np.max(np.abs(
            image_direction(plain, 0, 1) - image_direction(duplicated, 0, 1)
        )) < 1e-12


class TestOffAttributeCombos:
    def setup_method(self):
        names = ("a", "b", "c", "d", "e", "f", "g")
        self.aset = AttributeSet([
            AttributeSpec("attr0", names[:2]),
            AttributeSpec("attr1", names[:5]),
            AttributeSpec("attr2", names[:7]),
        ])

    def test_exhaustive_when_space_is_small(self):
        combos = off_attribute_combos(self.aset, 2, cap=32)  # 2*5 = 10
        assert len(combos) == 10
        assert all(c[2] is None for c in combos)
        assert combos == sorted(combos, key=lambda c: (c[0], c[1]))
        assert len(set(combos)) == 10

    def test_trained_slot_position_follows_the_attribute(self):
        combos = off_attribute_combos(self.aset, 0, cap=64)  # 5*7 = 35
        assert all(c[0] is None for c in combos)
        assert len(combos) == 35

    def test_sampling_kicks_in_above_the_cap(self):
        rng = np.random.default_rng(3)
        combos = off_attribute_combos(self.aset, 0, cap=8, rng=rng)
        assert len(combos) == 8
        assert len(set(combos)) == 8
        for c in combos:
            assert c[0] is None
            assert 0 <= c[1] < 5 and 0 <= c[2] < 7

    def test_sampling_without_an_rng_is_an_error(self):
        with pytest.raises(ConfigError):
            off_attribute_combos(self.aset, 0, cap=8)

    def test_nonpositive_cap_rejected(self):
        with pytest.raises(ConfigError):
            off_attribute_combos(self.aset, 0, cap=0)


class TestPromptDirection:
    def test_zero_table_raises_by_default(self):
        rng = np.random.default_rng(5)
        aset, table, template, encoder = make_problem(rng)
        zero = InclusiveTokenTable(aset, 2, 6, dtype=np.float64)
        with pytest.raises(DegenerateInputError):
            prompt_direction(encoder, template, zero, 0, 0, 1)

    def test_unnormalized_policy_returns_the_raw_difference(self):
        rng = np.random.default_rng(5)
        aset, table, template, encoder = make_problem(rng)
        zero = InclusiveTokenTable(aset, 2, 6, dtype=np.float64)
        direction = prompt_direction(
            encoder, template, zero, 0, 0, 1, on_degenerate="unnormalized"
        )
        assert float(np.linalg.norm(direction.data)) < DEGENERATE_NORM_THRESHOLD

    def test_trained_table_gives_a_unit_direction(self):
        rng = np.random.default_rng(6)
        aset, table, template, encoder = make_problem(rng)
        direction = prompt_direction(encoder, template, table, 0, 0, 1)
        assert abs(np.linalg.norm(direction.data) - 1.0) < 1e-9

    def test_unknown_policy_rejected(self):
        rng = np.random.default_rng(6)
        aset, table, template, encoder = make_problem(rng)
        with pytest.raises(ConfigError):
            prompt_direction(
                encoder, template, table, 0, 0, 1, on_degenerate="clip"
            )


class TestPairAndAttributeLoss:
    def make_stats(self, rng, dim=6, sizes=(2, 2)):
        return batch_stats(0, {
            k: unit_rows(rng, 4, dim) for k in range(sizes[0])
        })

    def test_total_is_the_sum_of_pair_records(self):
        rng = np.random.default_rng(7)
        aset, table, template, encoder = make_problem(rng, sizes=(3, 2))
        stats = batch_stats(0, {k: unit_rows(rng, 4, 6) for k in range(3)})
        base = encoder.encode(T.constant(template.rows)).data
        total, records = attribute_loss(
            encoder, template, table, stats, base_embedding=base
        )
        assert [(r.category_i, r.category_j) for r in records] == [
            (0, 1), (0, 2), (1, 2)
        ]
        assert abs(
            total.item()
            - sum(r.direction_loss + r.semantic_loss for r in records)
        ) < 1e-12

    def test_pair_loss_matches_its_parts(self):
        rng = np.random.default_rng(8)
        aset, table, template, encoder = make_problem(rng)
        stats = self.make_stats(rng)
        base = encoder.encode(T.constant(template.rows)).data
        part = pair_loss(
            encoder, template, table, stats, 0, 1, base_embedding=base
        )
        image_dir = image_direction(stats, 0, 1)
        p_dir = prompt_direction(encoder, template, table, 0, 0, 1)
        expected_dir = 1.0 - float(image_dir @ p_dir.data)
        assert abs(part.record.direction_loss - expected_dir) < 1e-12
        assert abs(
            part.total.item()
            - (part.record.direction_loss + part.record.semantic_loss)
        ) < 1e-12
        assert not part.record.degenerate

    def test_degenerate_pair_is_flagged(self):
        rng = np.random.default_rng(9)
        aset, table, template, encoder = make_problem(rng)
        zero = InclusiveTokenTable(aset, 2, 6, dtype=np.float64)
        stats = self.make_stats(rng)
        base = encoder.encode(T.constant(template.rows)).data
        part = pair_loss(
            encoder, template, zero, stats, 0, 1,
            base_embedding=base, on_degenerate="unnormalized",
        )
        assert part.record.degenerate

    def test_single_category_without_baseline_rejected(self):
        rng = np.random.default_rng(10)
        aset, table, template, encoder = make_problem(rng)
        stats = batch_stats(0, {0: unit_rows(rng, 4, 6)})
        base = encoder.encode(T.constant(template.rows)).data
        with pytest.raises(ConfigError):
            attribute_loss(
                encoder, template, table, stats, base_embedding=base
            )

    def test_non_finite_loss_is_a_numerical_error(self):
        rng = np.random.default_rng(11)
        aset, table, template, encoder = make_problem(rng)
        stats = self.make_stats(rng)
        bad_base = np.full(6, np.nan)
        with pytest.raises(NumericalError):
            attribute_loss(
                encoder, template, table, stats, base_embedding=bad_base
            )

    def test_identical_inputs_give_identical_losses(self):
        losses = []
        for _ in range(2):
            rng = np.random.default_rng(12)
            aset, table, template, encoder = make_problem(rng)
            stats = self.make_stats(rng)
            base = encoder.encode(T.constant(template.rows)).data
            total, _ = attribute_loss(
                encoder, template, table, stats, base_embedding=base,
                subset_cap=2, rng=np.random.default_rng(99),
            )
            losses.append(total.item())
        assert losses[0] == losses[1]


def unit_rows(rng, n, dim) -> np.ndarray:
    rows = rng.normal(size=(n, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


class TestGradientsAgainstFiniteDifferences:
    def test_attribute_loss_gradient(self):
        rng = np.random.default_rng(13)
        aset, table, template, encoder = make_problem(rng)
        stats = batch_stats(0, {0: unit_rows(rng, 3, 6), 1: unit_rows(rng, 3, 6)})
        base = encoder.encode(T.constant(template.rows)).data.copy()

        def build_loss(b0, b1):
            leaves = {(0, 0): T.parameter(b0), (0, 1): T.parameter(b1)}
            total, _ = attribute_loss(
                encoder, template, table, stats,
                base_embedding=base, leaves=leaves,
            )
            return total

        b0 = table.block(0, 0).copy()
        b1 = table.block(0, 1).copy()
        loss = build_loss(b0, b1)
        T.backward(loss)
        graph_leaves = [
            t for t in itigen.tensor.Graph.trace(loss).nodes
            if t._parents == ()
        ]
        analytic = [leaf.grad for leaf in sorted(graph_leaves, key=lambda t: t._uid)]
        numeric = fd_gradients(
            lambda *arrays: build_loss(*arrays).item(), [b0, b1]
        )
        assert max_rel_error(analytic, numeric) < 1e-6

    def test_semantic_loss_gradient_through_the_encoder(self):
        rng = np.random.default_rng(14)
        aset, table, template, encoder = make_problem(rng)
        base = encoder.encode(T.constant(template.rows)).data.copy()

        def build_loss(block):
            leaves = {(0, 0): T.parameter(block)}
            prompt = itigen.compose_prompt(
                template, table, (0, 0), leaves=leaves
            )
            return semantic_consistency_loss(
                [prompt.encode(encoder)], base, margin=0.95
            )

        block = table.block(0, 0).copy()
        loss = build_loss(block)
        T.backward(loss)
        leaf = next(
            t for t in itigen.tensor.Graph.trace(loss).nodes
            if t._parents == ()
        )
        numeric = fd_gradients(
            lambda b: build_loss(b).item(), [block]
        )
        assert max_rel_error([leaf.grad], numeric) < 1e-6

    def test_gradient_reaches_only_the_trained_attribute(self):
        rng = np.random.default_rng(15)
        aset, table, template, encoder = make_problem(rng)
        stats = batch_stats(0, {0: unit_rows(rng, 3, 6), 1: unit_rows(rng, 3, 6)})
        base = encoder.encode(T.constant(template.rows)).data
        before = {
            (1, k): table.block_bytes(1, k) for k in range(aset[1].size)
        }
        leaves = {
            (0, 0): T.parameter(table.block(0, 0)),
            (0, 1): T.parameter(table.block(0, 1)),
        }
        total, _ = attribute_loss(
            encoder, template, table, stats,
            base_embedding=base, leaves=leaves,
        )
        T.backward(total)
        assert leaves[(0, 0)].grad is not None
        assert leaves[(0, 1)].grad is not None
        # attr1 blocks entered the graph as constants and kept their bytes
        for key, blob in before.items():
            assert table.block_bytes(*key) == blob
