"""Acceptance gate: one pass/fail line per release criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict
lines. Every criterion states its tolerance inline; the asserts use the
same numbers, so a red test is a genuine miss, not a loose bound.

Frozen expectations for the synthetic benchmark (seed 2, 16 dimensions,
category sizes (2, 3), 25 unit references per category at noise 0.05,
default training settings): worst pair alignment 0.981, worst base
cosine 0.864, joint divergence 0.0 nats. The margins below leave honest
headroom under those measurements.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

import itigen
import itigen.tensor as T
from itigen import (
    AttributeSet,
    AttributeSpec,
    Checkpoint,
    InclusiveTokenTable,
    PromptTemplate,
    SamplingPlan,
    TrainConfig,
    aggregate,
    attribute_loss,
    batch_stats,
    conditional_subset,
    evaluate,
    kl_discrepancy,
    parameter_count,
    prompt_anchors,
    sample_minibatch,
    train,
    train_step,
    transplant,
)
from itigen.bundle import read_bundle, write_bundle
from itigen.errors import CorruptBundleError

from _oracles import fd_gradients, max_rel_error
from conftest import base_cosines, build_problem, pair_alignments


def verdict(number: int, ok: bool, text: str) -> None:
    label = "PASS" if ok else "FAIL"
    print(f"[{label}] criterion {number}: {text}")
    assert ok, f"criterion {number} failed: {text}"


def small_problem(rng):
    """Tiny two-attribute toy setup for exhaustive gradient checks."""
    aset = AttributeSet([
        AttributeSpec("attr0", ("first", "second")),
        AttributeSpec("attr1", ("first", "second")),
    ])
    table = InclusiveTokenTable(aset, 2, 6, dtype=np.float64)
    for m in range(2):
        for k in range(2):
            table.set_block(m, k, 0.3 * rng.normal(size=(2, 6)))
    template = PromptTemplate(rng.normal(size=(2, 6)), source_text="base")
    projection, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    encoder = itigen.ToyLinearEncoder(projection)
    return aset, table, template, encoder


def test_criterion_01_gradients_match_finite_differences():
    started = time.monotonic()
    rng = np.random.default_rng(13)
    aset, table, template, encoder = small_problem(rng)
    refs = rng.normal(size=(2, 3, 6))
    refs /= np.linalg.norm(refs, axis=2, keepdims=True)
    stats = batch_stats(0, {0: refs[0], 1: refs[1]})
    base = encoder.encode(T.constant(template.rows)).data.copy()

    def build_loss(b0, b1):
        leaves = {(0, 0): T.parameter(b0), (0, 1): T.parameter(b1)}
        total, _ = attribute_loss(
            encoder, template, table, stats,
            base_embedding=base, leaves=leaves,
        )
        return total

    blocks = [table.block(0, 0).copy(), table.block(0, 1).copy()]
    loss = build_loss(*blocks)
    T.backward(loss)
    leaves = sorted(
        (t for t in T.Graph.trace(loss).nodes if t._parents == ()),
        key=lambda t: t._uid,
    )
    analytic = [leaf.grad for leaf in leaves]
    numeric = fd_gradients(lambda *arrs: build_loss(*arrs).item(), blocks)
    error = max_rel_error(analytic, numeric)
    elapsed = time.monotonic() - started
    verdict(
        1, error < 1e-6 and elapsed < 30.0,
        f"combined loss gradient vs central differences: relative error "
        f"{error:.3e} < 1e-6 in {elapsed:.1f}s < 30s",
    )


def test_criterion_02_loss_values_match_closed_forms():
    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([0.0, 1.0, 0.0])
    failures = []
    for image_dir, prompt_dir, expected in [
        (e1, e1, 0.0), (e1, e2, 1.0), (e1, -e1, 2.0),
    ]:
        got = itigen.direction_alignment_loss(
            image_dir, T.constant(prompt_dir)
        ).item()
        if abs(got - expected) > 1e-12:
            failures.append(f"direction {expected}: got {got!r}")
    aligned = itigen.semantic_consistency_loss(
        [T.constant(e1)], e1, margin=0.8
    ).item()
    orthogonal = itigen.semantic_consistency_loss(
        [T.constant(e2)], e1, margin=0.8
    ).item()
    if abs(aligned - 0.0) > 1e-12:
        failures.append(f"semantic aligned: got {aligned!r}")
    if abs(orthogonal - 0.8) > 1e-12:
        failures.append(f"semantic orthogonal: got {orthogonal!r}")
    verdict(
        2, not failures,
        "direction losses {0, 1, 2} and semantic losses {0, 0.8} exact to "
        f"1e-12 ({'; '.join(failures) or 'all five match'})",
    )


def test_criterion_03_prompt_set_algebra():
    rng = np.random.default_rng(3)
    template = PromptTemplate(rng.normal(size=(2, 8)), source_text="base")
    failures = []
    for sizes, expected in [((2,), 2), ((2, 6), 12), ((2, 6, 9), 108)]:
        aset = AttributeSet([
            AttributeSpec(f"attr{m}", tuple(f"c{k}" for k in range(n)))
            for m, n in enumerate(sizes)
        ])
        table = InclusiveTokenTable(aset, 3, 8, dtype=np.float64)
        pset = transplant(table, template)
        if len(pset) != expected:
            failures.append(f"sizes {sizes}: {len(pset)} prompts")
        for m, spec in enumerate(aset):
            subsets = [conditional_subset(pset, m, k) for k in range(spec.size)]
            seen = sorted(p.combo for subset in subsets for p in subset)
            if seen != sorted(pset.combos):
                failures.append(f"sizes {sizes}: attribute {m} not a partition")

    blocks = [
        (m, T.constant(0.1 * rng.normal(size=(3, 8)))) for m in range(4)
    ]
    forward = aggregate(blocks).rows.data.tobytes()
    reversed_sum = aggregate(blocks[::-1]).rows.data.tobytes()
    if forward != reversed_sum:
        failures.append("sum aggregation depends on block order")
    verdict(
        3, not failures,
        "cardinalities 2/12/108, conditional partitions, and bitwise "
        f"order-invariant sums ({'; '.join(failures) or 'all hold'})",
    )


def test_criterion_04_parameter_count():
    binary = AttributeSet([AttributeSpec("attr0", ("first", "second"))])
    count = parameter_count(binary, 3, 768)
    verdict(
        4, count == 4608,
        f"one binary attribute at q=3, width 768 trains {count} == 4608 "
        "parameters",
    )


def test_criterion_05_updates_touch_only_the_scheduled_attribute():
    rng = np.random.default_rng(0)
    aset, refs, encoder, template, _ = build_problem()
    config = TrainConfig()
    table = InclusiveTokenTable(
        aset, config.token_length, encoder.embed_dim, dtype=template.dtype
    )
    base = encoder.encode(T.constant(template.rows)).data.copy()
    for m, spec in enumerate(aset):
        for k in range(spec.size):
            table.set_block(
                m, k,
                0.1 * rng.normal(size=(config.token_length, encoder.embed_dim)),
            )
    clean = True
    for trial in range(100):
        m = int(rng.integers(len(aset)))
        spec = aset[m]
        others = {
            (idx, k): table.block_bytes(idx, k)
            for idx, other in enumerate(aset) if idx != m
            for k in range(other.size)
        }
        rows_by_category = {
            k: sample_minibatch(refs[spec.name].rows(c), config.batch_size, rng)
            for k, c in enumerate(spec.categories)
        }
        train_step(
            config, encoder, template, table, m, rows_by_category,
            base_embedding=base,
        )
        if any(table.block_bytes(*key) != blob for key, blob in others.items()):
            clean = False
            break
    verdict(
        5, clean,
        "100 randomized single iterations left every off-attribute block "
        "byte-identical",
    )


def test_criterion_06_synthetic_end_to_end():
    started = time.monotonic()
    aset, refs, encoder, template, centers = build_problem()
    gram = np.abs(centers @ centers.T - np.eye(len(centers)))
    assert float(gram.max()) <= 0.3, "fixture centers are not well separated"

    checkpoint = train(TrainConfig(), encoder, aset, refs, template)
    alignments = pair_alignments(checkpoint, refs)
    bases = base_cosines(checkpoint)
    anchors = prompt_anchors(checkpoint.prompt_set(), encoder)
    report = evaluate(checkpoint, anchors, sigma=0.05, mode="centered")
    elapsed = time.monotonic() - started

    ok = (
        min(alignments) > 0.95
        and min(bases) >= 0.75
        and report.total == 600
        and report.joint_kl < 0.02
        and elapsed < 120.0
    )
    verdict(
        6, ok,
        f"16-dim (2, 3)-category run: min pair alignment "
        f"{min(alignments):.4f} > 0.95, min base cosine {min(bases):.4f} "
        f">= 0.75, joint divergence over {report.total} proxies "
        f"{report.joint_kl:.6f} < 0.02 nats, in {elapsed:.1f}s < 120s",
    )


def test_criterion_07_reference_count_invariance():
    rng = np.random.default_rng(7)
    aset, refs, encoder, template, _ = build_problem()
    spec = aset[0]
    rows = {
        k: refs[spec.name].rows(c) for k, c in enumerate(spec.categories)
    }
    quadrupled = {k: np.repeat(r, 4, axis=0) for k, r in rows.items()}
    base = encoder.encode(T.constant(template.rows)).data.copy()
    config = TrainConfig()
    table = InclusiveTokenTable(
        aset, config.token_length, encoder.embed_dim, dtype=template.dtype
    )
    for m, sp in enumerate(aset):
        for k in range(sp.size):
            table.set_block(
                m, k,
                0.1 * rng.normal(size=(config.token_length, encoder.embed_dim)),
            )

    def direction_losses(rows_by_category):
        _, records = attribute_loss(
            encoder, template, table,
            batch_stats(0, rows_by_category), base_embedding=base,
        )
        return [r.direction_loss for r in records]

    plain = direction_losses(rows)
    duplicated = direction_losses(quadrupled)
    drift = max(abs(a - b) for a, b in zip(plain, duplicated))

    skew_aset, skew_refs, skew_enc, skew_template, _ = build_problem(
        ref_counts={("attr0", "first"): 45, ("attr0", "second"): 5}
    )
    checkpoint = train(
        TrainConfig(), skew_enc, skew_aset, skew_refs, skew_template
    )
    anchors = prompt_anchors(checkpoint.prompt_set(), skew_enc)
    report = evaluate(checkpoint, anchors, sigma=0.05, mode="centered")
    verdict(
        7, drift <= 1e-12 and report.joint_kl < 0.05,
        f"full-batch direction losses drift {drift:.3e} <= 1e-12 under 4x "
        f"duplication; 90/10 references still audit at "
        f"{report.joint_kl:.6f} < 0.05 nats",
    )


def test_criterion_08_divergence_oracles():
    skewed = kl_discrepancy((150, 50), (0.5, 0.5))
    collapsed = kl_discrepancy((200, 0), (0.5, 0.5))
    ok = (
        abs(skewed - 0.130812) < 1e-6
        and abs(collapsed - math.log(2.0)) < 1e-6
    )
    verdict(
        8, ok,
        f"kl((150, 50) | uniform) = {skewed:.6f} (0.130812 +- 1e-6) and "
        f"kl((200, 0) | uniform) = {collapsed:.6f} (ln 2 +- 1e-6)",
    )


def test_criterion_09_determinism(tmp_path):
    paths = []
    reports = []
    for i in range(2):
        aset, refs, encoder, template, _ = build_problem()
        checkpoint = train(TrainConfig(), encoder, aset, refs, template)
        path = tmp_path / f"run{i}.itb"
        checkpoint.save(path)
        paths.append(path)
        anchors = prompt_anchors(checkpoint.prompt_set(), encoder)
        reports.append(
            evaluate(checkpoint, anchors, sigma=0.05, mode="centered").to_json()
        )
    same_bytes = paths[0].read_bytes() == paths[1].read_bytes()
    same_report = reports[0] == reports[1]
    verdict(
        9, same_bytes and same_report,
        "independent retrains write byte-identical checkpoints "
        f"({same_bytes}) and identical audit reports ({same_report})",
    )


def test_criterion_10_file_formats_and_standalone_imports(tmp_path):
    tensors = {
        "f32": np.arange(6, dtype=np.float32).reshape(2, 3),
        "f64": np.linspace(0, 1, 5),
        "i64": np.arange(4, dtype=np.int64),
    }
    path = tmp_path / "round.itb"
    write_bundle(path, tensors, {"purpose": "acceptance"})
    loaded = read_bundle(path)
    exact = all(
        np.array_equal(loaded.tensors[k], v) and loaded.tensors[k].dtype == v.dtype
        for k, v in tensors.items()
    )

    blob = bytearray(path.read_bytes())
    blob[-6] ^= 0x40
    corrupt = tmp_path / "corrupt.itb"
    corrupt.write_bytes(bytes(blob))
    caught = False
    try:
        read_bundle(corrupt)
    except CorruptBundleError:
        caught = True

    source_dir = Path(itigen.__file__).parent
    heavy = [
        f"{py.name}: {line.strip()}"
        for py in sorted(source_dir.glob("*.py"))
        for line in py.read_text().splitlines()
        if line.strip().startswith(("import torch", "from torch",
                                    "import transformers", "from transformers"))
    ]
    loaded_heavy = [m for m in ("torch", "transformers") if m in sys.modules]
    verdict(
        10, exact and caught and not heavy and not loaded_heavy,
        f"bundles round-trip exactly ({exact}), single-byte corruption is "
        f"caught ({caught}), and the package never imports the export "
        f"toolchain ({heavy or loaded_heavy or 'verified'})",
    )
