"""Walkthrough: teach a prompt two appearance categories from references.

Everything here is synthetic so the script runs in about a second with no
model downloads: reference "image" embeddings are noisy copies of two unit
centers, and the text encoder is a fixed orthogonal projection. The point
is the mechanics, not the pixels:

1. build a template prompt and per-category reference embeddings,
2. train one token block per category so prompt differences line up with
   reference differences,
3. check alignment and semantic drift,
4. plan a balanced batch and audit what proxies actually land on.

Run:  python3 demos/binary_attribute_walkthrough.py
"""

import numpy as np

import itigen
import itigen.tensor as T


def make_references(rng, centers, per_category, noise):
    rows = {}
    for name, center in centers.items():
        noisy = center + noise * rng.normal(size=(per_category, center.size))
        rows[name] = noisy / np.linalg.norm(noisy, axis=1, keepdims=True)
    return itigen.ImageEmbeddingSource(rows)


def main():
    rng = np.random.default_rng(7)
    dim = 16

    print("== setup ==")
    basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    centers = {"glasses": basis[:, 0], "no_glasses": basis[:, 1]}
    refs = make_references(rng, centers, per_category=25, noise=0.05)
    print(f"references: 25 unit rows per category in {dim} dimensions")

    attribute_set = itigen.AttributeSet([
        itigen.AttributeSpec("eyewear", ("glasses", "no_glasses")),
    ])
    template = itigen.PromptTemplate(
        0.6 * basis[:, 4:8].T, source_text="a headshot of a person"
    )
    encoder = itigen.ToyLinearEncoder(np.linalg.qr(
        rng.normal(size=(dim, dim)))[0])
    config = itigen.TrainConfig()
    print(f"training config: {config.epochs} epochs, batch "
          f"{config.batch_size}, {config.token_length} tokens per category")

    print("\n== training ==")
    checkpoint = itigen.train(
        config, encoder, attribute_set, {"eyewear": refs}, template
    )
    first = checkpoint.history[:2, 4].mean()
    last = checkpoint.history[-2:, 4].mean()
    print(f"{checkpoint.steps} iterations; mean direction loss "
          f"{first:.4f} -> {last:.4f}")

    print("\n== geometry after training ==")
    prompt_set = checkpoint.prompt_set()
    stats = itigen.batch_stats(0, {
        0: refs.rows("glasses"), 1: refs.rows("no_glasses"),
    })
    image_dir = itigen.image_direction(stats, 0, 1)
    prompt_dir = itigen.prompt_direction(
        encoder, template, checkpoint.table, 0, 0, 1
    )
    alignment = float(image_dir @ prompt_dir.data)
    print(f"reference direction vs prompt direction: cosine {alignment:.4f}")
    base = encoder.encode(T.constant(template.rows)).data
    for prompt in prompt_set:
        drift = float(base @ prompt.encode(encoder).data)
        print(f"  prompt {prompt.label!r}: cosine to base template {drift:.4f}")

    print("\n== balanced sampling audit ==")
    anchors = itigen.prompt_anchors(prompt_set, encoder)
    report = itigen.evaluate(checkpoint, anchors, sigma=0.05)
    print(report.table_text())
    print(report.ascii_histogram())


if __name__ == "__main__":
    main()
