"""Sampling plans, proxy generation, classification, distribution audits.

The audit pipeline stands in for an actual image generator: each composed
prompt's embedding plus spherical gaussian noise acts as a proxy sample,
proxies are classified against per-category anchor embeddings, and the
resulting counts are compared to the plan's target distribution with a KL
divergence (natural log, empirical distribution first, 0 * ln 0 = 0).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .attributes import PromptSet, conditional_subset
from .errors import (
    ConfigError,
    DataError,
    DegenerateInputError,
    UndefinedDivergenceError,
)

__all__ = [
    "SamplingPlan",
    "ProxyGeneration",
    "plan_samples",
    "quota_counts",
    "proxy_generate",
    "classify",
    "kl_discrepancy",
    "prompt_anchors",
    "evaluate",
    "AttributeAudit",
    "DiscrepancyReport",
]


@dataclass(frozen=True)
class SamplingPlan:
    """How many samples to draw and the target distribution over combos.

    ``distribution`` lists one probability per combination in lexicographic
    order; None means uniform. ``exact_quota`` assigns floor(total * p) to
    every combination and the leftovers to the largest fractional parts
    (ties to the lexicographically first combination), then shuffles the
    order; ``multinomial`` draws independently.
    """

    total: int
    distribution: tuple[float, ...] | None = None
    seed: int = 0
    method: str = "exact_quota"

    def __post_init__(self):
        if self.total < 1:
            raise ConfigError(f"plan total must be positive, got {self.total}")
        if self.method not in ("exact_quota", "multinomial"):
            raise ConfigError(f"unknown assignment method {self.method!r}")
        if self.distribution is not None:
            probs = tuple(float(p) for p in self.distribution)
            object.__setattr__(self, "distribution", probs)
            if any(p < 0 for p in probs):
                raise ConfigError("plan probabilities must be non-negative")
            if abs(sum(probs) - 1.0) > 1e-9:
                raise ConfigError(
                    f"plan probabilities sum to {sum(probs)!r}, expected 1"
                )

    def resolve(self, n_combos: int) -> np.ndarray:
        if self.distribution is None:
            return np.full(n_combos, 1.0 / n_combos)
        if len(self.distribution) != n_combos:
            raise ConfigError(
                f"plan lists {len(self.distribution)} probabilities for "
                f"{n_combos} combinations"
            )
        return np.asarray(self.distribution, dtype=np.float64)


def plan_samples(
    plan: SamplingPlan, combos: Sequence[tuple[int, ...]]
) -> list[tuple[int, ...]]:
    """The planned sequence of combinations, length ``plan.total``."""
    combos = list(combos)
    rng = np.random.default_rng([plan.seed, 3])
    if plan.method == "exact_quota":
        counts = quota_counts(plan, len(combos))
        expanded: list[tuple[int, ...]] = []
        for combo, count in zip(combos, counts):
            expanded.extend([combo] * int(count))
        rng.shuffle(expanded)
        return expanded
    draws = rng.choice(len(combos), size=plan.total, p=plan.resolve(len(combos)))
    return [combos[int(d)] for d in draws]


def quota_counts(plan: SamplingPlan, n_combos: int) -> np.ndarray:
    """Exact per-combination quotas (before shuffling); exact_quota only."""
    if plan.method != "exact_quota":
        raise ConfigError("quota_counts is defined for the exact_quota method")
    probs = plan.resolve(n_combos)
    scaled = plan.total * probs
    base = np.floor(scaled).astype(np.int64)
    remainder = plan.total - int(base.sum())
    fractional = scaled - base
    order = sorted(range(n_combos), key=lambda c: (-fractional[c], c))
    for c in order[:remainder]:
        base[c] += 1
    return base


@dataclass(frozen=True)
class ProxyGeneration:
    """One stand-in image sample: a unit vector near a prompt embedding.

    Plays the role of a generated image in the audit pipeline; the real
    generator is out of scope, so classification runs on these directly.
    """

    embedding: np.ndarray
    sigma: float
    label: str = ""
    seed: int | None = None

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1:
            raise ConfigError(f"proxy embedding must be a vector, got {emb.shape}")
        if abs(np.linalg.norm(emb) - 1.0) > 1e-6:
            raise DataError("proxy embedding must be unit-norm")
        emb.flags.writeable = False
        object.__setattr__(self, "embedding", emb)


def proxy_generate(
    embedding: np.ndarray,
    sigma: float,
    rng: np.random.Generator,
    *,
    label: str = "",
    seed: int | None = None,
) -> ProxyGeneration:
    """Proxy sample near the embedding: normalize(embedding + sigma * noise)."""
    if sigma < 0:
        raise ConfigError(f"noise scale must be >= 0, got {sigma}")
    embedding = np.asarray(embedding, dtype=np.float64)
    noised = embedding + sigma * rng.standard_normal(embedding.shape[0])
    norm = np.linalg.norm(noised)
    if norm < 1e-12:
        raise DegenerateInputError("noised embedding collapsed to zero")
    return ProxyGeneration(noised / norm, float(sigma), label=label, seed=seed)


def classify(
    embedding: np.ndarray, anchors: np.ndarray, mode: str = "plain"
) -> int:
    """Index of the anchor with the highest cosine similarity.

    ``centered`` subtracts the anchor mean from the embedding and every
    anchor first, which sharpens decisions when anchors share a dominant
    common component. Ties resolve to the lowest index.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    embedding = np.asarray(embedding, dtype=np.float64)
    if anchors.ndim != 2 or embedding.ndim != 1 or anchors.shape[1] != embedding.shape[0]:
        raise ConfigError(
            f"classify: embedding {embedding.shape} vs anchors {anchors.shape}"
        )
    if mode not in ("plain", "centered"):
        raise ConfigError(f"unknown classifier mode {mode!r}")
    if mode == "centered":
        center = anchors.mean(axis=0)
        anchors = anchors - center
        embedding = embedding - center
    emb_norm = np.linalg.norm(embedding)
    anchor_norms = np.linalg.norm(anchors, axis=1)
    if emb_norm < 1e-12 or np.any(anchor_norms < 1e-12):
        raise DegenerateInputError(
            "classification is undefined for zero-length embeddings or anchors"
        )
    scores = (anchors @ embedding) / (anchor_norms * emb_norm)
    return int(np.argmax(scores))


def kl_discrepancy(counts: Sequence[int], target: Sequence[float]) -> float:
    """KL divergence (nats) of the empirical counts from the target.

    Zero counts contribute nothing (0 * ln 0 = 0); a positive count on a
    zero-probability target bin makes the divergence undefined.
    """
    counts = np.asarray(counts, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if counts.shape != target.shape or counts.ndim != 1:
        raise ConfigError(
            f"kl_discrepancy: counts {counts.shape} vs target {target.shape}"
        )
    if np.any(counts < 0) or np.any(target < 0):
        raise ConfigError("counts and target probabilities must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise ConfigError("kl_discrepancy needs at least one sample")
    if abs(target.sum() - 1.0) > 1e-9:
        raise ConfigError(f"target probabilities sum to {target.sum()!r}")
    probs = counts / total
    out = 0.0
    for p, t in zip(probs, target):
        if p == 0.0:
            continue
        if t == 0.0:
            raise UndefinedDivergenceError(
                "empirical mass on a zero-probability target bin"
            )
        out += float(p * math.log(p / t))
    return out


def prompt_anchors(prompt_set: PromptSet, encoder) -> dict[str, np.ndarray]:
    """Per-attribute anchor matrices: conditional mean prompt embeddings.

    Anchor k of attribute m is the mean embedding of every composed prompt
    whose combination fixes m to k (not re-normalized).
    """
    embeddings = {
        p.combo: p.encode(encoder).data for p in prompt_set
    }
    anchors = {}
    for m, spec in enumerate(prompt_set.attribute_set):
        rows = []
        for k in range(spec.size):
            members = conditional_subset(prompt_set, m, k)
            rows.append(
                np.mean([embeddings[p.combo] for p in members], axis=0)
            )
        anchors[spec.name] = np.stack(rows)
    return anchors


@dataclass
class AttributeAudit:
    """Observed vs. target category distribution for one attribute."""

    name: str
    categories: tuple[str, ...]
    counts: list[int]
    empirical: list[float]
    target: list[float]
    kl: float


@dataclass
class DiscrepancyReport:
    """Joint and per-attribute audit of classified proxy samples."""

    total: int
    sigma: float
    classifier_mode: str
    combo_labels: list[str]
    joint_counts: list[int]
    joint_target: list[float]
    joint_kl: float
    attributes: list[AttributeAudit] = field(default_factory=list)

    def to_json_obj(self) -> dict:
        return {
            "total": self.total,
            "sigma": self.sigma,
            "classifier_mode": self.classifier_mode,
            "joint": {
                "labels": self.combo_labels,
                "counts": self.joint_counts,
                "target": self.joint_target,
                "kl": self.joint_kl,
            },
            "attributes": [
                {
                    "name": a.name,
                    "categories": list(a.categories),
                    "counts": a.counts,
                    "empirical": a.empirical,
                    "target": a.target,
                    "kl": a.kl,
                }
                for a in self.attributes
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=2, sort_keys=True)

    def table_text(self) -> str:
        """Per-attribute counts and divergences as an aligned text table."""
        lines = [
            f"samples: {self.total}   noise sigma: {self.sigma}   "
            f"classifier: {self.classifier_mode}",
            f"joint KL: {self.joint_kl:.6f} nats",
        ]
        for a in self.attributes:
            lines.append(f"{a.name}  (KL {a.kl:.6f} nats)")
            width = max(len(c) for c in a.categories)
            for cat, count, emp, tgt in zip(
                a.categories, a.counts, a.empirical, a.target
            ):
                lines.append(
                    f"  {cat.ljust(width)}  {count:6d}  "
                    f"observed {emp:7.2%}  target {tgt:7.2%}"
                )
        return "\n".join(lines)

    def histogram_csv(self) -> str:
        """Per-category counts as comma-separated rows for external plotting."""
        lines = ["attribute,category,count,empirical,target"]
        for a in self.attributes:
            for cat, count, emp, tgt in zip(
                a.categories, a.counts, a.empirical, a.target
            ):
                lines.append(f"{a.name},{cat},{count},{float(emp)!r},{float(tgt)!r}")
        return "\n".join(lines) + "\n"

    def ascii_histogram(self, width: int = 40) -> str:
        """Bar chart of joint counts, one line per combination."""
        lines = []
        peak = max(self.joint_counts) if self.joint_counts else 0
        label_width = max((len(l) for l in self.combo_labels), default=0)
        for label, count, target in zip(
            self.combo_labels, self.joint_counts, self.joint_target
        ):
            bar = "#" * (round(width * count / peak) if peak else 0)
            share = count / self.total if self.total else 0.0
            lines.append(
                f"{label.ljust(label_width)} |{bar.ljust(width)}| "
                f"{count:6d}  {share:7.2%}  (target {target:7.2%})"
            )
        lines.append(f"joint KL vs target: {self.joint_kl:.6f} nats")
        return "\n".join(lines)


def evaluate(
    checkpoint,
    anchors: Mapping[str, np.ndarray],
    *,
    plan: SamplingPlan | None = None,
    sigma: float = 0.05,
    encoder=None,
    mode: str = "centered",
    proxy_seed: int | None = None,
) -> DiscrepancyReport:
    """Audit a checkpoint: plan, proxy-generate, classify, compare.

    Defaults: a uniform exact-quota plan of 100 samples per combination
    seeded from the checkpoint's training seed, and proxy noise drawn from
    a stream derived from the same seed.
    """
    encoder = encoder if encoder is not None else checkpoint.require_encoder()
    prompt_set = checkpoint.prompt_set()
    attribute_set = prompt_set.attribute_set
    combos = list(prompt_set.combos)
    if plan is None:
        plan = SamplingPlan(
            total=100 * len(combos), seed=checkpoint.config.seed
        )
    probs = plan.resolve(len(combos))

    for spec in attribute_set:
        if spec.name not in anchors:
            raise ConfigError(f"no anchors for attribute {spec.name!r}")
        matrix = np.asarray(anchors[spec.name])
        if matrix.shape != (spec.size, encoder.joint_dim):
            raise DataError(
                f"anchors for {spec.name!r}: expected "
                f"{(spec.size, encoder.joint_dim)}, got {matrix.shape}"
            )

    embeddings = {p.combo: p.encode(encoder).data for p in prompt_set}
    samples = plan_samples(plan, combos)
    rng = np.random.default_rng(
        [plan.seed if proxy_seed is None else proxy_seed, 4]
    )

    combo_index = {combo: c for c, combo in enumerate(combos)}
    joint_counts = [0] * len(combos)
    per_attribute = [[0] * spec.size for spec in attribute_set]
    for combo in samples:
        proxy = proxy_generate(
            embeddings[combo], sigma, rng,
            label=attribute_set.combination_label(combo), seed=plan.seed,
        )
        predicted = []
        for m, spec in enumerate(attribute_set):
            k = classify(proxy.embedding, anchors[spec.name], mode)
            per_attribute[m][k] += 1
            predicted.append(k)
        joint_counts[combo_index[tuple(predicted)]] += 1

    audits = []
    for m, spec in enumerate(attribute_set):
        marginal = np.zeros(spec.size)
        for c, combo in enumerate(combos):
            marginal[combo[m]] += probs[c]
        audits.append(
            AttributeAudit(
                name=spec.name,
                categories=spec.categories,
                counts=list(per_attribute[m]),
                empirical=[c / plan.total for c in per_attribute[m]],
                target=list(marginal),
                kl=kl_discrepancy(per_attribute[m], marginal),
            )
        )
    return DiscrepancyReport(
        total=plan.total,
        sigma=float(sigma),
        classifier_mode=mode,
        combo_labels=[attribute_set.combination_label(c) for c in combos],
        joint_counts=joint_counts,
        joint_target=[float(p) for p in probs],
        joint_kl=kl_discrepancy(joint_counts, probs),
        attributes=audits,
    )
