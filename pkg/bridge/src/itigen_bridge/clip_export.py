"""Text-tower export: weights, metadata, and cross-checking fixtures.

The consumer applies every linear layer as ``x @ W`` with weights stored
input-major, so each torch ``nn.Linear`` weight (out_features,
in_features) is transposed on the way out. Embedding tables, layer-norm
parameters, and biases keep their layout.

Alongside the weights we emit a fixture bundle of (token ids, reference
embedding) pairs computed by the source model itself. A reimplementation
that loads the exported weights can replay the token ids and compare
embeddings; agreement there certifies the whole serialization chain.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .bundle_io import write_bundle
from .errors import ManifestError, UnsupportedModelError
from .manifest import ExportManifest

__all__ = [
    "load_text_model",
    "tokenizer_fingerprint",
    "text_encoder_tensors",
    "text_encoder_metadata",
    "reference_embedding",
    "generate_fixture_cases",
    "export_text_encoder",
]


def load_text_model(source):
    """Load a CLIP-architecture text tower and, when present, its tokenizer."""
    from transformers import AutoTokenizer, CLIPTextModelWithProjection

    try:
        model = CLIPTextModelWithProjection.from_pretrained(source)
    except (OSError, ValueError, KeyError) as exc:
        raise UnsupportedModelError(
            f"{source}: not a loadable CLIP text model ({exc})"
        ) from exc
    config = model.config
    if getattr(config, "hidden_act", None) != "gelu":
        raise UnsupportedModelError(
            f"{source}: activation {config.hidden_act!r} is not the exact "
            "erf gelu the consumer implements"
        )
    if config.intermediate_size != 4 * config.hidden_size:
        raise UnsupportedModelError(
            f"{source}: mlp width {config.intermediate_size} != "
            f"4 x {config.hidden_size}"
        )
    if config.hidden_size % config.num_attention_heads != 0:
        raise UnsupportedModelError(
            f"{source}: width {config.hidden_size} not divisible by "
            f"{config.num_attention_heads} heads"
        )
    tokenizer = None
    try:
        tokenizer = AutoTokenizer.from_pretrained(source)
    except (OSError, ValueError, KeyError):
        pass
    return model.eval(), tokenizer


def tokenizer_fingerprint(tokenizer) -> str:
    """Stable 16-hex-digit digest of the tokenizer's vocabulary."""
    vocab = json.dumps(sorted(tokenizer.get_vocab().items()))
    return hashlib.sha256(vocab.encode("utf-8")).hexdigest()[:16]


def _np(tensor: torch.Tensor) -> np.ndarray:
    return tensor.detach().cpu().numpy().astype(np.float32)


def text_encoder_tensors(model) -> dict[str, np.ndarray]:
    """State dict renamed and re-oriented to the consumer's contract."""
    sd = model.state_dict()
    out = {
        "token_embedding": _np(
            sd["text_model.embeddings.token_embedding.weight"]
        ),
        "positional_embedding": _np(
            sd["text_model.embeddings.position_embedding.weight"]
        ),
        "ln_final.weight": _np(sd["text_model.final_layer_norm.weight"]),
        "ln_final.bias": _np(sd["text_model.final_layer_norm.bias"]),
        "text_projection": _np(sd["text_projection.weight"].T),
    }
    linear = {
        "attn.q": "self_attn.q_proj", "attn.k": "self_attn.k_proj",
        "attn.v": "self_attn.v_proj", "attn.out": "self_attn.out_proj",
        "mlp.fc1": "mlp.fc1", "mlp.fc2": "mlp.fc2",
    }
    for i in range(model.config.num_hidden_layers):
        hf = f"text_model.encoder.layers.{i}"
        out[f"blocks.{i}.ln1.weight"] = _np(sd[f"{hf}.layer_norm1.weight"])
        out[f"blocks.{i}.ln1.bias"] = _np(sd[f"{hf}.layer_norm1.bias"])
        out[f"blocks.{i}.ln2.weight"] = _np(sd[f"{hf}.layer_norm2.weight"])
        out[f"blocks.{i}.ln2.bias"] = _np(sd[f"{hf}.layer_norm2.bias"])
        for ours, theirs in linear.items():
            out[f"blocks.{i}.{ours}.weight"] = _np(sd[f"{hf}.{theirs}.weight"].T)
            out[f"blocks.{i}.{ours}.bias"] = _np(sd[f"{hf}.{theirs}.bias"])
    return out


def text_encoder_metadata(model, fingerprint: str, source: str) -> dict:
    config = model.config
    return {
        "format": "text-encoder",
        "version": 1,
        "width": config.hidden_size,
        "joint_dim": config.projection_dim,
        "num_layers": config.num_hidden_layers,
        "num_heads": config.num_attention_heads,
        "vocab_size": config.vocab_size,
        "context_length": config.max_position_embeddings,
        "bos_token_id": config.bos_token_id,
        "eos_token_id": config.eos_token_id,
        "activation": "gelu",
        "source_model": source,
        "tokenizer_fingerprint": fingerprint,
    }


def reference_embedding(model, token_ids) -> np.ndarray:
    """Unit joint-space embedding of one already-delimited sequence."""
    ids = torch.tensor([list(token_ids)], dtype=torch.long)
    with torch.inference_mode():
        embeds = model(input_ids=ids).text_embeds[0]
    vec = _np(embeds)
    return vec / np.linalg.norm(vec)


def generate_fixture_cases(model, count: int, max_length: int, seed: int):
    """Seeded (token ids, reference embedding) pairs, bos/eos included."""
    config = model.config
    if max_length > config.max_position_embeddings:
        raise ManifestError(
            f"fixture max_length {max_length} exceeds the model context "
            f"{config.max_position_embeddings}"
        )
    special = {config.bos_token_id, config.eos_token_id}
    ordinary = [t for t in range(config.vocab_size) if t not in special]
    cases = []
    for index in range(count):
        rng = np.random.default_rng([seed, index])
        interior = int(rng.integers(1, max_length - 1))
        ids = (
            [config.bos_token_id]
            + [int(t) for t in rng.choice(ordinary, size=interior)]
            + [config.eos_token_id]
        )
        cases.append((ids, reference_embedding(model, ids)))
    return cases


def export_text_encoder(manifest: ExportManifest) -> tuple[Path, Path]:
    """Write the weights bundle and the fixture bundle; returns both paths."""
    if manifest.encoder_out is None or manifest.fixtures_out is None:
        raise ManifestError(
            "manifest outputs must name both 'encoder' and 'fixtures' paths"
        )
    model, tokenizer = load_text_model(manifest.source_path())
    fingerprint = tokenizer_fingerprint(tokenizer) if tokenizer else ""
    if manifest.tokenizer_fingerprint and fingerprint and (
        manifest.tokenizer_fingerprint != fingerprint
    ):
        raise ManifestError(
            f"tokenizer fingerprint mismatch: manifest declares "
            f"{manifest.tokenizer_fingerprint}, computed {fingerprint}"
        )
    fingerprint = fingerprint or manifest.tokenizer_fingerprint

    manifest.encoder_out.parent.mkdir(parents=True, exist_ok=True)
    write_bundle(
        manifest.encoder_out,
        text_encoder_tensors(model),
        text_encoder_metadata(model, fingerprint, manifest.source),
    )

    cases = generate_fixture_cases(
        model,
        count=int(manifest.fixtures["count"]),
        max_length=int(manifest.fixtures["max_length"]),
        seed=manifest.seed,
    )
    tensors = {}
    for i, (ids, embedding) in enumerate(cases):
        tensors[f"cases/{i:03d}/token_ids"] = np.asarray(ids, dtype=np.int64)
        tensors[f"cases/{i:03d}/embedding"] = embedding
    manifest.fixtures_out.parent.mkdir(parents=True, exist_ok=True)
    write_bundle(
        manifest.fixtures_out,
        tensors,
        {
            "format": "encoder-fixtures",
            "version": 1,
            "count": len(cases),
            "seed": manifest.seed,
            "source_model": manifest.source,
            "tokenizer_fingerprint": fingerprint,
        },
    )
    return manifest.encoder_out, manifest.fixtures_out
