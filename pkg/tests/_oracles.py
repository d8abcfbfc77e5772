"""Independent numerical oracles shared across the test suite.

These deliberately avoid the package's autodiff engine so every claim is
checked by a second route: central finite differences for gradients and
plain-loop numpy reimplementations for forward values.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


def fd_gradients(
    build_loss: Callable[..., float],
    arrays: Sequence[np.ndarray],
    h: float = 1e-6,
) -> list[np.ndarray]:
    """Central-difference gradients of ``build_loss(*arrays)``.

    ``build_loss`` must rebuild its computation from the raw numpy arrays on
    every call (the arrays are perturbed in place, one coordinate at a time).
    """
    grads = []
    for arr in arrays:
        if arr.dtype != np.float64:
            raise AssertionError("finite differences need float64 inputs")
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        flat_grad = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = build_loss(*arrays)
            flat[i] = orig - h
            minus = build_loss(*arrays)
            flat[i] = orig
            flat_grad[i] = (plus - minus) / (2.0 * h)
        grads.append(grad)
    return grads


def max_rel_error(
    analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]
) -> float:
    """Largest absolute deviation relative to the largest numeric coordinate.

    A global (not per-coordinate) denominator keeps near-zero gradient
    entries from blowing up the ratio while still catching any coordinate
    that disagrees at the scale of the gradient.
    """
    a = np.concatenate([x.reshape(-1) for x in analytic])
    n = np.concatenate([x.reshape(-1) for x in numeric])
    return float(np.max(np.abs(a - n)) / (np.max(np.abs(n)) + 1e-12))


def reference_causal_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray
) -> np.ndarray:
    """Scalar-loop attention used as the oracle for the fused op."""
    length, head_dim = q.shape
    out = np.zeros_like(v)
    for i in range(length):
        scores = []
        for j in range(i + 1):
            scores.append(float(q[i] @ k[j]) / math.sqrt(head_dim))
        m = max(scores)
        weights = [math.exp(s - m) for s in scores]
        total = sum(weights)
        for j in range(i + 1):
            out[i] += (weights[j] / total) * v[j]
    return out


def reference_layer_norm(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        row = x[i]
        mu = row.mean()
        var = ((row - mu) ** 2).mean()
        out[i] = gain * (row - mu) / math.sqrt(var + eps) + bias
    return out


def reference_kl(counts: Sequence[int], target: Sequence[float]) -> float:
    """KL divergence (nats) of the empirical distribution from the target."""
    counts = np.asarray(counts, dtype=np.float64)
    probs = counts / counts.sum()
    total = 0.0
    for p, t in zip(probs, target):
        if p > 0.0:
            total += float(p * math.log(p / t))
    return total


def reference_gelu(x: np.ndarray) -> np.ndarray:
    """Elementwise x * Phi(x) via math.erf (independent of scipy)."""
    out = np.zeros_like(x)
    flat_in, flat_out = x.reshape(-1), out.reshape(-1)
    for i in range(flat_in.size):
        v = float(flat_in[i])
        flat_out[i] = 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))
    return out


def reference_text_encoder(
    tensors: dict,
    metadata: dict,
    rows: np.ndarray,
    reuse_position_span: tuple[int, int] | None = None,
) -> np.ndarray:
    """Plain-numpy forward pass over bundle-named transformer weights.

    Mirrors the contract: sequence [BOS, rows, EOS] plus positional rows
    (a reused span maps every spanned prompt row to the span's first
    position), pre-norm causal blocks, final layer norm, EOS pooling,
    projection, l2 normalization.
    """
    tok = tensors["token_embedding"].astype(np.float64)
    pos = tensors["positional_embedding"].astype(np.float64)
    rows = rows.astype(np.float64)
    n = rows.shape[0]
    seq = np.vstack([tok[metadata["bos_token_id"]], rows,
                     tok[metadata["eos_token_id"]]])
    position_ids = list(range(n + 2))
    if reuse_position_span is not None:
        start, count = reuse_position_span
        for offset in range(count):
            position_ids[1 + start + offset] = 1 + start
    x = seq + pos[position_ids]

    heads = int(metadata["num_heads"])
    head_dim = x.shape[1] // heads
    for i in range(int(metadata["num_layers"])):
        p = f"blocks.{i}."
        h = reference_layer_norm(
            x, tensors[p + "ln1.weight"], tensors[p + "ln1.bias"]
        )
        q = h @ tensors[p + "attn.q.weight"] + tensors[p + "attn.q.bias"]
        k = h @ tensors[p + "attn.k.weight"] + tensors[p + "attn.k.bias"]
        v = h @ tensors[p + "attn.v.weight"] + tensors[p + "attn.v.bias"]
        att = np.concatenate(
            [
                reference_causal_attention(
                    q[:, j * head_dim:(j + 1) * head_dim],
                    k[:, j * head_dim:(j + 1) * head_dim],
                    v[:, j * head_dim:(j + 1) * head_dim],
                )
                for j in range(heads)
            ],
            axis=1,
        )
        x = x + att @ tensors[p + "attn.out.weight"] + tensors[p + "attn.out.bias"]
        h2 = reference_layer_norm(
            x, tensors[p + "ln2.weight"], tensors[p + "ln2.bias"]
        )
        m = reference_gelu(
            h2 @ tensors[p + "mlp.fc1.weight"] + tensors[p + "mlp.fc1.bias"]
        )
        x = x + m @ tensors[p + "mlp.fc2.weight"] + tensors[p + "mlp.fc2.bias"]

    x = reference_layer_norm(
        x, tensors["ln_final.weight"], tensors["ln_final.bias"]
    )
    projected = x[n + 1] @ tensors["text_projection"]
    return projected / np.linalg.norm(projected)
