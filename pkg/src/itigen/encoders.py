"""Text encoders mapping token-embedding rows into the joint embedding space.

Two implementations share one interface:

* ToyLinearEncoder -- mean-pool, project, normalize. Fast, analytically
  tractable (its input gradient has a closed form used for cross-checks).
* TransformerTextEncoder -- a causal pre-norm transformer with learned
  positional embeddings, final layer norm, end-of-sequence pooling and a
  linear projection, i.e. the standard contrastive text-tower layout.

Both are frozen: their weights are constants in the autodiff graph, and
gradients flow only through the injected prompt rows.

Weight bundles for the transformer use this naming contract (all linear
weights stored input-major, shape (in_features, out_features), applied as
``x @ W`` -- exporters from column-major frameworks must transpose):

    token_embedding            (vocab_size, width)
    positional_embedding       (context_length, width)
    blocks.{i}.ln1.weight/.bias
    blocks.{i}.attn.q.weight/.bias   (same for k, v, out)
    blocks.{i}.ln2.weight/.bias
    blocks.{i}.mlp.fc1.weight/.bias  (same for fc2)
    ln_final.weight/.bias
    text_projection            (width, joint_dim)

Required metadata keys: format="text-encoder", version=1, width, joint_dim,
num_layers, num_heads, vocab_size, context_length, bos_token_id,
eos_token_id, activation="gelu" (the exact erf form).
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import CapacityError, DataError, DimensionError, SchemaError

__all__ = [
    "TextEncoder",
    "ToyLinearEncoder",
    "TransformerTextEncoder",
    "ImageEmbeddingSource",
    "TRANSFORMER_METADATA_KEYS",
]


class TextEncoder(abc.ABC):
    """Frozen map from a (rows, width) prompt matrix to a unit vector."""

    embed_dim: int
    joint_dim: int
    max_sequence_length: int

    def check_capacity(self, rows: int) -> None:
        """Composed rows plus the two sequence delimiters must fit."""
        if rows + 2 > self.max_sequence_length:
            raise CapacityError(
                f"{rows} prompt rows + 2 delimiters exceed the encoder's "
                f"maximum sequence length {self.max_sequence_length}"
            )

    @abc.abstractmethod
    def encode(
        self, rows: T.Tensor, *, reuse_position_span: tuple[int, int] | None = None
    ) -> T.Tensor:
        """Unit vector in the joint space; differentiable w.r.t. ``rows``.

        ``reuse_position_span=(start, count)`` makes ``count`` rows starting
        at row ``start`` share the positional embedding of position
        ``start`` (used by concatenation-style prompt aggregation).
        Encoders without positional state ignore it.
        """


class ToyLinearEncoder(TextEncoder):
    """Mean-pool the rows, apply a fixed projection, l2-normalize.

    encode(X) = normalize(W @ mean_rows(X)). Deliberately simple so tests
    can cross-check the autodiff engine against the closed-form gradient.
    """

    def __init__(self, projection: np.ndarray, max_sequence_length: int = 1024):
        projection = np.asarray(projection)
        if projection.dtype not in (np.float32, np.float64):
            projection = projection.astype(np.float64)
        if projection.ndim != 2:
            raise DimensionError("projection must be (joint_dim, embed_dim)")
        self.joint_dim, self.embed_dim = projection.shape
        self.max_sequence_length = int(max_sequence_length)
        self._projection = T.constant(projection)

    @property
    def projection(self) -> np.ndarray:
        return self._projection.data

    def encode(
        self, rows: T.Tensor, *, reuse_position_span: tuple[int, int] | None = None
    ) -> T.Tensor:
        if rows.ndim != 2 or rows.shape[1] != self.embed_dim:
            raise DimensionError(
                f"expected rows of width {self.embed_dim}, got shape {rows.shape}"
            )
        self.check_capacity(rows.shape[0])
        return T.l2_normalize(T.matvec(self._projection, T.mean_rows(rows)))

    def input_gradient(self, rows: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Closed-form d(upstream . encode(rows)) / d rows for cross-checks."""
        n = rows.shape[0]
        w = self._projection.data
        z = w @ rows.mean(axis=0)
        norm = np.linalg.norm(z)
        y = z / norm
        dz = (upstream - y * (y @ upstream)) / norm
        du = w.T @ dz
        return np.tile(du / n, (n, 1))


@dataclass
class _BlockWeights:
    ln1_gain: T.Tensor
    ln1_bias: T.Tensor
    q_weight: T.Tensor
    q_bias: T.Tensor
    k_weight: T.Tensor
    k_bias: T.Tensor
    v_weight: T.Tensor
    v_bias: T.Tensor
    out_weight: T.Tensor
    out_bias: T.Tensor
    ln2_gain: T.Tensor
    ln2_bias: T.Tensor
    fc1_weight: T.Tensor
    fc1_bias: T.Tensor
    fc2_weight: T.Tensor
    fc2_bias: T.Tensor


TRANSFORMER_METADATA_KEYS = (
    "width",
    "joint_dim",
    "num_layers",
    "num_heads",
    "vocab_size",
    "context_length",
    "bos_token_id",
    "eos_token_id",
    "activation",
)


def _block_tensor_names(index: int) -> dict[str, tuple[str, ...]]:
    base = f"blocks.{index}"
    return {
        "ln1_gain": (f"{base}.ln1.weight",),
        "ln1_bias": (f"{base}.ln1.bias",),
        "q_weight": (f"{base}.attn.q.weight",),
        "q_bias": (f"{base}.attn.q.bias",),
        "k_weight": (f"{base}.attn.k.weight",),
        "k_bias": (f"{base}.attn.k.bias",),
        "v_weight": (f"{base}.attn.v.weight",),
        "v_bias": (f"{base}.attn.v.bias",),
        "out_weight": (f"{base}.attn.out.weight",),
        "out_bias": (f"{base}.attn.out.bias",),
        "ln2_gain": (f"{base}.ln2.weight",),
        "ln2_bias": (f"{base}.ln2.bias",),
        "fc1_weight": (f"{base}.mlp.fc1.weight",),
        "fc1_bias": (f"{base}.mlp.fc1.bias",),
        "fc2_weight": (f"{base}.mlp.fc2.weight",),
        "fc2_bias": (f"{base}.mlp.fc2.bias",),
    }


class TransformerTextEncoder(TextEncoder):
    """Causal pre-norm transformer text tower with EOS pooling.

    The sequence fed to the blocks is [BOS, prompt rows..., EOS] plus
    positional embeddings; the hidden state at the EOS position goes through
    the final layer norm and the text projection, then is l2-normalized.
    """

    def __init__(
        self,
        *,
        token_embedding: np.ndarray,
        positional_embedding: np.ndarray,
        blocks: Sequence[Mapping[str, np.ndarray]],
        final_gain: np.ndarray,
        final_bias: np.ndarray,
        projection: np.ndarray,
        num_heads: int,
        bos_token_id: int,
        eos_token_id: int,
    ):
        token_embedding = np.asarray(token_embedding)
        width = token_embedding.shape[1]
        if width % num_heads != 0:
            raise SchemaError(f"width {width} not divisible by {num_heads} heads")
        self.embed_dim = width
        self.joint_dim = int(np.asarray(projection).shape[1])
        self.num_heads = int(num_heads)
        self.num_layers = len(blocks)
        self.vocab_size = int(token_embedding.shape[0])
        self.max_sequence_length = int(np.asarray(positional_embedding).shape[0])
        self.bos_token_id = int(bos_token_id)
        self.eos_token_id = int(eos_token_id)
        for tid, label in ((self.bos_token_id, "bos"), (self.eos_token_id, "eos")):
            if not 0 <= tid < self.vocab_size:
                raise SchemaError(f"{label}_token_id {tid} outside the vocabulary")

        dtype = token_embedding.dtype
        expected = {
            "token_embedding": (self.vocab_size, width),
            "positional_embedding": (self.max_sequence_length, width),
            "final_gain": (width,),
            "final_bias": (width,),
            "projection": (width, self.joint_dim),
        }
        for name, arr in (
            ("token_embedding", token_embedding),
            ("positional_embedding", positional_embedding),
            ("final_gain", final_gain),
            ("final_bias", final_bias),
            ("projection", projection),
        ):
            if np.asarray(arr).shape != expected[name]:
                raise SchemaError(
                    f"{name}: expected shape {expected[name]}, "
                    f"got {np.asarray(arr).shape}"
                )

        self._tokens = T.constant(token_embedding, dtype=dtype)
        self._positions = T.constant(positional_embedding, dtype=dtype)
        self._final_gain = T.constant(final_gain, dtype=dtype)
        self._final_bias = T.constant(final_bias, dtype=dtype)
        self._projection = T.constant(projection, dtype=dtype)
        self._blocks: list[_BlockWeights] = []
        block_shapes = {
            "ln1_gain": (width,), "ln1_bias": (width,),
            "q_weight": (width, width), "q_bias": (width,),
            "k_weight": (width, width), "k_bias": (width,),
            "v_weight": (width, width), "v_bias": (width,),
            "out_weight": (width, width), "out_bias": (width,),
            "ln2_gain": (width,), "ln2_bias": (width,),
            "fc1_weight": (width, 4 * width), "fc1_bias": (4 * width,),
            "fc2_weight": (4 * width, width), "fc2_bias": (width,),
        }
        for i, raw in enumerate(blocks):
            fields = {}
            for key, shape in block_shapes.items():
                if key not in raw:
                    raise SchemaError(f"block {i} is missing weight '{key}'")
                arr = np.asarray(raw[key])
                if arr.shape != shape:
                    raise SchemaError(
                        f"block {i} weight '{key}': expected {shape}, got {arr.shape}"
                    )
                fields[key] = T.constant(arr, dtype=dtype)
            self._blocks.append(_BlockWeights(**fields))
        self.dtype = np.dtype(dtype)

    # -- forward ------------------------------------------------------------

    def _run_blocks(self, x: T.Tensor) -> T.Tensor:
        head_dim = self.embed_dim // self.num_heads
        for blk in self._blocks:
            h = T.layer_norm(x, blk.ln1_gain, blk.ln1_bias)
            q = T.add_bias(T.matmul(h, blk.q_weight), blk.q_bias)
            k = T.add_bias(T.matmul(h, blk.k_weight), blk.k_bias)
            v = T.add_bias(T.matmul(h, blk.v_weight), blk.v_bias)
            heads = []
            for j in range(self.num_heads):
                lo, hi = j * head_dim, (j + 1) * head_dim
                heads.append(
                    T.causal_attention(
                        T.slice_cols(q, lo, hi),
                        T.slice_cols(k, lo, hi),
                        T.slice_cols(v, lo, hi),
                    )
                )
            att = heads[0] if len(heads) == 1 else T.concat_cols(heads)
            att = T.add_bias(T.matmul(att, blk.out_weight), blk.out_bias)
            x = T.add(x, att)
            h2 = T.layer_norm(x, blk.ln2_gain, blk.ln2_bias)
            m = T.gelu(T.add_bias(T.matmul(h2, blk.fc1_weight), blk.fc1_bias))
            m = T.add_bias(T.matmul(m, blk.fc2_weight), blk.fc2_bias)
            x = T.add(x, m)
        return x

    def _pool_and_project(self, x: T.Tensor, eos_index: int) -> T.Tensor:
        x = T.layer_norm(x, self._final_gain, self._final_bias)
        pooled = T.take_row(x, eos_index)
        return T.l2_normalize(T.vecmat(pooled, self._projection))

    def encode(
        self, rows: T.Tensor, *, reuse_position_span: tuple[int, int] | None = None
    ) -> T.Tensor:
        if rows.ndim != 2 or rows.shape[1] != self.embed_dim:
            raise DimensionError(
                f"expected rows of width {self.embed_dim}, got shape {rows.shape}"
            )
        if rows.dtype != self.dtype:
            raise DimensionError(
                f"rows dtype {rows.dtype} does not match encoder dtype {self.dtype}"
            )
        n = rows.shape[0]
        self.check_capacity(n)
        seq = T.concat_rows(
            [
                T.take_rows(self._tokens, [self.bos_token_id]),
                rows,
                T.take_rows(self._tokens, [self.eos_token_id]),
            ]
        )
        position_ids = list(range(n + 2))
        if reuse_position_span is not None:
            start, count = reuse_position_span
            if not (0 <= start and start + count <= n):
                raise DimensionError(
                    f"position span ({start}, {count}) outside {n} prompt rows"
                )
            for offset in range(count):
                position_ids[1 + start + offset] = 1 + start
        x = T.add(seq, T.take_rows(self._positions, position_ids))
        x = self._run_blocks(x)
        return self._pool_and_project(x, n + 1)

    def encode_token_ids(self, token_ids: Sequence[int]) -> np.ndarray:
        """Encode a raw tokenized sequence; pools at the first EOS token.

        Inference-only path used to check parity against exported fixtures.
        The sequence must already carry its own BOS/EOS tokens.
        """
        ids = [int(t) for t in token_ids]
        if len(ids) > self.max_sequence_length:
            raise CapacityError(
                f"{len(ids)} tokens exceed context length {self.max_sequence_length}"
            )
        if any(not 0 <= t < self.vocab_size for t in ids):
            raise DataError("token id outside the vocabulary")
        if self.eos_token_id not in ids:
            raise DataError("sequence has no end-of-sequence token to pool at")
        eos_index = ids.index(self.eos_token_id)
        seq = T.take_rows(self._tokens, ids)
        x = T.add(seq, T.take_rows(self._positions, list(range(len(ids)))))
        x = self._run_blocks(x)
        return self._pool_and_project(x, eos_index).data.copy()

    def token_rows(self, token_ids: Sequence[int]) -> np.ndarray:
        """Vocabulary lookup: embedding rows for a bare prompt (no BOS/EOS)."""
        ids = [int(t) for t in token_ids]
        if any(not 0 <= t < self.vocab_size for t in ids):
            raise DataError("token id outside the vocabulary")
        return self._tokens.data[ids].copy()

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_bundle(cls, bundle) -> "TransformerTextEncoder":
        """Build from a weights bundle following the naming contract."""
        meta = bundle.metadata
        if meta.get("format") != "text-encoder":
            raise SchemaError(
                f"not a text-encoder bundle (format={meta.get('format')!r})"
            )
        if meta.get("version") != 1:
            raise SchemaError(f"unsupported text-encoder version {meta.get('version')!r}")
        missing = [k for k in TRANSFORMER_METADATA_KEYS if k not in meta]
        if missing:
            raise SchemaError(f"text-encoder metadata missing keys: {missing}")
        if meta["activation"] != "gelu":
            raise SchemaError(f"unsupported activation {meta['activation']!r}")

        num_layers = int(meta["num_layers"])
        expected = {"token_embedding", "positional_embedding",
                    "ln_final.weight", "ln_final.bias", "text_projection"}
        for i in range(num_layers):
            for names in _block_tensor_names(i).values():
                expected.update(names)
        have = set(bundle.tensors)
        if have != expected:
            missing = sorted(expected - have)
            extra = sorted(have - expected)
            raise SchemaError(
                f"text-encoder tensor set mismatch: missing {missing}, extra {extra}"
            )

        blocks = []
        for i in range(num_layers):
            blocks.append(
                {
                    field: bundle.tensors[names[0]]
                    for field, names in _block_tensor_names(i).items()
                }
            )
        return cls(
            token_embedding=bundle.tensors["token_embedding"],
            positional_embedding=bundle.tensors["positional_embedding"],
            blocks=blocks,
            final_gain=bundle.tensors["ln_final.weight"],
            final_bias=bundle.tensors["ln_final.bias"],
            projection=bundle.tensors["text_projection"],
            num_heads=int(meta["num_heads"]),
            bos_token_id=int(meta["bos_token_id"]),
            eos_token_id=int(meta["eos_token_id"]),
        )

    def to_tensor_dict(self) -> dict[str, np.ndarray]:
        """Named weights following the bundle naming contract."""
        out = {
            "token_embedding": self._tokens.data,
            "positional_embedding": self._positions.data,
            "ln_final.weight": self._final_gain.data,
            "ln_final.bias": self._final_bias.data,
            "text_projection": self._projection.data,
        }
        for i, blk in enumerate(self._blocks):
            for field, names in _block_tensor_names(i).items():
                out[names[0]] = getattr(blk, field).data
        return out

    def metadata(self) -> dict:
        return {
            "format": "text-encoder",
            "version": 1,
            "width": self.embed_dim,
            "joint_dim": self.joint_dim,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "vocab_size": self.vocab_size,
            "context_length": self.max_sequence_length,
            "bos_token_id": self.bos_token_id,
            "eos_token_id": self.eos_token_id,
            "activation": "gelu",
        }

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        *,
        width: int = 16,
        joint_dim: int = 8,
        num_layers: int = 2,
        num_heads: int = 2,
        vocab_size: int = 64,
        context_length: int = 32,
        dtype=np.float64,
        init_scale: float = 0.05,
    ) -> "TransformerTextEncoder":
        """Small randomly initialized tower for tests and demos."""

        def w(*shape):
            return (rng.normal(size=shape) * init_scale).astype(dtype)

        blocks = []
        for _ in range(num_layers):
            blocks.append(
                {
                    "ln1_gain": np.ones(width, dtype=dtype),
                    "ln1_bias": np.zeros(width, dtype=dtype),
                    "q_weight": w(width, width), "q_bias": w(width),
                    "k_weight": w(width, width), "k_bias": w(width),
                    "v_weight": w(width, width), "v_bias": w(width),
                    "out_weight": w(width, width), "out_bias": w(width),
                    "ln2_gain": np.ones(width, dtype=dtype),
                    "ln2_bias": np.zeros(width, dtype=dtype),
                    "fc1_weight": w(width, 4 * width), "fc1_bias": w(4 * width),
                    "fc2_weight": w(4 * width, width), "fc2_bias": w(width),
                }
            )
        return cls(
            token_embedding=w(vocab_size, width),
            positional_embedding=w(context_length, width),
            blocks=blocks,
            final_gain=np.ones(width, dtype=dtype),
            final_bias=np.zeros(width, dtype=dtype),
            projection=w(width, joint_dim),
            num_heads=num_heads,
            bos_token_id=0,
            eos_token_id=vocab_size - 1,
        )


class ImageEmbeddingSource:
    """Unit-normalized reference image embeddings for one attribute.

    Maps each category name to an (n_refs, dim) matrix. Rows must already be
    l2-normalized (contrastive image towers emit unit vectors); anything off
    by more than 1e-3 is rejected rather than silently renormalized.
    """

    def __init__(self, rows_by_category: Mapping[str, np.ndarray]):
        if not rows_by_category:
            raise DataError("reference source has no categories")
        self._rows: dict[str, np.ndarray] = {}
        dim = None
        for name, rows in rows_by_category.items():
            rows = np.asarray(rows)
            if rows.ndim != 2 or rows.shape[0] < 1:
                raise DataError(
                    f"category {name!r}: need a non-empty (n, dim) matrix, "
                    f"got shape {rows.shape}"
                )
            if dim is None:
                dim = rows.shape[1]
            elif rows.shape[1] != dim:
                raise DataError(
                    f"category {name!r}: dim {rows.shape[1]} != {dim}"
                )
            norms = np.linalg.norm(rows, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-3):
                worst = float(np.abs(norms - 1.0).max())
                raise DataError(
                    f"category {name!r}: rows must be unit-normalized "
                    f"(worst deviation {worst:.2e})"
                )
            stored = rows.copy()
            stored.flags.writeable = False
            self._rows[str(name)] = stored
        self.dim = int(dim)

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(self._rows)

    def rows(self, category: str) -> np.ndarray:
        if category not in self._rows:
            raise DataError(f"no reference rows for category {category!r}")
        return self._rows[category]

    def count(self, category: str) -> int:
        return self.rows(category).shape[0]

    def __contains__(self, category: str) -> bool:
        return category in self._rows
