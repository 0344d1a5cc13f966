"""A small decoder-only transformer used as the frozen backbone.

Pre-layer-norm residual blocks, fused causal attention, gelu FFN, fixed
sinusoidal positional encodings, no biases on the projections, and a
separate (untied) unembedding matrix. Weights come from a seed-derived
normal(0, 1/sqrt(fan_in)) init: at this width a flat 0.02 std leaves
the attention logits at ~0.03, i.e. attention starts (and under a short
training budget stays) content-blind. Layer-norm gains start at 1.

The classification readout is the logit vector at the final input
position. During prompt tuning the model is frozen: no parameter
carries requires_grad, so gradients reach only the prompt rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import serialize, tensor as T
from .exceptions import (
    CheckpointError,
    FrozenStateError,
    SequenceOverflowError,
    TokenIdError,
)
from .optim import Adafactor
from .tensor import GELU, Tensor

LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    embed_dim: int
    layers: int
    heads: int
    ffn_mult: int
    max_seq: int

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        for field in ("vocab_size", "embed_dim", "layers", "heads", "ffn_mult", "max_seq"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be >= 1")

    def to_dict(self):
        return {
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "layers": self.layers,
            "heads": self.heads,
            "ffn_mult": self.ffn_mult,
            "max_seq": self.max_seq,
        }


DEFAULT_DIMS = ModelDims(
    vocab_size=64, embed_dim=64, layers=2, heads=2, ffn_mult=4, max_seq=64
)


@dataclass
class InputEmbeddings:
    """Embedded model input: row j of matrix is the embedding of token_ids[j]."""

    matrix: Tensor
    token_ids: list


def sinusoidal_positions(max_seq, d, amplitude=None):
    """Sinusoidal table, scaled well below the embedding init scale
    (1/sqrt(d)): the tasks here are token-statistics tasks, and a strong
    position signal smears token directions position-dependently, which
    is the dominant noise source for a pooling readout. 0.2x keeps
    positions visible (prompt-order sensitivity remains testable) but
    subordinate.
    """
    if amplitude is None:
        amplitude = 0.2 / np.sqrt(d)
    pos = np.arange(max_seq)[:, None]
    i = np.arange((d + 1) // 2)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / d)
    table = np.zeros((max_seq, d))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : d // 2])
    return amplitude * table


class TinyLM:
    def __init__(self, dims, seed=0):
        self.dims = dims
        self.seed = int(seed)
        self.frozen = False
        rng = np.random.default_rng([self.seed, 0x71B1])
        d = dims.embed_dim

        def w(*shape):
            fan_in = shape[0] if len(shape) == 2 else d
            return Tensor(
                rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape), requires_grad=True
            )

        params = {"embed": Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(dims.vocab_size, d)),
                                  requires_grad=True)}
        for i in range(dims.layers):
            params[f"layer{i}.ln1.gamma"] = Tensor(np.ones(d), requires_grad=True)
            params[f"layer{i}.ln1.beta"] = Tensor(np.zeros(d), requires_grad=True)
            params[f"layer{i}.attn.wq"] = w(d, d)
            params[f"layer{i}.attn.wk"] = w(d, d)
            params[f"layer{i}.attn.wv"] = w(d, d)
            params[f"layer{i}.attn.wo"] = w(d, d)
            params[f"layer{i}.ln2.gamma"] = Tensor(np.ones(d), requires_grad=True)
            params[f"layer{i}.ln2.beta"] = Tensor(np.zeros(d), requires_grad=True)
            params[f"layer{i}.ffn.w1"] = w(d, dims.ffn_mult * d)
            params[f"layer{i}.ffn.w2"] = w(dims.ffn_mult * d, d)
        params["ln_f.gamma"] = Tensor(np.ones(d), requires_grad=True)
        params["ln_f.beta"] = Tensor(np.zeros(d), requires_grad=True)
        params["unembed"] = w(d, dims.vocab_size)
        self.params = params
        # positional table is derived, never trained, but serialized for
        # checkpoint self-containment
        self.pos = Tensor(sinusoidal_positions(dims.max_seq, d))
        self._pos_slices = {}

    # -- parameter access -------------------------------------------------

    def named_parameters(self):
        return list(self.params.items())

    def freeze(self):
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None
        self.frozen = True
        return self

    def checksum(self):
        return serialize.checksum_arrays({k: v.data for k, v in self.params.items()})

    # -- forward ----------------------------------------------------------

    def embed(self, token_ids):
        ids = [int(t) for t in token_ids]
        for t in ids:
            if not 0 <= t < self.dims.vocab_size:
                raise TokenIdError(
                    f"token id {t} out of range for vocab of {self.dims.vocab_size}"
                )
        if ids:
            matrix = T.gather_rows(self.params["embed"], ids)
        else:
            matrix = Tensor(np.zeros((0, self.dims.embed_dim)))
        return InputEmbeddings(matrix=matrix, token_ids=ids)

    def _positions(self, length):
        cached = self._pos_slices.get(length)
        if cached is None:
            cached = Tensor(self.pos.data[:length].copy())
            self._pos_slices[length] = cached
        return cached

    def _trunk(self, h):
        """Residual blocks plus final norm over an (L, d) tensor on the tape."""
        p = self.params
        for i in range(self.dims.layers):
            a = T.layer_norm(h, p[f"layer{i}.ln1.gamma"], p[f"layer{i}.ln1.beta"], LN_EPS)
            q = T.matmul(a, p[f"layer{i}.attn.wq"])
            k = T.matmul(a, p[f"layer{i}.attn.wk"])
            v = T.matmul(a, p[f"layer{i}.attn.wv"])
            att = T.causal_attention(q, k, v, self.dims.heads)
            h = T.add(h, T.matmul(att, p[f"layer{i}.attn.wo"]))
            f = T.layer_norm(h, p[f"layer{i}.ln2.gamma"], p[f"layer{i}.ln2.beta"], LN_EPS)
            f = T.matmul(T.apply_nonlinearity(T.matmul(f, p[f"layer{i}.ffn.w1"]), GELU),
                         p[f"layer{i}.ffn.w2"])
            h = T.add(h, f)
        return T.layer_norm(h, p["ln_f.gamma"], p["ln_f.beta"], LN_EPS)

    def forward(self, prompt, inputs):
        """Logits (vocab_size,) at the final position of [prompt; inputs].

        prompt may be None or zero-row for the unprompted baseline.
        """
        if prompt is None:
            prompt = Tensor(np.zeros((0, self.dims.embed_dim)))
        seq = T.concat_rows(prompt, inputs.matrix)
        length = seq.shape[0]
        if length > self.dims.max_seq:
            raise SequenceOverflowError(
                f"sequence of {length} exceeds max_seq {self.dims.max_seq}"
            )
        if length == 0:
            raise SequenceOverflowError("empty sequence: need at least one position")
        h = self._trunk(T.add(seq, self._positions(length)))
        return T.matmul(T.select_row(h, length - 1), self.params["unembed"])

    def all_position_logits(self, token_ids):
        """(L, vocab) logits for next-token training; gradients reach all params."""
        emb = self.embed(token_ids)
        length = emb.matrix.shape[0]
        if length > self.dims.max_seq:
            raise SequenceOverflowError(
                f"sequence of {length} exceeds max_seq {self.dims.max_seq}"
            )
        h = self._trunk(T.add(emb.matrix, self._positions(length)))
        return T.matmul(h, self.params["unembed"])

    # -- persistence --------------------------------------------------------

    def save(self, path):
        tensors = {k: serialize.tensor_to_json(v.data) for k, v in self.params.items()}
        tensors["pos"] = serialize.tensor_to_json(self.pos.data)
        doc = {
            "format": serialize.FORMAT,
            "dims": self.dims.to_dict(),
            "seed": self.seed,
            "tensors": tensors,
        }
        serialize.dump_document(doc, path)

    @classmethod
    def load(cls, path):
        doc = serialize.load_document(path, expected_keys=("dims", "seed", "tensors"))
        try:
            dims = ModelDims(**doc["dims"])
        except (TypeError, ValueError) as e:
            raise CheckpointError(f"{path}: bad dims: {e}") from e
        lm = cls(dims, seed=doc["seed"])
        tensors = doc["tensors"]
        for name, p in lm.params.items():
            if name not in tensors:
                raise CheckpointError(f"{path}: missing tensor {name!r}")
            arr = serialize.tensor_from_json(tensors[name])
            if arr.shape != p.shape:
                raise CheckpointError(
                    f"{path}: tensor {name!r} has shape {arr.shape}, expected {p.shape}"
                )
            p.data = arr
        if "pos" in tensors:
            lm.pos = Tensor(serialize.tensor_from_json(tensors["pos"]))
            lm._pos_slices = {}
        lm.freeze()
        return lm


def pretrain(lm, corpus, steps, lr=0.05, batch_size=32, seed=0):
    """Next-token cross-entropy training on a token-id corpus.

    Trains every parameter with Adafactor, then freezes. The loop ramps
    the learning rate up over the first tenth of the run and decays it
    linearly afterwards: Adafactor's update clipping makes its first
    steps full lr-sized kicks on cold accumulators (which throws fresh
    models into bad basins), and the same clipping never shrinks steps
    near an optimum (which otherwise leaves a noise ball the size of
    the final step). Deterministic for a fixed (lm seed, corpus, steps,
    seed). Returns the same model, now frozen.
    """
    if lm.frozen:
        raise FrozenStateError("pretrain: model is already frozen")
    if steps > 0:
        if not corpus:
            raise ValueError("pretrain: empty corpus")
        if any(len(seq) < 2 for seq in corpus):
            raise ValueError("pretrain: sequences must have at least two tokens")
    opt = Adafactor(lm.named_parameters(), lr=lr)
    rng = np.random.default_rng([int(seed), 0x9E7])
    order = []
    warmup = max(1, steps // 10)
    for step in range(steps):
        if step < warmup:
            opt.lr = lr * (step + 1) / warmup
        else:
            opt.lr = lr * max(0.04, 1.0 - (step - warmup) / max(1, steps - warmup))
        batch = []
        while len(batch) < batch_size:
            if not order:
                order = list(rng.permutation(len(corpus)))
            batch.append(corpus[order.pop()])
        losses = None
        for seq in batch:
            logits = lm.all_position_logits(seq[:-1])
            loss = T.softmax_cross_entropy_rows(logits, seq[1:])
            losses = loss if losses is None else T.add(losses, loss)
        total = T.scale(losses, 1.0 / len(batch))
        for _, p in lm.named_parameters():
            p.zero_grad()
        T.backward(total)
        opt.step()
    return lm.freeze()
