"""Toy transformer encoder: CLS-pooled pair embedding and a mean-pooled
single-sentence embedder used by dialog structuring.

Token, position and segment embeddings are summed, passed through a stack of
self-attention blocks with padding masked out of attention, and the output at
the CLS position is the joint representation of the packed pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .tokenizer import TokenSequence, Vocabulary, pack_pair


@dataclass
class EncoderConfig:
    vocab_size: int
    n_blocks: int = 2
    n_heads: int = 2
    dim: int = 32
    max_len: int = 64
    ffn_hidden: int | None = None
    emb_init: float = 0.5
    proj_init: float | None = None  # default: 1/sqrt(dim)
    # Initialize query/key projections near scale*identity. Token-identity
    # affinity is then informative from the first step, which from-scratch
    # training on exact-match evidence needs; 0 keeps plain random init.
    qk_identity_init: float = 0.0

    def __post_init__(self):
        if self.dim % self.n_heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by n_heads {self.n_heads}")
        if self.max_len < 4:
            raise ValueError(f"max_len must be at least 4, got {self.max_len}")
        if self.ffn_hidden is None:
            self.ffn_hidden = 4 * self.dim
        if self.proj_init is None:
            self.proj_init = 1.0 / np.sqrt(self.dim)


def init_block_params(rng: np.random.Generator, dim: int, ffn_hidden: int,
                      proj_init: float, prefix: str) -> dict[str, Tensor]:
    """Parameters for one attention + feed-forward block."""
    def w(rows, cols, scale):
        return ad.parameter(rng.normal(0.0, scale, size=(rows, cols)))

    def b(n):
        return ad.parameter(np.zeros(n))

    params = {
        f"{prefix}q_w": w(dim, dim, proj_init), f"{prefix}q_b": b(dim),
        f"{prefix}k_w": w(dim, dim, proj_init), f"{prefix}k_b": b(dim),
        f"{prefix}v_w": w(dim, dim, proj_init), f"{prefix}v_b": b(dim),
        f"{prefix}o_w": w(dim, dim, proj_init), f"{prefix}o_b": b(dim),
        f"{prefix}ln1_g": ad.parameter(np.ones(dim)), f"{prefix}ln1_b": b(dim),
        f"{prefix}ffn_in_w": w(dim, ffn_hidden, proj_init), f"{prefix}ffn_in_b": b(ffn_hidden),
        f"{prefix}ffn_out_w": w(ffn_hidden, dim, proj_init), f"{prefix}ffn_out_b": b(dim),
        f"{prefix}ln2_g": ad.parameter(np.ones(dim)), f"{prefix}ln2_b": b(dim),
    }
    return params


def transformer_block(x: Tensor, key_mask: np.ndarray, params: dict[str, Tensor],
                      prefix: str, n_heads: int) -> Tensor:
    """One multi-head self-attention + feed-forward block with residuals.

    ``x`` is (B, L, d); ``key_mask`` is boolean (B, L), False = masked key.
    """
    batch, length, dim = x.shape
    head_dim = dim // n_heads

    def linear(t, name):
        return ad.add(ad.matmul(t, params[f"{prefix}{name}_w"]), params[f"{prefix}{name}_b"])

    def split_heads(t):
        t = ad.reshape(t, (batch, length, n_heads, head_dim))
        return ad.transpose(t, (0, 2, 1, 3))

    q = split_heads(linear(x, "q"))
    k = split_heads(linear(x, "k"))
    v = split_heads(linear(x, "v"))
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(head_dim))
    probs = ad.masked_softmax(scores, key_mask[:, None, None, :])
    context = ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3))
    context = ad.reshape(context, (batch, length, dim))
    attended = linear(context, "o")
    x = ad.layer_norm(ad.add(x, attended), params[f"{prefix}ln1_g"], params[f"{prefix}ln1_b"])
    hidden = ad.gelu(linear(x, "ffn_in"))
    out = linear(hidden, "ffn_out")
    return ad.layer_norm(ad.add(x, out), params[f"{prefix}ln2_g"], params[f"{prefix}ln2_b"])


class EncoderModel:
    """Transformer encoder bound to a vocabulary."""

    def __init__(self, config: EncoderConfig, vocab: Vocabulary, seed: int = 0):
        if config.vocab_size != len(vocab):
            raise ValueError(
                f"config vocab_size {config.vocab_size} != vocabulary size {len(vocab)}"
            )
        self.config = config
        self.vocab = vocab
        rng = np.random.default_rng(seed)
        d = config.dim
        self.params: dict[str, Tensor] = {
            "tok_emb": ad.parameter(rng.normal(0.0, config.emb_init,
                                               size=(config.vocab_size, d))),
            "pos_emb": ad.parameter(rng.normal(0.0, config.emb_init,
                                               size=(config.max_len, d))),
            "seg_emb": ad.parameter(rng.normal(0.0, config.emb_init, size=(2, d))),
            "emb_ln_g": ad.parameter(np.ones(d)),
            "emb_ln_b": ad.parameter(np.zeros(d)),
        }
        for i in range(config.n_blocks):
            self.params.update(init_block_params(
                rng, d, config.ffn_hidden, config.proj_init, prefix=f"b{i}_"))
        if config.qk_identity_init > 0.0:
            for i in range(config.n_blocks):
                tied = (np.eye(d) * config.qk_identity_init
                        + rng.normal(0.0, 0.02, size=(d, d)))
                self.params[f"b{i}_q_w"].data[...] = tied
                self.params[f"b{i}_k_w"].data[...] = tied

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p.data[...] = state[name]


def sequences_to_arrays(seqs: list[TokenSequence]):
    ids = np.array([s.ids for s in seqs], dtype=np.int64)
    segments = np.array([s.segment_ids for s in seqs], dtype=np.int64)
    mask = np.array([s.pad_mask for s in seqs], dtype=bool)
    return ids, segments, mask


def encode_hidden(model: EncoderModel, ids: np.ndarray, segments: np.ndarray,
                  mask: np.ndarray) -> Tensor:
    """Final hidden states (B, k, d) for packed batches."""
    cfg = model.config
    if ids.shape[1] != cfg.max_len:
        raise ValueError(f"sequence length {ids.shape[1]} != configured {cfg.max_len}")
    params = model.params
    x = ad.embedding_lookup(params["tok_emb"], ids)
    x = ad.add(x, ad.embedding_lookup(params["pos_emb"], np.arange(cfg.max_len)))
    x = ad.add(x, ad.embedding_lookup(params["seg_emb"], segments))
    x = ad.layer_norm(x, params["emb_ln_g"], params["emb_ln_b"])
    for i in range(cfg.n_blocks):
        x = transformer_block(x, mask, params, prefix=f"b{i}_", n_heads=cfg.n_heads)
    return x


def encode_batch(model: EncoderModel, seqs: list[TokenSequence]) -> Tensor:
    """CLS vectors (B, d) for a batch of packed pairs."""
    ids, segments, mask = sequences_to_arrays(seqs)
    hidden = encode_hidden(model, ids, segments, mask)
    cls = ad.narrow(hidden, 1, 0, 1)
    return ad.reshape(cls, (len(seqs), model.config.dim))


def encode_pair(model: EncoderModel, seq: TokenSequence) -> Tensor:
    """Joint embedding of one packed pair: the CLS output vector."""
    cls = encode_batch(model, [seq])
    return ad.reshape(cls, (model.config.dim,))


def embed_sentence(model: EncoderModel, text: str) -> np.ndarray:
    """Mean of output vectors over unpadded positions; plain numpy output."""
    seq = pack_pair(model.vocab, text, "", model.config.max_len)
    ids, segments, mask = sequences_to_arrays([seq])
    hidden = encode_hidden(model, ids, segments, mask).data[0]
    real = np.asarray(seq.pad_mask, dtype=bool)
    return hidden[real].mean(axis=0)
