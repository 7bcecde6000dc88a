"""Attention-based text encoder with hand-written backpropagation.

A document is mapped to one vector in two stages: token embeddings plus
sinusoidal positions go through a single multi-head self-attention layer to
give contextual word vectors, then an additive attention pooling layer takes
their weighted average. Padding is masked with ``-inf`` logits in both
softmaxes so padded positions receive exactly zero weight.

The batched functions work on ``(B, L)`` token arrays; the single-sequence
helpers below them are thin wrappers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import PAD, TokenSequence


class EncodeError(ValueError):
    pass


def positional_encoding(max_len: int, d: int) -> np.ndarray:
    """Sinusoidal table: sin on even columns, cos on odd, shared frequency per pair."""
    if d % 2:
        raise ValueError(f"positional encoding needs an even dimension, got {d}")
    if max_len < 1:
        raise ValueError("max_len must be positive")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((max_len, d))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return pe


DENSE = ("w_q", "w_k", "w_v", "w_o", "w_e", "b_e", "h_w")


@dataclass
class EncoderParams:
    """Trainable tensors. Projections act on row vectors: ``Q = X @ w_q``.

    Head ``h`` uses columns ``h*dk:(h+1)*dk`` of ``w_q``, ``w_k`` and ``w_v``.
    The pooling layer computes ``tanh(e @ w_e.T + b_e)``.
    """

    word_emb: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_e: np.ndarray
    b_e: np.ndarray
    h_w: np.ndarray
    heads: int = 2
    dropout: float = 0.5
    residual: bool = False
    use_positions: bool = True
    _pe: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        d = self.dim
        if d % self.heads:
            raise ValueError(f"dimension {d} is not divisible by {self.heads} heads")
        if d % 2:
            raise ValueError("dimension must be even for positional encoding")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @classmethod
    def init(cls, vocab_size: int, dim: int, rng: np.random.Generator, heads: int = 2,
             dropout: float = 0.5, residual: bool = False, dtype=np.float64) -> "EncoderParams":
        def proj(*shape):
            bound = 1.0 / np.sqrt(dim)
            return rng.uniform(-bound, bound, size=shape).astype(dtype)

        word = rng.uniform(-0.5 / dim, 0.5 / dim, size=(vocab_size, dim)).astype(dtype)
        return cls(word, proj(dim, dim), proj(dim, dim), proj(dim, dim), proj(dim, dim),
                   proj(dim, dim), np.zeros(dim, dtype=dtype), proj(dim),
                   heads=heads, dropout=dropout, residual=residual)

    @property
    def dim(self) -> int:
        return self.word_emb.shape[1]

    @property
    def dtype(self):
        return self.word_emb.dtype

    def tensors(self) -> dict[str, np.ndarray]:
        return {"word_emb": self.word_emb, **{k: getattr(self, k) for k in DENSE}}

    def copy(self) -> "EncoderParams":
        t = {k: v.copy() for k, v in self.tensors().items()}
        return EncoderParams(**t, heads=self.heads, dropout=self.dropout,
                             residual=self.residual, use_positions=self.use_positions)

    def positions(self, length: int) -> np.ndarray:
        if self._pe is None or len(self._pe) < length:
            self._pe = positional_encoding(max(length, 64), self.dim).astype(self.dtype)
        return self._pe[:length]


@dataclass
class ForwardTrace:
    """Activations of one batched forward pass, enough to backpropagate."""

    tokens: np.ndarray
    pad: np.ndarray  # (B, L) bool, True at padding
    x: np.ndarray  # embedded inputs after dropout
    drop_in: np.ndarray | None
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray  # (B, H, L, dk)
    attn: np.ndarray  # (B, H, L, L)
    concat: np.ndarray  # (B, L, d)
    drop_out: np.ndarray | None
    e_prime: np.ndarray  # (B, L, d)
    hidden: np.ndarray | None = None  # tanh activations of pooling
    weights: np.ndarray | None = None  # pooling weights k, (B, L)


def _softmax_masked(logits, pad):
    z = np.where(pad, -np.inf, logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _dropout_mask(shape, rate, rng, dtype):
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype.type(1.0 - rate)


def contextual_forward(tokens, lengths, params: EncoderParams, train: bool = False,
                       rng: np.random.Generator | None = None, masks=None) -> ForwardTrace:
    """Contextual word vectors for a ``(B, L)`` batch.

    ``masks`` replays given dropout masks ``(input_mask, output_mask)``.
    """
    tokens = np.asarray(tokens)
    lengths = np.asarray(lengths)
    if (lengths < 1).any():
        raise EncodeError("cannot encode an empty document")
    b, L = tokens.shape
    d, h = params.dim, params.heads
    dk = d // h
    pad = np.arange(L)[None, :] >= lengths[:, None]

    x = params.word_emb[tokens]
    if params.use_positions:
        x = x + params.positions(L)[None]
    drop_in = drop_out = None
    if masks is not None:
        drop_in, drop_out = masks
    elif train and params.dropout > 0:
        if rng is None:
            raise ValueError("train mode with dropout needs an rng")
        drop_in = _dropout_mask(x.shape, params.dropout, rng, params.dtype)
    if drop_in is not None:
        x = x * drop_in

    def split(m):
        return m.reshape(b, L, h, dk).transpose(0, 2, 1, 3)

    q, k, v = split(x @ params.w_q), split(x @ params.w_k), split(x @ params.w_v)
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dk)
    attn = _softmax_masked(scores, pad[:, None, None, :])
    concat = (attn @ v).transpose(0, 2, 1, 3).reshape(b, L, d)
    y = concat @ params.w_o
    if params.residual:
        y = y + x
    if masks is None and train and params.dropout > 0:
        drop_out = _dropout_mask(y.shape, params.dropout, rng, params.dtype)
    e_prime = y * drop_out if drop_out is not None else y
    return ForwardTrace(tokens, pad, x, drop_in, q, k, v, attn, concat, drop_out, e_prime)


def pool_forward(trace: ForwardTrace, params: EncoderParams) -> np.ndarray:
    """Attention pooling over ``trace.e_prime``; fills ``hidden`` and ``weights``."""
    if trace.pad.all(axis=1).any():
        raise EncodeError("cannot pool a sequence that is entirely padding")
    e = trace.e_prime
    hidden = np.tanh(e @ params.w_e.T + params.b_e)
    scores = hidden @ params.h_w / np.sqrt(params.dim)
    weights = _softmax_masked(scores, trace.pad)
    trace.hidden, trace.weights = hidden, weights
    return (weights[:, None, :] @ e)[:, 0, :]


def forward(tokens, lengths, params: EncoderParams, train: bool = False, rng=None,
            trim: bool = True):
    """Node vectors for a batch; returns ``(phi, trace)``.

    With ``trim`` the batch is cut to its longest real sequence, which leaves
    results unchanged because padding never receives weight.
    """
    tokens = np.asarray(tokens)
    lengths = np.asarray(lengths)
    if trim:
        tokens = tokens[:, :max(1, int(lengths.max()))]
    trace = contextual_forward(tokens, lengths, params, train, rng)
    return pool_forward(trace, params), trace


def _outer_sum(a, b):
    """sum over batch and positions of outer(a[b, l], b[b, l])."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def backward(dphi: np.ndarray, trace: ForwardTrace, params: EncoderParams) -> dict:
    """Gradients of ``sum(dphi * phi)`` w.r.t. every tensor.

    ``word_emb`` comes back sparse as ``(rows, row_grads)`` over the non-PAD
    tokens present in the batch.
    """
    b, L = trace.tokens.shape
    d, h = params.dim, params.heads
    dk = d // h
    e, k = trace.e_prime, trace.weights

    # pooling
    de = k[:, :, None] * dphi[:, None, :]
    dk_w = (e @ dphi[:, :, None])[:, :, 0]
    ds = k * (dk_w - (k * dk_w).sum(axis=1, keepdims=True))
    scale = 1.0 / np.sqrt(d)
    dh_w = (ds.reshape(-1) @ trace.hidden.reshape(-1, d)) * scale
    dz = ds[:, :, None] * params.h_w[None, None, :] * scale * (1.0 - trace.hidden ** 2)
    dw_e = _outer_sum(dz, e)
    db_e = dz.sum(axis=(0, 1))
    de = de + dz @ params.w_e

    # self-attention
    dy = de * trace.drop_out if trace.drop_out is not None else de
    dw_o = _outer_sum(trace.concat, dy)
    dheads = (dy @ params.w_o.T).reshape(b, L, h, dk).transpose(0, 2, 1, 3)
    dattn = dheads @ trace.v.transpose(0, 1, 3, 2)
    dv = trace.attn.transpose(0, 1, 3, 2) @ dheads
    dscores = trace.attn * (dattn - (trace.attn * dattn).sum(axis=-1, keepdims=True))
    dscores /= np.sqrt(dk)
    dq = dscores @ trace.k
    dkk = dscores.transpose(0, 1, 3, 2) @ trace.q

    def merge(m):
        return m.transpose(0, 2, 1, 3).reshape(b, L, d)

    dq, dkk, dv = merge(dq), merge(dkk), merge(dv)
    x = trace.x
    dw_q = _outer_sum(x, dq)
    dw_k = _outer_sum(x, dkk)
    dw_v = _outer_sum(x, dv)
    dx = dq @ params.w_q.T + dkk @ params.w_k.T + dv @ params.w_v.T
    if params.residual:
        dx = dx + dy
    if trace.drop_in is not None:
        dx = dx * trace.drop_in

    real = ~trace.pad
    tok = trace.tokens[real]
    rows, inverse = np.unique(tok, return_inverse=True)
    dword = np.zeros((len(rows), d), dtype=dx.dtype)
    np.add.at(dword, inverse, dx[real])
    keep = rows != PAD
    return {"word_emb": (rows[keep], dword[keep]), "w_q": dw_q, "w_k": dw_k, "w_v": dw_v,
            "w_o": dw_o, "w_e": dw_e, "b_e": db_e, "h_w": dh_w}


# single-sequence helpers

def _as_batch(tokens: TokenSequence):
    return np.asarray(tokens.indices)[None, :], np.array([tokens.true_length])


def contextual_embed(tokens: TokenSequence, params: EncoderParams, mode: str = "infer", rng=None):
    """``(max_len, d)`` contextual word vectors and the trace."""
    tok, n = _as_batch(tokens)
    trace = contextual_forward(tok, n, params, train=(mode == "train"), rng=rng)
    return trace.e_prime[0], trace


def attention_pool(e_prime: np.ndarray, trace: ForwardTrace, params: EncoderParams) -> np.ndarray:
    """Pool contextual vectors from :func:`contextual_embed` into one vector."""
    trace.e_prime = np.asarray(e_prime)[None] if np.ndim(e_prime) == 2 else e_prime
    return pool_forward(trace, params)[0]


def encode_node(tokens: TokenSequence, params: EncoderParams, mode: str = "infer", rng=None) -> np.ndarray:
    e, trace = contextual_embed(tokens, params, mode, rng)
    return attention_pool(e, trace, params)


def encode_batch(tokens, lengths, params: EncoderParams, batch_size: int = 256) -> np.ndarray:
    """Inference-mode vectors for many sequences, sorted by length for speed."""
    tokens = np.asarray(tokens)
    lengths = np.asarray(lengths)
    out = np.zeros((len(tokens), params.dim), dtype=params.dtype)
    order = np.argsort(lengths, kind="stable")
    order = order[lengths[order] > 0]
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        out[idx] = forward(tokens[idx], lengths[idx], params)[0]
    return out
