"""Joint skip-gram + masked label training of the text encoder."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import encoder as enc
from .encoder import EncoderParams
from .graph import TextNetwork, TokenSequence
from .walker import WalkConfig, build_noise_distribution, corpus_pairs, generate_walks, sample_negatives

logger = logging.getLogger(__name__)

CLAMP = 30.0
OBJECTIVES = ("joint", "structure_only", "label_only")
CHECKPOINT_FORMAT = "textnet-checkpoint"
CHECKPOINT_VERSION = 1


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 10.0
    negatives: int = 5
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 1
    seed: int = 0
    dim: int = 100
    heads: int = 2
    dropout: float = 0.5
    residual: bool = False
    noise_power: float = 0.75
    objective: str = "joint"
    # "grouped": shuffle walk positions and encode each center once for all
    # of its context pairs; "shuffled": shuffle individual pairs.
    pair_order: str = "grouped"
    # "table": per-node output vectors; "encoder": encode the context's text
    context_repr: str = "table"
    dtype: str = "float32"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.negatives < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("negatives, batch_size and epochs must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.pair_order not in ("grouped", "shuffled"):
            raise ValueError("pair_order must be 'grouped' or 'shuffled'")
        if self.context_repr not in ("table", "encoder"):
            raise ValueError("context_repr must be 'table' or 'encoder'")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


@dataclass
class OutputParams:
    context: np.ndarray  # (N, d) output vectors used only by the structure loss
    classes: np.ndarray  # (C, d) softmax weights

    @classmethod
    def zeros(cls, num_nodes, num_classes, dim, dtype=np.float64):
        return cls(np.zeros((num_nodes, dim), dtype), np.zeros((max(num_classes, 1), dim), dtype))

    def tensors(self):
        return {"context": self.context, "classes": self.classes}


# losses ---------------------------------------------------------------

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softplus(z):
    return np.logaddexp(0.0, z)


def skipgram_terms(phi, pos, neg):
    """Negative-sampling loss for rows of ``phi`` (P, d), ``pos`` (P, d), ``neg`` (P, m, d).

    Returns per-pair losses and the gradients w.r.t. the three inputs.
    """
    z_pos = np.clip(np.einsum("pd,pd->p", phi, pos), -CLAMP, CLAMP)
    z_neg = np.clip(np.einsum("pd,pmd->pm", phi, neg), -CLAMP, CLAMP)
    loss = _softplus(-z_pos) + _softplus(z_neg).sum(axis=1)
    g_pos = _sigmoid(z_pos) - 1.0
    g_neg = _sigmoid(z_neg)
    dphi = g_pos[:, None] * pos + np.einsum("pm,pmd->pd", g_neg, neg)
    return loss, dphi, g_pos[:, None] * phi, g_neg[:, :, None] * phi[:, None, :]


def softmax_terms(phi, classes, target):
    """Cross-entropy of ``softmax(phi @ classes.T)`` at ``target``; losses and gradients."""
    # clamp after the max shift: clamping raw logits ties saturated classes at
    # +CLAMP and the tie's gradient keeps inflating the margin without bound
    logits = phi @ classes.T
    logits = np.maximum(logits - logits.max(axis=1, keepdims=True), -CLAMP)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    rows = np.arange(len(phi))
    loss = -logp[rows, target]
    dlogits = np.exp(logp)
    dlogits[rows, target] -= 1.0
    return loss, dlogits @ classes, dlogits.T @ phi


def structure_loss(phi, u, negatives, out: OutputParams):
    """-log s(phi.o_u) - sum log s(-phi.o_neg) for one center vector.

    Returns ``(loss, grads)`` with grads for ``phi`` and sparse ``context`` rows.
    """
    negatives = np.asarray(negatives)
    loss, dphi, dpos, dneg = skipgram_terms(phi[None], out.context[u][None], out.context[negatives][None])
    rows = np.concatenate([[u], negatives])
    vals = np.concatenate([dpos, dneg[0]])
    return float(loss[0]), {"phi": dphi[0], "context": _merge_rows(rows, vals)}


def label_loss(phi, c, alpha, out: OutputParams):
    """Masked class cross-entropy; ``alpha == 0`` gives exactly zero loss and gradients."""
    if alpha == 0:
        return 0.0, {"phi": np.zeros_like(phi), "classes": np.zeros_like(out.classes)}
    loss, dphi, dcls = softmax_terms(phi[None], out.classes, np.array([c]))
    return float(alpha * loss[0]), {"phi": alpha * dphi[0], "classes": alpha * dcls}


def joint_step_loss(tokens: TokenSequence, context, negatives, label, alpha,
                    params: EncoderParams, out: OutputParams, beta: float,
                    mode: str = "train", rng=None) -> float:
    """Loss for one (center text, context node) pair: structure + beta * masked label."""
    phi = enc.encode_node(tokens, params, mode, rng)
    s, _ = structure_loss(phi, context, negatives, out)
    if beta == 0:
        return s
    lab, _ = label_loss(phi, label, alpha, out)
    return s + beta * lab


def _merge_rows(rows, vals):
    uniq, inv = np.unique(rows, return_inverse=True)
    acc = np.zeros((len(uniq),) + vals.shape[1:], dtype=vals.dtype)
    np.add.at(acc, inv, vals)
    return uniq, acc


# batch objective ------------------------------------------------------

@dataclass
class Batch:
    centers: np.ndarray  # (P,)
    contexts: np.ndarray  # (P,)
    negatives: np.ndarray  # (P, m)
    keys: np.ndarray | None = None  # pairs sharing a key share one center forward pass


def batch_objective(batch: Batch, network: TextNetwork, params: EncoderParams, out: OutputParams,
                    alpha: np.ndarray, labels: np.ndarray, beta: float, objective: str = "joint",
                    context_repr: str = "table", train: bool = True, rng=None):
    """Mean joint loss over a batch of pairs and its gradients.

    Returns ``(structure, label, grads)`` where ``label`` already includes the
    factor ``beta``. Sparse tensors (``word_emb``, ``context``) come back as
    ``(rows, row_grads)``.
    """
    p = len(batch.centers)
    keys = np.arange(p) if batch.keys is None else batch.keys
    ukeys, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    seq_nodes = batch.centers[first]
    n_center = len(seq_nodes)
    use_structure = objective != "label_only"
    use_label = objective != "structure_only" and beta != 0
    text_context = use_structure and context_repr == "encoder"
    if text_context:
        other, other_inv = np.unique(np.concatenate([batch.contexts, batch.negatives.ravel()]),
                                     return_inverse=True)
        seq_nodes = np.concatenate([seq_nodes, other])

    lengths = network.lengths[seq_nodes]
    tokens = network.tokens[seq_nodes, :max(1, int(lengths.max()))]
    trace = enc.contextual_forward(tokens, lengths, params, train=train, rng=rng)
    vecs = enc.pool_forward(trace, params)
    phi = vecs[inv]
    dphi = np.zeros_like(phi)
    dvecs = np.zeros_like(vecs)
    grads = {}
    s_loss = l_loss = 0.0

    if use_structure:
        if text_context:
            pos = vecs[n_center + other_inv[:p]]
            neg = vecs[n_center + other_inv[p:]].reshape(batch.negatives.shape + (-1,))
        else:
            pos, neg = out.context[batch.contexts], out.context[batch.negatives]
        loss, dp, dpos, dneg = skipgram_terms(phi, pos, neg)
        s_loss = float(loss.mean())
        dphi += dp / p
        if text_context:
            np.add.at(dvecs, n_center + other_inv, np.concatenate([dpos, dneg.reshape(-1, dneg.shape[-1])]) / p)
        else:
            grads["context"] = _merge_rows(np.concatenate([batch.contexts, batch.negatives.ravel()]),
                                           np.concatenate([dpos, dneg.reshape(-1, dneg.shape[-1])]) / p)

    dcls = np.zeros_like(out.classes)
    if use_label:
        # alpha is 0/1: masked pairs are skipped so they contribute exact zeros
        active = np.flatnonzero(alpha[batch.centers])
        if active.size:
            loss, dp, dc = softmax_terms(phi[active], out.classes, labels[batch.centers[active]])
            l_loss = float(beta * loss.sum() / p)
            dphi[active] += (beta / p) * dp
            dcls = (beta / p) * dc
    grads["classes"] = dcls

    np.add.at(dvecs, inv, dphi)
    grads.update(enc.backward(dvecs, trace, params))
    return s_loss, l_loss, grads



# optimizer ------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, tensors: dict) -> "AdamState":
        return cls({k: np.zeros_like(t) for k, t in tensors.items()},
                   {k: np.zeros_like(t) for k, t in tensors.items()})


def adam_update(params: dict, grads: dict, state: AdamState, lr: float = 1e-3,
                betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam step, in place.

    A gradient given as ``(rows, row_grads)`` updates only those rows and
    their moments (lazy/sparse Adam); the bias correction uses the global
    step count.
    """
    b1, b2 = betas
    for name, g in grads.items():
        vals = g[1] if isinstance(g, tuple) else g
        if not np.all(np.isfinite(vals)):
            raise NumericalError(f"non-finite gradient for {name!r} at step {state.step + 1}")
    state.step += 1
    t = state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p, m, v = params[name], state.m[name], state.v[name]
        if isinstance(g, tuple):
            rows, g = g
            if len(rows) == 0:
                continue
            m_r = b1 * m[rows] + (1.0 - b1) * g
            v_r = b2 * v[rows] + (1.0 - b2) * g * g
            m[rows], v[rows] = m_r, v_r
            p[rows] -= lr * (m_r / c1) / (np.sqrt(v_r / c2) + eps)
        else:
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


# training loop --------------------------------------------------------

@dataclass
class TrainResult:
    encoder: EncoderParams
    output: OutputParams
    adam: AdamState
    log: list = field(default_factory=list)
    num_pairs: int = 0

    def tensors(self) -> dict:
        return {**self.encoder.tensors(), **self.output.tensors()}


def _grouped_order(positions, rng):
    """Pair order that shuffles walk positions but keeps each position's pairs together."""
    _, starts, counts = np.unique(positions, return_index=True, return_counts=True)
    perm = rng.permutation(len(starts))
    counts = counts[perm]
    base = np.repeat(starts[perm] - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    return base + np.arange(counts.sum())


def train(network: TextNetwork, vocab_size: int, walk_cfg: WalkConfig, cfg: TrainConfig,
          visible=(), log_path=None, progress=None) -> TrainResult:
    """Train the encoder on walk-derived pairs with the masked label term.

    ``visible`` lists the nodes whose labels may be used. Walks are seeded by
    ``walk_cfg.seed``; initialization, pair order, negatives and dropout by
    ``cfg.seed``.
    """
    visible = np.asarray(sorted(set(int(v) for v in visible)), dtype=np.int64)
    if visible.size and (network.labels[visible] < 0).any():
        raise ValueError("visible label set contains unlabelled nodes")
    dtype = np.dtype(cfg.dtype)
    init_ss, order_ss, drop_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    params = EncoderParams.init(vocab_size, cfg.dim, np.random.default_rng(init_ss), heads=cfg.heads,
                                dropout=cfg.dropout, residual=cfg.residual, dtype=dtype)
    out = OutputParams.zeros(network.num_nodes, network.num_classes, cfg.dim, dtype)
    tensors = {**params.tensors(), **out.tensors()}
    adam = AdamState.zeros_like(tensors)
    order_rng = np.random.default_rng(order_ss)
    drop_rng = np.random.default_rng(drop_ss)

    walks = generate_walks(network, walk_cfg, np.random.default_rng(walk_cfg.seed))
    noise = build_noise_distribution(walks, cfg.noise_power, network.num_nodes)
    centers, contexts, positions = corpus_pairs(walks, walk_cfg.window)
    keep = network.lengths[centers] > 0
    if cfg.context_repr == "encoder":
        keep &= network.lengths[contexts] > 0
    if not keep.all():
        logger.warning("skipping %d pairs whose documents are empty", int((~keep).sum()))
        centers, contexts, positions = centers[keep], contexts[keep], positions[keep]
    n_pairs = len(centers)
    if n_pairs == 0:
        raise ValueError("no training pairs")

    alpha = np.zeros(network.num_nodes, dtype=np.int8)
    alpha[visible] = 1
    labels = np.where(network.labels >= 0, network.labels, 0)
    structure = cfg.objective != "label_only"
    if structure and cfg.context_repr == "encoder" and (network.lengths == 0).any():
        raise ValueError("context_repr='encoder' needs every node to have a non-empty document")

    log = []
    log_fh = open(log_path, "w") if log_path else None
    t0 = time.perf_counter()
    try:
        for epoch in range(cfg.epochs):
            if cfg.pair_order == "grouped":
                order = _grouped_order(positions, order_rng)
            else:
                order = order_rng.permutation(n_pairs)
            for start in range(0, n_pairs, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                if structure:
                    negs = sample_negatives(noise, cfg.negatives, contexts[idx], order_rng)
                else:
                    negs = np.empty((len(idx), 0), dtype=np.int64)
                batch = Batch(centers[idx], contexts[idx], negs,
                              positions[idx] if cfg.pair_order == "grouped" else None)
                s_loss, l_loss, grads = batch_objective(
                    batch, network, params, out, alpha, labels, cfg.beta, cfg.objective,
                    cfg.context_repr, train=True, rng=drop_rng)
                if not (math.isfinite(s_loss) and math.isfinite(l_loss)):
                    raise NumericalError(f"non-finite loss at step {adam.step + 1}")
                adam_update(tensors, grads, adam, cfg.learning_rate,
                            (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps)
                rec = {"step": adam.step, "epoch": epoch, "structure": s_loss, "label": l_loss,
                       "wall": round(time.perf_counter() - t0, 4)}
                log.append(rec)
                if log_fh:
                    log_fh.write(json.dumps(rec) + "\n")
                if progress:
                    progress(rec, n_pairs)
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(params, out, adam, log, n_pairs)


def embed_all(network: TextNetwork, params: EncoderParams, batch_size: int = 256) -> np.ndarray:
    """Inference-mode vectors for every node, rows ordered by node id.

    Nodes with empty documents get the zero vector.
    """
    empty = int((network.lengths == 0).sum())
    if empty:
        logger.warning("%d nodes have empty documents; their embeddings are zero", empty)
    return enc.encode_batch(network.tokens, network.lengths, params, batch_size)


# checkpoints ----------------------------------------------------------

def config_digest(*configs) -> str:
    blob = json.dumps([asdict(c) for c in configs], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def ids_digest(ids) -> str:
    blob = ",".join(map(str, sorted(int(i) for i in ids)))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def atomic_write(path, write):
    """Call ``write(fh)`` on a temp file next to ``path`` and rename it into place."""
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, result: TrainResult, header: dict) -> None:
    e = result.encoder
    head = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "dim": e.dim,
            "heads": e.heads, "dropout": e.dropout, "residual": e.residual,
            "adam_step": result.adam.step, **header}
    arrays = {"header": np.array(json.dumps(head, sort_keys=True))}
    for k, t in result.tensors().items():
        arrays[f"param/{k}"] = t
        arrays[f"adam_m/{k}"] = result.adam.m[k]
        arrays[f"adam_v/{k}"] = result.adam.v[k]
    atomic_write(path, lambda fh: np.savez(fh, **arrays))


def load_checkpoint(path):
    """Returns ``(TrainResult, header)``."""
    with np.load(path) as z:
        head = json.loads(str(z["header"]))
        if head.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a checkpoint")
        if head.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {head.get('version')}")
        names = [k.split("/", 1)[1] for k in z.files if k.startswith("param/")]
        p = {k: z[f"param/{k}"] for k in names}
        m = {k: z[f"adam_m/{k}"] for k in names}
        v = {k: z[f"adam_v/{k}"] for k in names}
    encoder = EncoderParams(**{k: p[k] for k in ("word_emb",) + enc.DENSE}, heads=head["heads"],
                            dropout=head["dropout"], residual=head["residual"])
    output = OutputParams(p["context"], p["classes"])
    return TrainResult(encoder, output, AdamState(m, v, head["adam_step"])), head
