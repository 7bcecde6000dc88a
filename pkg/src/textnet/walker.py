"""Uniform random walks, skip-gram context windows and negative sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import TextNetwork


@dataclass(frozen=True)
class WalkConfig:
    num_walks_per_node: int = 3
    walk_length: int = 80
    window: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.num_walks_per_node < 1:
            raise ValueError("num_walks_per_node must be positive")
        if self.walk_length < 2:
            raise ValueError("walk_length must be at least 2")
        if self.window < 1:
            raise ValueError("window must be at least 1")


def generate_walks(network: TextNetwork, cfg: WalkConfig, rng: np.random.Generator) -> np.ndarray:
    """Walk ``cfg.num_walks_per_node`` times from every node.

    Each pass visits all start nodes in a freshly shuffled order and all walks
    of a pass advance in lock-step. Returns an int array of shape
    ``(num_walks_per_node * N, walk_length)``.
    """
    offsets, flat = network.csr()
    deg = np.diff(offsets)
    if network.num_nodes == 0:
        raise ValueError("network has no nodes")
    if (deg == 0).any():
        raise ValueError("network contains isolated nodes; filter to effective nodes first")
    passes = []
    for _ in range(cfg.num_walks_per_node):
        cur = rng.permutation(network.num_nodes)
        walk = np.empty((len(cur), cfg.walk_length), dtype=np.int64)
        walk[:, 0] = cur
        for step in range(1, cfg.walk_length):
            pick = (rng.random(len(cur)) * deg[cur]).astype(np.int64)
            cur = flat[offsets[cur] + pick]
            walk[:, step] = cur
        passes.append(walk)
    return np.concatenate(passes)


def dump_walks(walks, path) -> None:
    with open(path, "w") as fh:
        for w in walks:
            fh.write(" ".join(map(str, w)) + "\n")


def _pair_offsets(length: int, window: int):
    """(i, j) index arrays, position-major then ascending j."""
    i, j = [], []
    for a in range(length):
        for b in range(max(0, a - window), min(length, a + window + 1)):
            if b != a:
                i.append(a)
                j.append(b)
    return np.array(i, dtype=np.int64), np.array(j, dtype=np.int64)


def context_pairs(walk, window: int):
    """Yield ``(center, context)`` for every pair of positions within ``window``."""
    if window < 1:
        raise ValueError("window must be at least 1")
    walk = list(walk)
    for a, b in zip(*_pair_offsets(len(walk), window)):
        yield walk[a], walk[b]


def corpus_pairs(walks: np.ndarray, window: int):
    """Materialize the context pairs of a whole walk corpus.

    Returns ``(centers, contexts, positions)`` where ``positions`` identifies the
    walk position (``walk_index * walk_length + i``) the center came from.
    Order matches concatenating :func:`context_pairs` over the walks.
    """
    walks = np.asarray(walks)
    n_walks, length = walks.shape
    i, j = _pair_offsets(length, window)
    rows = np.repeat(np.arange(n_walks), len(i))
    ii = np.tile(i, n_walks)
    jj = np.tile(j, n_walks)
    return walks[rows, ii], walks[rows, jj], rows * length + ii


class NoiseDistribution:
    """Categorical distribution over node ids with O(1) alias-table draws."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0 or (w < 0).any() or not np.isfinite(w).all():
            raise ValueError("weights must be a non-empty nonnegative vector")
        total = w.sum()
        if total <= 0:
            raise ValueError("weights sum to zero")
        self.probs = w / total
        self.prob_table, self.alias = _alias_setup(self.probs)

    def __len__(self):
        return len(self.probs)

    @property
    def support_size(self) -> int:
        return int((self.probs > 0).sum())

    def draw(self, size, rng: np.random.Generator) -> np.ndarray:
        k = len(self.probs)
        slot = rng.integers(0, k, size=size)
        keep = rng.random(size) < self.prob_table[slot]
        return np.where(keep, slot, self.alias[slot])


def _alias_setup(probs):
    k = len(probs)
    q = probs * k
    alias = np.arange(k, dtype=np.int64)
    small = [i for i in range(k) if q[i] < 1.0]
    large = [i for i in range(k) if q[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        alias[s] = g
        q[g] -= 1.0 - q[s]
        (small if q[g] < 1.0 else large).append(g)
    # leftovers are 1 up to rounding
    for i in small + large:
        q[i] = 1.0
    # zero-weight entries must never be returned from their own slot
    zero = probs == 0
    q[zero] = 0.0
    alias[zero & (alias == np.arange(k))] = int(np.argmax(probs))
    return q, alias


def build_noise_distribution(walks, power: float = 0.75, num_nodes: int | None = None) -> NoiseDistribution:
    """Unigram counts over the walk corpus raised to ``power``."""
    flat = np.asarray(walks, dtype=np.int64).ravel()
    if flat.size == 0:
        raise ValueError("empty walk corpus")
    counts = np.bincount(flat, minlength=num_nodes or 0).astype(np.float64)
    weights = np.where(counts > 0, counts ** power, 0.0)
    return NoiseDistribution(weights)


def sample_negatives(dist: NoiseDistribution, m: int, exclude, rng: np.random.Generator) -> np.ndarray:
    """Draw ``m`` negatives per entry of ``exclude``, redrawing any equal to it.

    A scalar ``exclude`` gives shape ``(m,)``; an array of shape ``(B,)`` gives
    ``(B, m)``.
    """
    if dist.support_size < 2:
        raise ValueError("noise distribution needs at least two nodes with positive weight")
    exclude = np.asarray(exclude)
    shape = exclude.shape + (m,)
    out = dist.draw(shape, rng)
    target = exclude[..., None]
    bad = out == target
    while bad.any():
        out[bad] = dist.draw(int(bad.sum()), rng)
        bad = out == target
    return out
