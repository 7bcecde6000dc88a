"""Synthetic labelled textual networks with class-correlated text and links."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def make_network_files(out_dir, num_nodes: int = 300, num_classes: int = 4, avg_degree: float = 4.6,
                       homophily: float = 0.8, doc_length: int = 20, topic_words: int = 40,
                       common_words: int = 200, topic_rate: float = 0.3, isolated: int = 0,
                       seed: int = 0) -> Path:
    """Write ``edges.txt``, ``docs.tsv`` and ``labels.tsv`` into ``out_dir``.

    Each class owns ``topic_words`` words; a token is a topic word of the
    node's class with probability ``topic_rate`` and otherwise a word from a
    shared Zipf-like background vocabulary. A fraction ``homophily`` of edges
    join nodes of the same class. ``isolated`` extra nodes get no edges.
    """
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = rng.integers(0, num_classes, size=num_nodes)
    by_class = [np.flatnonzero(labels == c) for c in range(num_classes)]

    edges = set()
    target = int(round(num_nodes * avg_degree / 2))
    # a random spanning path first so no node is isolated
    order = rng.permutation(num_nodes)
    for a, b in zip(order[:-1], order[1:]):
        edges.add((min(a, b), max(a, b)))
    while len(edges) < target:
        u = int(rng.integers(num_nodes))
        if rng.random() < homophily and len(by_class[labels[u]]) > 1:
            v = int(rng.choice(by_class[labels[u]]))
        else:
            v = int(rng.integers(num_nodes))
        if u != v:
            edges.add((min(u, v), max(u, v)))

    zipf = 1.0 / np.arange(1, common_words + 1)
    zipf /= zipf.sum()
    total = num_nodes + isolated
    with open(out / "docs.tsv", "w") as fh:
        for i in range(total):
            c = labels[i] if i < num_nodes else rng.integers(num_classes)
            n = max(1, int(rng.poisson(doc_length)))
            topical = rng.random(n) < topic_rate
            words = [f"t{c}w{rng.integers(topic_words)}" if t else f"w{rng.choice(common_words, p=zipf)}"
                     for t in topical]
            fh.write(f"n{i}\t{' '.join(words)}\n")
    with open(out / "edges.txt", "w") as fh:
        for a, b in sorted(edges):
            fh.write(f"n{a} n{b}\n")
    with open(out / "labels.tsv", "w") as fh:
        for i in range(total):
            c = labels[i] if i < num_nodes else rng.integers(num_classes)
            fh.write(f"n{i}\tclass{c}\n")
    return out
