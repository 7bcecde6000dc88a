"""Labelled textual networks: loading, tokenization and vocabulary."""

from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

PAD = 0
UNK = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_SPLIT = re.compile(r"[^0-9a-z]+")


class NetworkFormatError(ValueError):
    """A data file does not follow the expected line grammar."""


class NetworkValidationError(ValueError):
    """Parsed data is inconsistent (unknown ids, no effective nodes...)."""


def normalize(raw_text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return [w for w in _SPLIT.split(raw_text.lower()) if w]


@dataclass
class Vocabulary:
    itos: list[str]
    counts: list[int]
    stoi: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def build(cls, documents, min_count: int = 1) -> "Vocabulary":
        if min_count < 1:
            raise ValueError("min_count must be positive")
        freq = Counter()
        for doc in documents:
            freq.update(normalize(doc))
        kept = sorted((w for w, c in freq.items() if c >= min_count),
                      key=lambda w: (-freq[w], w))
        unk_count = sum(c for w, c in freq.items() if c < min_count)
        return cls([PAD_TOKEN, UNK_TOKEN] + kept,
                   [0, unk_count] + [freq[w] for w in kept])

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def digest(self) -> str:
        """Stable hash of the index -> token list."""
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class TokenSequence:
    indices: np.ndarray
    true_length: int

    @property
    def max_len(self) -> int:
        return len(self.indices)


def tokenize(raw_text: str, vocab: Vocabulary, max_len: int) -> TokenSequence:
    """Map text to a PAD-filled index sequence of length ``max_len``."""
    if max_len < 1:
        raise ValueError("max_len must be positive")
    ids = [vocab.index(w) for w in normalize(raw_text)][:max_len]
    out = np.full(max_len, PAD, dtype=np.int64)
    out[:len(ids)] = ids
    return TokenSequence(out, len(ids))


@dataclass
class TextNetwork:
    """Undirected network whose nodes carry token sequences and optional labels.

    Nodes are dense integers ``0..N-1``; ``names`` keeps the ids used in the
    source files and ``class_names`` the raw label strings for each ClassId.
    ``labels`` uses -1 for unlabelled nodes.
    """

    names: list[str]
    edges: np.ndarray  # (E, 2), u < v, unique
    tokens: np.ndarray  # (N, max_len) int64, PAD-filled
    lengths: np.ndarray  # (N,) true lengths
    labels: np.ndarray  # (N,) int64, -1 = unlabelled
    class_names: list[str]
    adjacency: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        n = len(self.names)
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= n):
            raise NetworkValidationError("edge endpoint out of range")
        nbrs = [[] for _ in range(n)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        self.adjacency = [np.array(sorted(a), dtype=np.int64) for a in nbrs]

    @property
    def num_nodes(self) -> int:
        return len(self.names)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def max_len(self) -> int:
        return self.tokens.shape[1]

    def degree(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=np.int64)

    def content(self, node: int) -> TokenSequence:
        return TokenSequence(self.tokens[node], int(self.lengths[node]))

    def labelled_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.labels >= 0)

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(offsets, neighbors) arrays for vectorized walking."""
        deg = self.degree()
        offsets = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(deg, out=offsets[1:])
        flat = np.concatenate(self.adjacency) if self.num_nodes else np.empty(0, np.int64)
        return offsets, flat.astype(np.int64)

    def subgraph(self, keep) -> "TextNetwork":
        """Induced subnetwork on ``keep`` (sorted), renumbered densely."""
        keep = np.unique(np.asarray(keep, dtype=np.int64))
        remap = np.full(self.num_nodes, -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        e = remap[self.edges]
        e = e[(e >= 0).all(axis=1)]
        return TextNetwork([self.names[i] for i in keep], e, self.tokens[keep],
                           self.lengths[keep], self.labels[keep], list(self.class_names))

    def save(self, path) -> None:
        np.savez(path, names=np.array(self.names, dtype=object), edges=self.edges,
                 tokens=self.tokens, lengths=self.lengths, labels=self.labels,
                 class_names=np.array(self.class_names, dtype=object))

    @classmethod
    def load(cls, path) -> "TextNetwork":
        with np.load(path, allow_pickle=True) as z:
            return cls(list(z["names"]), z["edges"], z["tokens"], z["lengths"],
                       z["labels"], list(z["class_names"]))


@dataclass
class LoadReport:
    nodes: int
    effective_nodes: int
    edges: int
    vocab_size: int
    dropped_nodes: list[str]
    empty_docs: list[str]
    max_len: int

    def __str__(self):
        return "\n".join([
            f"nodes: {self.nodes}",
            f"effective nodes: {self.effective_nodes}",
            f"edges: {self.edges}",
            f"vocab size: {self.vocab_size}",
            f"dropped nodes: {len(self.dropped_nodes)}",
            f"empty docs: {len(self.empty_docs)}",
            f"max_len: {self.max_len}",
        ])


def _read_tsv(path, what):
    rows = {}
    order = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise NetworkFormatError(f"{path}:{lineno}: expected 'node_id<TAB>{what}'")
            key, value = line.split("\t", 1)
            key = key.strip()
            if not key:
                raise NetworkFormatError(f"{path}:{lineno}: empty node id")
            if key in rows:
                raise NetworkFormatError(f"{path}:{lineno}: duplicate node id {key!r}")
            rows[key] = value
            order.append(key)
    return rows, order


def _read_edges(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise NetworkFormatError(f"{path}:{lineno}: expected two node ids, got {len(parts)} fields")
            pairs.append((lineno, parts[0], parts[1]))
    return pairs


def load_network(edges_path, docs_path, labels_path=None, min_count: int = 1,
                 max_len: int | None = None):
    """Read the three data files and keep only nodes with at least one edge.

    Nodes are declared by the docs file. ``max_len`` caps the padded length;
    ``None`` uses the longest effective document.
    Returns ``(network, vocab, report)``.
    """
    for p in (edges_path, docs_path, labels_path):
        if p is not None and not Path(p).is_file():
            raise FileNotFoundError(f"no such file: {p}")
    docs, declared = _read_tsv(docs_path, "text")
    raw_labels = _read_tsv(labels_path, "label")[0] if labels_path else {}
    for key in raw_labels:
        if key not in docs:
            raise NetworkValidationError(f"{labels_path}: label for undeclared node {key!r}")

    edge_set = set()
    for lineno, a, b in _read_edges(edges_path):
        for x in (a, b):
            if x not in docs:
                raise NetworkValidationError(f"{edges_path}:{lineno}: unknown node {x!r}")
        if a == b:
            continue
        edge_set.add((a, b) if a < b else (b, a))

    touched = {x for e in edge_set for x in e}
    effective = [k for k in declared if k in touched]
    dropped = [k for k in declared if k not in touched]
    if not effective:
        raise NetworkValidationError("no effective nodes (every node is isolated)")
    if dropped:
        logger.info("dropping %d isolated nodes", len(dropped))

    vocab = Vocabulary.build((docs[k] for k in effective), min_count=min_count)
    longest = max(len(normalize(docs[k])) for k in effective)
    width = max(1, longest if max_len is None else min(max_len, max(longest, 1)))

    index = {k: i for i, k in enumerate(effective)}
    edges = np.array(sorted(tuple(sorted((index[a], index[b]))) for a, b in edge_set),
                     dtype=np.int64).reshape(-1, 2)
    seqs = [tokenize(docs[k], vocab, width) for k in effective]
    tokens = np.stack([s.indices for s in seqs])
    lengths = np.array([s.true_length for s in seqs], dtype=np.int64)
    empty = [k for k, s in zip(effective, seqs) if s.true_length == 0]
    if empty:
        logger.warning("%d effective nodes have empty documents", len(empty))

    class_names = sorted({raw_labels[k] for k in effective if k in raw_labels})
    cid = {c: i for i, c in enumerate(class_names)}
    labels = np.array([cid[raw_labels[k]] if k in raw_labels else -1 for k in effective],
                      dtype=np.int64)
    net = TextNetwork(effective, edges, tokens, lengths, labels, class_names)
    report = LoadReport(len(declared), len(effective), len(edges), len(vocab),
                        dropped, empty, width)
    return net, vocab, report


def class_histogram(network: TextNetwork) -> dict[int, int]:
    lab = network.labels[network.labels >= 0]
    ids, counts = np.unique(lab, return_counts=True)
    return {int(i): int(c) for i, c in zip(ids, counts)}


def convert_line_indexed(data_txt, graph_txt, group_txt, out_dir) -> None:
    """Convert a line-indexed corpus (line i = node i) to edges/docs/labels files.

    This is the layout commonly distributed for the abstract-only citation
    benchmarks: one document per line, an edge list, and one label per line.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(data_txt, encoding="utf-8", errors="replace") as src, \
            open(out / "docs.tsv", "w", encoding="utf-8") as dst:
        for i, line in enumerate(src):
            dst.write(f"{i}\t{line.strip()}\n")
    with open(graph_txt) as src, open(out / "edges.txt", "w") as dst:
        for line in src:
            if line.split():
                dst.write(" ".join(line.split()[:2]) + "\n")
    if group_txt is not None:
        with open(group_txt) as src, open(out / "labels.tsv", "w") as dst:
            for i, line in enumerate(src):
                if line.strip():
                    dst.write(f"{i}\t{line.strip()}\n")


def snowball_subsample(network: TextNetwork, target: int, rng) -> TextNetwork:
    """Breadth-first sample of about ``target`` nodes, then drop isolated ones."""
    n = network.num_nodes
    if target >= n:
        return network
    seen = np.zeros(n, dtype=bool)
    order = []
    for start in rng.permutation(n):
        if len(order) >= target:
            break
        if seen[start]:
            continue
        seen[start] = True
        frontier = [int(start)]
        order.append(int(start))
        while frontier and len(order) < target:
            nxt = []
            for v in frontier:
                for u in network.adjacency[v]:
                    if not seen[u] and len(order) < target:
                        seen[u] = True
                        order.append(int(u))
                        nxt.append(int(u))
            frontier = nxt
    sub = network.subgraph(order)
    return sub.subgraph(np.flatnonzero(sub.degree() > 0))
