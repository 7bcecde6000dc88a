import numpy as np
import pytest
from hypothesis import given, strategies as st

from textnet.graph import (PAD, UNK, NetworkFormatError, NetworkValidationError, TextNetwork, Vocabulary,
                           class_histogram, load_network, normalize, snowball_subsample, tokenize)
from textnet.synthetic import make_network_files


def write(tmp_path, edges, docs, labels=None):
    (tmp_path / "e.txt").write_text(edges)
    (tmp_path / "d.tsv").write_text(docs)
    lp = None
    if labels is not None:
        lp = tmp_path / "l.tsv"
        lp.write_text(labels)
    return tmp_path / "e.txt", tmp_path / "d.tsv", lp


def test_minimal_graph(tmp_path):
    net, vocab, report = load_network(*write(tmp_path, "0 1\n", "0\ta b\n1\tb c\n"), min_count=1)
    assert net.num_nodes == 2
    assert set(vocab.itos) == {"<pad>", "<unk>", "a", "b", "c"}
    assert vocab.index("<pad>") == PAD and vocab.index("<unk>") == UNK
    assert report.dropped_nodes == []


def test_isolated_node_dropped(tmp_path):
    net, vocab, report = load_network(*write(tmp_path, "0 1\n", "0\ta\n1\tb\n2\tc\n"))
    assert net.names == ["0", "1"]
    assert report.dropped_nodes == ["2"]
    assert report.effective_nodes == 2 and report.nodes == 3
    # vocabulary only covers effective documents
    assert "c" not in vocab


def test_self_loops_and_duplicates_collapse(tmp_path):
    net, _, _ = load_network(*write(tmp_path, "0 1\n1 0\n0 1\n1 1\n1 2\n", "0\ta\n1\tb\n2\tc\n"))
    assert net.edges.tolist() == [[0, 1], [1, 2]]
    for v in range(net.num_nodes):
        for u in net.adjacency[v]:
            assert v in net.adjacency[u]
            assert u != v


def test_malformed_edge_line(tmp_path):
    with pytest.raises(NetworkFormatError, match=":2:"):
        load_network(*write(tmp_path, "0 1\n0 1 2\n", "0\ta\n1\tb\n"))


def test_malformed_doc_line(tmp_path):
    with pytest.raises(NetworkFormatError, match=":2:"):
        load_network(*write(tmp_path, "0 1\n", "0\ta\n1 b\n"))


def test_unknown_node_in_edges(tmp_path):
    with pytest.raises(NetworkValidationError, match="unknown node"):
        load_network(*write(tmp_path, "0 7\n", "0\ta\n1\tb\n"))


def test_label_for_undeclared_node(tmp_path):
    with pytest.raises(NetworkValidationError):
        load_network(*write(tmp_path, "0 1\n", "0\ta\n1\tb\n", "0\tx\n9\ty\n"))


def test_no_effective_nodes(tmp_path):
    with pytest.raises(NetworkValidationError, match="no effective"):
        load_network(*write(tmp_path, "0 0\n", "0\ta\n1\tb\n"))


def test_missing_file(tmp_path):
    (tmp_path / "e.txt").write_text("0 1\n")
    with pytest.raises(FileNotFoundError, match="nope.tsv"):
        load_network(tmp_path / "e.txt", tmp_path / "nope.tsv")


def test_labels_partial(tmp_path):
    net, _, _ = load_network(*write(tmp_path, "0 1\n1 2\n", "0\ta\n1\tb\n2\tc\n", "0\tAI\n2\tDB\n"))
    assert net.class_names == ["AI", "DB"]
    assert net.labels.tolist() == [0, -1, 1]
    assert class_histogram(net) == {0: 1, 1: 1}


def test_tokenize_examples():
    vocab = Vocabulary.build(["graph embedding"])
    seq = tokenize("Graph Embedding.", vocab, 4)
    assert seq.indices.tolist() == [vocab.index("graph"), vocab.index("embedding"), PAD, PAD]
    assert seq.true_length == 2
    empty = tokenize("", vocab, 4)
    assert empty.indices.tolist() == [PAD] * 4 and empty.true_length == 0


def test_tokenize_unk_below_min_count():
    vocab = Vocabulary.build(["graph graph zzz"], min_count=2)
    assert "zzz" not in vocab
    seq = tokenize("zzz graph", vocab, 5)
    assert seq.indices.tolist()[:2] == [UNK, vocab.index("graph")]
    assert seq.true_length == 2
    assert vocab.counts[UNK] == 1


def test_tokenize_truncates():
    vocab = Vocabulary.build(["a b c d e"])
    seq = tokenize("a b c d e", vocab, 3)
    assert seq.true_length == 3 and PAD not in seq.indices.tolist()


@given(st.text(max_size=60))
def test_tokenize_idempotent_on_normalized(text):
    norm = " ".join(normalize(text))
    assert normalize(norm) == normalize(text)
    vocab = Vocabulary.build([text])
    a = tokenize(text, vocab, 80)
    b = tokenize(norm, vocab, 80)
    assert a.indices.tolist() == b.indices.tolist()
    assert all(i < len(vocab) for i in a.indices)
    assert (a.indices[a.true_length:] == PAD).all()


def test_vocab_min_count_rule():
    docs = ["a a a b b c", "a b d"]
    vocab = Vocabulary.build(docs, min_count=2)
    assert {"a", "b"} <= set(vocab.itos) and "c" not in vocab and "d" not in vocab
    # bijection for retained tokens
    assert all(vocab.stoi[w] == i for i, w in enumerate(vocab.itos))


def test_class_histogram_no_labels():
    net = TextNetwork(["a", "b"], [[0, 1]], np.ones((2, 2), int), np.array([2, 2]), np.array([-1, -1]), [])
    assert class_histogram(net) == {}


def test_class_histogram_counts():
    net = TextNetwork(["a", "b", "c"], [[0, 1], [1, 2]], np.ones((3, 2), int), np.array([2, 2, 2]),
                      np.array([0, 0, 1]), ["x", "y"])
    assert class_histogram(net) == {0: 2, 1: 1}


def test_round_trip(tmp_path):
    d = make_network_files(tmp_path / "syn", num_nodes=50, num_classes=3, isolated=2, seed=4)
    net, _, report = load_network(d / "edges.txt", d / "docs.tsv", d / "labels.tsv")
    assert report.effective_nodes == 50
    net.save(tmp_path / "net.npz")
    back = TextNetwork.load(tmp_path / "net.npz")
    assert back.names == net.names and back.class_names == net.class_names
    assert np.array_equal(back.tokens, net.tokens) and np.array_equal(back.labels, net.labels)
    assert all(np.array_equal(a, b) for a, b in zip(back.adjacency, net.adjacency))
    assert (net.degree() >= 1).all()


def test_max_len_cap(tmp_path):
    net, _, report = load_network(*write(tmp_path, "0 1\n", "0\ta b c d e f\n1\tb\n"), max_len=3)
    assert net.max_len == 3 and report.max_len == 3
    assert net.lengths.tolist() == [3, 1]


def test_snowball_subsample_effective(tmp_path):
    d = make_network_files(tmp_path / "syn", num_nodes=400, seed=2)
    net, _, _ = load_network(d / "edges.txt", d / "docs.tsv", d / "labels.tsv")
    sub = snowball_subsample(net, 150, np.random.default_rng(0))
    assert 100 <= sub.num_nodes <= 150
    assert (sub.degree() >= 1).all()
