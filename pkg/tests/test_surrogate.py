"""The dataset protocol run end to end on a synthetic homophilous text network.

This is supplementary to the dataset criteria in test_acceptance.py: it checks
the same orderings (joint over structure-only, non-decreasing in the labelled
ratio) with the default hyperparameters, at a size that runs in a few minutes.
It says nothing about absolute scores on real citation data.
"""

import warnings

import pytest

from textnet.evaluation import SplitSpec, run_experiment
from textnet.graph import load_network
from textnet.synthetic import make_network_files
from textnet.training import TrainConfig
from textnet.walker import WalkConfig

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def reports(tmp_path_factory):
    d = make_network_files(tmp_path_factory.mktemp("surrogate"), num_nodes=300, num_classes=5, doc_length=30,
                           homophily=0.75, topic_rate=0.15, seed=3)
    net, vocab, _ = load_network(d / "edges.txt", d / "docs.tsv", d / "labels.tsv")
    walk = WalkConfig(3, 20, 5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        joint = run_experiment(net, len(vocab), [SplitSpec(0.7, 0.1), SplitSpec(0.7, 0.3), SplitSpec(0.7)],
                               walk, TrainConfig(), repeats=3)
        struct = run_experiment(net, len(vocab), [SplitSpec(0.7)], walk, TrainConfig(),
                                mode="structure_only", repeats=3)
    print("joint", [round(joint.mean(0.7, lab), 4) for lab in (0.1, 0.3, 0.7)],
          "structure-only", round(struct.mean(0.7), 4))
    return joint, struct


def test_joint_beats_structure_only(reports):
    joint, struct = reports
    assert joint.mean(0.7) - struct.mean(0.7) >= 0.05


def test_structure_only_above_chance(reports):
    _, struct = reports
    assert struct.mean(0.7) > 0.3


def test_monotone_in_labelled_ratio(reports):
    joint, _ = reports
    curve = [joint.mean(0.7, lab) for lab in (0.1, 0.3, 0.7)]
    drops = [a - b for a, b in zip(curve, curve[1:]) if b < a]
    assert len(drops) <= 1 and all(d <= 0.01 for d in drops), curve
