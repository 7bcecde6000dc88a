"""Node embeddings for labelled textual networks.

An attention text encoder is trained jointly on random-walk context
prediction and a masked node-label objective, then evaluated by node
classification.
"""

from .encoder import EncoderParams, encode_node, positional_encoding
from .evaluation import SplitSpec, macro_f1, project_2d, run_experiment, split_nodes
from .graph import TextNetwork, Vocabulary, load_network, tokenize
from .training import TrainConfig, embed_all, train
from .walker import WalkConfig, generate_walks

__version__ = "0.1.0"
