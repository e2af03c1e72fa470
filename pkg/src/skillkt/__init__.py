"""Knowledge tracing with expert skill-graph embeddings.

Pipeline: an expert-labeled skill-relationship graph is embedded with biased
random walks plus skip-gram negative sampling; an encoder-decoder attention
model predicts next-answer correctness from interaction sequences; a
projection loss pulls problem embeddings toward the frozen skill vectors so
graph structure flows into the learned representations.
"""

__version__ = "0.1.0"

from .embeddings import EmbeddingTable, export_embeddings, import_embeddings
from .graph import SkillGraph, load_edge_list, random_skill_graph
from .model import KTModel, ModelConfig, forward, init_parameters
from .node2vec import WalkConfig, generate_walks, node2vec_transition
from .skipgram import train_skipgram
from .trainer import TrainConfig, auc, evaluate, train

__all__ = [
    "EmbeddingTable", "KTModel", "ModelConfig", "SkillGraph", "TrainConfig",
    "WalkConfig", "auc", "evaluate", "export_embeddings", "forward",
    "generate_walks", "import_embeddings", "init_parameters", "load_edge_list",
    "node2vec_transition", "random_skill_graph", "train", "train_skipgram",
]
