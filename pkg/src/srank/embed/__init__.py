"""Skip-gram item embeddings over a Huffman-coded output layer."""

from .huffman import HuffmanCoding, build_huffman_tree
from .skipgram import EmbedConfig, hs_loss_and_gradient, mean_hs_loss, train_skipgram
from .table import EmbeddingTable, cosine_similarity, nearest_neighbors, read_embeddings, write_embeddings

__all__ = [
    "EmbedConfig",
    "EmbeddingTable",
    "HuffmanCoding",
    "build_huffman_tree",
    "cosine_similarity",
    "hs_loss_and_gradient",
    "mean_hs_loss",
    "nearest_neighbors",
    "read_embeddings",
    "train_skipgram",
    "write_embeddings",
]
