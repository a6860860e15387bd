"""Skip-gram item embeddings trained with a hierarchical softmax output layer.

The loss for one (center, target) pair walks the target's Huffman path and
sums ``-log sigmoid(s * <center, node>)`` with ``s = +1`` for a 0 bit and
``-1`` for a 1 bit. Training follows the word2vec recipe: the window is
shrunk to a random ``b`` in ``[1, window]`` per center token and the
learning rate decays linearly over processed tokens.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit, prange

from ..corpus import PhraseCorpus, Vocabulary
from .huffman import HuffmanCoding, build_huffman_tree
from .table import EmbeddingTable

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbedConfig:
    dimension: int = 32
    window: int = 5
    epochs: int = 5
    initial_learning_rate: float = 0.025
    min_learning_rate: float | None = None  # None -> 1e-4 * initial
    seed: int = 0
    deterministic: bool = True
    workers: int = 1
    keep_internal: bool = False
    track_loss: bool = False

    def __post_init__(self) -> None:
        for name in ("dimension", "window", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.initial_learning_rate > 0:
            raise ValueError("initial_learning_rate must be positive")
        if not 0 < self.min_lr < self.initial_learning_rate:
            raise ValueError("min_learning_rate must be positive and below initial_learning_rate")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def min_lr(self) -> float:
        if self.min_learning_rate is None:
            return 1e-4 * self.initial_learning_rate
        return self.min_learning_rate


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def hs_loss_and_gradient(
    center_vector: np.ndarray,
    target_path: Sequence[int],
    target_code: Sequence[int],
    node_vectors: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Hierarchical-softmax loss of one target given a center vector.

    Returns ``(loss, d loss / d center, d loss / d path nodes)``; the last is
    a ``(len(path), dim)`` array aligned with ``target_path``.
    """
    center = np.asarray(center_vector, dtype=np.float64)
    path = np.asarray(target_path, dtype=np.int64)
    code = np.asarray(target_code, dtype=np.int64)
    if path.shape != code.shape:
        raise ValueError("target_path and target_code must have equal length")
    nodes = np.asarray(node_vectors, dtype=np.float64)[path] if len(path) else np.zeros((0, center.size))
    if not (np.all(np.isfinite(center)) and np.all(np.isfinite(nodes))):
        raise ValueError("non-finite input to hs_loss_and_gradient")

    sign = 1.0 - 2.0 * code
    margin = sign * (nodes @ center)
    loss = float(-_log_sigmoid(margin).sum())
    # d/d dot of -log sigmoid(s * dot) = -s * sigmoid(-s * dot)
    coeff = -sign * np.exp(_log_sigmoid(-margin))
    grad_center = coeff @ nodes
    grad_nodes = coeff[:, None] * center[None, :]
    return loss, grad_center, grad_nodes


@njit(cache=True)
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _neg_log_sigmoid(x):
    if x >= 0:
        return math.log1p(math.exp(-x))
    return -x + math.log1p(math.exp(x))


@njit(cache=True)
def _sgd_pair(syn0, syn1, center, codes, points, start, end, alpha, neu1e):
    # one simultaneous gradient step on the center row and the path rows
    dim = syn0.shape[1]
    for j in range(dim):
        neu1e[j] = 0.0
    loss = 0.0
    for k in range(start, end):
        node = points[k]
        f = 0.0
        for j in range(dim):
            f += syn0[center, j] * syn1[node, j]
        bit = codes[k]
        loss += _neg_log_sigmoid((1.0 - 2.0 * bit) * f)
        g = (1.0 - bit - _sigmoid(f)) * alpha
        for j in range(dim):
            neu1e[j] += g * syn1[node, j]
            syn1[node, j] += g * syn0[center, j]
    for j in range(dim):
        syn0[center, j] += neu1e[j]
    return loss


@njit(cache=True)
def _train_range(tokens, phrase_offsets, p_lo, p_hi, shrink, syn0, syn1, codes, points,
                 code_offsets, alpha0, alpha_min, done0, done_scale, total):
    neu1e = np.zeros(syn0.shape[1])
    done = 0
    loss = 0.0
    pairs = 0
    for p in range(p_lo, p_hi):
        a = phrase_offsets[p]
        b = phrase_offsets[p + 1]
        for t in range(a, b):
            alpha = alpha0 - (alpha0 - alpha_min) * (done0 + done * done_scale) / total
            if alpha < alpha_min:
                alpha = alpha_min
            r = shrink[t]
            lo = max(a, t - r)
            hi = min(b, t + r + 1)
            center = tokens[t]
            for c in range(lo, hi):
                if c == t:
                    continue
                target = tokens[c]
                loss += _sgd_pair(syn0, syn1, center, codes, points,
                                  code_offsets[target], code_offsets[target + 1], alpha, neu1e)
                pairs += 1
            done += 1
    return done, loss, pairs


@njit(cache=True, parallel=True)
def _train_hogwild(tokens, phrase_offsets, chunk_bounds, shrink, syn0, syn1, codes, points,
                   code_offsets, alpha0, alpha_min, done0, total):
    # unsynchronized updates to shared syn0/syn1; results are not reproducible
    n_chunks = len(chunk_bounds) - 1
    losses = np.zeros(n_chunks)
    pair_counts = np.zeros(n_chunks, dtype=np.int64)
    for w in prange(n_chunks):
        _, loss, pairs = _train_range(tokens, phrase_offsets, chunk_bounds[w], chunk_bounds[w + 1],
                                      shrink, syn0, syn1, codes, points, code_offsets,
                                      alpha0, alpha_min, done0, n_chunks, total)
        losses[w] = loss
        pair_counts[w] = pairs
    return losses.sum(), pair_counts.sum()


@njit(cache=True)
def _corpus_loss(tokens, phrase_offsets, window, syn0, syn1, codes, points, code_offsets):
    dim = syn0.shape[1]
    loss = 0.0
    pairs = 0
    for p in range(len(phrase_offsets) - 1):
        a = phrase_offsets[p]
        b = phrase_offsets[p + 1]
        for t in range(a, b):
            center = tokens[t]
            for c in range(max(a, t - window), min(b, t + window + 1)):
                if c == t:
                    continue
                target = tokens[c]
                for k in range(code_offsets[target], code_offsets[target + 1]):
                    f = 0.0
                    for j in range(dim):
                        f += syn0[center, j] * syn1[points[k], j]
                    loss += _neg_log_sigmoid((1.0 - 2.0 * codes[k]) * f)
                pairs += 1
    return loss, pairs


def _encode(corpus: PhraseCorpus, vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    lookup = {item: e.index for item, e in vocab.entries.items()}
    try:
        tokens = np.fromiter((lookup[t] for p in corpus.phrases for t in p), dtype=np.int64,
                             count=corpus.token_count)
    except KeyError as exc:
        raise ValueError(f"corpus token {exc.args[0]!r} is not in the vocabulary; filter the corpus first") from None
    offsets = np.zeros(len(corpus.phrases) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(p) for p in corpus.phrases])
    return tokens, offsets


def mean_hs_loss(table: EmbeddingTable, corpus: PhraseCorpus, vocab: Vocabulary,
                 coding: HuffmanCoding | None = None, window: int = 5) -> float:
    """Mean pair loss over every (center, context) pair within the full window."""
    if table.internal_node_vectors is None:
        raise ValueError("table was trained without keep_internal; inner-node vectors are needed")
    coding = coding or build_huffman_tree(vocab)
    tokens, offsets = _encode(corpus, vocab)
    codes, points, code_offsets = coding.flat()
    syn0 = table.vectors_in_vocab_order(vocab)
    loss, pairs = _corpus_loss(tokens, offsets, window, syn0, table.internal_node_vectors,
                               codes, points, code_offsets)
    return loss / max(pairs, 1)


@dataclass
class TrainingStats:
    epoch_mean_loss: list[float] = field(default_factory=list)
    pairs_per_epoch: list[int] = field(default_factory=list)


def train_skipgram(corpus: PhraseCorpus, vocab: Vocabulary, config: EmbedConfig) -> EmbeddingTable:
    if corpus.phrase_count == 0 or len(vocab) == 0:
        raise ValueError("nothing to train: empty corpus")
    tokens, offsets = _encode(corpus, vocab)
    coding = build_huffman_tree(vocab)
    codes, points, code_offsets = coding.flat()

    rng = np.random.default_rng(config.seed)
    dim = config.dimension
    syn0 = (rng.random((len(vocab), dim)) - 0.5) / dim
    syn1 = np.zeros((coding.node_count, dim))

    n_tokens = len(tokens)
    total = float(config.epochs * n_tokens)
    alpha0, alpha_min = config.initial_learning_rate, config.min_lr
    stats = TrainingStats()
    loss_history = []
    hogwild = not config.deterministic and config.workers > 1
    if hogwild:
        chunk_bounds = np.linspace(0, len(offsets) - 1, config.workers + 1).astype(np.int64)

    for epoch in range(config.epochs):
        shrink = rng.integers(1, config.window + 1, size=n_tokens)
        done0 = epoch * n_tokens
        if hogwild:
            loss, pairs = _train_hogwild(tokens, offsets, chunk_bounds, shrink, syn0, syn1, codes, points,
                                         code_offsets, alpha0, alpha_min, done0, total)
        else:
            _, loss, pairs = _train_range(tokens, offsets, 0, len(offsets) - 1, shrink, syn0, syn1, codes,
                                          points, code_offsets, alpha0, alpha_min, done0, 1, total)
        stats.epoch_mean_loss.append(loss / max(pairs, 1))
        stats.pairs_per_epoch.append(int(pairs))
        if config.track_loss:
            full_loss, full_pairs = _corpus_loss(tokens, offsets, config.window, syn0, syn1,
                                                 codes, points, code_offsets)
            loss_history.append(full_loss / max(full_pairs, 1))
        logger.debug("epoch %d: mean pair loss %.5f over %d pairs", epoch + 1,
                     stats.epoch_mean_loss[-1], pairs)

    return EmbeddingTable(
        vocab.item_ids,
        syn0,
        internal_node_vectors=syn1 if config.keep_internal else None,
        loss_history=loss_history,
        stats=stats,
    )
