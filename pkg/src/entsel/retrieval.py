"""Bi-encoder candidate retrieval: exact cosine scan over option embeddings.

The index embeds every option once; queries reuse it. No approximate
structures, since option spaces stay small enough for a full scan.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .encoder import bi_encode, bi_encode_rows
from .errors import DataError
from .inference import ScoredOption
from .pairing import verbalize
from .training import Adam

EPS = 1e-12
INDEX_HEADER = struct.Struct("<qq")  # n rows, model_dim


@dataclass
class EmbeddingIndex:
    matrix: np.ndarray  # [n, model_dim], rows unit-norm, row i = option i
    space_name: str = "default"

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 1:
            raise DataError("index matrix must be [n, model_dim] with n >= 1")
        norms = np.linalg.norm(self.matrix, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise DataError("index rows must be unit-norm")

    def __len__(self):
        return self.matrix.shape[0]


def option_text(space, option_index):
    """Text embedded for an option: entity-dependent templates use the bare label."""
    if "[ENTITY]" in space.template:
        return space.options[option_index]
    return verbalize(space, option_index)


def _text_ids(model, vocab, text):
    from .text import CLS_ID

    return [CLS_ID] + vocab.encode(text)[:model.config.max_len - 1]


def embed_text(model, vocab, text):
    """Unit-norm query embedding ([CLS] prepended, eval mode)."""
    return bi_encode(model, _text_ids(model, vocab, text), train_mode=False).data


def _embed_many(model, vocab, texts):
    """One embedding row per text, fused by length; same values as embed_text."""
    rows = bi_encode_rows(model, [_text_ids(model, vocab, t) for t in texts])
    return np.stack([r.data for r in rows])


def build_index(model, space, vocab):
    """Embed every option once; rebuilding with the same weights is bitwise stable."""
    if len(space) < 1:
        raise DataError("cannot index an empty option space")
    rows = _embed_many(model, vocab, [option_text(space, i) for i in range(len(space))])
    return EmbeddingIndex(matrix=rows, space_name=space.name)


def top_k(index, model, vocab, text, k):
    """k best options by cosine, scores descending, ties to the smaller index."""
    n = len(index)
    if not 1 <= k <= n:
        raise DataError(f"k must lie in [1, {n}], got {k}")
    query = embed_text(model, vocab, text)
    scores = index.matrix @ query
    order = np.lexsort((np.arange(n), -scores))[:k]
    return [ScoredOption(int(i), float(scores[i])) for i in order]


def _rank_prefix(index, queries, k):
    # one lexsort per query row; ties break toward the smaller option index
    n = len(index)
    scores = queries @ index.matrix.T
    return [[int(i) for i in np.lexsort((np.arange(n), -row))[:k]] for row in scores]


def rank_all(index, model, vocab, instances):
    """Full option ranking per instance (one query embedding each)."""
    queries = _embed_many(model, vocab, [inst.premise for inst in instances])
    ranked = _rank_prefix(index, queries, len(index))
    return {inst.id: order for inst, order in zip(instances, ranked)}


def recall_from_rankings(rankings, instances, k):
    hits = total = 0
    for inst in instances:
        prefix = set(rankings[inst.id][:k])
        for g in inst.gold:
            total += 1
            hits += int(g in prefix)
    return hits / total if total else 0.0


def recall_at_k(index, model, vocab, instances, k):
    """Fraction of (instance, gold option) pairs whose gold lands in the top k."""
    return recall_from_rankings(rank_all(index, model, vocab, instances), instances, k)


def retrieve_candidates(index, model, vocab, instances, k):
    """instance id -> top-k option indices, in rank order."""
    n = len(index)
    if not 1 <= k <= n:
        raise DataError(f"k must lie in [1, {n}], got {k}")
    queries = _embed_many(model, vocab, [inst.premise for inst in instances])
    ranked = _rank_prefix(index, queries, k)
    return {inst.id: order for inst, order in zip(instances, ranked)}


def train_bi_encoder(model, dataset, space, vocab, epochs=3, batch_size=16,
                     lr=3e-4, temperature=0.1, seed=0):
    """In-batch contrastive fit: each premise against its gold option embeddings.

    Every (instance, gold option) pair becomes one training row, so a
    multi-gold premise is pulled toward each of its golds; the other rows in
    the batch act as negatives. Returns the per-step loss sequence.
    """
    if not dataset:
        raise DataError("bi-encoder training set is empty")
    if temperature <= 0:
        raise DataError("temperature must be positive")
    pairs = [(inst, g) for inst in dataset for g in sorted(inst.gold)]
    if not pairs:
        raise DataError("bi-encoder training set has no gold options")
    rng = np.random.default_rng(seed)
    total_steps = epochs * max(1, len(pairs) // max(2, batch_size))
    opt = Adam(model.parameters(), lr=lr, warmup_steps=max(1, int(0.05 * total_steps)))
    losses = []
    for _epoch in range(epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), batch_size):
            batch = [pairs[int(i)] for i in order[start:start + batch_size]]
            if len(batch) < 2:
                continue  # a single row has no in-batch negatives
            q_lists = [_text_ids(model, vocab, inst.premise) for inst, _ in batch]
            o_lists = [_text_ids(model, vocab, option_text(space, g)) for _, g in batch]
            opt.zero_grad()
            with nm.ComputeGraph():
                q_rows = bi_encode_rows(model, q_lists, train_mode=True)
                o_rows = bi_encode_rows(model, o_lists, train_mode=True)
                sims = nm.matmul(nm.stack(q_rows), nm.transpose(nm.stack(o_rows), (1, 0)))
                probs = nm.softmax(nm.mul_scalar(sims, 1.0 / temperature), axis=-1)
                eye = nm.Tensor(np.eye(len(batch)))
                diag = nm.tsum(nm.mul(nm.log(probs, floor=EPS), eye))
                loss = nm.mul_scalar(diag, -1.0 / len(batch))
                nm.backward(loss)
            losses.append(loss.item())
            opt.step()
    return losses


def save_index(path, index):
    n, d = index.matrix.shape
    with open(path, "wb") as fh:
        fh.write(INDEX_HEADER.pack(n, d))
        fh.write(np.ascontiguousarray(index.matrix, dtype="<f8").tobytes())


def load_index(path, space_name="default"):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < INDEX_HEADER.size:
        raise DataError(f"index file {path} is truncated")
    n, d = INDEX_HEADER.unpack_from(blob)
    expected = INDEX_HEADER.size + n * d * 8
    if n < 1 or d < 1 or len(blob) != expected:
        raise DataError(f"index file {path} has inconsistent header or length")
    matrix = np.frombuffer(blob, dtype="<f8", offset=INDEX_HEADER.size).reshape(n, d)
    return EmbeddingIndex(matrix=matrix.astype(np.float64), space_name=space_name)
