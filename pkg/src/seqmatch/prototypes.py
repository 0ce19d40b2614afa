"""Text-enhanced class prototypes.

Each support shot's frame embeddings get the class text embedding added to
every row; shots of a class are averaged frame-wise and the result is passed
through one trainable encoder block over the frame tokens.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UsageError
from .numerics import as_tensor, init_block, transformer_block

MERGE_PREFIX = "merge"


@dataclass
class ClassCorpus:
    name: str
    descriptions: list
    text_embedding: np.ndarray = None

    def __post_init__(self):
        if self.text_embedding is None:
            if not self.descriptions:
                raise UsageError(f"class {self.name!r} has neither descriptions nor an embedding")
        else:
            self.text_embedding = np.asarray(self.text_embedding, dtype=np.float64)
            if not np.all(np.isfinite(self.text_embedding)):
                raise UsageError(f"text embedding of {self.name!r} is not finite")

    @property
    def sentence(self):
        return " ".join(self.descriptions)


@dataclass
class Prototype:
    class_id: int
    frame_sequence: np.ndarray
    pooled: np.ndarray


def class_text_embedding(embeddings):
    """Collapse one or several ``D``-vectors for a class to their mean."""
    e = np.asarray(embeddings, dtype=np.float64)
    return e if e.ndim == 1 else e.mean(axis=0)


def enhance(frames, text):
    """Add ``text`` to every row of ``frames (..., T, D)``.

    ``text`` is a ``D``-vector or anything broadcastable against ``frames``.
    """
    frames, text = as_tensor(frames), as_tensor(text)
    if text.shape[-1] != frames.shape[-1]:
        raise DimensionError(f"text width {text.shape[-1]} != frame width {frames.shape[-1]}")
    return frames + text


def init_merge(store, D, rng, std=0.02):
    init_block(store, MERGE_PREFIX, D, rng, std=std, trainable=True)
    return store


def merge_shots(shots, params):
    """Batched merging: ``shots (..., K, T, D)`` -> ``(..., T, D)``."""
    shots = as_tensor(shots)
    if shots.ndim < 3:
        raise DimensionError("shots need shape (..., K, T, D)")
    if shots.shape[-3] == 0:
        raise UsageError("need at least one shot")
    return transformer_block(shots.mean(axis=-3), params, MERGE_PREFIX)


def merge_prototype(shots, params, class_id=0):
    """Build a :class:`Prototype` from ``K`` enhanced ``T x D`` shots."""
    if len(shots) == 0:
        raise UsageError("need at least one shot")
    arr = np.stack([as_tensor(s).data for s in shots])
    if arr.ndim != 3:
        raise DimensionError("every shot must be a T x D matrix")
    seq = merge_shots(arr, params).data
    return Prototype(class_id, seq, seq.mean(axis=0))
