"""Seeded synthetic datasets.

``cluster``: every token of a class-``c`` video is drawn around a class mean
``separation * sigma * e_c`` with isotropic noise ``sigma``; the ``e_c`` are
orthonormal and the text embedding of class ``c`` is ``text_scale * e_c``.

``order-only``: all classes share one pool of ``T`` base frames (centred
over the pool); class ``c`` shows them in its own fixed order. Videos add
small token noise. Text embeddings are random unit directions, so neither
the frame content nor the text leaks the class without the frame order.

Class structure comes from the ``synth-structure`` substream and video draws
from ``synth-data/<split>``, so splits of one seed share their classes.
"""

from dataclasses import dataclass
import math

import numpy as np

from .engine import Dataset
from .errors import UsageError
from .prototypes import ClassCorpus
from .rng import substream

KINDS = ("cluster", "order-only")


@dataclass(frozen=True)
class SynthParams:
    kind: str = "cluster"
    classes: int = 5
    videos_per_class: int = 20
    T: int = 8
    U: int = 4
    D: int = 32
    separation: float = 4.0
    sigma: float = 1.0
    noise: float = 0.05
    text_scale: float = 1.0
    seed: int = 0
    # size of the "test" split; None keeps videos_per_class
    test_videos_per_class: int = None

    def validate(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown synthetic kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.test_videos_per_class is not None and self.test_videos_per_class < 1:
            raise UsageError("test_videos_per_class must be >= 1")
        if min(self.classes, self.videos_per_class, self.T, self.U, self.D) < 1:
            raise UsageError("classes, videos_per_class, T, U and D must be >= 1")
        if self.kind == "cluster" and self.classes > self.D:
            raise UsageError("cluster kind needs classes <= D for orthogonal class means")
        if self.kind == "order-only" and self.classes > math.factorial(self.T):
            raise UsageError("order-only kind needs classes <= T! distinct orders")
        for name in ("separation", "sigma", "noise", "text_scale"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise UsageError(f"{name} must be finite and >= 0")
        if self.text_scale == 0:
            raise UsageError("text_scale must be > 0")
        return self


def _orders(rng, classes, T):
    seen, out = set(), []
    while len(out) < classes:
        p = tuple(int(x) for x in rng.permutation(T))
        if p not in seen:
            seen.add(p)
            out.append(p)
    return np.array(out)


def generate(params, split="train"):
    """Build a :class:`Dataset` and its per-class corpus records."""
    p = params.validate()
    srng = substream(p.seed, "synth-structure")
    drng = substream(p.seed, f"synth-data/{split}")
    V = p.test_videos_per_class if split == "test" and p.test_videos_per_class else p.videos_per_class
    C, T, U, D = p.classes, p.T, p.U, p.D
    labels = np.repeat(np.arange(C), V)
    if p.kind == "cluster":
        basis = np.linalg.qr(srng.standard_normal((D, D)))[0][:, :C].T  # (C, D) orthonormal rows
        means = p.separation * p.sigma * basis
        videos = means[labels][:, None, None, :] + p.sigma * drng.standard_normal((C * V, T, U, D))
        text = p.text_scale * basis
    else:
        base = srng.standard_normal((T, U, D))
        base -= base.mean(axis=0, keepdims=True)
        orders = _orders(srng, C, T)
        text = srng.standard_normal((C, D))
        text *= p.text_scale / np.linalg.norm(text, axis=1, keepdims=True)
        videos = base[orders[labels]] + p.noise * drng.standard_normal((C * V, T, U, D))
    names = [f"class{c:02d}" for c in range(C)]
    video_names = [f"{split}-{names[l]}-{i % V:03d}" for i, l in enumerate(labels)]
    corpus = [
        ClassCorpus(n, [f"synthetic {p.kind} class {c}"], text[c]) for c, n in enumerate(names)
    ]
    return Dataset(names, videos, labels, text, video_names), corpus
