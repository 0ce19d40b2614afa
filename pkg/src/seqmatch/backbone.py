"""Stub video backbone with sequential-perceiver adapters.

A video enters as ``T x U x D`` frame features (``T`` frames of ``U`` spatial
tokens). The first ``J`` encoder blocks run frozen and per frame. Each of the
remaining ``L - J`` blocks has an adapter next to it that carries a temporal
query from frame to frame: at frame ``k`` the query attends over the
block's output tokens of frame ``k`` only, so the temporal state of frame
``k`` never sees later frames. The state is projected back to width ``D``
and added to every token of its frame.

All functions accept an optional leading batch axis: ``spatial`` may be
``(..., T, U, D)`` and ``temporal`` ``(..., T, D)``.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import DimensionError, UsageError
from .numerics import Tensor, as_tensor, init_block, matmul, stack, symmetric_mean, transformer_block
from .rng import truncated_normal


@dataclass(frozen=True)
class AdapterConfig:
    """Backbone depth, frozen prefix, adapter width and fusion ratios."""

    L: int = 4
    J: int = 2
    d: int = 8
    alpha: float = 0.1
    beta: float = 0.1

    def validate(self, D=None):
        if self.L < 1:
            raise UsageError("L must be >= 1")
        if not 0 <= self.J < self.L:
            raise UsageError("J must satisfy 0 <= J < L")
        if self.d < 1 or (D is not None and self.d > D):
            raise UsageError(f"adapter width d={self.d} must be in [1, D]")
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise UsageError("alpha and beta must be finite")
        return self

    @property
    def adapted_blocks(self):
        return range(self.J, self.L)


@dataclass
class VideoFeatures:
    """Spatial tokens ``(..., T, U, D)`` plus a per-frame temporal track ``(..., T, D)``."""

    spatial: Tensor
    temporal: Tensor = None

    def __post_init__(self):
        self.spatial = as_tensor(self.spatial)
        if self.spatial.ndim < 3:
            raise DimensionError("spatial features need shape (..., T, U, D)")
        T, U, D = self.spatial.shape[-3:]
        if min(T, U, D) < 1:
            raise DimensionError("T, U and D must all be >= 1")
        if self.temporal is not None:
            self.temporal = as_tensor(self.temporal)
            if self.temporal.shape != self.spatial.shape[:-2] + (D,):
                raise DimensionError("temporal track must be (..., T, D)")

    @property
    def T(self):
        return self.spatial.shape[-3]

    @property
    def U(self):
        return self.spatial.shape[-2]

    @property
    def D(self):
        return self.spatial.shape[-1]


def init_backbone(store, cfg, D, rng, block_std=0.02, adapter_std=None):
    """Create block, adapter and temporal-token parameters in ``store``.

    Block weights are frozen. Adapter projections use fan-in scaled normal
    draws (``adapter_std`` overrides the scale); the temporal token is a
    truncated normal with std 0.02.
    """
    cfg.validate(D)
    for i in range(cfg.L):
        if f"block{i}.ln1.g" not in store:
            init_block(store, f"block{i}", D, rng, std=block_std, trainable=False)
    store.add("temporal_token", truncated_normal(rng, (D,), 0.02))
    d = cfg.d
    for i in cfg.adapted_blocks:
        s_in = adapter_std or 1.0 / math.sqrt(D)
        s_mid = adapter_std or 1.0 / math.sqrt(d)
        store.add(f"adapter{i}.spatial", rng.standard_normal((D, d)) * s_in)
        store.add(f"adapter{i}.temporal", rng.standard_normal((D, d)) * s_in)
        store.add(f"adapter{i}.query", rng.standard_normal((d, d)) * s_mid)
        store.add(f"adapter{i}.key", rng.standard_normal((d, d)) * s_mid)
        store.add(f"adapter{i}.up", rng.standard_normal((d, D)) * s_mid)
    return store


def visual_block(v, i, params):
    """Frozen encoder block ``i`` applied to each frame's tokens independently.

    The temporal track passes through unchanged.
    """
    return VideoFeatures(transformer_block(v.spatial, params, f"block{i}"), v.temporal)


def project_tokens(v, i, params):
    """Per-token projection ``D -> d`` of adapter ``i``: ``(..., T, U, d)``."""
    return matmul(v.spatial, params[f"adapter{i}.spatial"])


def spatial_down(v, i, params):
    """Per-frame spatial summary: token mean followed by the ``D -> d`` map."""
    return matmul(v.spatial.mean(axis=-2), params[f"adapter{i}.spatial"])


def temporal_down(v, i, params):
    """``D -> d`` map of the temporal track: ``(..., T, d)``."""
    if v.temporal is None:
        raise DimensionError("video has no temporal track")
    return matmul(v.temporal, params[f"adapter{i}.temporal"])


def perceiver_step(f_prev, tokens, vt, beta, w_query=None, w_key=None):
    """One recurrence step of the sequential perceiver.

    Parameters
    ----------
    f_prev : (..., d)
        Temporal state of the previous frame, used as the attention query.
    tokens : (..., U, d)
        Frame tokens projected to width ``d``; keys and values.
    vt : (..., d)
        Temporal-track projection of this frame.
    beta : float
        Injection ratio of ``vt``.
    w_query, w_key : (d, d), optional
        Query and key projections; identity when omitted.
    """
    f_prev, tokens, vt = as_tensor(f_prev), as_tensor(tokens), as_tensor(vt)
    d = tokens.shape[-1]
    if f_prev.shape[-1] != d or vt.shape[-1] != d:
        raise DimensionError("perceiver_step width mismatch")
    q = f_prev if w_query is None else matmul(f_prev.expand(-2), w_query).reshape(*f_prev.shape)
    k = tokens if w_key is None else matmul(tokens, w_key)
    scores = (k * q.expand(-2)).sum(axis=-1) * (1.0 / math.sqrt(d))
    w = scores.softmax(axis=-1)
    out = (w.expand(-1) * tokens).sum(axis=-2)
    return out + vt * beta


def sequential_perceiver(v, i, params, beta):
    """Run the left-to-right recurrence of adapter ``i`` over all frames.

    ``v`` is the output of block ``i``'s visual encoder together with the
    temporal track entering the block. Returns the states ``(..., T, d)``.
    """
    if v.T == 0:
        raise DimensionError("no frames")
    tokens = project_tokens(v, i, params)
    vt = temporal_down(v, i, params)
    wq, wk = params[f"adapter{i}.query"], params[f"adapter{i}.key"]
    f = vt[..., 0, :]
    states = []
    for k in range(v.T):
        f = perceiver_step(f, tokens[..., k, :, :], vt[..., k, :], beta, wq, wk)
        states.append(f)
    return stack(states, axis=-2)


def block_fuse(v, state, i, params, alpha):
    """Add ``alpha`` times the up-projected state to every token of its frame.

    ``v`` is the visual block output. The up-projected state also becomes the
    new temporal track.
    """
    state = as_tensor(state)
    if state.shape[-2] != v.T:
        raise DimensionError("temporal state must have one row per frame")
    up = matmul(state, params[f"adapter{i}.up"])
    return VideoFeatures(v.spatial + up.expand(-2) * alpha, up)


def encode_video(raw, cfg, params, return_states=False):
    """Encode ``(..., T, U, D)`` frame features.

    Returns ``(frame_embeddings (..., T, D), pooled (..., D))`` and, when
    ``return_states`` is set, the list of per-adapter temporal states.
    """
    raw = as_tensor(raw)
    if raw.ndim < 3:
        raise DimensionError("raw features need shape (..., T, U, D)")
    D = raw.shape[-1]
    if params["temporal_token"].shape != (D,):
        raise DimensionError(f"feature width {D} does not match the model")
    v = VideoFeatures(raw)
    states = []
    for i in range(cfg.L):
        if i == cfg.J:
            token = params["temporal_token"]
            v = VideoFeatures(v.spatial, token * np.ones(raw.shape[:-2] + (1,)))
        out = visual_block(v, i, params)
        if i >= cfg.J:
            f = sequential_perceiver(out, i, params, cfg.beta)
            states.append(f)
            out = block_fuse(out, f, i, params, cfg.alpha)
        v = out
    frames = v.spatial.mean(axis=-2)
    # order-independent summation keeps pooling exactly symmetric in the frames
    pooled = symmetric_mean(frames, axis=-2)
    if return_states:
        return frames, pooled, states
    return frames, pooled
