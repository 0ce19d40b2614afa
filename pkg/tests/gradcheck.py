"""Finite-difference check of the full training loss."""

import numpy as np

from seqmatch.config import RunConfig
from seqmatch.engine import Model, sample_episode, training_loss
from seqmatch.numerics import grad, no_grad
from seqmatch.rng import substream
from seqmatch.synth import SynthParams, generate

STEP = 1e-5
SMALL = dict(T=4, U=3, D=8, classes=4, videos_per_class=3)


def small_setup(seed, kind="order-only", unroll=0):
    data, _ = generate(SynthParams(kind=kind, seed=seed, **SMALL))
    cfg = RunConfig().replace(
        model__L=3, model__J=1, model__d=4, model__alpha=0.5, model__beta=0.3,
        episode__N=3, episode__K=2, episode__q_per_class=1,
        train__seed=seed, train__sinkhorn_unroll=unroll,
        ot__lambda_ent=0.5,
    )
    model = Model.init(cfg.model, SMALL["D"], seed)
    # move off the near-identity initialisation so every group is exercised
    rng = substream(seed, "gradcheck")
    for name in model.params.names(trainable=True):
        t = model.params[name]
        t.data = t.data + 0.3 * rng.standard_normal(t.data.shape)
    episode = sample_episode(data, 3, 2, 1, substream(seed, "episode"))
    return cfg, model, data, episode


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def check(seed, unroll=0, coords=3):
    """Return ``(worst relative error, per-group errors)`` for one seed.

    Each trainable group is probed along one random unit direction and at
    its ``coords`` largest-gradient coordinates.
    """
    cfg, model, data, episode = small_setup(seed, unroll=unroll)
    params = model.params
    loss = training_loss(model, data, episode, cfg)
    g = {k: v.copy() for k, v in grad(loss, params).items()}
    rng = substream(seed, "gradcheck-dirs")

    def loss_at(name, direction, h):
        t = params[name]
        base = t.data
        t.data = base + h * direction
        with no_grad():
            val = float(training_loss(model, data, episode, cfg).data)
        t.data = base
        return val

    errors = {}
    for group, names in params.groups().items():
        worst = 0.0
        for name in names:
            v = rng.standard_normal(g[name].shape)
            v /= np.linalg.norm(v)
            fd = (loss_at(name, v, STEP) - loss_at(name, v, -STEP)) / (2 * STEP)
            worst = max(worst, _rel(float(np.sum(g[name] * v)), fd))
            for flat in np.argsort(-np.abs(g[name]).ravel())[:coords]:
                e = np.zeros(g[name].size)
                e[flat] = 1.0
                e = e.reshape(g[name].shape)
                fd = (loss_at(name, e, STEP) - loss_at(name, e, -STEP)) / (2 * STEP)
                worst = max(worst, _rel(float(g[name].ravel()[flat]), fd))
        errors[group] = worst
    return max(errors.values()), errors
