"""Differentiable unbalanced matching with a fixed number of scaling sweeps.

Mirrors :func:`~seqmatch.transport.solvers.video_distance` with autodiff
tensors so a training loss can backpropagate through the matching. Inputs
may carry leading batch axes: ``Q (..., m, D)`` and ``S (..., n, D)``.
"""

import numpy as np

from ..numerics import as_tensor

_SQRT_EPS = 1e-12


def cost_matrix(S, Q):
    S, Q = as_tensor(S), as_tensor(Q)
    diff = S.expand(-2) - Q.expand(-3)
    return ((diff * diff).sum(axis=-1) + _SQRT_EPS).sqrt()


def _normalize(x):
    return x / (x * x).sum(axis=-1, keepdims=True).sqrt()


def log_soft_marginals(S, Q):
    C = _normalize(as_tensor(S)) @ _normalize(as_tensor(Q)).T
    return C.mean(axis=-1).log_softmax(axis=-1), C.mean(axis=-2).log_softmax(axis=-1)


def _gen_kl(log_x, log_y, axis):
    x = log_x.exp()
    return (x * (log_x - log_y) - x + log_y.exp()).sum(axis=axis)


def uot_distance(Q, S, lambda_ent, tau, iters):
    """Unbalanced objective after ``iters`` scaling sweeps from zero potentials."""
    Dm = cost_matrix(S, Q)
    log_a, log_b = log_soft_marginals(S, Q)
    lam = lambda_ent
    kappa = tau / (tau + lam)
    inv = 1.0 / lam
    la, lb = log_a.expand(-1), log_b.expand(-2)
    g = as_tensor(np.zeros(Dm.shape[:-2] + (Dm.shape[-1],)))
    for _ in range(iters):
        f = (lb + (g.expand(-2) - Dm) * inv).logsumexp(axis=-1) * (-kappa * lam)
        g = (la + (f.expand(-1) - Dm) * inv).logsumexp(axis=-2) * (-kappa * lam)
    log_ab = la + lb
    log_T = log_ab + (f.expand(-1) + g.expand(-2) - Dm) * inv
    T = log_T.exp()
    transport = (Dm * T).sum(axis=(-1, -2))
    ent = (T * (log_T - log_ab) - T + log_ab.exp()).sum(axis=(-1, -2))
    rows = T.sum(axis=-1).log()
    cols = T.sum(axis=-2).log()
    return transport + ent * lam + (_gen_kl(rows, log_a, -1) + _gen_kl(cols, log_b, -1)) * tau
