"""Entropic OT and KL-relaxed unbalanced OT between frame sets.

Both solvers regularise with the entropy of the plan relative to the product
of the marginals, ``KL(T || a b^T) = sum T (log(T / (a b^T)) - 1) + sum a b^T``.
For a balanced problem this differs from ``sum T (log T - 1)`` by a constant
only, so the plan is unchanged; for the unbalanced problem it makes a zero
cost matrix return exactly ``a b^T`` and lets the unbalanced objective
converge to the balanced one as ``tau`` grows.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from ..errors import DimensionError, NumericError, UsageError
from ._kernels import scaling_loop


@dataclass(frozen=True)
class OtConfig:
    lambda_ent: float = 0.05
    tau: float = 1.0
    max_iters: int = 1000
    tol: float = 1e-9

    def validate(self):
        if not self.lambda_ent > 0:
            raise UsageError("lambda_ent must be > 0")
        if not self.tau > 0:
            raise UsageError("tau must be > 0")
        if self.max_iters < 1:
            raise UsageError("max_iters must be >= 1")
        if not self.tol > 0:
            raise UsageError("tol must be > 0")
        return self


@dataclass
class TransportPlan:
    plan: np.ndarray
    objective: float
    transport_cost: float
    iterations: int
    converged: bool
    potentials: tuple = field(default=None, repr=False)

    @property
    def mass(self):
        return float(self.plan.sum())

    def marginal_residual(self, a, b):
        """``||T 1 - a||_1 + ||T^T 1 - b||_1``."""
        return float(np.abs(self.plan.sum(axis=1) - a).sum() + np.abs(self.plan.sum(axis=0) - b).sum())

    def to_dict(self):
        return {
            "plan": self.plan.tolist(),
            "objective": self.objective,
            "transport_cost": self.transport_cost,
            "mass": self.mass,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def _gen_kl(x, y):
    x = np.asarray(x)
    pos = x > 0
    return float(np.sum(np.where(pos, x * np.log(np.where(pos, x, 1.0) / y), 0.0)) - x.sum() + np.sum(y))


def ot_objective(D, T, a, b, lambda_ent):
    """``<D, T> + lambda_ent * KL(T || a b^T)``."""
    return float(np.sum(D * T)) + lambda_ent * _gen_kl(T, np.outer(a, b))


def uot_objective(D, T, a, b, lambda_ent, tau):
    """Unbalanced objective: entropic OT plus ``tau``-weighted KL marginal penalties."""
    return (
        ot_objective(D, T, a, b, lambda_ent)
        + tau * _gen_kl(T.sum(axis=1), a)
        + tau * _gen_kl(T.sum(axis=0), b)
    )


def _prepare(D, a, b):
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or 0 in D.shape:
        raise DimensionError("cost matrix must be a non-empty 2-D array")
    n, m = D.shape
    a = np.full(n, 1.0 / n) if a is None else np.asarray(a, dtype=np.float64)
    b = np.full(m, 1.0 / m) if b is None else np.asarray(b, dtype=np.float64)
    if a.shape != (n,) or b.shape != (m,):
        raise DimensionError(f"marginals {a.shape}, {b.shape} do not fit cost {D.shape}")
    if not (np.all(np.isfinite(D)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericError("non-finite transport input")
    if np.any(a <= 0) or np.any(b <= 0):
        raise UsageError("marginals must be strictly positive")
    return D, a, b


def _plan(D, a, b, f, g, lam):
    T = np.exp(np.log(a)[:, None] + np.log(b)[None, :] + (f[:, None] + g[None, :] - D) / lam)
    if not np.all(np.isfinite(T)):
        raise NumericError("transport plan overflowed")
    return T


def _newton_polish(D, a, b, f, g, lam, tol, steps):
    """Damped Newton ascent on the dual of the balanced problem.

    Sinkhorn sweeps crawl when the plan is close to a permutation (the dual
    has nearly flat directions); a few Newton steps from the swept
    potentials finish the job. Returns ``(f, g, steps_taken, converged)``.
    """
    n = len(a)

    def dual(f, g):
        return a @ f + b @ g - lam * _plan(D, a, b, f, g, lam).sum()

    for s in range(steps + 1):
        T = _plan(D, a, b, f, g, lam)
        r, c = T.sum(axis=1), T.sum(axis=0)
        if np.abs(r - a).sum() + np.abs(c - b).sum() < tol:
            return f, g, s, True
        if s == steps:
            break
        H = np.block([[np.diag(r), T], [T.T, np.diag(c)]]) / lam
        step = np.linalg.lstsq(H, np.concatenate([a - r, b - c]), rcond=None)[0]
        base = dual(f, g)
        t = 1.0
        while t > 1e-12 and dual(f + t * step[:n], g + t * step[n:]) < base:
            t *= 0.5
        f, g = f + t * step[:n], g + t * step[n:]
    return f, g, steps, False


def sinkhorn_ot(D, a=None, b=None, cfg=OtConfig(), newton_steps=25):
    """Balanced entropic OT in the log domain.

    ``a`` and ``b`` default to uniform and must each sum to one. Sweeps run
    with epsilon scaling; if they exhaust ``cfg.max_iters`` without meeting
    ``cfg.tol``, up to ``newton_steps`` Newton steps on the dual follow. The
    returned plan meets both marginals within ``cfg.tol`` when ``converged``
    is set.
    """
    cfg.validate()
    D, a, b = _prepare(D, a, b)
    if abs(a.sum() - 1.0) > 1e-9 or abs(b.sum() - 1.0) > 1e-9:
        raise UsageError("balanced marginals must each sum to 1")
    lam = cfg.lambda_ent
    f, g, it, ok = scaling_loop(D, np.log(a), np.log(b), lam, math.inf, cfg.max_iters, cfg.tol, True)
    if not ok and newton_steps > 0:
        f, g, extra, ok = _newton_polish(D, a, b, f, g, lam, cfg.tol, newton_steps)
        it += extra
    T = _plan(D, a, b, f, g, lam)
    return TransportPlan(T, ot_objective(D, T, a, b, lam), float(np.sum(D * T)), int(it), bool(ok), (f, g))


def sinkhorn_uot(D, a=None, b=None, cfg=OtConfig()):
    """Unbalanced entropic OT with ``tau * KL`` penalties on both marginals.

    The scaling updates use exponent ``tau / (tau + lambda_ent)`` (after an
    epsilon-scaling warm start); the run stops when no potential moves by
    more than ``cfg.tol`` in a sweep.
    """
    cfg.validate()
    D, a, b = _prepare(D, a, b)
    lam, tau = cfg.lambda_ent, cfg.tau
    f, g, it, ok = scaling_loop(D, np.log(a), np.log(b), lam, tau, cfg.max_iters, cfg.tol, False)
    T = _plan(D, a, b, f, g, lam)
    return TransportPlan(T, uot_objective(D, T, a, b, lam, tau), float(np.sum(D * T)), int(it), bool(ok), (f, g))


def hungarian(D):
    """Minimum-cost perfect assignment of a square cost matrix.

    Shortest augmenting path with row/column potentials, O(n^3).
    Returns ``(perm, cost)`` where row ``i`` is assigned column ``perm[i]``.
    """
    C = np.asarray(D, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise UsageError("hungarian needs a square cost matrix")
    n = C.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int), 0.0
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # match[j] = row (1-based) owning column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, math.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = C[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], math.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.empty(n, dtype=int)
    perm[match[1:] - 1] = np.arange(n)
    return perm, float(C[np.arange(n), perm].sum())


def cost_matrix(S, Q):
    """Pairwise Euclidean distances ``D[i, j] = ||S_i - Q_j||``."""
    S, Q = np.asarray(S, dtype=np.float64), np.asarray(Q, dtype=np.float64)
    if S.ndim != 2 or Q.ndim != 2 or len(S) == 0 or len(Q) == 0:
        raise DimensionError("frame sets must be non-empty 2-D arrays")
    if S.shape[1] != Q.shape[1]:
        raise DimensionError("frame sets have different widths")
    diff = S[:, None, :] - Q[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def soft_marginals(S, Q):
    """Target marginals from the cross inner products of L2-normalised frames.

    ``a_i`` is a softmax over support frames of the mean cosine similarity of
    frame ``i`` to all query frames; ``b`` is the symmetric construction.
    """
    S, Q = np.asarray(S, dtype=np.float64), np.asarray(Q, dtype=np.float64)
    if S.ndim != 2 or Q.ndim != 2 or S.shape[1] != Q.shape[1]:
        raise DimensionError("frame sets must be 2-D with a shared width")
    ns, nq = np.linalg.norm(S, axis=1), np.linalg.norm(Q, axis=1)
    if np.any(ns == 0) or np.any(nq == 0):
        raise NumericError("zero-norm frame in soft_marginals")
    C = (S / ns[:, None]) @ (Q / nq[:, None]).T
    return _softmax(C.mean(axis=1)), _softmax(C.mean(axis=0))


def video_match(Q_frames, S_frames, cfg=OtConfig()):
    """Unbalanced match of query frames against support frames (plan included)."""
    D = cost_matrix(S_frames, Q_frames)
    a, b = soft_marginals(S_frames, Q_frames)
    return sinkhorn_uot(D, a, b, cfg)


def video_distance(Q_frames, S_frames, cfg=OtConfig()):
    """Full unbalanced objective between two frame sets; the match score is its negative."""
    return video_match(Q_frames, S_frames, cfg).objective
