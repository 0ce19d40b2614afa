"""Pure numpy log-domain scaling loop (reference and fallback for ``_sinkhorn``)."""

import math

import numpy as np


def _lse_rows(x):
    m = x.max(axis=1)
    return m + np.log(np.exp(x - m[:, None]).sum(axis=1))


def _lse(x):
    m = x.max()
    return m + math.log(np.exp(x - m).sum())


def scaling_loop(D, log_a, log_b, lam, tau, max_iters, tol, balanced, stage_iters=10):
    """Iterate dual potentials of an entropic (unbalanced) transport problem.

    The plan is ``T_ij = a_i b_j exp((f_i + g_j - D_ij) / eps)``. Each sweep
    sets ``f <- -kappa * eps * LSE_j(log b_j + (g_j - D_ij) / eps)`` and the
    symmetric update for ``g``, with ``kappa = tau / (tau + eps)``
    (``tau = inf`` gives the balanced problem).

    ``eps`` starts at the cost range and halves after every ``stage_iters``
    sweeps until it reaches ``lam``; ``stage_iters=0`` runs at ``lam`` from
    the start. At ``lam``, balanced runs stop once the row-marginal L1
    residual drops below ``tol`` (columns are exact after each ``g``
    update); unbalanced runs stop once the largest potential change in a
    sweep drops below ``tol``. Every sweep counts towards ``max_iters``.

    Unbalanced sweeps end with the optimal shift ``f + c, g - c`` of the
    dual, which leaves the plan unchanged and moves only the total mass.
    Without it that direction contracts by ``kappa**2`` per sweep, which
    stalls as ``tau`` grows.

    Returns ``(f, g, sweeps, converged)``.
    """
    D = np.ascontiguousarray(D, dtype=np.float64)
    n, m = D.shape
    a = np.exp(log_a)
    f = np.zeros(n)
    g = np.zeros(m)
    eps = max(float(D.max() - D.min()), lam) if stage_iters > 0 else lam
    it = 0
    k = 0
    while it < max_iters:
        final = eps <= lam
        if final:
            eps = lam
        elif k == stage_iters:
            eps *= 0.5
            k = 0
            continue
        inv = 1.0 / eps
        kappa = 1.0 if math.isinf(tau) else tau / (tau + eps)
        it += 1
        k += 1
        f_new = -kappa * eps * _lse_rows(log_b[None, :] + (g[None, :] - D) * inv)
        if final and balanced and k > 1:
            resid = np.abs(a * np.expm1((f - f_new) * inv)).sum()
            if resid < tol:
                return f, g, it, True
        g_new = -kappa * eps * _lse_rows((log_a[:, None] + (f_new[:, None] - D) * inv).T)
        if not balanced:
            c = 0.5 * tau * (_lse(log_a - f_new / tau) - _lse(log_b - g_new / tau))
            f_new += c
            g_new -= c
        delta = max(np.abs(f_new - f).max(), np.abs(g_new - g).max())
        f, g = f_new, g_new
        if final and not balanced and delta < tol:
            return f, g, it, True
    return f, g, it, False
