"""Independent reference implementations used as test oracles.

These are written directly against plain numpy (or scipy) with no shared
code from the package, so agreement between the two is meaningful.
"""

import itertools
import math

import numpy as np
from scipy.optimize import minimize


def np_layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def np_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def np_gelu(x):
    return 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))


def np_block(x, P, prefix):
    w = lambda k: P[f"{prefix}.{k}"]
    h = np_layer_norm(x, w("ln1.g"), w("ln1.b"))
    q, k, v = h @ w("attn.q"), h @ w("attn.k"), h @ w("attn.v")
    s = q @ np.swapaxes(k, -1, -2) / math.sqrt(q.shape[-1])
    x = x + (np_softmax(s) @ v) @ w("attn.o")
    h = np_layer_norm(x, w("ln2.g"), w("ln2.b"))
    return x + np_gelu(h @ w("mlp.w1") + w("mlp.b1")) @ w("mlp.w2") + w("mlp.b2")


def np_encode(raw, L, J, alpha, beta, P):
    """Loop-per-frame encoder; returns (frames, pooled, states)."""
    x = np.array(raw, dtype=np.float64)
    T, U, D = x.shape
    track = None
    states = []
    for i in range(L):
        if i == J:
            track = np.tile(P["temporal_token"], (T, 1))
        y = np.stack([np_block(x[t], P, f"block{i}") for t in range(T)])
        if i >= J:
            ws, wt = P[f"adapter{i}.spatial"], P[f"adapter{i}.temporal"]
            wq, wk, wu = P[f"adapter{i}.query"], P[f"adapter{i}.key"], P[f"adapter{i}.up"]
            d = ws.shape[1]
            F = []
            f = track[0] @ wt
            for t in range(T):
                tok = y[t] @ ws
                vt = track[t] @ wt
                att = np_softmax((tok @ wk) @ (f @ wq) / math.sqrt(d))
                f = att @ tok + beta * vt
                F.append(f)
            F = np.array(F)
            states.append(F)
            up = F @ wu
            y = y + alpha * up[:, None, :]
            track = up
        x = y
    frames = x.mean(axis=1)
    return frames, frames.mean(axis=0), states


def exhaustive_assignment(D):
    n = D.shape[0]
    best, arg = math.inf, None
    for p in itertools.permutations(range(n)):
        c = sum(D[i, p[i]] for i in range(n))
        if c < best:
            best, arg = c, p
    return np.array(arg), best


def gen_kl(x, y):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(x > 0, x * np.log(x / y), 0.0)
    return t.sum() - x.sum() + np.sum(y)


def uot_primal(D, a, b, lam, tau, T):
    ab = np.outer(a, b)
    return (
        np.sum(D * T)
        + lam * gen_kl(T, ab)
        + tau * gen_kl(T.sum(1), a)
        + tau * gen_kl(T.sum(0), b)
    )


def uot_primal_oracle(D, a, b, lam, tau):
    """Minimise the unbalanced primal directly over log T with L-BFGS.

    Gradient in log-space: T * dF/dT. Projection onto T >= 0 is implicit in
    the exponential parametrisation.
    """
    n, m = D.shape
    ab = np.outer(a, b)

    def fun(z):
        T = np.exp(z.reshape(n, m))
        r, c = T.sum(1), T.sum(0)
        val = uot_primal(D, a, b, lam, tau, T)
        dT = D + lam * np.log(T / ab) + tau * np.log(r / a)[:, None] + tau * np.log(c / b)[None, :]
        return val, (T * dT).ravel()

    res = minimize(fun, np.log(ab).ravel(), jac=True, method="L-BFGS-B", options={"maxiter": 20000, "gtol": 1e-13, "ftol": 1e-16})
    return np.exp(res.x.reshape(n, m)), res.fun


def balanced_oracle(D, a, b, lam, iters=200000):
    """Plain (non-log) Sinkhorn in extended precision for moderate lam."""
    K = np.exp(-D / lam).astype(np.longdouble)
    u = np.ones(len(a), dtype=np.longdouble)
    v = np.ones(len(b), dtype=np.longdouble)
    for _ in range(iters):
        u = a / (K @ v)
        v = b / (K.T @ u)
    return np.asarray(u[:, None] * K * v[None, :], dtype=np.float64)


def central_fd(fn, x, h=1e-5):
    return (fn(x + h) - fn(x - h)) / (2 * h)
