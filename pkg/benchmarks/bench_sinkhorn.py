"""Compare the compiled and pure-Python unbalanced scaling loops.

Run as ``python3 benchmarks/bench_sinkhorn.py``. Both backends get the same
frame-matching instances; the script prints time per solve and the largest
potential disagreement between them.
"""

import argparse
import math
import time

import numpy as np

from seqmatch.transport import _sinkhorn_py, cost_matrix, soft_marginals

try:
    from seqmatch.transport import _sinkhorn as _compiled
except ImportError:
    _compiled = None


def instances(n_inst, T, D, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_inst):
        S, Q = rng.standard_normal((T, D)), rng.standard_normal((T, D))
        a, b = soft_marginals(S, Q)
        out.append((cost_matrix(S, Q), np.log(a), np.log(b)))
    return out


def run(loop, cases, lam, tau, max_iters, tol):
    t0 = time.perf_counter()
    res = [loop(D, la, lb, lam, tau, max_iters, tol, False) for D, la, lb in cases]
    return time.perf_counter() - t0, res


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--T", type=int, default=8)
    p.add_argument("--D", type=int, default=16)
    p.add_argument("--lambda-ent", type=float, default=0.05)
    p.add_argument("--tau", type=float, default=1.0)
    args = p.parse_args()
    cases = instances(args.instances, args.T, args.D, 0)
    t_py, r_py = run(_sinkhorn_py.scaling_loop, cases, args.lambda_ent, args.tau, 1000, 1e-9)
    print(f"python : {1e3 * t_py / len(cases):8.3f} ms/solve")
    if _compiled is None:
        print("cython : extension not built")
        return
    t_c, r_c = run(_compiled.scaling_loop, cases, args.lambda_ent, args.tau, 1000, 1e-9)
    gap = max(max(np.abs(a[0] - b[0]).max(), np.abs(a[1] - b[1]).max()) for a, b in zip(r_py, r_c))
    print(f"cython : {1e3 * t_c / len(cases):8.3f} ms/solve")
    print(f"speedup: {t_py / t_c:8.1f}x   max potential gap {gap:.2e}")
    if not math.isfinite(gap):
        raise SystemExit(1)


if __name__ == "__main__":
    main()
