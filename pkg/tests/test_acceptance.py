"""Acceptance criteria for the frame-set matcher.

Run with pytest, or directly (``python3 tests/test_acceptance.py``) for the
PASS/FAIL summary alone. Each ``check_*`` returns ``(ok, detail)``.
"""

import itertools
import json
import math
import os
import sys
import tempfile
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from seqmatch.backbone import AdapterConfig, encode_video, init_backbone
from seqmatch.cli import main
from seqmatch.config import RunConfig
from seqmatch.engine import Model, PredictionBundle, episode_loss, evaluate, merge_probs, reverse_evaluate, train
from seqmatch.numerics import ParamStore, no_grad
from seqmatch.rng import substream
from seqmatch.synth import SynthParams, generate
from seqmatch.transport import OtConfig, hungarian, sinkhorn_ot, sinkhorn_uot

import gradcheck
from oracles import exhaustive_assignment

TAUS = (0.1, 1.0, 10.0, 1e3, 1e6)


def check_ot_vs_hungarian():
    start = time.perf_counter()
    rng = substream(0, "accept-ot")
    cfg = OtConfig(lambda_ent=1e-3, max_iters=10000)
    worst, mismatches = 0.0, 0
    for i in range(50):
        n = 4 + i % 5
        D = rng.uniform(0, 1, size=(n, n))
        perm, cost = hungarian(D)
        if n <= 6:
            _, best = exhaustive_assignment(D)
            mismatches += abs(best - cost) > 1e-12
        r = sinkhorn_ot(D, cfg=cfg)
        worst = max(worst, abs(r.transport_cost - cost / n) / (cost / n))
    elapsed = time.perf_counter() - start
    ok = worst < 0.01 and mismatches == 0 and elapsed < 10
    return ok, f"max rel gap {worst:.2e}, exhaustive mismatches {mismatches}, {elapsed:.2f} s"


def check_uot_limit():
    rng = substream(0, "accept-uot")
    worst_final, non_mono = 0.0, 0
    for _ in range(20):
        n, m = rng.integers(3, 8, size=2)
        D = rng.uniform(0, 1, size=(n, m))
        a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
        ot = sinkhorn_ot(D, a, b, OtConfig(lambda_ent=0.05, max_iters=100000))
        gaps = []
        for tau in TAUS:
            u = sinkhorn_uot(D, a, b, OtConfig(lambda_ent=0.05, tau=tau, max_iters=100000, tol=1e-12))
            gaps.append(abs(u.transport_cost - ot.transport_cost))
        non_mono += any(g1 >= g0 for g0, g1 in zip(gaps, gaps[1:]))
        worst_final = max(worst_final, gaps[-1])
    return non_mono == 0 and worst_final < 1e-3, f"non-monotone instances {non_mono}/20, gap at tau=1e6 {worst_final:.2e}"


def check_marginals():
    rng = substream(0, "accept-marginals")
    worst, converged, total = 0.0, 0, 0
    for lam in (1.0, 0.1, 0.01, 1e-3):
        for _ in range(25):
            n, m = rng.integers(2, 10, size=2)
            D = rng.uniform(0, 1, size=(n, m))
            a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
            r = sinkhorn_ot(D, a, b, OtConfig(lambda_ent=lam, max_iters=10000))
            total += 1
            if r.converged:
                converged += 1
                worst = max(worst, r.marginal_residual(a, b))
    return converged > 0 and worst < 2e-9, f"{converged}/{total} converged, max residual {worst:.2e}"


def check_causality():
    rng = substream(0, "accept-causal")
    failures = 0
    for trial in range(100):
        L = int(rng.integers(1, 5))
        J = int(rng.integers(0, L))
        D = int(rng.choice([4, 6, 8]))
        cfg = AdapterConfig(L=L, J=J, d=int(rng.integers(1, D + 1)), alpha=float(rng.uniform(0.1, 1.0)),
                            beta=float(rng.uniform(0.0, 1.0)))
        store = ParamStore()
        init_backbone(store, cfg, D, substream(trial, "accept-causal-init"), block_std=0.3, adapter_std=0.8)
        T = int(rng.integers(2, 9))
        k = int(rng.integers(0, T - 1))
        raw = rng.standard_normal((T, 3, D))
        other = raw.copy()
        other[k + 1:] = rng.standard_normal(other[k + 1:].shape) * 3
        with no_grad():
            _, _, s1 = encode_video(raw, cfg, store, return_states=True)
            _, _, s2 = encode_video(other, cfg, store, return_states=True)
        failures += any(not np.array_equal(x.data[: k + 1], y.data[: k + 1]) for x, y in zip(s1, s2))
    return failures == 0, f"{failures}/100 trials leaked"


def check_order_sensitivity():
    rng = substream(0, "accept-order")
    changed, invariant = 0, 0
    model = Model.init(AdapterConfig(), 32, 0)
    flat = Model.init(AdapterConfig(alpha=0.0), 32, 0)
    with no_grad():
        for _ in range(50):
            raw = rng.standard_normal((8, 4, 32))
            perm = rng.permutation(8)
            while np.array_equal(perm, np.arange(8)):
                perm = rng.permutation(8)
            diff = np.abs(model.encode(raw)[1].data - model.encode(raw[perm])[1].data).max()
            changed += diff > 1e-9
            invariant += np.array_equal(flat.encode(raw)[1].data, flat.encode(raw[perm])[1].data)
    return changed >= 48 and invariant == 50, f"alpha>0 changed {changed}/50, alpha=0 invariant {invariant}/50"


def check_gradients():
    worst = {0: 0.0, 5: 0.0}
    for unroll in worst:
        for seed in range(20):
            worst[unroll] = max(worst[unroll], gradcheck.check(seed, unroll=unroll)[0])
    ok = max(worst.values()) < 1e-4
    return ok, f"surrogate {worst[0]:.2e}, unrolled {worst[5]:.2e}"


def check_cluster_learning():
    start = time.perf_counter()
    params = SynthParams(kind="cluster", separation=4.0, sigma=1.0, seed=0)
    cfg = RunConfig()
    model, _ = train(cfg, generate(params)[0])
    res = evaluate(model, generate(params, split="test")[0], cfg, episodes=500)
    elapsed = time.perf_counter() - start
    ok = cfg.train.steps <= 2000 and res.accuracy >= 0.9 and elapsed < 300
    return ok, f"accuracy {res.accuracy:.3f} after {cfg.train.steps} steps, {elapsed:.0f} s"


def check_order_learning():
    params = SynthParams(kind="order-only", seed=0, test_videos_per_class=200)
    data, test = generate(params)[0], generate(params, split="test")[0]
    out = {}
    for alpha in (RunConfig().model.alpha, 0.0):
        cfg = RunConfig().replace(model__alpha=alpha)
        model, _ = train(cfg, data)
        out[alpha] = reverse_evaluate(model, test, cfg)
    (fwd, _, drop), (fwd0, _, drop0) = out.values()
    ok = fwd.accuracy >= 0.8 and fwd0.accuracy <= 0.25 and drop >= 0.30 and drop0 == 0.0
    return ok, (f"adapter fwd {fwd.accuracy:.3f} drop {drop:.3f}; "
                f"alpha=0 fwd {fwd0.accuracy:.3f} drop {drop0:.3f}")


def check_merge_and_uniform_loss():
    rng = substream(0, "accept-merge")
    exact = True
    for _ in range(100):
        n = int(rng.integers(2, 10))
        pf, pz = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        exact &= np.array_equal(merge_probs(pf, pz, 1.0), pf) and np.array_equal(merge_probs(pf, pz, 0.0), pz)
    worst = 0.0
    for N in range(2, 11):
        u = np.full(N, 1.0 / N)
        bundles = [PredictionBundle(u, u, merge_probs(u, u, 0.5), 0.5) for _ in range(N)]
        worst = max(worst, abs(episode_loss(bundles, list(range(N))) - 2 * math.log(N)))
    return exact and worst < 1e-9, f"endpoints exact: {exact}, max |loss - 2 ln N| {worst:.1e}"


def _cli_run(root):
    out = os.path.join(root, "data")
    if main(["gen-synth", "--kind", "order-only", "--out", out, "--videos-per-class", "10"]) != 0:
        return None
    path = os.path.join(out, "config.json")
    with open(path) as fh:
        cfg = json.load(fh)
    cfg["train"]["steps"] = 60
    cfg["eval"]["episodes"] = 50
    with open(path, "w") as fh:
        json.dump(cfg, fh)
    report = os.path.join(root, "report.json")
    log = os.path.join(root, "train.log.json")
    if main(["train", path, "--log", log]) != 0 or main(["eval", path, "--reverse", "--out", report]) != 0:
        return None
    names = ("train.log.json", "report.json", "report.csv", "data/weights.json")
    blobs = {}
    for name in names:
        with open(os.path.join(root, name), "rb") as fh:
            blobs[name] = fh.read()
    return blobs


def check_determinism():
    with tempfile.TemporaryDirectory() as d1, tempfile.TemporaryDirectory() as d2:
        r1, r2 = _cli_run(d1), _cli_run(d2)
    if r1 is None or r2 is None:
        return False, "CLI run failed"
    same = [k for k in r1 if r1[k] == r2[k]]
    return len(same) == len(r1), f"byte-identical: {', '.join(same)}"


CRITERIA = [
    (1, "OT vs Hungarian", check_ot_vs_hungarian),
    (2, "UOT balanced limit", check_uot_limit),
    (3, "balanced marginals", check_marginals),
    (4, "adapter causality", check_causality),
    (5, "order sensitivity", check_order_sensitivity),
    (6, "gradient check", check_gradients),
    (7, "cluster learning", check_cluster_learning),
    (8, "order-only learning", check_order_learning),
    (9, "merge endpoints and uniform loss", check_merge_and_uniform_loss),
    (10, "CLI determinism", check_determinism),
]


def _line(num, name, ok, detail):
    return f"[{'PASS' if ok else 'FAIL'}] {num:2d} {name}: {detail}"


@pytest.mark.parametrize("num,name,fn", CRITERIA, ids=[f"c{n:02d}" for n, _, _ in CRITERIA])
def test_criterion(num, name, fn, capsys):
    ok, detail = fn()
    with capsys.disabled():
        print("\n" + _line(num, name, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for num, name, fn in CRITERIA:
        ok, detail = fn()
        failed += not ok
        print(_line(num, name, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
