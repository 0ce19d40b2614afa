"""Command-line entry point.

Exit status: 0 on success, 1 on a numeric or convergence failure, 2 on a
usage or I/O error. ``SEQMATCH_LOG_LEVEL`` (``DEBUG``, ``INFO``, ...) sets
the verbosity of progress messages on stderr.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import engine, io, synth
from .config import RunConfig
from .errors import DimensionError, NumericError, StateError, UsageError
from .numerics import no_grad
from .transport import OtConfig, sinkhorn_ot, sinkhorn_uot

log = logging.getLogger("seqmatch")


def _load_config(path):
    cfg = RunConfig.load(path)
    return cfg.resolve_paths(os.path.dirname(os.path.abspath(path)))


def _need(value, key):
    if not value:
        raise UsageError(f"config key paths.{key} is required for this command")
    return value


def _dataset(cfg, which="features"):
    p = cfg.paths
    features = p.eval_features if which == "eval" and p.eval_features else p.features
    return io.load_dataset(_need(features, "features"), _need(p.text_embeddings, "text_embeddings"), p.corpus)


def _model(cfg, weights):
    return engine.Model.from_params(cfg.model, io.load_params(weights))


def _dump(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# -- commands -------------------------------------------------------------------------


def cmd_gen_synth(args):
    params = synth.SynthParams(
        kind=args.kind, classes=args.classes, videos_per_class=args.videos_per_class,
        T=args.T, U=args.U, D=args.D, separation=args.separation, sigma=args.sigma,
        noise=args.noise, text_scale=args.text_scale, seed=args.seed,
        test_videos_per_class=args.test_videos_per_class,
    ).validate()
    os.makedirs(args.out, exist_ok=True)
    corpus = None
    for split in ("train", "test"):
        data, corpus = synth.generate(params, split)
        io.write_feature_pack(os.path.join(args.out, f"{split}.json"), data)
    io.write_corpus(os.path.join(args.out, "corpus.json"), corpus)
    io.write_text_embeddings(os.path.join(args.out, "text.json"), corpus)
    cfg = RunConfig().to_dict()
    cfg["paths"].update(
        features="train.json", eval_features="test.json", corpus="corpus.json",
        text_embeddings="text.json", weights_out="weights.json",
    )
    io.write_report(os.path.join(args.out, "config.json"), cfg)
    log.info("wrote %s pack with %d classes to %s", params.kind, params.classes, args.out)
    return 0


def cmd_train(args):
    cfg = _load_config(args.config)
    weights_out = _need(cfg.paths.weights_out, "weights_out")
    data = _dataset(cfg)
    backbone = io.read_tensors(cfg.paths.backbone)[0] if cfg.paths.backbone else None
    model = engine.Model.init(cfg.model, data.shape[-1], cfg.train.seed, backbone)

    def progress(step, loss):
        log.debug("step %d loss %.6f", step, loss)

    model, train_log = engine.train(cfg, data, model, progress)
    io.save_params(weights_out, model.params)
    log_path = args.log or os.path.splitext(weights_out)[0] + ".log.json"
    io.write_report(log_path, train_log.to_dict())
    log.info("trained %d steps; weights in %s, log in %s", cfg.train.steps, weights_out, log_path)
    return 0


def cmd_eval(args):
    cfg = _load_config(args.config)
    data = _dataset(cfg, "eval")
    model = _model(cfg, args.weights or _need(cfg.paths.weights_out, "weights_out"))
    report = {"config_hash": cfg.digest()}
    if args.reverse:
        fwd, rev, drop = engine.reverse_evaluate(model, data, cfg)
        report.update(forward=fwd.to_dict(), reversed=rev.to_dict(), drop=drop)
        rows = [
            {"episode": f["episode"], "queries": f["queries"], "correct": f["correct"], "reversed_correct": r["correct"]}
            for f, r in zip(fwd.per_episode, rev.per_episode)
        ]
        columns = ["episode", "queries", "correct", "reversed_correct"]
        report["per_episode"] = rows
    else:
        res = engine.evaluate(model, data, cfg)
        report.update(res.to_dict())
        rows, columns = res.per_episode, ["episode", "queries", "correct"]
        report["per_episode"] = rows
    _dump(report, args.out)
    csv_path = args.csv or (os.path.splitext(args.out)[0] + ".csv" if args.out else None)
    if csv_path:
        io.write_episode_csv(csv_path, rows, columns)
    return 0


def _instance(path):
    doc = io._read_json(path, "OT instance")
    try:
        D = np.array(doc["cost"], dtype=np.float64)
        a = None if doc.get("a") is None else np.array(doc["a"], dtype=np.float64)
        b = None if doc.get("b") is None else np.array(doc["b"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: malformed instance ({exc})") from exc
    return D, a, b


def cmd_solve_ot(args):
    D, a, b = _instance(args.instance)
    cfg = OtConfig(args.lambda_ent, args.tau, args.max_iters, args.tol).validate()
    plan = sinkhorn_uot(D, a, b, cfg) if args.unbalanced else sinkhorn_ot(D, a, b, cfg)
    out = plan.to_dict()
    out["unbalanced"] = bool(args.unbalanced)
    _dump(out, args.out)
    if not plan.converged:
        log.error("solver did not converge within %d iterations", cfg.max_iters)
        return 1
    return 0


def cmd_export_embeddings(args):
    cfg = _load_config(args.config)
    data = io.load_dataset(
        args.features or _need(cfg.paths.features, "features"),
        _need(cfg.paths.text_embeddings, "text_embeddings"),
        cfg.paths.corpus,
    )
    model = _model(cfg, args.weights or _need(cfg.paths.weights_out, "weights_out"))
    with no_grad():
        pooled = model.encode(data.videos)[1].data
    io.write_embeddings_csv(args.out, data.video_names, [data.class_names[l] for l in data.labels], pooled)
    return 0


# -- parser ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="seqmatch", description="Few-shot video matching toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="write a synthetic feature pack, corpus and reference config")
    g.add_argument("--kind", choices=synth.KINDS, default="cluster")
    g.add_argument("--out", required=True, help="output directory")
    d = synth.SynthParams()
    g.add_argument("--classes", type=int, default=d.classes)
    g.add_argument("--videos-per-class", type=int, default=d.videos_per_class)
    g.add_argument("--test-videos-per-class", type=int, help="size of the test split (default: --videos-per-class)")
    g.add_argument("--T", type=int, default=d.T)
    g.add_argument("--U", type=int, default=d.U)
    g.add_argument("--D", type=int, default=d.D)
    g.add_argument("--separation", type=float, default=d.separation)
    g.add_argument("--sigma", type=float, default=d.sigma)
    g.add_argument("--noise", type=float, default=d.noise)
    g.add_argument("--text-scale", type=float, default=d.text_scale)
    g.add_argument("--seed", type=int, default=d.seed)
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", help="train adapters and the prototype block")
    t.add_argument("config")
    t.add_argument("--log", help="training log path (default: next to the weights)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="episodic evaluation report")
    e.add_argument("config")
    e.add_argument("--weights", help="weights file (default: paths.weights_out)")
    e.add_argument("--reverse", action="store_true", help="also evaluate with frames reversed")
    e.add_argument("--out", help="JSON report path (default: stdout)")
    e.add_argument("--csv", help="per-episode CSV path (default: next to --out)")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("solve-ot", help="solve a single transport instance")
    o.add_argument("instance", help='JSON file {"cost": [[...]], "a": [...], "b": [...]}')
    o.add_argument("--unbalanced", action="store_true")
    c = OtConfig()
    o.add_argument("--lambda-ent", type=float, default=c.lambda_ent)
    o.add_argument("--tau", type=float, default=c.tau)
    o.add_argument("--max-iters", type=int, default=c.max_iters)
    o.add_argument("--tol", type=float, default=c.tol)
    o.add_argument("--out", help="JSON output path (default: stdout)")
    o.set_defaults(func=cmd_solve_ot)

    x = sub.add_parser("export-embeddings", help="CSV of pooled video embeddings")
    x.add_argument("config")
    x.add_argument("--weights", help="weights file (default: paths.weights_out)")
    x.add_argument("--features", help="feature pack (default: paths.features)")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_embeddings)
    return p


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("SEQMATCH_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (UsageError, DimensionError, StateError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
