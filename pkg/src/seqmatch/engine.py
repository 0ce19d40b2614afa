"""Episodic few-shot training and evaluation.

An episode holds ``N`` classes with ``K`` support videos each and
``q_per_class`` query videos per class. Each query gets two class
distributions: a few-shot one from matching its frames against text-enhanced
prototypes, and a zero-shot one from the cosine between its pooled feature
and the class text embeddings. Evaluation multiplies them geometrically.

Training backpropagates through the encoder, the prototype merge block and
both heads. The unbalanced matching itself is not differentiated by default:
the few-shot head is trained on the mean pairwise cosine between query and
prototype frames, while evaluation always scores with the matching. Setting
``train.sinkhorn_unroll > 0`` instead differentiates through that many
scaling sweeps.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .backbone import encode_video, init_backbone
from .errors import DimensionError, NumericError, UsageError
from .numerics import BLOCK_PARAM_NAMES, ParamStore, Tensor, as_tensor, grad, no_grad
from .prototypes import MERGE_PREFIX, enhance, init_merge, merge_shots
from .rng import substream
from .transport import video_distance
from .transport import unrolled

PROB_FLOOR = 1e-12
ADAPTER_PARAM_NAMES = ("spatial", "temporal", "query", "key", "up")


@dataclass
class Dataset:
    """Videos ``(V, T, U, D)`` with class labels and one text embedding per class."""

    class_names: list
    videos: np.ndarray
    labels: np.ndarray
    text: np.ndarray
    video_names: list = None

    def __post_init__(self):
        self.videos = np.asarray(self.videos, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.text = np.asarray(self.text, dtype=np.float64)
        if self.videos.ndim != 4:
            raise DimensionError("videos must be (V, T, U, D)")
        if len(self.labels) != len(self.videos):
            raise DimensionError("one label per video")
        if self.text.shape != (len(self.class_names), self.videos.shape[-1]):
            raise DimensionError("text embeddings must be (classes, D) with D equal to the feature width")
        if self.video_names is None:
            self.video_names = [f"v{i:05d}" for i in range(len(self.videos))]
        self._by_class = [np.flatnonzero(self.labels == c) for c in range(len(self.class_names))]

    @property
    def shape(self):
        return self.videos.shape[1:]

    def class_videos(self, c):
        return self._by_class[c]

    def reversed(self):
        return Dataset(self.class_names, self.videos[:, ::-1].copy(), self.labels, self.text, self.video_names)


@dataclass
class Episode:
    classes: np.ndarray  # dataset class ids, episode order
    support_idx: np.ndarray  # (N, K) video indices
    query_idx: np.ndarray  # (Q,)
    query_labels: np.ndarray  # (Q,) episode-local

    @property
    def N(self):
        return len(self.classes)

    @property
    def K(self):
        return self.support_idx.shape[1]


@dataclass
class PredictionBundle:
    p_fsl: np.ndarray
    p_zsl: np.ndarray
    p_merged: np.ndarray
    merge_weight: float

    @property
    def prediction(self):
        return int(np.argmax(self.p_merged))


def sample_episode(dataset, N, K, q_per_class, rng):
    """Draw classes, then support and query videos, uniformly without replacement."""
    n_classes = len(dataset.class_names)
    if N > n_classes:
        raise UsageError(f"{N}-way episode needs {N} classes, dataset has {n_classes}")
    need = K + q_per_class
    eligible = [c for c in range(n_classes) if len(dataset.class_videos(c)) >= need]
    if len(eligible) < n_classes:
        raise UsageError(f"every class needs at least {need} videos")
    classes = rng.choice(n_classes, size=N, replace=False)
    support, query, labels = [], [], []
    for local, c in enumerate(classes):
        pick = rng.choice(dataset.class_videos(c), size=need, replace=False)
        support.append(pick[:K])
        query.extend(pick[K:])
        labels.extend([local] * q_per_class)
    return Episode(classes, np.array(support), np.array(query), np.array(labels))


class Model:
    """Backbone, adapters, temporal token and prototype merge block."""

    def __init__(self, cfg, params, D):
        self.cfg = cfg
        self.params = params
        self.D = D

    @classmethod
    def init(cls, cfg, D, seed, backbone=None):
        """Fresh parameters from the ``init`` substream of ``seed``.

        ``backbone`` optionally maps ``block*`` names to frozen block weights.
        """
        rng = substream(seed, "init")
        store = ParamStore()
        if backbone:
            for name in sorted(backbone):
                if name.startswith("block"):
                    store.add(name, backbone[name], trainable=False)
        init_backbone(store, cfg.validate(D), D, rng)
        init_merge(store, D, rng)
        return cls(cfg, store, D)

    @classmethod
    def from_params(cls, cfg, params):
        """Wrap loaded parameters, checking they cover ``cfg``'s architecture."""
        if "temporal_token" not in params:
            raise UsageError("weights lack a temporal_token")
        D = params["temporal_token"].shape[0]
        cfg.validate(D)
        need = [f"block{i}.{p}" for i in range(cfg.L) for p in BLOCK_PARAM_NAMES]
        need += [f"adapter{i}.{p}" for i in cfg.adapted_blocks for p in ADAPTER_PARAM_NAMES]
        need += [f"{MERGE_PREFIX}.{p}" for p in BLOCK_PARAM_NAMES]
        missing = [n for n in need if n not in params]
        if missing:
            raise UsageError(f"weights do not match the model config; missing {', '.join(missing[:4])}")
        return cls(cfg, params, D)

    def encode(self, raw):
        return encode_video(raw, self.cfg, self.params)


def _cosine(x, y):
    """Cosine between rows of ``x (.., D)`` and ``y (.., D)`` pairwise: ``(|x|, |y|)``."""
    xn = x / (x * x).sum(axis=-1, keepdims=True).sqrt()
    yn = y / (y * y).sum(axis=-1, keepdims=True).sqrt()
    return xn @ yn.T


def _forward(model, dataset, episode, reverse=False):
    """Encode an episode; returns query frames/pooled and prototype frames."""
    N, K = episode.N, episode.K
    idx = np.concatenate([episode.support_idx.ravel(), episode.query_idx])
    raw = dataset.videos[idx]
    if reverse:
        raw = raw[:, ::-1]
    frames, pooled = model.encode(raw)
    T, D = frames.shape[-2:]
    shots = frames[: N * K].reshape(N, K, T, D)
    text = dataset.text[episode.classes]
    protos = merge_shots(enhance(shots, text[:, None, None, :]), model.params)
    return frames[N * K:], pooled[N * K:], protos, text


def episode_logits(model, dataset, episode, config, mode="surrogate", reverse=False):
    """Few-shot and zero-shot logits ``(Q, N)`` for every query of an episode.

    ``mode`` selects the few-shot score: ``"surrogate"`` (mean pairwise frame
    cosine, differentiable), ``"unrolled"`` (negative unbalanced objective
    after ``config.train.sinkhorn_unroll`` sweeps, differentiable) or
    ``"match"`` (negative converged unbalanced objective, numpy only).
    """
    q_frames, q_pooled, protos, text = _forward(model, dataset, episode, reverse)
    if mode == "surrogate":
        qm = (q_frames / (q_frames * q_frames).sum(axis=-1, keepdims=True).sqrt()).mean(axis=-2)
        pm = (protos / (protos * protos).sum(axis=-1, keepdims=True).sqrt()).mean(axis=-2)
        score = qm @ pm.T
    elif mode == "unrolled":
        ot = config.ot
        score = -unrolled.uot_distance(
            q_frames.expand(1), protos.expand(0), ot.lambda_ent, ot.tau, max(1, config.train.sinkhorn_unroll)
        )
    elif mode == "match":
        qf, pf = q_frames.data, protos.data
        score = Tensor([[-video_distance(q, p, config.ot) for p in pf] for q in qf])
    else:
        raise UsageError(f"unknown scoring mode {mode!r}")
    fsl = score * (1.0 / config.merge.temp_fsl)
    zsl = _cosine(q_pooled, as_tensor(text)) * (1.0 / config.merge.temp_zsl)
    return fsl, zsl


def training_loss(model, dataset, episode, config):
    """Mean over queries of the few-shot plus zero-shot cross-entropy."""
    mode = "unrolled" if config.train.sinkhorn_unroll > 0 else "surrogate"
    fsl, zsl = episode_logits(model, dataset, episode, config, mode)
    rows = np.arange(len(episode.query_labels))
    ce = -(fsl.log_softmax(axis=-1)[rows, episode.query_labels]) - zsl.log_softmax(axis=-1)[rows, episode.query_labels]
    return ce.mean()


# -- probability heads --------------------------------------------------------


def _softmax(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise DimensionError("empty score vector")
    e = np.exp(x - x.max())
    return e / e.sum()


def fsl_probs(query_frames, prototypes, temperature, ot_cfg):
    """Softmax over prototypes of the negative matching objective / temperature."""
    if len(prototypes) == 0:
        raise DimensionError("need at least one prototype")
    return _softmax([-video_distance(query_frames, p, ot_cfg) / temperature for p in prototypes])


def zsl_probs(query_pooled, text, temperature):
    """Softmax over classes of cosine(query, text embedding) / temperature."""
    q = np.asarray(query_pooled, dtype=np.float64)
    t = np.asarray(text, dtype=np.float64)
    nq, nt = np.linalg.norm(q), np.linalg.norm(t, axis=-1)
    if nq == 0 or np.any(nt == 0):
        raise NumericError("zero-norm vector in zero-shot head")
    return _softmax((t @ q) / (nt * nq) / temperature)


def merge_probs(p_fsl, p_zsl, lambda_m):
    """Geometric interpolation ``p_fsl^l * p_zsl^(1-l)``, renormalised.

    Components are floored at ``PROB_FLOOR`` before the logarithm; the two
    endpoints return the corresponding input unchanged.
    """
    if not 0.0 <= lambda_m <= 1.0:
        raise UsageError("merge weight must be in [0, 1]")
    p_fsl, p_zsl = np.asarray(p_fsl, dtype=np.float64), np.asarray(p_zsl, dtype=np.float64)
    if p_fsl.shape != p_zsl.shape:
        raise DimensionError("distributions differ in length")
    if lambda_m == 1.0:
        return p_fsl.copy()
    if lambda_m == 0.0:
        return p_zsl.copy()
    log_p = lambda_m * np.log(np.maximum(p_fsl, PROB_FLOOR)) + (1 - lambda_m) * np.log(np.maximum(p_zsl, PROB_FLOOR))
    return _softmax(log_p)


def episode_loss(bundles, labels):
    """Mean over queries of ``CE(p_fsl, gt) + CE(p_zsl, gt)``."""
    labels = np.asarray(labels)
    if len(bundles) != len(labels) or len(bundles) == 0:
        raise DimensionError("one label per prediction bundle")
    total = 0.0
    for b, y in zip(bundles, labels):
        total -= math.log(max(b.p_fsl[y], PROB_FLOOR)) + math.log(max(b.p_zsl[y], PROB_FLOOR))
    return total / len(bundles)


def predict_episode(model, dataset, episode, config, reverse=False):
    """Prediction bundles for all queries, scoring with the converged matching."""
    with no_grad():
        fsl, zsl = episode_logits(model, dataset, episode, config, "match", reverse)
    out = []
    for f, z in zip(fsl.data, zsl.data):
        pf, pz = _softmax(f), _softmax(z)
        out.append(PredictionBundle(pf, pz, merge_probs(pf, pz, config.merge.lambda_m), config.merge.lambda_m))
    return out


# -- training and evaluation --------------------------------------------------


@dataclass
class TrainLog:
    config_hash: str
    losses: list = field(default_factory=list)

    def to_dict(self):
        return {
            "config_hash": self.config_hash,
            "steps": len(self.losses),
            "initial_loss": self.losses[0] if self.losses else None,
            "final_loss": self.losses[-1] if self.losses else None,
            "loss": self.losses,
        }


def clip_gradients(grads, max_norm):
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``.

    ``max_norm = 0`` leaves them untouched. Returns the norm before clipping.
    """
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def train(config, dataset, model=None, callback=None):
    """Constant-rate SGD over episodes drawn from the ``episode`` substream.

    Gradients are clipped to joint norm ``train.clip_norm`` before each step.

    Only trainable parameters (adapters, temporal token, merge block) move.
    Raises :class:`NumericError` carrying the step index if the loss stops
    being finite.
    """
    if model is None:
        model = Model.init(config.model, dataset.shape[-1], config.train.seed)
    rng = substream(config.train.seed, "episode")
    ep = config.episode
    log = TrainLog(config.digest())
    for step in range(config.train.steps):
        episode = sample_episode(dataset, ep.N, ep.K, ep.q_per_class, rng)
        loss = training_loss(model, dataset, episode, config)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(f"loss diverged at step {step}", step=step)
        grads = grad(loss, model.params)
        clip_gradients(grads, config.train.clip_norm)
        model.params.sgd_step(config.train.lr)
        log.losses.append(value)
        if callback is not None:
            callback(step, value)
    return model, log


@dataclass
class EvalResult:
    accuracy: float
    ci95: float
    correct: int
    total: int
    per_episode: list

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "ci95": self.ci95,
            "correct": self.correct,
            "incorrect": self.total - self.correct,
            "queries": self.total,
            "episodes": len(self.per_episode),
        }


def eval_episodes(config, dataset, episodes=None):
    if episodes is None:
        episodes = config.eval.episodes
    if episodes < 1:
        raise UsageError("need at least one evaluation episode")
    rng = substream(config.eval.seed, "episode")
    ep = config.episode
    return [sample_episode(dataset, ep.N, ep.K, ep.q_per_class, rng) for _ in range(episodes)]


def _score(model, dataset, episodes, config, reverse):
    records = []
    for i, e in enumerate(episodes):
        bundles = predict_episode(model, dataset, e, config, reverse)
        hits = sum(int(b.prediction == y) for b, y in zip(bundles, e.query_labels))
        records.append({"episode": i, "correct": hits, "queries": len(bundles)})
    correct = sum(r["correct"] for r in records)
    total = sum(r["queries"] for r in records)
    accs = np.array([r["correct"] / r["queries"] for r in records])
    ci = 1.96 * accs.std(ddof=1) / math.sqrt(len(accs)) if len(accs) > 1 else 0.0
    return EvalResult(correct / total, float(ci), correct, total, records)


def evaluate(model, dataset, config, episodes=None):
    """Accuracy of ``argmax p_merged`` over sampled episodes, with a 95% CI.

    The interval is the normal approximation over per-episode accuracies.
    """
    return _score(model, dataset, eval_episodes(config, dataset, episodes), config, False)


def reverse_evaluate(model, dataset, config, episodes=None):
    """Evaluate the same episodes with frames in order and reversed.

    Returns ``(forward, reversed, drop)`` with ``drop = forward - reversed``
    in accuracy units.
    """
    eps = eval_episodes(config, dataset, episodes)
    fwd = _score(model, dataset, eps, config, False)
    rev = _score(model, dataset, eps, config, True)
    return fwd, rev, fwd.accuracy - rev.accuracy
