"""Run configuration: a JSON document with fixed sections and validated ranges."""

from dataclasses import asdict, dataclass, field, fields, replace as dc_replace
import hashlib
import json
import math
import os

from .backbone import AdapterConfig
from .errors import UsageError
from .transport import OtConfig


@dataclass(frozen=True)
class EpisodeConfig:
    N: int = 5
    K: int = 1
    q_per_class: int = 1

    def validate(self):
        if self.N < 1 or self.K < 1 or self.q_per_class < 1:
            raise UsageError("episode N, K and q_per_class must be >= 1")
        return self


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.5
    steps: int = 1000
    seed: int = 0
    # 0 trains the few-shot head on the cosine surrogate; > 0 backpropagates
    # through that many unbalanced scaling sweeps instead
    sinkhorn_unroll: int = 0
    # global gradient-norm clip applied before each step; 0 disables
    clip_norm: float = 1.0

    def validate(self):
        if not (math.isfinite(self.lr) and self.lr >= 0):
            raise UsageError("train.lr must be finite and >= 0")
        if self.steps < 0:
            raise UsageError("train.steps must be >= 0")
        if not (math.isfinite(self.clip_norm) and self.clip_norm >= 0):
            raise UsageError("train.clip_norm must be finite and >= 0")
        if self.sinkhorn_unroll < 0:
            raise UsageError("train.sinkhorn_unroll must be >= 0")
        return self


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 500
    seed: int = 1

    def validate(self):
        if self.episodes < 1:
            raise UsageError("eval.episodes must be >= 1")
        return self


@dataclass(frozen=True)
class MergeConfig:
    lambda_m: float = 0.5
    temp_fsl: float = 1.0
    temp_zsl: float = 0.07

    def validate(self):
        if not 0.0 <= self.lambda_m <= 1.0:
            raise UsageError("merge.lambda_m must be in [0, 1]")
        if not (self.temp_fsl > 0 and self.temp_zsl > 0):
            raise UsageError("merge temperatures must be > 0")
        return self


@dataclass(frozen=True)
class PathsConfig:
    features: str = None
    # evaluation pack; falls back to ``features`` when unset
    eval_features: str = None
    corpus: str = None
    text_embeddings: str = None
    weights_out: str = None
    backbone: str = None

    def validate(self):
        return self


_SECTIONS = {
    "model": AdapterConfig,
    "ot": OtConfig,
    "episode": EpisodeConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "merge": MergeConfig,
    "paths": PathsConfig,
}

_INTS = {"L", "J", "d", "max_iters", "N", "K", "q_per_class", "steps", "seed", "episodes", "sinkhorn_unroll"}


def _section(cls, name, raw):
    if not isinstance(raw, dict):
        raise UsageError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise UsageError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    values = {}
    for key, value in raw.items():
        if key in _INTS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise UsageError(f"{name}.{key} must be an integer")
        elif cls is PathsConfig:
            if value is not None and not isinstance(value, str):
                raise UsageError(f"{name}.{key} must be a string")
        elif isinstance(value, bool) or not isinstance(value, (int, float)):
            raise UsageError(f"{name}.{key} must be a number")
        values[key] = value
    return cls(**values).validate()


@dataclass(frozen=True)
class RunConfig:
    model: AdapterConfig = field(default_factory=AdapterConfig)
    ot: OtConfig = field(default_factory=OtConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    merge: MergeConfig = field(default_factory=MergeConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    # directory that relative paths were resolved against; kept out of the digest
    base_dir: str = field(default=None, compare=False, repr=False)

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise UsageError("config must be a JSON object")
        unknown = sorted(set(raw) - set(_SECTIONS))
        if unknown:
            raise UsageError(f"unknown config section(s): {', '.join(unknown)}")
        return cls(**{k: _section(_SECTIONS[k], k, raw[k]) for k in raw})

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self):
        return {k: asdict(getattr(self, k)) for k in _SECTIONS}

    def resolve_paths(self, base):
        """Copy with relative ``paths`` entries taken relative to directory ``base``."""
        values = {
            k: (v if v is None or os.path.isabs(v) else os.path.join(base, v))
            for k, v in asdict(self.paths).items()
        }
        return dc_replace(self, paths=PathsConfig(**values), base_dir=base)

    def replace(self, **sections):
        """Copy with whole sections or ``section__key=value`` overrides."""
        out = {k: getattr(self, k) for k in _SECTIONS}
        per_section = {}
        for key, value in sections.items():
            if "__" in key:
                sec, attr = key.split("__", 1)
                per_section.setdefault(sec, {})[attr] = value
            else:
                out[key] = value
        for sec, values in per_section.items():
            out[sec] = dc_replace(out[sec], **values).validate()
        return RunConfig(**out, base_dir=self.base_dir)

    def digest(self):
        """SHA-256 of the canonical config; resolved paths hash as they were written."""
        raw = self.to_dict()
        if self.base_dir is not None:
            prefix = os.path.join(self.base_dir, "")
            raw["paths"] = {k: (v[len(prefix):] if v and v.startswith(prefix) else v) for k, v in raw["paths"].items()}
        blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()
