"""Run configuration: JSON file -> validated dataclasses -> content hash.

Every CLI run resolves a single config (file values over defaults), hashes
the resolved form with sha256, and stamps that hash into the artifacts it
writes, so any output can be traced to the exact configuration that
produced it.  Unknown keys are rejected rather than ignored.

Environment variables override only where files go and how many threads
numerics may use (``SPHERECODE_OUT_DIR``, ``SPHERECODE_THREADS``); they
never change experiment semantics, and they do not enter the hash.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

ENV_OUT_DIR = "SPHERECODE_OUT_DIR"
ENV_THREADS = "SPHERECODE_THREADS"


@dataclass
class DataConfig:
    mode: str = "synthetic"          # synthetic | csv | binary
    m: int = 64
    d: int = 32
    dispersion: float = 8.0
    head_fraction: float = 1.0
    head_count: int = 50
    tail_count: int = 50
    embeddings: str | None = None    # path, for csv/binary modes
    feature_dim: int | None = None   # input feature width; defaults to d


@dataclass
class VectorsConfig:
    init: str = "mean"               # mean | random
    t: float = 2.0
    lr: float = 0.1
    epochs: int = 200
    row_batch: int | None = None


@dataclass
class TokenizerSection:
    l: int | None = None             # None -> suggest from m
    v: int | None = None
    kmeans_iters: int = 100
    restarts: int = 8
    assignment: str = "tree"         # tree | shuffled (ablation)


@dataclass
class TrainingSection:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    scale: float = 16.0
    gamma_balance: float = 1.0
    lambdas: list[float] | None = None
    backbone_hidden: list[int] = field(default_factory=lambda: [64, 64])
    head_hidden_layers: int = 2


@dataclass
class BaselineSection:
    epochs: int = 40
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    scale: float = 16.0
    train_backbone: bool = False


@dataclass
class CostSection:
    ms: list[int] = field(
        default_factory=lambda: [10**3, 10**4, 10**5, 10**6, 10**7]
    )
    d: int = 512
    alpha: float = 0.1


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/out"
    threads: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    vectors: VectorsConfig = field(default_factory=VectorsConfig)
    tokenizer: TokenizerSection = field(default_factory=TokenizerSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    cost: CostSection = field(default_factory=CostSection)


_SECTIONS = {
    "data": DataConfig,
    "vectors": VectorsConfig,
    "tokenizer": TokenizerSection,
    "training": TrainingSection,
    "baseline": BaselineSection,
    "cost": CostSection,
}


def _apply(obj, values: dict, where: str):
    known = {f.name for f in dataclasses.fields(obj)}
    for key, val in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {where}{key}")
        setattr(obj, key, val)
    return obj


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Parse and validate a JSON config file; ``None`` gives pure defaults."""
    cfg = ExperimentConfig()
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config root must be a JSON object, got {type(raw)}")
        for key, val in raw.items():
            if key in _SECTIONS:
                if not isinstance(val, dict):
                    raise ConfigError(f"config section '{key}' must be an object")
                _apply(getattr(cfg, key), val, f"{key}.")
            elif key in ("seed", "out_dir", "threads"):
                setattr(cfg, key, val)
            else:
                raise ConfigError(f"unknown config key {key}")
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    def bad(msg: str):
        raise ConfigError(msg)

    if not isinstance(cfg.seed, int):
        bad(f"seed must be an integer, got {cfg.seed!r}")
    if cfg.threads < 1:
        bad(f"threads must be >= 1, got {cfg.threads}")
    d = cfg.data
    if d.mode not in ("synthetic", "csv", "binary"):
        bad(f"data.mode must be synthetic|csv|binary, got {d.mode!r}")
    if d.mode != "synthetic" and not d.embeddings:
        bad(f"data.mode={d.mode!r} requires data.embeddings")
    if d.m < 2:
        bad(f"data.m must be >= 2, got {d.m}")
    if d.d < 2:
        bad(f"data.d must be >= 2, got {d.d}")
    if not (d.dispersion > 0 or math.isinf(d.dispersion)):
        bad(f"data.dispersion must be positive, got {d.dispersion}")
    if not 0.0 <= d.head_fraction <= 1.0:
        bad(f"data.head_fraction must be in [0, 1], got {d.head_fraction}")
    if d.tail_count < 1 or d.head_count < d.tail_count:
        bad(
            "data.head_count must be >= data.tail_count >= 1, got "
            f"{d.head_count} / {d.tail_count}"
        )
    v = cfg.vectors
    if v.init not in ("mean", "random"):
        bad(f"vectors.init must be mean|random, got {v.init!r}")
    if v.t <= 0 or v.lr <= 0 or v.epochs < 0:
        bad("vectors: t and lr must be positive, epochs >= 0")
    t = cfg.tokenizer
    if (t.l is None) != (t.v is None):
        bad("tokenizer.l and tokenizer.v must be set together (or both null)")
    if t.l is not None and (t.l < 1 or t.v < 2):
        bad(f"tokenizer needs l >= 1 and v >= 2, got l={t.l}, v={t.v}")
    if t.l is not None and t.v**t.l < d.m:
        bad(
            f"tokenizer code space v^l = {t.v}^{t.l} = {t.v ** t.l} cannot "
            f"hold data.m = {d.m} identities"
        )
    if t.assignment not in ("tree", "shuffled"):
        bad(f"tokenizer.assignment must be tree|shuffled, got {t.assignment!r}")
    tr = cfg.training
    if tr.epochs < 0 or tr.batch_size < 1 or tr.lr <= 0:
        bad("training: epochs >= 0, batch_size >= 1, lr > 0 required")
    if tr.gamma_balance < 0:
        bad(f"training.gamma_balance must be >= 0, got {tr.gamma_balance}")
    b = cfg.baseline
    if b.epochs < 0 or b.batch_size < 1 or b.lr <= 0:
        bad("baseline: epochs >= 0, batch_size >= 1, lr > 0 required")
    c = cfg.cost
    if not c.ms or any(mm < 2 for mm in c.ms):
        bad("cost.ms must be a non-empty list of identity counts >= 2")
    if not 0.0 < c.alpha < 1.0:
        bad(f"cost.alpha must be in (0, 1), got {c.alpha}")


def resolved_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 over the canonical JSON form of the resolved config."""
    doc = resolved_dict(cfg)
    doc.pop("out_dir", None)   # hash semantics, not artifact placement
    doc.pop("threads", None)
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def apply_env_overrides(cfg: ExperimentConfig, env=os.environ) -> ExperimentConfig:
    """Honor the output-path and thread-count environment overrides."""
    out = env.get(ENV_OUT_DIR)
    if out:
        cfg.out_dir = out
    threads = env.get(ENV_THREADS)
    if threads:
        try:
            cfg.threads = int(threads)
        except ValueError:
            raise ConfigError(
                f"{ENV_THREADS} must be an integer, got {threads!r}"
            ) from None
        if cfg.threads < 1:
            raise ConfigError(f"{ENV_THREADS} must be >= 1, got {threads}")
    return cfg
