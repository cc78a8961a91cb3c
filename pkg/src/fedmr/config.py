"""
Strict JSON experiment configuration.

Every key is checked against a table of known keys and types; unknown keys,
wrong types and algorithm-specific violations raise :class:`ConfigError`
naming the offending key.  A minimal document only needs ``algorithm``,
``dataset`` and ``partition``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from fedmr.autodiff import SgdConfig
from fedmr.data import PartitionSpec
from fedmr.errors import ConfigError, FedMRError
from fedmr.federation import FedConfig
from fedmr.losses import LossConfig

ALGORITHMS = ("fedavg", "fedprox", "fedmr", "fedmr-intra", "fedmr-inter", "fedmr-lite")
DATASET_KINDS = ("circles", "motivation", "csv")

DEFAULT_MU1 = 0.1
DEFAULT_MU2 = 0.0001

_NUM = (int, float)


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "circles"
    n_per_class: int = 5000
    test_per_class: int = 1000
    radius: float = 0.5
    path: str | None = None
    test_path: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str
    dataset: DatasetConfig
    partition: PartitionSpec
    hidden: tuple[int, ...] = (128, 3)
    rounds: int = 40
    local_epochs: int = 10
    batch_size: int = 128
    clients_per_round: int | None = None
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    mu1: float = 0.0
    mu2: float = 0.0
    margin: float = 0.0
    lite_n: int | None = None
    prox_mu: float = 0.0
    contrast_all: bool = False
    inter_mode: str = "hinge"
    prototype_fraction: float = 1.0
    seed: int = 0
    threads: int = 1
    output: str = "out"
    eigvar: bool = False
    eigvar_k: int = 50
    eigvar_normalizer: float = 128.0
    feature_dump: bool = False
    targets: tuple[float, ...] = field(default=(0.5, 0.9))

    def loss_config(self) -> LossConfig:
        return LossConfig(
            mu1=self.mu1, mu2=self.mu2, margin=self.margin, lite_n=self.lite_n,
            prox_mu=self.prox_mu, contrast_all=self.contrast_all, inter_mode=self.inter_mode,
        )

    def fed_config(self) -> FedConfig:
        return FedConfig(
            rounds=self.rounds,
            local_epochs=self.local_epochs,
            batch_size=self.batch_size,
            clients_per_round=self.clients_per_round,
            loss=self.loss_config(),
            sgd=SgdConfig(self.learning_rate, self.momentum, self.weight_decay),
            seed=self.seed,
            eigvar=self.eigvar,
            eigvar_k=self.eigvar_k,
            eigvar_normalizer=self.eigvar_normalizer,
            targets=self.targets,
            threads=self.threads,
        )

    def with_overrides(self, **changes) -> "ExperimentConfig":
        if "partition" not in changes and "seed" in changes:
            changes["partition"] = replace(self.partition, seed=changes["seed"])
        return validate(replace(self, **changes))


# key -> (accepted types, required)
_TOP: dict[str, tuple[tuple[type, ...], bool]] = {
    "algorithm": ((str,), True),
    "dataset": ((dict,), True),
    "partition": ((dict,), True),
    "model": ((dict,), False),
    "rounds": ((int,), False),
    "local_epochs": ((int,), False),
    "batch_size": ((int,), False),
    "clients_per_round": ((int, type(None)), False),
    "learning_rate": (_NUM, False),
    "momentum": (_NUM, False),
    "weight_decay": (_NUM, False),
    "mu1": (_NUM, False),
    "mu2": (_NUM, False),
    "margin": (_NUM, False),
    "lite_n": ((int, type(None)), False),
    "prox_mu": (_NUM, False),
    "contrast_all": ((bool,), False),
    "inter_mode": ((str,), False),
    "prototype_fraction": (_NUM, False),
    "seed": ((int,), False),
    "threads": ((int,), False),
    "output": ((str,), False),
    "metrics": ((dict,), False),
    "targets": ((list,), False),
}
_DATASET = {
    "kind": ((str,), True),
    "n_per_class": ((int,), False),
    "test_per_class": ((int,), False),
    "radius": (_NUM, False),
    "path": ((str,), False),
    "test_path": ((str,), False),
}
_PARTITION = {
    "kind": ((str,), True),
    "clients": ((int,), True),
    "classes_per_client": ((int,), False),
    "beta": (_NUM, False),
}
_MODEL = {"hidden": ((list,), False)}
_METRICS = {
    "eigvar": ((bool,), False),
    "eigvar_k": ((int,), False),
    "eigvar_normalizer": (_NUM, False),
    "feature_dump": ((bool,), False),
}


def _check(doc: dict, table: dict, prefix: str = "") -> dict:
    for key in doc:
        if key not in table:
            raise ConfigError("unknown key", key=prefix + key)
    for key, (types, required) in table.items():
        if key not in doc:
            if required:
                raise ConfigError("missing required key", key=prefix + key)
            continue
        value = doc[key]
        # bool is an int subclass; only accept it where bool is asked for
        if isinstance(value, bool) and bool not in types:
            raise ConfigError(f"expected {_type_names(types)}, got bool", key=prefix + key)
        if not isinstance(value, types):
            raise ConfigError(f"expected {_type_names(types)}, got {type(value).__name__}", key=prefix + key)
    return {k: (float(v) if isinstance(v, int) and not isinstance(v, bool) and table[k][0] == _NUM else v)
            for k, v in doc.items()}


def _type_names(types) -> str:
    return " or ".join("null" if t is type(None) else t.__name__ for t in types)


def parse_config_dict(doc: Any, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a JSON object")
    doc = _check(doc, _TOP)
    ds = _check(doc.pop("dataset"), _DATASET, "dataset.")
    part = _check(doc.pop("partition"), _PARTITION, "partition.")
    model = _check(doc.pop("model", {}), _MODEL, "model.")
    metrics = _check(doc.pop("metrics", {}), _METRICS, "metrics.")

    if base_dir is not None:
        for key in ("path", "test_path"):
            if key in ds and not Path(ds[key]).is_absolute():
                ds[key] = str(base_dir / ds[key])
    dataset = DatasetConfig(**ds)

    hidden = model.get("hidden", [128, 3])
    if not hidden or not all(isinstance(h, int) and not isinstance(h, bool) and h >= 1 for h in hidden):
        raise ConfigError("must be a non-empty list of positive integers", key="model.hidden")
    if "targets" in doc:
        targets = doc.pop("targets")
        if not all(isinstance(t, _NUM) and not isinstance(t, bool) for t in targets):
            raise ConfigError("must be a list of numbers", key="targets")
        doc["targets"] = tuple(float(t) for t in targets)

    algorithm = doc["algorithm"]
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; expected one of {', '.join(ALGORITHMS)}", key="algorithm")
    if algorithm in ("fedmr", "fedmr-intra", "fedmr-lite"):
        doc.setdefault("mu1", DEFAULT_MU1)
    if algorithm in ("fedmr", "fedmr-inter", "fedmr-lite"):
        doc.setdefault("mu2", DEFAULT_MU2)

    seed = doc.get("seed", 0)
    try:
        partition = PartitionSpec(
            kind=part["kind"], clients=part["clients"],
            classes_per_client=part.get("classes_per_client"), beta=part.get("beta"), seed=seed,
        )
    except FedMRError as exc:
        raise ConfigError(str(exc), key="partition") from None
    cfg = ExperimentConfig(dataset=dataset, partition=partition, hidden=tuple(hidden), **metrics, **doc)
    return validate(cfg)


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config_dict(doc, base_dir=path.parent)


def _positive(cfg, *keys):
    for key in keys:
        if not getattr(cfg, key) > 0:
            raise ConfigError("must be positive", key=key)


def _nonnegative(cfg, *keys):
    for key in keys:
        if getattr(cfg, key) < 0:
            raise ConfigError("must be nonnegative", key=key)


def _zero(cfg, algorithm, *keys):
    for key in keys:
        if getattr(cfg, key):
            raise ConfigError(f"not used by {algorithm}; remove it or pick another algorithm", key=key)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Range checks plus per-algorithm requirements."""
    ds = cfg.dataset
    if ds.kind not in DATASET_KINDS:
        raise ConfigError(f"unknown dataset kind {ds.kind!r}", key="dataset.kind")
    if ds.kind == "csv" and not ds.path:
        raise ConfigError("csv datasets need a path", key="dataset.path")
    if ds.kind != "csv":
        if ds.n_per_class < 1:
            raise ConfigError("must be >= 1", key="dataset.n_per_class")
        if ds.test_per_class < 1:
            raise ConfigError("must be >= 1", key="dataset.test_per_class")
        if not ds.radius > 0:
            raise ConfigError("must be positive", key="dataset.radius")

    _positive(cfg, "local_epochs", "batch_size", "learning_rate", "threads", "eigvar_k", "eigvar_normalizer")
    _nonnegative(cfg, "rounds", "weight_decay", "mu1", "mu2", "margin", "prox_mu", "seed")
    if not 0 <= cfg.momentum < 1:
        raise ConfigError("must lie in [0, 1)", key="momentum")
    if not 0 <= cfg.prototype_fraction <= 1:
        raise ConfigError("must lie in [0, 1]", key="prototype_fraction")
    if cfg.clients_per_round is not None and not 1 <= cfg.clients_per_round <= cfg.partition.clients:
        raise ConfigError(f"must lie in [1, {cfg.partition.clients}]", key="clients_per_round")
    if cfg.lite_n is not None and cfg.lite_n < 1:
        raise ConfigError("must be a positive integer", key="lite_n")
    if cfg.inter_mode not in ("hinge", "pull"):
        raise ConfigError("must be 'hinge' or 'pull'", key="inter_mode")

    alg = cfg.algorithm
    if alg == "fedavg":
        _zero(cfg, alg, "mu1", "mu2", "prox_mu", "lite_n")
    elif alg == "fedprox":
        _zero(cfg, alg, "mu1", "mu2", "lite_n")
        _positive(cfg, "prox_mu")
    elif alg == "fedmr":
        _zero(cfg, alg, "lite_n")
        _positive(cfg, "mu1", "mu2")
    elif alg == "fedmr-intra":
        _zero(cfg, alg, "mu2", "lite_n")
        _positive(cfg, "mu1")
    elif alg == "fedmr-inter":
        _zero(cfg, alg, "mu1", "lite_n")
        _positive(cfg, "mu2")
    elif alg == "fedmr-lite":
        if cfg.lite_n is None:
            raise ConfigError("fedmr-lite needs lite_n", key="lite_n")
        _positive(cfg, "mu1", "mu2")
    else:
        raise ConfigError(f"unknown algorithm {alg!r}", key="algorithm")
    return cfg
