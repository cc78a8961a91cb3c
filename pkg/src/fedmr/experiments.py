"""Build datasets, clients and models from an :class:`ExperimentConfig` and run it."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from fedmr.analysis import angular_spread, collapse_metric
from fedmr.config import DatasetConfig, ExperimentConfig, validate
from fedmr.data import (
    CIRCLE_CENTERS,
    MOTIVATION_CENTERS,
    ClientShard,
    Dataset,
    PartitionSpec,
    derive_seed,
    gen_disks,
    load_csv,
    partition,
)
from fedmr.errors import ConfigError
from fedmr.federation import ClientState, ExperimentResult, make_clients, run_experiment
from fedmr.model import MlpSpec, ModelParams, features, init_params

# stream tags for derive_seed
_TRAIN, _TEST, _INIT, _PARTITION, _METRIC = 1, 2, 3, 4, 5


@dataclass
class Setup:
    train: Dataset
    test: Dataset
    shards: list[ClientShard]
    clients: list[ClientState]
    initial: ModelParams


def load_datasets(ds: DatasetConfig, seed: int) -> tuple[Dataset, Dataset]:
    if ds.kind == "csv":
        train = load_csv(ds.path)
        test = load_csv(ds.test_path) if ds.test_path else train
        k = max(train.num_classes, test.num_classes)
        return Dataset(train.features, train.labels, k), Dataset(test.features, test.labels, k)
    centers = CIRCLE_CENTERS if ds.kind == "circles" else MOTIVATION_CENTERS
    train = gen_disks(centers, ds.radius, ds.n_per_class, derive_seed(seed, _TRAIN))
    test = gen_disks(centers, ds.radius, ds.test_per_class, derive_seed(seed, _TEST))
    return train, test


def build(cfg: ExperimentConfig) -> Setup:
    train, test = load_datasets(cfg.dataset, cfg.seed)
    spec = replace(cfg.partition, seed=derive_seed(cfg.seed, _PARTITION))
    shards = partition(train, spec)
    clients = make_clients(train, shards, cfg.prototype_fraction, cfg.seed)
    if cfg.clients_per_round is not None and cfg.clients_per_round > len(clients):
        raise ConfigError(f"only {len(clients)} clients hold data", key="clients_per_round")
    sizes = (train.input_dim, *cfg.hidden, train.num_classes)
    initial = init_params(MlpSpec(sizes, seed=derive_seed(cfg.seed, _INIT)))
    return Setup(train, test, shards, clients, initial)


def execute(cfg: ExperimentConfig, setup: Setup | None = None) -> tuple[Setup, ExperimentResult]:
    setup = setup or build(cfg)
    result = run_experiment(cfg.fed_config(), setup.initial, setup.clients, setup.test)
    return setup, result


def sphere_projection(params: ModelParams, data: Dataset) -> tuple[np.ndarray, np.ndarray, int]:
    """Unit-normalised penultimate features; zero-norm rows are dropped and counted."""
    z = features(params, data.features)
    norms = np.linalg.norm(z, axis=1)
    keep = norms > 0
    return z[keep] / norms[keep, None], data.labels[keep], int(np.sum(~keep))


# ------------------------------------------------------------- desk experiment


@dataclass(frozen=True)
class DeskSettings:
    """The small circles benchmark used for the directional comparisons."""

    n_per_class: int = 1000
    test_per_class: int = 500
    clients: int = 4
    classes_per_client: int = 2
    rounds: int = 40
    local_epochs: int = 1
    learning_rate: float = 0.01
    mu1: float = 0.1
    mu2: float = 0.0001


def desk_config(
    algorithm: str,
    seed: int,
    settings: DeskSettings = DeskSettings(),
    iid: bool = False,
    prototype_fraction: float = 1.0,
) -> ExperimentConfig:
    part = (
        PartitionSpec("iid", settings.clients, seed=seed)
        if iid
        else PartitionSpec("pcdd", settings.clients, settings.classes_per_client, seed=seed)
    )
    uses_mu1 = algorithm in ("fedmr", "fedmr-intra", "fedmr-lite")
    uses_mu2 = algorithm in ("fedmr", "fedmr-inter", "fedmr-lite")
    return validate(ExperimentConfig(
        algorithm=algorithm,
        dataset=DatasetConfig("circles", settings.n_per_class, settings.test_per_class),
        partition=part,
        rounds=settings.rounds,
        local_epochs=settings.local_epochs,
        learning_rate=settings.learning_rate,
        mu1=settings.mu1 if uses_mu1 else 0.0,
        mu2=settings.mu2 if uses_mu2 else 0.0,
        prototype_fraction=prototype_fraction,
        seed=seed,
    ))


@dataclass(frozen=True)
class DeskOutcome:
    accuracy: float
    eigvar: float
    spread: float


def desk_run(cfg: ExperimentConfig) -> DeskOutcome:
    setup, result = execute(cfg)
    params = result.final.params
    eig = collapse_metric(params, setup.test, k=cfg.eigvar_k, normalizer=cfg.eigvar_normalizer,
                          seed=derive_seed(cfg.seed, _METRIC))
    points, labels, _ = sphere_projection(params, setup.test)
    return DeskOutcome(result.summary["final_accuracy"], eig, angular_spread(points, labels))


def desk_means(outcomes: Sequence[DeskOutcome]) -> DeskOutcome:
    return DeskOutcome(*(float(np.mean([getattr(o, f) for o in outcomes])) for f in ("accuracy", "eigvar", "spread")))
