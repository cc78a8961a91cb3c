"""
Round protocol: select clients, train locally, aggregate weights and prototypes.

Clients only ever see their own samples plus the broadcast snapshot of the
global weights and prototypes.  All randomness is derived from
``(seed, round, client_id, ...)`` so a run is reproducible bit for bit, and
aggregation sums in ascending client-id order.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from fedmr import autodiff as ad
from fedmr.autodiff import SgdConfig, Tensor
from fedmr.data import ClientShard, Dataset, derive_seed
from fedmr.errors import ContractError, ProtocolError
from fedmr.losses import LossConfig, PrototypeSet, local_prototypes, total_loss
from fedmr.model import ModelParams, features, param_count, predict

logger = logging.getLogger(__name__)

# stream tags for derive_seed
_SELECT, _SHUFFLE, _LITE, _PRIVACY, _EVAL = 11, 12, 13, 14, 15


@dataclass(frozen=True)
class FedConfig:
    rounds: int = 40
    local_epochs: int = 10
    batch_size: int = 128
    clients_per_round: int | None = None  # None = every client
    loss: LossConfig = LossConfig()
    sgd: SgdConfig = SgdConfig()
    seed: int = 0
    eigvar: bool = False
    eigvar_k: int = 50
    eigvar_normalizer: float = 128.0
    targets: tuple[float, ...] = (0.5, 0.9)
    threads: int = 1

    def __post_init__(self):
        if self.rounds < 0:
            raise ContractError("rounds must be >= 0")
        if self.local_epochs < 1:
            raise ContractError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.clients_per_round is not None and self.clients_per_round < 1:
            raise ContractError("clients_per_round must be >= 1")

    @property
    def uses_prototypes(self) -> bool:
        return self.loss.mu2 > 0


@dataclass
class ClientState:
    client_id: int
    shard: ClientShard
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    prototype_allowed: bool = True

    def __post_init__(self):
        if len(self.y) == 0:
            raise ContractError(f"client {self.client_id} has an empty shard")

    @property
    def num_samples(self) -> int:
        return len(self.y)

    @property
    def class_set(self) -> frozenset[int]:
        return self.shard.class_set


@dataclass
class ServerState:
    round: int
    params: ModelParams
    prototypes: PrototypeSet | None = None
    seed: int = 0


@dataclass
class LocalResult:
    client_id: int
    params: ModelParams
    prototypes: PrototypeSet | None
    num_samples: int
    cls: float
    intra: float
    inter: float
    first_epoch_loss: float
    last_epoch_loss: float


@dataclass
class RoundReport:
    round: int
    selected: list[int]
    client_losses: list[dict]
    accuracy: float
    uplink_params: int
    model_params: int
    prototype_params: int
    eigvar: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def make_clients(
    dataset: Dataset, shards: Sequence[ClientShard], prototype_fraction: float = 1.0, seed: int = 0
) -> list[ClientState]:
    """Materialise per-client data; a fixed random subset may submit prototypes.

    Empty shards (possible under a Dirichlet split) are dropped.
    """
    shards = [s for s in shards if len(s) > 0]
    n_allowed = int(round(prototype_fraction * len(shards)))
    rng = np.random.default_rng(derive_seed(seed, _PRIVACY))
    allowed = set(int(i) for i in rng.choice([s.client_id for s in shards], size=n_allowed, replace=False))
    return [
        ClientState(s.client_id, s, dataset.features[s.indices], dataset.labels[s.indices], s.client_id in allowed)
        for s in shards
    ]


def select_clients(client_ids: Sequence[int], k: int, round_idx: int, seed: int) -> list[int]:
    ids = sorted(int(c) for c in client_ids)
    if k > len(ids):
        raise ContractError(f"cannot select {k} of {len(ids)} clients")
    if k == len(ids):
        return ids
    rng = np.random.default_rng(derive_seed(seed, _SELECT, round_idx))
    return sorted(int(c) for c in rng.choice(ids, size=k, replace=False))


def local_train(
    client: ClientState,
    global_params: ModelParams,
    global_prototypes: PrototypeSet | None,
    cfg: FedConfig,
    round_idx: int = 0,
) -> LocalResult:
    """E epochs of shuffled mini-batch SGD on the local objective, then local prototypes.

    Momentum buffers start at zero on every call.  The inter-class term is
    skipped until global prototypes exist, and it only covers batch samples
    whose class already has a global prototype.
    """
    layout = global_params.layout
    flat = Tensor(global_params.values.copy(), requires_grad=True)
    anchor = global_params.values
    velocity = np.zeros_like(anchor)
    loss_cfg = cfg.loss
    use_inter = loss_cfg.mu2 > 0 and global_prototypes is not None and len(global_prototypes) > 0
    if not use_inter and loss_cfg.mu2 > 0:
        loss_cfg = _without_inter(loss_cfg)
    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, _SHUFFLE, round_idx, client.client_id))
    lite_rng = np.random.default_rng(derive_seed(cfg.seed, _LITE, round_idx, client.client_id))
    n = client.num_samples
    epoch_losses: list[float] = []
    last = (0.0, 0.0, 0.0)
    for _ in range(cfg.local_epochs):
        order = shuffle_rng.permutation(n)
        sums = np.zeros(4)
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = client.x[idx], client.y[idx]
            parts = total_loss(
                xb, yb, layout, flat, loss_cfg,
                prototypes=global_prototypes if use_inter else None,
                global_flat=anchor, rng=lite_rng, uncovered="skip",
            )
            flat.zero_grad()
            ad.backward(parts.total)
            ad.sgd_step(flat.data, flat.grad, cfg.sgd, velocity)
            sums += (parts.total.item(), parts.cls, parts.intra, parts.inter)
            batches += 1
        means = sums / batches
        epoch_losses.append(float(means[0]))
        last = tuple(float(v) for v in means[1:])
    params = ModelParams(layout, flat.data.copy())
    protos = None
    if cfg.uses_prototypes and client.prototype_allowed:
        protos = local_prototypes(features(params, client.x), client.y)
    return LocalResult(
        client.client_id, params, protos, n, *last,
        first_epoch_loss=epoch_losses[0], last_epoch_loss=epoch_losses[-1],
    )


def _without_inter(cfg: LossConfig) -> LossConfig:
    return replace(cfg, mu2=0.0)


def aggregate_params(updates: Sequence[tuple[int, ModelParams, int]]) -> ModelParams:
    """Sample-count weighted mean, summed in ascending client-id order."""
    if not updates:
        raise ProtocolError("no updates to aggregate")
    updates = sorted(updates, key=lambda u: u[0])
    layout = updates[0][1].layout
    total = float(np.sum([n for _, _, n in updates]))
    acc = np.zeros(layout.size)
    for _, params, n in updates:
        if params.values.shape != acc.shape:
            raise ProtocolError("parameter vectors differ in length")
        acc += (n / total) * params.values
    return ModelParams(layout, acc)


def aggregate_prototypes(
    submissions: Sequence[tuple[int, PrototypeSet]], previous: PrototypeSet | None = None
) -> PrototypeSet | None:
    """Per-class count-weighted mean over submitters; unsubmitted classes keep their old value."""
    out = previous.copy() if previous is not None else PrototypeSet()
    by_class: dict[int, list[tuple[int, np.ndarray]]] = {}
    for _, protos in sorted(submissions, key=lambda s: s[0]):
        for c in protos.classes:
            by_class.setdefault(c, []).append((protos.counts[c], protos.vectors[c]))
    for c, items in by_class.items():
        total = float(np.sum([n for n, _ in items]))
        acc = np.zeros_like(items[0][1])
        for n, v in items:
            acc += (n / total) * v
        out.vectors[c] = acc
        out.counts[c] = int(total)
    if not out.vectors:
        return previous
    return out


def accuracy(params: ModelParams, test: Dataset) -> float:
    return float(np.mean(predict(params, test.features) == test.labels))


def run_round(
    server: ServerState,
    clients: Sequence[ClientState],
    test: Dataset,
    cfg: FedConfig,
) -> tuple[ServerState, RoundReport]:
    by_id = {c.client_id: c for c in clients}
    k = cfg.clients_per_round or len(clients)
    selected = select_clients(list(by_id), k, server.round, cfg.seed)

    def train(cid: int) -> LocalResult:
        return local_train(by_id[cid], server.params, server.prototypes, cfg, server.round)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(train, selected))
    else:
        results = [train(cid) for cid in selected]

    params = aggregate_params([(r.client_id, r.params, r.num_samples) for r in results])
    submissions = [(r.client_id, r.prototypes) for r in results if r.prototypes is not None]
    prototypes = aggregate_prototypes(submissions, server.prototypes) if cfg.uses_prototypes else None

    model_count = param_count(params.spec)
    proto_count = sum(p.param_count() for _, p in submissions)
    eig = None
    if cfg.eigvar:
        from fedmr.analysis import collapse_metric

        eig = collapse_metric(params, test, k=cfg.eigvar_k, normalizer=cfg.eigvar_normalizer, seed=cfg.seed)
    report = RoundReport(
        round=server.round,
        selected=selected,
        client_losses=[
            {"client": r.client_id, "cls": r.cls, "intra": r.intra, "inter": r.inter} for r in results
        ],
        accuracy=accuracy(params, test),
        uplink_params=len(selected) * model_count + proto_count,
        model_params=model_count,
        prototype_params=proto_count,
        eigvar=eig,
    )
    return ServerState(server.round + 1, params, prototypes, server.seed), report


@dataclass
class ExperimentResult:
    reports: list[RoundReport]
    final: ServerState
    summary: dict


def rounds_to_target(reports: Sequence[RoundReport], target: float) -> int | None:
    """1-based number of rounds until global accuracy first reaches ``target``."""
    for r in reports:
        if r.accuracy >= target:
            return r.round + 1
    return None


def run_experiment(
    cfg: FedConfig,
    initial: ModelParams,
    clients: Sequence[ClientState],
    test: Dataset,
) -> ExperimentResult:
    server = ServerState(0, initial.copy(), None, cfg.seed)
    reports = []
    for _ in range(cfg.rounds):
        server, report = run_round(server, clients, test, cfg)
        logger.info("round %d acc=%.4f", report.round, report.accuracy)
        reports.append(report)
    accs = [r.accuracy for r in reports]
    summary = {
        "rounds": cfg.rounds,
        "best_accuracy": max(accs) if accs else None,
        "final_accuracy": accs[-1] if accs else None,
        "rounds_to_target": {f"{t:g}": rounds_to_target(reports, t) for t in cfg.targets},
        "total_uplink_params": int(sum(r.uplink_params for r in reports)),
    }
    return ExperimentResult(reports, server, summary)


def write_reports(reports: Sequence[RoundReport], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def communication_overhead(model_params: int, num_classes: int, feature_dim: int) -> float:
    """Extra uplink fraction from sending one d-vector per class alongside the model."""
    if model_params <= 0:
        raise ContractError("model_params must be positive")
    return num_classes * feature_dim / model_params
