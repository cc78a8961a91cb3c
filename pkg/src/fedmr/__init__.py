"""Deterministic federated-learning simulator with manifold-reshaping losses."""

from fedmr.autodiff import SgdConfig, Tensor, backward
from fedmr.config import ExperimentConfig, parse_config
from fedmr.data import Dataset, PartitionSpec, gen_circles, gen_motivation, load_csv, partition
from fedmr.errors import FedMRError
from fedmr.federation import FedConfig, aggregate_params, aggregate_prototypes, run_experiment
from fedmr.losses import LossConfig, inter_loss, inter_loss_lite, intra_loss, total_loss
from fedmr.model import MlpSpec, ModelParams, init_params

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "ExperimentConfig",
    "FedConfig",
    "FedMRError",
    "LossConfig",
    "MlpSpec",
    "ModelParams",
    "PartitionSpec",
    "SgdConfig",
    "Tensor",
    "aggregate_params",
    "aggregate_prototypes",
    "backward",
    "gen_circles",
    "gen_motivation",
    "init_params",
    "inter_loss",
    "inter_loss_lite",
    "intra_loss",
    "load_csv",
    "parse_config",
    "partition",
    "run_experiment",
    "total_loss",
]
