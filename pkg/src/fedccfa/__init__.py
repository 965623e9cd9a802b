"""Federated learning under distributed concept drift with class-level classifier clustering
and entropy-weighted clustered feature alignment."""

from .clustering import MADDClustering, cluster_all_classes, cosine_distance, dbscan, madd_matrix
from .config import ExperimentConfig, parse_config, serialize_config
from .data import (LabeledDataset, PartitionSpec, SwapRule, build_drift_schedule, dirichlet_partition,
                   load_idx, make_synthetic)
from .estimator import FederatedDriftClassifier
from .federation import AlgorithmConfig, run_round, simulate
from .model import ModelParams

__all__ = [
    "AlgorithmConfig", "ExperimentConfig", "FederatedDriftClassifier", "LabeledDataset",
    "MADDClustering", "ModelParams", "PartitionSpec", "SwapRule", "build_drift_schedule",
    "cluster_all_classes", "cosine_distance", "dbscan", "dirichlet_partition", "load_idx",
    "madd_matrix", "make_synthetic", "parse_config", "run_round", "serialize_config", "simulate",
]
