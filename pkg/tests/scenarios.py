"""Shared desk-scale scenarios for the acceptance suite."""

from dataclasses import replace
from functools import lru_cache

import numpy as np

from fedccfa.config import ExperimentConfig
from fedccfa.experiment import build_datasets, make_estimator

# separable synthetic data, ten clients, ten classes, drift at round 30 of 60
DRIFT_RUN = replace(ExperimentConfig(), clients=10, rounds=60, seeds=(0,))

# eight clients, four classes; even clients swap classes 0 and 1 at round 20 of 40
RECOVERY_RUN = replace(ExperimentConfig(), clients=8, num_classes=4, rounds=40, drift="sudden",
                       drift_rules="0,1,2,0")

# eight clients, four classes, each client holding mostly one class
DOMINANT_RUN = replace(ExperimentConfig(), clients=8, num_classes=4, rounds=40, train_per_class=400,
                       test_per_class=100)


@lru_cache(maxsize=None)
def history(config, seed=0):
    train, test = build_datasets(config, seed)
    est = make_estimator(config, seed)
    est.fit(train.inputs, train.labels, test.inputs, test.labels)
    return est.history_


def drift_history(variant, drift, seed=0):
    return history(replace(DRIFT_RUN, variant=variant, drift=drift), seed)


def dominant_partition(labels, n_clients, n_classes, minor=5):
    """Client k owns most of class k % n_classes and ``minor`` samples of every other class."""
    parts = [[] for _ in range(n_clients)]
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        pos = 0
        for k in range(n_clients):
            if k % n_classes != c:
                parts[k].extend(idx[pos:pos + minor])
                pos += minor
        owners = [k for k in range(n_clients) if k % n_classes == c]
        for k, chunk in zip(owners, np.array_split(idx[pos:], len(owners))):
            parts[k].extend(chunk)
    return [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]


@lru_cache(maxsize=None)
def dominant_history(weight_mode, seed):
    config = replace(DOMINANT_RUN, alignment_weight=weight_mode, align_lambda=1.0)
    train, test = build_datasets(config, seed)
    partition = dominant_partition(train.labels, config.clients, config.num_classes)
    est = make_estimator(config, seed, partition=partition)
    est.fit(train.inputs, train.labels, test.inputs, test.labels)
    return est.history_
