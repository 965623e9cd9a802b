"""Experiment driver: datasets per seed, simulation runs, metrics and diagnostics on disk."""

from __future__ import annotations

import csv
import json
import logging
import os
from pathlib import Path

import numpy as np

from .clustering import write_distance_csv
from .config import ExperimentConfig
from .data import DataError, load_idx, make_synthetic
from .estimator import FederatedDriftClassifier
from .federation import InvariantError
from .model import DegenerateSimilarityError

log = logging.getLogger(__name__)

OUTPUT_ENV = "FEDCCFA_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
BASE_COLUMNS = ("seed", "round", "mean_acc", "frob_norm", "rand_index", "mean_align_weight")


def _seed_stream(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def build_datasets(config: ExperimentConfig, seed: int):
    if config.dataset == "idx":
        train = load_idx(config.train_images, config.train_labels, config.num_classes)
        test = load_idx(config.test_images, config.test_labels, config.num_classes)
        return train, test
    train = make_synthetic(config.num_classes, config.input_dim, config.train_per_class,
                           config.separation, config.noise, _seed_stream(seed, 1))
    test = make_synthetic(config.num_classes, config.input_dim, config.test_per_class,
                          config.separation, config.noise, _seed_stream(seed, 2))
    return train, test


def make_estimator(config: ExperimentConfig, seed: int, **overrides) -> FederatedDriftClassifier:
    est = FederatedDriftClassifier(random_state=seed, n_clients=config.clients, alpha=config.alpha,
                                   min_per_class=config.min_per_class, rounds=config.rounds,
                                   hidden_dim=config.hidden_dim, drift=config.drift,
                                   drift_fraction=config.drift_fraction, drift_rules=config.drift_rules,
                                   eval_interval=config.eval_interval)
    algorithm = {name: getattr(config, name) for name in type(config.algorithm()).field_names()}
    return est.set_params(**algorithm, **overrides)


def fmt(value) -> str:
    if value is None:
        return ""
    return f"{float(value):.6g}"


def metrics_header(n_clients: int) -> list:
    return list(BASE_COLUMNS) + [f"acc_client_{k}" for k in range(n_clients)]


def metrics_row(seed: int, m) -> list:
    accs = np.asarray(m.client_acc)
    if np.any(accs < 0) or np.any(accs > 1):
        raise InvariantError(f"accuracy outside [0, 1] at round {m.round}")
    return [str(seed), str(m.round), fmt(m.mean_acc), fmt(m.frob_norm), fmt(m.rand_index),
            fmt(m.mean_align_weight)] + [fmt(a) for a in accs]


def run_seed(config: ExperimentConfig, seed: int):
    train, test = build_datasets(config, seed)
    est = make_estimator(config, seed)
    est.fit(train.inputs, train.labels, test.inputs, test.labels)
    return est


def run_experiment(config: ExperimentConfig) -> int:
    """Run every seed; returns a process exit code (0 ok, 1 configuration, 2 runtime invariant)."""
    out = Path(os.environ.get(OUTPUT_ENV) or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    finals = []
    try:
        with open(out / "metrics.csv", "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(metrics_header(config.clients))
            for seed in config.seeds:
                log.info("seed %d: %s, %s drift, %d rounds", seed, config.variant, config.drift, config.rounds)
                est = run_seed(config, seed)
                for m in est.history_:
                    row = metrics_row(seed, m)
                    if len(row) != len(metrics_header(config.clients)):
                        raise InvariantError("metrics row arity does not match header")
                    writer.writerow(row)
                    if config.dump_distances and m.assignment is not None:
                        for c, matrix in enumerate(m.assignment.matrices):
                            write_distance_csv(matrix, out / "distances" / f"seed_{seed}"
                                               / f"round_{m.round:04d}_class_{c}.csv")
                final = est.history_[-1]
                finals.append((seed, final.round, final.mean_acc))
    except ValueError as exc:
        if isinstance(exc, DataError):
            log.error("data error: %s", exc)
            return EXIT_RUNTIME
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (InvariantError, DegenerateSimilarityError, ArithmeticError) as exc:
        log.error("runtime invariant breached: %s", exc)
        return EXIT_RUNTIME

    accs = [acc for _, _, acc in finals]
    with open(out / "summary.jsonl", "w") as f:
        for seed, rnd, acc in finals:
            f.write(json.dumps({"seed": seed, "final_round": rnd, "final_mean_acc": acc}) + "\n")
        f.write(json.dumps({"variant": config.variant, "drift": config.drift, "seeds": list(config.seeds),
                            "mean": float(np.mean(accs)), "std": float(np.std(accs))}) + "\n")
    return EXIT_OK
