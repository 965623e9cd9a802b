"""Datasets, non-IID partitioning and label-swap concept drift."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .model import FeatureBatch

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

# Event positions of the reference protocol, expressed on a 200-round horizon.
REFERENCE_HORIZON = 200
SUDDEN_ROUND = 100
INCREMENTAL_ROUNDS = (100, 110, 120)
REOCCUR_ROUND = 150

PATTERNS = ("none", "sudden", "incremental", "reoccurring")


class ConfigurationError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if labels.size < 1:
            raise DataError("dataset is empty")
        if inputs.shape[0] != labels.size:
            raise DataError(f"{inputs.shape[0]} inputs but {labels.size} labels")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise DataError(f"labels outside [0, {self.n_classes})")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.size

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.inputs[indices], self.labels[indices], self.n_classes)


@dataclass(frozen=True)
class PartitionSpec:
    n_clients: int
    alpha: float
    min_per_class: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_clients < 1:
            raise ConfigurationError("n_clients must be >= 1")
        if not self.alpha > 0:
            raise ConfigurationError("dirichlet alpha must be > 0")
        if self.min_per_class < 0:
            raise ConfigurationError("min_per_class must be >= 0")


@dataclass(frozen=True)
class SwapRule:
    """Swap ``class_a`` and ``class_b`` for every client whose id mod ``modulus`` is in ``residues``."""

    class_a: int
    class_b: int
    residues: frozenset
    modulus: int = 10

    def __post_init__(self):
        if self.class_a == self.class_b:
            raise ConfigurationError("swap rule must name two distinct classes")
        object.__setattr__(self, "residues", frozenset(int(r) for r in self.residues))

    def matches(self, client_id: int) -> bool:
        return client_id % self.modulus in self.residues

    def validate(self, n_classes: int):
        if max(self.class_a, self.class_b) >= n_classes or min(self.class_a, self.class_b) < 0:
            raise ConfigurationError(
                f"swap ({self.class_a},{self.class_b}) out of range for {n_classes} classes")


# Three disjoint swaps over client residues mod 10: <3, 3..5, >5.
REFERENCE_RULES = (
    SwapRule(1, 2, frozenset({0, 1, 2})),
    SwapRule(3, 4, frozenset({3, 4, 5})),
    SwapRule(5, 6, frozenset({6, 7, 8, 9})),
)


@dataclass(frozen=True)
class DriftSchedule:
    pattern: str
    events: tuple = ()  # ((round, (SwapRule, ...)), ...)

    def rounds(self):
        return [r for r, _ in self.events]


@dataclass(frozen=True)
class ClientView:
    """A client's training slice together with its currently active label permutation.

    ``permutation[y]`` is the label the client currently assigns to base class ``y``;
    the same map relabels the shared test set, so train and test concepts always agree.
    """

    client_id: int
    inputs: np.ndarray
    base_labels: np.ndarray
    n_classes: int
    permutation: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.permutation is None:
            object.__setattr__(self, "permutation", np.arange(self.n_classes))

    @property
    def labels(self) -> np.ndarray:
        return self.permutation[self.base_labels]

    def relabel(self, labels: np.ndarray) -> np.ndarray:
        return self.permutation[np.asarray(labels, dtype=np.int64)]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def __len__(self):
        return self.base_labels.size


def make_client_views(dataset: LabeledDataset, partition) -> list:
    return [ClientView(k, dataset.inputs[idx], dataset.labels[idx], dataset.n_classes)
            for k, idx in enumerate(partition)]


def dirichlet_partition(dataset: LabeledDataset, spec: PartitionSpec,
                        rng: np.random.Generator | None = None) -> list:
    """Split sample indices across clients with per-class Dirichlet proportions.

    A repair pass then moves samples from the richest client of a class until every
    client holds at least ``spec.min_per_class`` samples of every class.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    n_clients = spec.n_clients
    per_client = [[[] for _ in range(dataset.n_classes)] for _ in range(n_clients)]
    for c in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == c)
        if members.size < n_clients * spec.min_per_class:
            raise ConfigurationError(
                f"class {c} has {members.size} samples, needs {n_clients * spec.min_per_class} "
                f"for {n_clients} clients x min_per_class={spec.min_per_class}")
        members = rng.permutation(members)
        proportions = rng.dirichlet(np.full(n_clients, spec.alpha))
        cuts = (np.cumsum(proportions)[:-1] * members.size).astype(np.int64)
        for k, chunk in enumerate(np.split(members, cuts)):
            per_client[k][c] = chunk.tolist()

        for k in range(n_clients):
            while len(per_client[k][c]) < spec.min_per_class:
                counts = [len(per_client[j][c]) for j in range(n_clients)]
                richest = int(np.argmax(counts))
                per_client[k][c].append(per_client[richest][c].pop())

    return [np.sort(np.array([i for chunk in client for i in chunk], dtype=np.int64))
            for client in per_client]


def parse_rules(text: str) -> tuple:
    """Parse ``"a,b,modulus,r1|r2;..."`` into swap rules; ``"reference"`` gives the default three."""
    text = text.strip()
    if text in ("", "reference"):
        return REFERENCE_RULES
    rules = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        parts = chunk.split(",")
        if len(parts) != 4:
            raise ConfigurationError(f"swap rule {chunk!r} must be 'a,b,modulus,r1|r2|...'")
        a, b, modulus = int(parts[0]), int(parts[1]), int(parts[2])
        residues = frozenset(int(r) for r in parts[3].split("|") if r)
        rules.append(SwapRule(a, b, residues, modulus))
    return tuple(rules)


def format_rules(rules) -> str:
    if tuple(rules) == REFERENCE_RULES:
        return "reference"
    return ";".join(f"{r.class_a},{r.class_b},{r.modulus},{'|'.join(map(str, sorted(r.residues)))}"
                    for r in rules)


def _rescale(reference_round: int, total_rounds: int, drift_fraction: float) -> int:
    shift = drift_fraction / (SUDDEN_ROUND / REFERENCE_HORIZON)
    return min(math.floor(total_rounds * shift * reference_round / REFERENCE_HORIZON),
               total_rounds - 1)


def build_drift_schedule(pattern: str, total_rounds: int, drift_fraction: float = 0.5,
                         rules=REFERENCE_RULES) -> DriftSchedule:
    """Place drift events on a ``total_rounds`` horizon.

    Reference rounds 100/110/120/150 (of 200) are rescaled by ``total_rounds / 200`` and
    floored; ``drift_fraction`` moves the first event (0.5 keeps the reference timing).
    Events that collapse onto the same round are merged.
    """
    if total_rounds < 1:
        raise ConfigurationError("total_rounds must be >= 1")
    if pattern not in PATTERNS:
        raise ConfigurationError(f"unknown drift pattern {pattern!r}")
    rules = tuple(rules)
    if pattern == "none" or not rules:
        return DriftSchedule(pattern, ())
    if pattern == "sudden":
        raw = [(_rescale(SUDDEN_ROUND, total_rounds, drift_fraction), rules)]
    elif pattern == "incremental":
        # one rule per step; extra rules ride on the last step
        steps = [_rescale(r, total_rounds, drift_fraction) for r in INCREMENTAL_ROUNDS]
        raw = [(steps[min(i, len(steps) - 1)], (rule,)) for i, rule in enumerate(rules)]
    else:
        raw = [(_rescale(SUDDEN_ROUND, total_rounds, drift_fraction), rules),
               (_rescale(REOCCUR_ROUND, total_rounds, drift_fraction), rules)]

    merged: dict = {}
    for rnd, event_rules in raw:
        merged.setdefault(rnd, []).extend(event_rules)
    events = tuple((rnd, tuple(merged[rnd])) for rnd in sorted(merged))
    return DriftSchedule(pattern, events)


def swap_permutation(n_classes: int, rule: SwapRule) -> np.ndarray:
    perm = np.arange(n_classes)
    perm[rule.class_a], perm[rule.class_b] = rule.class_b, rule.class_a
    return perm


def permutation_at(client_id: int, n_classes: int, schedule: DriftSchedule, t: int) -> np.ndarray:
    perm = np.arange(n_classes)
    for rnd, rules in schedule.events:
        if rnd > t:
            break
        for rule in rules:
            if rule.matches(client_id):
                perm = swap_permutation(n_classes, rule)[perm]
    return perm


def apply_drift(view: ClientView, schedule: DriftSchedule, t: int) -> ClientView:
    """Return ``view`` with the permutation induced by all events at rounds <= t."""
    perm = permutation_at(view.client_id, view.n_classes, schedule, t)
    return replace(view, permutation=perm)


def sample_balanced_batch(view: ClientView, per_class: int, rng: np.random.Generator) -> FeatureBatch:
    labels = view.labels
    chosen = []
    for c in range(view.n_classes):
        members = np.flatnonzero(labels == c)
        if members.size < per_class:
            raise DataError(f"client {view.client_id} has {members.size} samples of class {c}, "
                            f"needs {per_class}")
        chosen.append(rng.choice(members, size=per_class, replace=False))
    idx = np.concatenate(chosen) if chosen else np.array([], dtype=np.int64)
    return FeatureBatch(view.inputs[idx], labels[idx])


def entropy(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum()) + 0.0


def label_entropy(view: ClientView) -> float:
    """Natural-log entropy of the client's current empirical label distribution."""
    if len(view) == 0:
        raise DataError("label entropy of an empty client")
    return entropy(view.class_counts())


def _read_exact(handle, size: int, what: str) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise DataError(f"truncated IDX file while reading {what}")
    return data


def _read_idx(path, magic: int, n_dims: int) -> np.ndarray:
    with open(path, "rb") as f:
        found = struct.unpack(">I", _read_exact(f, 4, "magic"))[0]
        if found != magic:
            raise DataError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
        dims = struct.unpack(f">{n_dims}I", _read_exact(f, 4 * n_dims, "dimensions"))
        size = int(np.prod(dims))
        payload = _read_exact(f, size, "payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(path_images, path_labels, n_classes: int = 10) -> LabeledDataset:
    """Read an IDX image/label pair (e.g. Fashion-MNIST); pixels scaled to [0, 1] and flattened."""
    images = _read_idx(Path(path_images), IDX_IMAGE_MAGIC, 3)
    labels = _read_idx(Path(path_labels), IDX_LABEL_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(inputs, labels.astype(np.int64), n_classes)


def class_directions(n_classes: int, input_dim: int) -> np.ndarray:
    """Fixed unit directions for class centres, independent of any sampling seed."""
    if n_classes <= input_dim:
        return np.eye(input_dim)[:n_classes]
    directions = np.random.default_rng(0).normal(size=(n_classes, input_dim))
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def make_synthetic(n_classes: int, input_dim: int, per_class: int, separation: float = 3.0,
                   noise: float = 1.0, seed: int = 0) -> LabeledDataset:
    """Isotropic Gaussian blobs centred at ``separation * u_c``."""
    if n_classes < 2 or per_class < 1:
        raise ConfigurationError("need n_classes >= 2 and per_class >= 1")
    rng = np.random.default_rng(seed)
    centers = separation * class_directions(n_classes, input_dim)
    labels = np.repeat(np.arange(n_classes), per_class)
    inputs = centers[labels] + noise * rng.normal(size=(labels.size, input_dim))
    return LabeledDataset(inputs, labels, n_classes)
