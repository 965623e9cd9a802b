"""Round orchestration for classifier-clustering federated learning and its baselines.

Variants
--------
``fedccfa``
    balanced-classifier clustering, clustered classifier aggregation and
    entropy-weighted alignment to clustered feature anchors.
``decoupled_clustering``
    the same clustering and classifier aggregation, no feature alignment.
``decoupled``
    classifier-then-extractor local training, personal classifiers never shared.
``fedavg``
    joint training of the whole model, weighted averaging of everything.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import clustering
from .data import (ClientView, DriftSchedule, LabeledDataset, apply_drift, label_entropy, make_client_views,
                   sample_balanced_batch)
from .model import (CLASSIFIER, EXTRACTOR, FeatureBatch, ModelParams, OptimizerState, alignment_loss_grad,
                    forward_extractor, init_params, sgd_step, task_loss_grad)

VARIANTS = ("fedccfa", "fedavg", "decoupled", "decoupled_clustering")
CLUSTERING_INPUTS = ("balanced", "local", "oracle")
ANCHOR_MODES = ("clustered", "global", "off")
WEIGHT_MODES = ("adaptive", "fixed")
AGGREGATIONS = ("uniform", "weighted")

# stream tags for per-purpose RNG derivation
STREAM_INIT, STREAM_SAMPLING, STREAM_CLIENT = 11, 12, 13


class InvariantError(RuntimeError):
    """A simulation invariant was breached (non-finite parameters, broken partition...)."""


@dataclass(frozen=True)
class AlgorithmConfig:
    variant: str = "fedccfa"
    clustering_input: str = "balanced"
    anchors: str = "clustered"
    alignment_weight: str = "adaptive"
    gamma: float = 20.0
    align_lambda: float = 1.0
    aggregation: str = "uniform"
    align_start: int = 20
    local_epochs: int = 5
    classifier_epochs: int = 1
    balanced_steps: int = 5
    per_class_batch: int = 5
    batch_size: int = 64
    eta_theta: float = 0.01
    eta_phi: float = 0.1
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    eps: float = 0.1
    min_samples: int = 1
    tau: float = 0.5
    participation: float = 1.0
    workers: int = 1

    def __post_init__(self):
        for name, allowed in (("variant", VARIANTS), ("clustering_input", CLUSTERING_INPUTS),
                              ("anchors", ANCHOR_MODES), ("alignment_weight", WEIGHT_MODES),
                              ("aggregation", AGGREGATIONS)):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name}={getattr(self, name)!r} not in {allowed}")
        if not 0 < self.participation <= 1:
            raise ValueError("participation must lie in (0, 1]")
        if self.tau <= 0 or self.gamma <= 0 or self.eps <= 0:
            raise ValueError("tau, gamma and eps must be positive")
        if min(self.local_epochs, self.classifier_epochs, self.balanced_steps, self.align_start) < 0:
            raise ValueError("epoch / iteration counts must be >= 0")
        if self.batch_size < 1 or self.min_samples < 1 or self.per_class_batch < 1 or self.workers < 1:
            raise ValueError("batch_size, min_samples, per_class_batch and workers must be >= 1")

    @property
    def uses_clustering(self) -> bool:
        return self.variant in ("fedccfa", "decoupled_clustering")

    @property
    def uses_alignment(self) -> bool:
        return self.variant == "fedccfa" and self.anchors != "off"

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class AnchorSet:
    vectors: np.ndarray  # (C, hidden)
    present: np.ndarray  # (C,) bool

    @property
    def complete(self) -> bool:
        return bool(self.present.all())


@dataclass
class ClientState:
    client_id: int
    view: ClientView
    classifier: np.ndarray | None = None  # (C, hidden + 1); None until first selected
    anchors: AnchorSet | None = None


@dataclass
class ServerState:
    model: ModelParams  # global extractor; classifier part is the global classifier for fedavg
    initial_classifier: np.ndarray  # frozen (C, hidden + 1)
    round: int = 0


@dataclass
class ClientUpdate:
    client_id: int
    params: ModelParams
    balanced: np.ndarray | None
    anchors: AnchorSet | None
    sample_count: int
    class_counts: np.ndarray
    entropy: float
    align_weight: float
    permutation: np.ndarray


@dataclass
class RoundMetrics:
    round: int
    mean_acc: float
    client_acc: np.ndarray
    frob_norm: float
    selected: tuple
    align_weights: dict = field(default_factory=dict)
    cluster_counts: list | None = None
    rand_index: float | None = None
    rand_per_class: list | None = None
    assignment: clustering.ClusterAssignment | None = None

    @property
    def mean_align_weight(self) -> float:
        return float(np.mean(list(self.align_weights.values()))) if self.align_weights else 0.0


def derive_rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, tags)]))


def init_server(model: ModelParams) -> ServerState:
    frozen = model.class_classifiers()
    frozen.setflags(write=False)
    return ServerState(model.copy(), frozen, 0)


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def alignment_weight(config: AlgorithmConfig, entropy: float, t: int) -> float:
    """Nominal weight on the alignment term: H/gamma (adaptive) or lambda, zero before ``align_start``."""
    if not config.uses_alignment or t < config.align_start:
        return 0.0
    if config.alignment_weight == "adaptive":
        return entropy / config.gamma
    return config.align_lambda


def _train_classifier(params, inputs, labels, config, epochs, rng):
    state = OptimizerState.for_params(params, config.eta_phi, config.momentum, config.weight_decay)
    for _ in range(epochs):
        for idx in _minibatches(labels.size, config.batch_size, rng):
            _, grads = task_loss_grad(params, FeatureBatch(inputs[idx], labels[idx]),
                                      train_extractor=False)
            sgd_step(params, grads, state, CLASSIFIER)


def local_anchors(params: ModelParams, view: ClientView) -> AnchorSet:
    """Per-class mean feature under the client's current labels; absent for unseen classes."""
    features = forward_extractor(params, view.inputs)
    labels = view.labels
    vectors = np.zeros((view.n_classes, params.hidden_dim))
    present = np.zeros(view.n_classes, dtype=bool)
    for c in range(view.n_classes):
        mask = labels == c
        if mask.any():
            vectors[c] = features[mask].mean(axis=0)
            present[c] = True
    return AnchorSet(vectors, present)


def client_round(client: ClientState, extractor: ModelParams, initial_classifier: np.ndarray,
                 config: AlgorithmConfig, t: int, rng: np.random.Generator) -> ClientUpdate:
    """One client's local work for round ``t``; ``extractor`` carries the broadcast global model."""
    view = client.view
    inputs, labels = view.inputs, view.labels
    counts = view.class_counts()
    entropy = label_entropy(view)
    params = extractor.copy()
    balanced = None
    applied_weight = 0.0

    if config.variant == "fedavg":
        state = OptimizerState.for_params(params, config.lr, config.momentum, config.weight_decay)
        for _ in range(config.local_epochs):
            for idx in _minibatches(labels.size, config.batch_size, rng):
                _, grads = task_loss_grad(params, FeatureBatch(inputs[idx], labels[idx]))
                sgd_step(params, grads, state)
    else:
        if config.uses_clustering and config.clustering_input == "balanced":
            params.set_class_classifiers(initial_classifier)
            batch = sample_balanced_batch(view, config.per_class_batch, rng)
            state = OptimizerState.for_params(params, config.eta_phi, config.momentum, config.weight_decay)
            for _ in range(config.balanced_steps):
                _, grads = task_loss_grad(params, batch, train_extractor=False)
                sgd_step(params, grads, state, CLASSIFIER)
            balanced = params.class_classifiers()

        own = initial_classifier if client.classifier is None else client.classifier
        params.set_class_classifiers(own)
        _train_classifier(params, inputs, labels, config, config.classifier_epochs, rng)

        weight = alignment_weight(config, entropy, t)
        anchors = client.anchors
        use_alignment = weight > 0 and anchors is not None and anchors.complete
        applied_weight = weight if use_alignment else 0.0
        state = OptimizerState.for_params(params, config.eta_theta, config.momentum, config.weight_decay)
        for _ in range(config.local_epochs):
            for idx in _minibatches(labels.size, config.batch_size, rng):
                batch = FeatureBatch(inputs[idx], labels[idx])
                _, grads = task_loss_grad(params, batch, train_classifier=False)
                if use_alignment:
                    _, align = alignment_loss_grad(params, batch, anchors.vectors, config.tau)
                    grads.extractor_weights += weight * align.extractor_weights
                    grads.extractor_bias += weight * align.extractor_bias
                sgd_step(params, grads, state, EXTRACTOR)

    if not params.is_finite():
        raise InvariantError(f"client {client.client_id} produced non-finite parameters at round {t}")
    anchors_out = local_anchors(params, view) if config.uses_alignment else None
    return ClientUpdate(client.client_id, params, balanced, anchors_out, len(view), counts,
                        entropy, applied_weight, view.permutation.copy())


def _weighted_mean(arrays, weights):
    total = np.zeros_like(arrays[0], dtype=np.float64)
    for arr, w in zip(arrays, weights):
        total += w * arr
    return total / float(sum(weights))


def aggregate_extractors(updates) -> tuple:
    """Sample-count weighted extractor average, summed in ascending client id order."""
    updates = sorted(updates, key=lambda u: u.client_id)
    weights = [u.sample_count for u in updates]
    w1 = _weighted_mean([u.params.extractor_weights for u in updates], weights)
    b1 = _weighted_mean([u.params.extractor_bias for u in updates], weights)
    return w1, b1


def aggregate_classifiers(updates, assignment: clustering.ClusterAssignment,
                          mode: str = "uniform") -> dict:
    """Average class classifiers inside each cluster; returns client id -> (C, hidden+1) rows."""
    by_id = {u.client_id: u for u in updates}
    rows = {k: u.params.class_classifiers() for k, u in by_id.items()}
    out = {k: r.copy() for k, r in rows.items()}
    for c, blocks in enumerate(assignment.clusters):
        for block in blocks:
            members = sorted(block)
            weights = [1.0] * len(members)
            if mode == "weighted":
                weights = [float(by_id[k].class_counts[c]) for k in members]
                if sum(weights) == 0:
                    weights = [1.0] * len(members)
            mean = _weighted_mean([rows[k][c] for k in members], weights)
            for k in members:
                out[k][c] = mean
    return out


def aggregate_anchors(updates, assignment: clustering.ClusterAssignment,
                      mode: str = "uniform") -> dict:
    """Cluster anchors per class: mean of members' local anchors, skipping absent ones."""
    by_id = {u.client_id: u for u in updates}
    n_classes, hidden = next(iter(by_id.values())).anchors.vectors.shape
    out = {k: AnchorSet(np.zeros((n_classes, hidden)), np.zeros(n_classes, dtype=bool)) for k in by_id}
    for c, blocks in enumerate(assignment.clusters):
        for block in blocks:
            members = [k for k in sorted(block) if by_id[k].anchors.present[c]]
            if not members:
                continue
            weights = [1.0] * len(members)
            if mode == "weighted":
                weights = [float(by_id[k].class_counts[c]) for k in members]
            mean = _weighted_mean([by_id[k].anchors.vectors[c] for k in members], weights)
            for k in block:
                out[k].vectors[c] = mean
                out[k].present[c] = True
    return out


def oracle_assignment(permutations: dict, n_classes: int) -> clustering.ClusterAssignment:
    """Ground-truth concept groups: clients agree on class c when the same base class maps to c."""
    ids = sorted(permutations)
    clusters = []
    for c in range(n_classes):
        groups: dict = {}
        for k in ids:
            source = int(np.flatnonzero(permutations[k] == c)[0])
            groups.setdefault(source, []).append(k)
        clusters.append(sorted((tuple(g) for g in groups.values()), key=lambda b: b[0]))
    return clustering.ClusterAssignment(clusters)


def single_cluster(ids, n_classes: int) -> clustering.ClusterAssignment:
    block = tuple(sorted(ids))
    return clustering.ClusterAssignment([[block] for _ in range(n_classes)])


def select_clients(n_clients: int, fraction: float, seed: int, t: int) -> list:
    count = math.ceil(fraction * n_clients)
    if count >= n_clients:
        return list(range(n_clients))
    rng = derive_rng(seed, STREAM_SAMPLING, t)
    return sorted(rng.choice(n_clients, size=count, replace=False).tolist())


def _assignment_rand(assignment, oracle, ids):
    per_class = [clustering.rand_index(clustering.partition_labels(a, ids), clustering.partition_labels(o, ids))
                 for a, o in zip(assignment.clusters, oracle.clusters)]
    return float(np.mean(per_class)), per_class


def evaluate(clients, server: ServerState, config: AlgorithmConfig, test: LabeledDataset) -> np.ndarray:
    """Generalized accuracy of every client on the full test set relabeled by its own concept."""
    features = forward_extractor(server.model, test.inputs)
    acc = np.empty(len(clients))
    for i, client in enumerate(clients):
        if config.variant == "fedavg":
            rows = server.model.class_classifiers()
        else:
            rows = server.initial_classifier if client.classifier is None else client.classifier
        logits = features @ rows[:, :-1].T + rows[:, -1]
        acc[i] = np.mean(np.argmax(logits, axis=1) == client.view.relabel(test.labels))
    return acc


def run_round(server: ServerState, clients, config: AlgorithmConfig, t: int, *, seed: int = 0,
              schedule: DriftSchedule | None = None, test: LabeledDataset | None = None):
    """Execute round ``t``: drift, sampling, local training, aggregation, optional evaluation.

    ``clients`` are updated in place; a new ServerState is returned with the metrics.
    """
    if schedule is not None:
        for client in clients:
            client.view = apply_drift(client.view, schedule, t)
    selected = select_clients(len(clients), config.participation, seed, t)
    by_id = {c.client_id: c for c in clients}
    n_classes = server.model.n_classes

    def work(k):
        return client_round(by_id[k], server.model, server.initial_classifier, config, t,
                            derive_rng(seed, STREAM_CLIENT, k, t))

    if config.workers > 1 and len(selected) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            updates = list(pool.map(work, selected))
    else:
        updates = [work(k) for k in selected]

    model = server.model.copy()
    model.extractor_weights, model.extractor_bias = aggregate_extractors(updates)
    frob = float(np.linalg.norm(model.extractor_vector() - server.model.extractor_vector()))

    metrics = RoundMetrics(t, float("nan"), np.array([]), frob, tuple(selected),
                           {u.client_id: u.align_weight for u in updates})

    if config.variant == "fedavg":
        weights = [u.sample_count for u in updates]
        model.classifier_weights = _weighted_mean([u.params.classifier_weights for u in updates], weights)
        model.classifier_bias = _weighted_mean([u.params.classifier_bias for u in updates], weights)
    elif config.uses_clustering:
        oracle = oracle_assignment({u.client_id: u.permutation for u in updates}, n_classes)
        if config.clustering_input == "oracle":
            assignment = oracle
        else:
            source = {u.client_id: (u.balanced if config.clustering_input == "balanced"
                                    else u.params.class_classifiers()) for u in updates}
            assignment = clustering.cluster_all_classes(source, config.eps, config.min_samples)
        new_rows = aggregate_classifiers(updates, assignment, config.aggregation)
        for k, rows in new_rows.items():
            by_id[k].classifier = rows
        if config.uses_alignment:
            groups = assignment if config.anchors == "clustered" else single_cluster(selected, n_classes)
            for k, anchor_set in aggregate_anchors(updates, groups, config.aggregation).items():
                by_id[k].anchors = anchor_set
        metrics.assignment = assignment
        metrics.cluster_counts = assignment.counts()
        metrics.rand_index, metrics.rand_per_class = _assignment_rand(assignment, oracle, sorted(selected))
    else:
        for u in updates:
            by_id[u.client_id].classifier = u.params.class_classifiers()

    if not model.is_finite():
        raise InvariantError(f"global model became non-finite at round {t}")
    new_server = ServerState(model, server.initial_classifier, t + 1)
    if test is not None:
        metrics.client_acc = evaluate(clients, new_server, config, test)
        metrics.mean_acc = float(metrics.client_acc.mean())
    return new_server, metrics


def simulate(config: AlgorithmConfig, train: LabeledDataset, test: LabeledDataset, partition,
             schedule: DriftSchedule, rounds: int, seed: int, hidden_dim: int,
             eval_interval: int = 1, callback=None):
    """Run ``rounds`` rounds from a fresh model; returns (server, clients, metrics list)."""
    model = init_params(train.inputs.shape[1], hidden_dim, train.n_classes, derive_rng(seed, STREAM_INIT))
    server = init_server(model)
    clients = [ClientState(v.client_id, v) for v in make_client_views(train, partition)]
    history = []
    for t in range(rounds):
        evaluate_now = (t + 1) % eval_interval == 0 or t == rounds - 1
        server, metrics = run_round(server, clients, config, t, seed=seed, schedule=schedule,
                                    test=test if evaluate_now else None)
        if evaluate_now:
            history.append(metrics)
        if callback is not None:
            callback(metrics)
    return server, clients, history


def with_overrides(config: AlgorithmConfig, **overrides) -> AlgorithmConfig:
    return replace(config, **overrides)
