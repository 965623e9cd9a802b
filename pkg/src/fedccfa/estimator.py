"""scikit-learn style front end for the federated simulator."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import LabeledDataset, PartitionSpec, build_drift_schedule, dirichlet_partition, parse_rules
from .federation import AlgorithmConfig, derive_rng, simulate
from .model import forward_extractor

STREAM_PARTITION = 21


class FederatedDriftClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Simulate federated training over a Dirichlet split of ``(X, y)`` and keep the result.

    ``fit`` partitions the data across ``n_clients`` simulated clients, replays the drift
    schedule and runs ``rounds`` communication rounds of the chosen ``variant``. Every
    client ends up with the shared extractor and its own (possibly cluster-averaged)
    classifier, so ``predict`` takes a ``client`` argument: the same input can carry a
    different label for clients living under a different concept.

    Algorithm parameters mirror :class:`fedccfa.federation.AlgorithmConfig`.

    Attributes
    ----------
    classes_ : ndarray
        Original class labels; internal labels are their indices.
    history_ : list of RoundMetrics
        Metrics of every evaluated round.
    partition_ : list of ndarray
        Row indices of ``X`` owned by each client.
    schedule_ : DriftSchedule
    server_, clients_ :
        Final server and client states.
    """

    def __init__(self, variant="fedccfa", n_clients=20, alpha=0.5, min_per_class=5, rounds=200,
                 hidden_dim=32, drift="none", drift_fraction=0.5, drift_rules="reference",
                 clustering_input="balanced", anchors="clustered", alignment_weight="adaptive",
                 gamma=20.0, align_lambda=1.0, aggregation="uniform", align_start=20, local_epochs=5,
                 classifier_epochs=1, balanced_steps=5, per_class_batch=5, batch_size=64,
                 eta_theta=0.01, eta_phi=0.1, lr=0.01, momentum=0.9, weight_decay=1e-5, eps=0.1,
                 min_samples=1, tau=0.5, participation=1.0, workers=1, eval_interval=1,
                 partition=None, random_state=0):
        self.variant = variant
        self.n_clients = n_clients
        self.alpha = alpha
        self.min_per_class = min_per_class
        self.rounds = rounds
        self.hidden_dim = hidden_dim
        self.drift = drift
        self.drift_fraction = drift_fraction
        self.drift_rules = drift_rules
        self.clustering_input = clustering_input
        self.anchors = anchors
        self.alignment_weight = alignment_weight
        self.gamma = gamma
        self.align_lambda = align_lambda
        self.aggregation = aggregation
        self.align_start = align_start
        self.local_epochs = local_epochs
        self.classifier_epochs = classifier_epochs
        self.balanced_steps = balanced_steps
        self.per_class_batch = per_class_batch
        self.batch_size = batch_size
        self.eta_theta = eta_theta
        self.eta_phi = eta_phi
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.eps = eps
        self.min_samples = min_samples
        self.tau = tau
        self.participation = participation
        self.workers = workers
        self.eval_interval = eval_interval
        self.partition = partition
        self.random_state = random_state

    def algorithm_config(self) -> AlgorithmConfig:
        params = self.get_params()
        return AlgorithmConfig(**{name: params[name] for name in AlgorithmConfig.field_names()})

    def _encode(self, y):
        encoded = np.searchsorted(self.classes_, y)
        if np.any(encoded >= self.classes_.size) or np.any(self.classes_[encoded] != y):
            raise ValueError("y contains labels not seen during fit")
        return encoded

    def fit(self, X, y, X_eval=None, y_eval=None, callback=None):
        """Run the simulation. ``X_eval``/``y_eval`` (default: the training data) form the shared test set."""
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        self.n_features_in_ = X.shape[1]
        n_classes = self.classes_.size
        train = LabeledDataset(X, self._encode(y), n_classes)
        if X_eval is None:
            test = train
        else:
            X_eval, y_eval = check_X_y(X_eval, y_eval, dtype=np.float64)
            test = LabeledDataset(X_eval, self._encode(y_eval), n_classes)

        config = self.algorithm_config()
        seed = int(self.random_state)
        if self.partition is not None:
            self.partition_ = [np.asarray(p, dtype=np.int64) for p in self.partition]
        else:
            spec = PartitionSpec(self.n_clients, self.alpha, self.min_per_class, seed)
            self.partition_ = dirichlet_partition(train, spec, derive_rng(seed, STREAM_PARTITION))
        rules = parse_rules(self.drift_rules) if isinstance(self.drift_rules, str) else tuple(self.drift_rules)
        if self.drift != "none":
            for rule in rules:
                rule.validate(n_classes)
        self.schedule_ = build_drift_schedule(self.drift, self.rounds, self.drift_fraction, rules)
        self.server_, self.clients_, self.history_ = simulate(
            config, train, test, self.partition_, self.schedule_, self.rounds, seed, self.hidden_dim,
            self.eval_interval, callback)
        return self

    def transform(self, X):
        """Features from the shared global extractor."""
        check_is_fitted(self, "server_")
        X = check_array(X, dtype=np.float64)
        return forward_extractor(self.server_.model, X)

    def decision_function(self, X, client=0):
        check_is_fitted(self, "server_")
        features = self.transform(X)
        if self.variant == "fedavg":
            rows = self.server_.model.class_classifiers()
        else:
            state = self.clients_[client]
            rows = self.server_.initial_classifier if state.classifier is None else state.classifier
        return features @ rows[:, :-1].T + rows[:, -1]

    def predict(self, X, client=0):
        """Labels client ``client`` would assign under its current concept."""
        check_is_fitted(self, "server_")
        return self.classes_[np.argmax(self.decision_function(X, client), axis=1)]

    def predict_clients(self, X):
        """Predictions of every client, shape (n_clients, n_samples)."""
        check_is_fitted(self, "server_")
        return np.stack([self.predict(X, k) for k in range(len(self.clients_))])
