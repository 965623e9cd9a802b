"""One-hidden-layer ReLU network split into a shared extractor and a linear classifier.

Gradients are derived by hand for the two losses used in local training: softmax
cross-entropy on the classifier logits and the contrastive cosine-similarity loss
that pulls features toward their class anchors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COSINE_EPS = 1e-12
EXTRACTOR = ("extractor_weights", "extractor_bias")
CLASSIFIER = ("classifier_weights", "classifier_bias")
BLOCKS = EXTRACTOR + CLASSIFIER


class ContractError(ValueError):
    """Raised when array shapes or arguments violate an operation's contract."""


class DegenerateSimilarityError(ArithmeticError):
    """Raised when a class anchor has zero norm, so cosine similarity is undefined."""


@dataclass
class ModelParams:
    extractor_weights: np.ndarray  # (hidden, input)
    extractor_bias: np.ndarray  # (hidden,)
    classifier_weights: np.ndarray  # (C, hidden)
    classifier_bias: np.ndarray  # (C,)

    def __post_init__(self):
        for name in BLOCKS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        hidden, _ = self.extractor_weights.shape
        if self.extractor_bias.shape != (hidden,):
            raise ContractError("extractor_bias must have shape (hidden_dim,)")
        n_classes, cols = self.classifier_weights.shape
        if cols != hidden:
            raise ContractError("classifier_weights column count must equal hidden_dim")
        if self.classifier_bias.shape != (n_classes,):
            raise ContractError("classifier_bias must have shape (n_classes,)")

    @property
    def input_dim(self) -> int:
        return self.extractor_weights.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.extractor_weights.shape[0]

    @property
    def n_classes(self) -> int:
        return self.classifier_weights.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(*(getattr(self, name).copy() for name in BLOCKS))

    def zeros_like(self) -> "ModelParams":
        return ModelParams(*(np.zeros_like(getattr(self, name)) for name in BLOCKS))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, name))) for name in BLOCKS)

    def class_classifiers(self) -> np.ndarray:
        """Per-class rows ``[w_c, b_c]`` with shape (C, hidden + 1)."""
        return np.hstack([self.classifier_weights, self.classifier_bias[:, None]])

    def set_class_classifiers(self, rows: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.float64)
        self.classifier_weights = rows[:, :-1].copy()
        self.classifier_bias = rows[:, -1].copy()

    def extractor_vector(self) -> np.ndarray:
        return np.concatenate([self.extractor_weights.ravel(), self.extractor_bias])

    def with_classifier(self, weights: np.ndarray, bias: np.ndarray) -> "ModelParams":
        return ModelParams(self.extractor_weights.copy(), self.extractor_bias.copy(),
                           np.array(weights, dtype=np.float64), np.array(bias, dtype=np.float64))


@dataclass
class FeatureBatch:
    inputs: np.ndarray
    labels: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.inputs.shape[0] < 1:
            raise ContractError("batch must hold at least one sample")
        if self.labels.shape[0] != self.inputs.shape[0]:
            raise ContractError("inputs and labels disagree on batch size")

    def __len__(self):
        return self.inputs.shape[0]


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 1e-5
    velocity: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ModelParams, learning_rate, momentum=0.9, weight_decay=1e-5):
        state = cls(learning_rate, momentum, weight_decay)
        state.velocity = {name: np.zeros_like(getattr(params, name)) for name in BLOCKS}
        return state


def init_params(input_dim: int, hidden_dim: int, n_classes: int, rng: np.random.Generator) -> ModelParams:
    """He-initialised extractor, small uniform classifier (torch ``Linear`` style bounds)."""
    w1 = rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(hidden_dim, input_dim))
    b1 = np.zeros(hidden_dim)
    bound = 1.0 / np.sqrt(hidden_dim)
    w2 = rng.uniform(-bound, bound, size=(n_classes, hidden_dim))
    b2 = rng.uniform(-bound, bound, size=n_classes)
    return ModelParams(w1, b1, w2, b2)


def _pre_activation(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if inputs.shape[1] != params.input_dim:
        raise ContractError(
            f"inputs have {inputs.shape[1]} columns, extractor expects {params.input_dim}")
    return inputs @ params.extractor_weights.T + params.extractor_bias


def forward_extractor(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    return np.maximum(_pre_activation(params, inputs), 0.0)


def forward_classifier(params: ModelParams, features: np.ndarray) -> np.ndarray:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != params.hidden_dim:
        raise ContractError(
            f"features have {features.shape[1]} columns, classifier expects {params.hidden_dim}")
    return features @ params.classifier_weights.T + params.classifier_bias


def predict(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    return np.argmax(forward_classifier(params, forward_extractor(params, inputs)), axis=1)


def _softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -log_probs[np.arange(n), labels].mean()
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def _check_labels(labels: np.ndarray, n_classes: int):
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ContractError(f"labels must lie in [0, {n_classes})")


def task_loss_grad(params: ModelParams, batch: FeatureBatch,
                   train_extractor: bool = True, train_classifier: bool = True):
    """Mean softmax cross-entropy and its gradient; frozen blocks get exact zeros."""
    if not (train_extractor or train_classifier):
        raise ContractError("at least one of train_extractor / train_classifier must be set")
    _check_labels(batch.labels, params.n_classes)
    pre = _pre_activation(params, batch.inputs)
    features = np.maximum(pre, 0.0)
    batch.features = features
    loss, d_logits = _softmax_xent(forward_classifier(params, features), batch.labels)

    grads = params.zeros_like()
    if train_classifier:
        grads.classifier_weights = d_logits.T @ features
        grads.classifier_bias = d_logits.sum(axis=0)
    if train_extractor:
        d_pre = (d_logits @ params.classifier_weights) * (pre > 0)
        grads.extractor_weights = d_pre.T @ batch.inputs
        grads.extractor_bias = d_pre.sum(axis=0)
    return loss, grads


def cosine_similarity_matrix(features: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(features, axis=1)[:, None] * np.linalg.norm(anchors, axis=1)[None, :]
    return (features @ anchors.T) / np.maximum(norms, COSINE_EPS)


def alignment_loss_grad(params: ModelParams, batch: FeatureBatch, anchors: np.ndarray,
                        temperature: float = 0.5):
    """Contrastive anchor loss: softmax over cosine similarities to every class anchor.

    Returns the batch-mean loss and a ModelParams-shaped gradient whose classifier
    blocks are zero; anchors are treated as constants.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    if anchors.shape != (params.n_classes, params.hidden_dim):
        raise ContractError("anchors must have shape (n_classes, hidden_dim)")
    if temperature <= 0:
        raise ContractError("temperature must be positive")
    anchor_norms = np.linalg.norm(anchors, axis=1)
    if np.any(anchor_norms == 0.0):
        bad = np.flatnonzero(anchor_norms == 0.0).tolist()
        raise DegenerateSimilarityError(f"zero-norm anchor for classes {bad}")
    _check_labels(batch.labels, params.n_classes)

    pre = _pre_activation(params, batch.inputs)
    z = np.maximum(pre, 0.0)
    batch.features = z
    z_norms = np.linalg.norm(z, axis=1)
    denom_raw = z_norms[:, None] * anchor_norms[None, :]
    denom = np.maximum(denom_raw, COSINE_EPS)
    sims = (z @ anchors.T) / denom
    loss, d_logits = _softmax_xent(sims / temperature, batch.labels)

    d_sims = d_logits / temperature
    # d sim_bi / d z_b = a_i / denom_bi - sim_bi * z_b / |z_b|^2 (second term only when unclamped)
    d_z = (d_sims / denom) @ anchors
    unclamped = denom_raw > COSINE_EPS
    radial = (d_sims * sims * unclamped).sum(axis=1)
    safe_sq = np.where(z_norms > 0, z_norms ** 2, 1.0)
    d_z -= (radial / safe_sq)[:, None] * z

    d_pre = d_z * (pre > 0)
    grads = params.zeros_like()
    grads.extractor_weights = d_pre.T @ batch.inputs
    grads.extractor_bias = d_pre.sum(axis=0)
    return loss, grads


def sgd_step(params: ModelParams, grads: ModelParams, state: OptimizerState,
             blocks=BLOCKS) -> ModelParams:
    """SGD with momentum and L2 weight decay, applied in place to ``blocks`` only."""
    for name in blocks:
        param = getattr(params, name)
        grad = getattr(grads, name)
        if grad.shape != param.shape:
            raise ContractError(f"gradient shape mismatch for {name}")
        velocity = state.velocity.get(name)
        if velocity is None or velocity.shape != param.shape:
            velocity = np.zeros_like(param)
        velocity = state.momentum * velocity + grad + state.weight_decay * param
        state.velocity[name] = velocity
        setattr(params, name, param - state.learning_rate * velocity)
    return params
