"""From-scratch feedforward classifier over measurement vectors.

Dense layers with ReLU, inverted dropout, and a temperature softmax head,
trained by mini-batch SGD on categorical cross-entropy. Everything is plain
numpy: forward, backprop, and exact input gradients are implemented here so
attacks and defenses can query them directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

CLASS_COUNT = 2  # 0 = normal, 1 = false data

_MODEL_FORMAT = "fdialab-mlp"
_MODEL_VERSION = 1


class ModelFormatError(ValueError):
    """A serialized model failed validation (version, shape, or payload)."""


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str = "relu"   # "relu" or "identity"
    dropout_rate: float = 0.0  # applied to this layer's output in train mode

    def __post_init__(self):
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ValueError("layer dimensions must be positive")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")


def detector_specs(input_dim: int) -> tuple[LayerSpec, ...]:
    """The standard detector stack: 128/64/16 ReLU, 0.25 dropout, 2-way softmax."""
    return (
        LayerSpec(input_dim, 128),
        LayerSpec(128, 64),
        LayerSpec(64, 16, dropout_rate=0.25),
        LayerSpec(16, CLASS_COUNT, activation="identity"),
    )


@dataclass
class MlpModel:
    specs: tuple[LayerSpec, ...]
    weights: list[np.ndarray]  # per layer, shape (input_dim, output_dim)
    biases: list[np.ndarray]   # per layer, shape (output_dim,)
    temperature: float = 1.0

    @property
    def input_dim(self) -> int:
        return self.specs[0].input_dim

    def copy(self) -> "MlpModel":
        return MlpModel(
            specs=self.specs,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            temperature=self.temperature,
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 64
    epochs: int = 100
    rng_seed: int = 0
    dropout_enabled: bool = True

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


def init_model(specs, temperature: float = 1.0, rng_seed: int = 0) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    specs = tuple(specs)
    if not specs:
        raise ValueError("at least one layer is required")
    for prev, nxt in zip(specs, specs[1:]):
        if prev.output_dim != nxt.input_dim:
            raise ValueError(
                f"layer dims do not chain: {prev.output_dim} -> {nxt.input_dim}"
            )
    if specs[-1].output_dim != CLASS_COUNT:
        raise ValueError(f"final layer must emit {CLASS_COUNT} classes")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    rng = np.random.default_rng(rng_seed)
    weights, biases = [], []
    for spec in specs:
        s = np.sqrt(6.0 / (spec.input_dim + spec.output_dim))
        weights.append(rng.uniform(-s, s, size=(spec.input_dim, spec.output_dim)))
        biases.append(np.zeros(spec.output_dim))
    return MlpModel(specs=specs, weights=weights, biases=biases, temperature=temperature)


def parameter_count(model: MlpModel) -> int:
    return int(sum(w.size + b.size for w, b in zip(model.weights, model.biases)))


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of logits / temperature, numerically stabilized."""
    scaled = np.asarray(logits, dtype=float) / temperature
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray, temperature: float) -> np.ndarray:
    scaled = logits / temperature
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def forward_batch(
    model: MlpModel,
    inputs: np.ndarray,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
    temperature: float | None = None,
) -> tuple[np.ndarray, dict]:
    """Probabilities for a (count, input_dim) block plus the backprop cache.

    mode "train" applies inverted dropout (masks drawn from ``rng``); mode
    "infer" is deterministic. ``temperature`` overrides the model's own.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train mode needs an rng for dropout masks")
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    if x.shape[1] != model.input_dim:
        raise ValueError(f"expected inputs of width {model.input_dim}")
    if not np.isfinite(x).all():
        raise ValueError("inputs must be finite")
    t = model.temperature if temperature is None else temperature
    activations = [x]
    pre_activations = []
    masks: list[np.ndarray | None] = []
    for spec, w, b in zip(model.specs, model.weights, model.biases):
        u = activations[-1] @ w + b
        a = np.maximum(u, 0.0) if spec.activation == "relu" else u
        mask = None
        if mode == "train" and spec.dropout_rate > 0.0:
            keep = 1.0 - spec.dropout_rate
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        pre_activations.append(u)
        masks.append(mask)
        activations.append(a)
    logits = activations[-1]
    probs = softmax(logits, t)
    cache = {
        "activations": activations,
        "pre_activations": pre_activations,
        "masks": masks,
        "logits": logits,
        "temperature": t,
    }
    return probs, cache


def forward(
    model: MlpModel,
    x: np.ndarray,
    mode: str = "infer",
    rng_seed: int | None = None,
    temperature: float | None = None,
) -> tuple[np.ndarray, dict]:
    """Probability vector (length 2) and cache for a single input."""
    rng = np.random.default_rng(rng_seed) if mode == "train" else None
    probs, cache = forward_batch(model, np.asarray(x, dtype=float)[None, :], mode, rng, temperature)
    return probs[0], cache


def predict_proba(model: MlpModel, inputs: np.ndarray, temperature: float | None = None) -> np.ndarray:
    return forward_batch(model, inputs, "infer", temperature=temperature)[0]


def classify(model: MlpModel, inputs: np.ndarray) -> np.ndarray:
    """Predicted labels (argmax, temperature-invariant) for rows of inputs."""
    return np.argmax(predict_proba(model, inputs), axis=-1)


def _as_targets(labels) -> np.ndarray:
    """Accept int labels or (count, 2) probability rows; return target rows."""
    arr = np.asarray(labels)
    if arr.ndim == 2 and arr.shape[1] == CLASS_COUNT:
        return arr.astype(float)
    flat = arr.reshape(-1).astype(int)
    if flat.size and (flat.min() < 0 or flat.max() >= CLASS_COUNT):
        raise ValueError(f"labels must be in [0, {CLASS_COUNT - 1}]")
    targets = np.zeros((flat.size, CLASS_COUNT))
    targets[np.arange(flat.size), flat] = 1.0
    return targets


def _softmax_delta(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """probs - targets, cancellation-free on exactly one-hot target rows.

    At saturation probs can round to exactly [0, 1]; the naive subtraction
    then loses the off-label probability entirely. The true residual on
    the label column equals minus the other column (rows sum to one), so
    computing it that way keeps the gradient direction exact at any
    confidence level.
    """
    delta = probs - targets
    hard0 = (targets[:, 0] == 1.0) & (targets[:, 1] == 0.0)
    hard1 = (targets[:, 1] == 1.0) & (targets[:, 0] == 0.0)
    delta[hard0, 0] = -probs[hard0, 1]
    delta[hard1, 1] = -probs[hard1, 0]
    return delta


def _backward(model: MlpModel, cache: dict, delta: np.ndarray, mean_over_batch: bool):
    """Backpropagate a logit-space residual to input, weight, and bias gradients.

    ``delta`` is d(loss)/d(softmax input logits) NOT yet divided by the
    temperature; for cross-entropy it is _softmax_delta(probs, targets).
    """
    count = delta.shape[0]
    delta = delta / cache["temperature"]
    if mean_over_batch:
        delta = delta / count
    weight_grads: list[np.ndarray] = [None] * len(model.specs)  # type: ignore[list-item]
    bias_grads: list[np.ndarray] = [None] * len(model.specs)    # type: ignore[list-item]
    for i in range(len(model.specs) - 1, -1, -1):
        mask = cache["masks"][i]
        if mask is not None:
            delta = delta * mask
        if model.specs[i].activation == "relu":
            delta = delta * (cache["pre_activations"][i] > 0.0)
        weight_grads[i] = cache["activations"][i].T @ delta
        bias_grads[i] = delta.sum(axis=0)
        delta = delta @ model.weights[i].T
    return delta, weight_grads, bias_grads  # delta is now the input gradient


def loss_and_gradients(
    model: MlpModel,
    x: np.ndarray,
    labels,
    temperature: float | None = None,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
):
    """Cross-entropy loss with exact gradients for one input or a batch.

    Returns (loss, input_gradients, weight_gradients, bias_gradients); the
    loss and gradients are sums over the given rows.
    """
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    targets = _as_targets(labels)
    probs, cache = forward_batch(model, x2, mode, rng, temperature)
    logp = _log_softmax(cache["logits"], cache["temperature"])
    loss = float(-(targets * logp).sum())
    input_grads, weight_grads, bias_grads = _backward(
        model, cache, _softmax_delta(probs, targets), mean_over_batch=False
    )
    if np.asarray(x).ndim == 1:
        input_grads = input_grads[0]
    return loss, input_grads, weight_grads, bias_grads


def input_gradient(model: MlpModel, x: np.ndarray, label: int, temperature: float = 1.0) -> np.ndarray:
    """Gradient of the cross-entropy loss at ``label`` wrt the input.

    Evaluated in infer mode (no dropout) at temperature 1 unless overridden.
    """
    return input_gradient_batch(model, np.asarray(x, dtype=float)[None, :],
                                np.array([label]), temperature)[0]


def input_gradient_batch(
    model: MlpModel, inputs: np.ndarray, labels, temperature: float = 1.0
) -> np.ndarray:
    targets = _as_targets(labels)
    probs, cache = forward_batch(model, inputs, "infer", temperature=temperature)
    grads, _, _ = _backward(model, cache, _softmax_delta(probs, targets), mean_over_batch=False)
    return grads


def escape_gradient(model: MlpModel, x: np.ndarray, label: int, temperature: float = 1.0) -> np.ndarray:
    """Scale-free ascent direction of the loss at ``label`` wrt the input.

    The cross-entropy input gradient at a hard label is p_other / T times
    the gradient of (logit_other - logit_label); this returns that logit-gap
    gradient itself, dropping the positive probability prefactor, which
    underflows once the network is saturated-confident. Any procedure that
    normalizes the gradient before using it is exactly invariant to the
    substitution and stays well-conditioned at every confidence level.
    """
    return escape_gradient_batch(model, np.asarray(x, dtype=float)[None, :],
                                 np.array([label]), temperature)[0]


def escape_gradient_batch(
    model: MlpModel, inputs: np.ndarray, labels, temperature: float = 1.0
) -> np.ndarray:
    flat = np.asarray(labels).reshape(-1).astype(int)
    if flat.min(initial=0) < 0 or flat.max(initial=0) >= CLASS_COUNT:
        raise ValueError("labels must be class indices")
    delta = np.zeros((flat.size, CLASS_COUNT))
    rows = np.arange(flat.size)
    delta[rows, 1 - flat] = 1.0
    delta[rows, flat] = -1.0
    _, cache = forward_batch(model, inputs, "infer", temperature=temperature)
    grads, _, _ = _backward(model, cache, delta, mean_over_batch=False)
    return grads


def input_sensitivity(model: MlpModel, inputs: np.ndarray, labels) -> float:
    """Mean L2 norm of the per-sample input gradient of the loss.

    Evaluated in infer mode at temperature 1, i.e. on the deployed model an
    attacker queries. A coarse smoothness statistic: saturated or damped
    outputs leak little first-order signal, so lower values mean the loss
    surface around the test points is flatter.
    """
    grads = input_gradient_batch(model, inputs, labels)
    return float(np.linalg.norm(grads, axis=1).mean())


def train(
    model: MlpModel,
    inputs: np.ndarray,
    labels,
    cfg: TrainConfig,
    augmenter=None,
) -> list[dict]:
    """Mini-batch SGD on cross-entropy; mutates the model in place.

    ``labels`` may be int classes or (count, 2) probability rows (soft
    targets). ``augmenter(model, indices, batch_x, batch_targets, rng)``,
    when given, runs before each gradient step and may append to or
    transform the batch. Returns one log record per epoch.
    """
    x = np.asarray(inputs, dtype=float)
    targets = _as_targets(labels)
    if x.shape[0] != targets.shape[0]:
        raise ValueError("inputs and labels must have matching row counts")
    if x.shape[0] == 0:
        raise ValueError("training data is empty")
    rng = np.random.default_rng(cfg.rng_seed)
    mode = "train" if cfg.dropout_enabled else "infer"
    log: list[dict] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(x.shape[0])
        total_loss = 0.0
        total_hits = 0
        total_rows = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            bx, bt = x[idx], targets[idx]
            if augmenter is not None:
                bx, bt = augmenter(model, idx, bx, bt, rng)
            probs, cache = forward_batch(model, bx, mode, rng)
            logp = _log_softmax(cache["logits"], cache["temperature"])
            total_loss += float(-(bt * logp).sum())
            total_hits += int((np.argmax(probs, axis=1) == np.argmax(bt, axis=1)).sum())
            total_rows += bx.shape[0]
            _, weight_grads, bias_grads = _backward(
                model, cache, _softmax_delta(probs, bt), mean_over_batch=True
            )
            for w, b, dw, db in zip(model.weights, model.biases, weight_grads, bias_grads):
                w -= cfg.learning_rate * dw
                b -= cfg.learning_rate * db
        log.append(
            {
                "epoch": epoch,
                "loss": total_loss / total_rows,
                "accuracy": total_hits / total_rows,
            }
        )
    return log


def evaluate(model: MlpModel, inputs: np.ndarray, labels: np.ndarray) -> dict:
    """Accuracy, recall, precision, and confusion matrix; class 1 is positive."""
    y = np.asarray(labels).reshape(-1).astype(int)
    predicted = classify(model, inputs)
    tp = int(np.sum((predicted == 1) & (y == 1)))
    tn = int(np.sum((predicted == 0) & (y == 0)))
    fp = int(np.sum((predicted == 1) & (y == 0)))
    fn = int(np.sum((predicted == 0) & (y == 1)))
    total = max(len(y), 1)
    return {
        "accuracy": (tp + tn) / total,
        "recall": tp / (tp + fn) if tp + fn else 0.0,
        "precision": tp / (tp + fp) if tp + fp else 0.0,
        "confusion": [[tn, fp], [fn, tp]],
    }


def save_model(model: MlpModel) -> bytes:
    """Versioned JSON container; weights serialized row-major, round-trip exact."""
    doc = {
        "format": _MODEL_FORMAT,
        "version": _MODEL_VERSION,
        "temperature": model.temperature,
        "layers": [
            {
                "input_dim": spec.input_dim,
                "output_dim": spec.output_dim,
                "activation": spec.activation,
                "dropout_rate": spec.dropout_rate,
                "weights": w.tolist(),
                "bias": b.tolist(),
            }
            for spec, w, b in zip(model.specs, model.weights, model.biases)
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("ascii")


def load_model(payload: bytes) -> MlpModel:
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt model payload: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != _MODEL_FORMAT:
        raise ModelFormatError("not a model container")
    if doc.get("version") != _MODEL_VERSION:
        raise ModelFormatError(
            f"unsupported model version {doc.get('version')!r}; expected {_MODEL_VERSION}"
        )
    try:
        specs, weights, biases = [], [], []
        for layer in doc["layers"]:
            spec = LayerSpec(
                input_dim=int(layer["input_dim"]),
                output_dim=int(layer["output_dim"]),
                activation=str(layer["activation"]),
                dropout_rate=float(layer["dropout_rate"]),
            )
            w = np.array(layer["weights"], dtype=float)
            b = np.array(layer["bias"], dtype=float)
            if w.shape != (spec.input_dim, spec.output_dim) or b.shape != (spec.output_dim,):
                raise ModelFormatError(
                    f"layer payload shape {w.shape} does not match spec "
                    f"({spec.input_dim}, {spec.output_dim})"
                )
            specs.append(spec)
            weights.append(w)
            biases.append(b)
        temperature = float(doc["temperature"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model payload: {exc!r}") from exc
    model = MlpModel(specs=tuple(specs), weights=weights, biases=biases, temperature=temperature)
    if model.specs[-1].output_dim != CLASS_COUNT:
        raise ModelFormatError("final layer does not emit two classes")
    return model
