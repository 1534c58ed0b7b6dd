"""Small dense classifier trained with mini-batch gradient descent.

Hidden layers are ReLU.  The output head is either softmax over the
classes (categorical) or a single sigmoid unit (binary), both trained on
cross-entropy.  Weights and biases start uniform in +-1/sqrt(fan_in); the
biases are random too, so a gradient check on an all-zero input still
exercises the bias path.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import DataError, NumericError

_MODEL_MAGIC = b"FLOWNN01"

# Two stock layouts: a funnel and a wide constant-width stack.
PRESET_FUNNEL = (50, 25)
PRESET_WIDE = (100, 100, 100)


def relu(z):
    return np.maximum(z, 0.0)


def softmax(z):
    """Row-wise softmax, shifted by the row max so large logits stay finite."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class MlpConfig:
    hidden_sizes: tuple[int, ...] = PRESET_FUNNEL
    batch_size: int = 32
    epochs: int = 10
    learning_rate: float = 0.01
    optimizer: str = "sgd"  # or "adam"
    seed: int = 0

    def __post_init__(self):
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: str  # "categorical" or "binary"
    class_names: tuple[str, ...] = ()
    build_seconds: float = 0.0
    loss_trace: tuple = ()

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_features(self) -> int:
        return self.weights[0].shape[0]


def init_model(n_features: int, hidden_sizes, n_classes: int, head: str, seed: int) -> MlpModel:
    """Fresh model with uniform +-1/sqrt(fan_in) weights and biases."""
    if head not in ("categorical", "binary"):
        raise ValueError("head must be 'categorical' or 'binary'")
    if head == "categorical" and n_classes < 2:
        raise ValueError("categorical head needs at least 2 classes")
    out_dim = 1 if head == "binary" else n_classes
    dims = [n_features, *hidden_sizes, out_dim]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, fan_out))
    return MlpModel(weights, biases, head)


def _forward_full(model: MlpModel, X):
    """All layer pre-activations and activations, input included."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DataError(f"expected (rows, {model.n_features}) features, got {X.shape}")
    activations = [X]
    pre_acts = []
    a = X
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        if not np.isfinite(z).all():
            raise NumericError(f"non-finite pre-activation at layer {i}")
        pre_acts.append(z)
        a = z if i == last else relu(z)
        activations.append(a)
    return pre_acts, activations


def forward(model: MlpModel, X) -> np.ndarray:
    """Class probabilities: (rows, classes) for softmax, (rows,) for sigmoid."""
    pre_acts, _ = _forward_full(model, X)
    z_out = pre_acts[-1]
    if model.head == "binary":
        return sigmoid(z_out[:, 0])
    return softmax(z_out)


def predict(model: MlpModel, X) -> np.ndarray:
    """Hard labels; softmax argmax ties go to the lower class index and a
    sigmoid output of exactly 0.5 counts as positive."""
    probs = forward(model, X)
    if model.head == "binary":
        return (probs >= 0.5).astype(np.int64)
    return probs.argmax(axis=1)


def _loss_and_grads(model: MlpModel, X, y, batch_scale: float = 1.0):
    """Mean cross-entropy on the batch and gradients for every parameter."""
    pre_acts, activations = _forward_full(model, X)
    n = X.shape[0]
    z_out = pre_acts[-1]
    y = np.asarray(y, dtype=np.int64)

    if model.head == "binary":
        z = z_out[:, 0]
        t = y.astype(np.float64)
        # stable binary cross-entropy straight from the logits
        loss = float(np.mean(np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))))
        d_out = ((sigmoid(z) - t) / n).reshape(-1, 1)
    else:
        shifted = z_out - z_out.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        loss = float(-np.mean(log_probs[np.arange(n), y]))
        probs = np.exp(log_probs)
        probs[np.arange(n), y] -= 1.0
        d_out = probs / n

    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    delta = d_out * batch_scale
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w[i] = activations[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (pre_acts[i - 1] > 0)
    return loss, grads_w, grads_b


def train(train_data: Dataset, config: MlpConfig, head: str = "categorical") -> MlpModel:
    """Mini-batch training with a fresh shuffle each epoch.

    Categorical mode fits labels_cat over every class; binary mode fits the
    attack indicator with a single sigmoid unit.  A non-finite batch loss
    aborts immediately with the epoch and batch index.
    """
    X = np.asarray(train_data.features, dtype=np.float64)
    if head == "binary":
        y = train_data.labels_bin.astype(np.int64)
        if np.unique(y).size < 2:
            raise DataError("binary training data contains a single class")
        n_classes = 2
    elif head == "categorical":
        y = np.asarray(train_data.labels_cat, dtype=np.int64)
        n_classes = len(train_data.class_names)
        present = np.unique(y)
        if present.size < n_classes:
            raise DataError(
                f"training data covers {present.size} of {n_classes} classes"
            )
    else:
        raise ValueError("head must be 'categorical' or 'binary'")

    rng = np.random.default_rng(config.seed)
    model = init_model(X.shape[1], config.hidden_sizes, n_classes, head, seed=config.seed)
    model.class_names = tuple(train_data.class_names)

    if config.optimizer == "adam":
        m_w = [np.zeros_like(w) for w in model.weights]
        v_w = [np.zeros_like(w) for w in model.weights]
        m_b = [np.zeros_like(b) for b in model.biases]
        v_b = [np.zeros_like(b) for b in model.biases]
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        step = 0

    trace = []
    start = time.perf_counter()
    n = X.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for batch_no, lo in enumerate(range(0, n, config.batch_size)):
            rows = order[lo : lo + config.batch_size]
            loss, grads_w, grads_b = _loss_and_grads(model, X[rows], y[rows])
            if not math.isfinite(loss):
                raise NumericError(
                    f"training diverged at epoch {epoch} batch {batch_no}: loss={loss}"
                )
            trace.append((epoch, batch_no, loss))
            if config.optimizer == "sgd":
                for i in range(len(model.weights)):
                    model.weights[i] -= config.learning_rate * grads_w[i]
                    model.biases[i] -= config.learning_rate * grads_b[i]
            else:
                step += 1
                for i in range(len(model.weights)):
                    m_w[i] = beta1 * m_w[i] + (1 - beta1) * grads_w[i]
                    v_w[i] = beta2 * v_w[i] + (1 - beta2) * grads_w[i] ** 2
                    m_b[i] = beta1 * m_b[i] + (1 - beta1) * grads_b[i]
                    v_b[i] = beta2 * v_b[i] + (1 - beta2) * grads_b[i] ** 2
                    mw_hat = m_w[i] / (1 - beta1**step)
                    vw_hat = v_w[i] / (1 - beta2**step)
                    mb_hat = m_b[i] / (1 - beta1**step)
                    vb_hat = v_b[i] / (1 - beta2**step)
                    model.weights[i] -= config.learning_rate * mw_hat / (np.sqrt(vw_hat) + eps)
                    model.biases[i] -= config.learning_rate * mb_hat / (np.sqrt(vb_hat) + eps)
    model.build_seconds = time.perf_counter() - start
    model.loss_trace = tuple(trace)
    return model


def gradient_check(model: MlpModel, X, y, n_samples: int = 64, step: float = 1e-5,
                   seed: int = 0, kink_tol: float = 1e-4) -> float:
    """Max relative error between backprop and central-difference gradients.

    Samples parameter coordinates with a seeded stream.  A coordinate is
    skipped when the perturbed passes disagree on any ReLU activation mask
    or when a base pre-activation sits within ``kink_tol`` of zero: the
    quadratic error model does not hold across a kink.  Batches are capped
    at 8 rows to keep the sweep honest and fast.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] > 8:
        raise ValueError("gradient check expects a batch of at most 8 rows")
    _, grads_w, grads_b = _loss_and_grads(model, X, y)
    base_pre, _ = _forward_full(model, X)

    params = []
    for i, w in enumerate(model.weights):
        params.extend(("w", i, j) for j in range(w.size))
    for i, b in enumerate(model.biases):
        params.extend(("b", i, j) for j in range(b.size))
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(params), size=min(n_samples, len(params)), replace=False)

    def perturbed(kind, layer, flat, delta):
        target = model.weights[layer] if kind == "w" else model.biases[layer]
        flat_view = target.reshape(-1)
        old = flat_view[flat]
        flat_view[flat] = old + delta
        try:
            pre, _ = _forward_full(model, X)
            loss, _, _ = _loss_and_grads(model, X, y)
        finally:
            flat_view[flat] = old
        hidden = pre[:-1]
        masks = [p > 0 for p in hidden]
        near_kink = any(np.any(np.abs(p) < kink_tol) for p in hidden)
        return loss, masks, near_kink

    base_masks = [p > 0 for p in base_pre[:-1]]
    max_rel = 0.0
    checked = 0
    for pick in picks:
        kind, layer, flat = params[int(pick)]
        loss_plus, masks_plus, kink_plus = perturbed(kind, layer, flat, +step)
        loss_minus, masks_minus, kink_minus = perturbed(kind, layer, flat, -step)
        masks_stable = all(
            np.array_equal(a, b) and np.array_equal(a, c)
            for a, b, c in zip(base_masks, masks_plus, masks_minus)
        )
        if kink_plus or kink_minus or not masks_stable:
            continue
        numeric = (loss_plus - loss_minus) / (2 * step)
        analytic = grads_w[layer].reshape(-1)[flat] if kind == "w" else grads_b[layer].reshape(-1)[flat]
        rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-12)
        max_rel = max(max_rel, rel)
        checked += 1
    if checked == 0:
        raise NumericError(
            "every sampled coordinate sat on a ReLU kink; nothing was checked"
        )
    return max_rel


def save_loss_trace(model: MlpModel, path: str) -> None:
    """Write the per-batch loss trace as (epoch, batch, loss) CSV."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,batch,loss\n")
        for epoch, batch, loss in model.loss_trace:
            fh.write(f"{epoch},{batch},{loss!r}\n")


def save_model(model: MlpModel, path: str) -> None:
    """Versioned binary container: magic, JSON header, raw float64 blocks."""
    header = {
        "version": 1,
        "head": model.head,
        "dims": list(model.layer_dims),
        "class_names": list(model.class_names),
        "build_seconds": model.build_seconds,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype=np.float64).tobytes())
            fh.write(np.ascontiguousarray(b, dtype=np.float64).tobytes())


def load_model(path: str) -> MlpModel:
    try:
        raw = open(path, "rb").read()
    except OSError as exc:
        raise DataError(f"cannot open model file {path}: {exc}") from exc
    if raw[: len(_MODEL_MAGIC)] != _MODEL_MAGIC:
        raise DataError(f"{path}: not a model file (bad magic)")
    (hlen,) = struct.unpack_from("<I", raw, len(_MODEL_MAGIC))
    off = len(_MODEL_MAGIC) + 4
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    if header.get("version") != 1:
        raise DataError(f"{path}: unsupported model version {header.get('version')}")
    dims = header["dims"]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        w = np.frombuffer(raw, dtype=np.float64, count=fan_in * fan_out, offset=off)
        off += fan_in * fan_out * 8
        b = np.frombuffer(raw, dtype=np.float64, count=fan_out, offset=off)
        off += fan_out * 8
        weights.append(w.reshape(fan_in, fan_out).copy())
        biases.append(b.copy())
    return MlpModel(
        weights,
        biases,
        head=header["head"],
        class_names=tuple(header["class_names"]),
        build_seconds=float(header["build_seconds"]),
    )
