"""Small feed-forward ReLU networks in plain numpy.

Forward pass, reverse-mode gradients, Glorot initialization, Adam, analytic
input Jacobians and a lossless JSON encoding. Weight matrices are stored as
``(fan_out, fan_in)`` so a layer computes ``z = W @ x + b``; batches are
row-major ``(batch, features)`` and use ``X @ W.T``.

Conventions: ReLU'(0) = 0 and the MAE subgradient at a zero residual is 0.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np


class ModelFormatError(ValueError):
    """A serialized model could not be parsed."""


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: fan_in {w.shape[1]} != previous fan_out")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def params(self) -> list[np.ndarray]:
        """Flat list [W_1, b_1, W_2, b_2, ...] (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def equals(self, other: "MlpModel") -> bool:
        """Bitwise parameter equality."""
        a, b = self.params(), other.params()
        return len(a) == len(b) and all(
            x.shape == y.shape and x.tobytes() == y.tobytes() for x, y in zip(a, b))


def glorot_init(layer_dims, seed) -> MlpModel:
    """Uniform Glorot/Xavier init: W ~ U[-a, a], a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid layer_dims {layer_dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases)


def _check_input(model: MlpModel, X: np.ndarray):
    if X.shape[-1] != model.weights[0].shape[1]:
        raise ValueError(f"input has {X.shape[-1]} features, model expects {model.weights[0].shape[1]}")


def forward_cache(model: MlpModel, X):
    """Forward pass over a batch, keeping per-layer inputs and pre-activations.

    Returns ``(out, acts, pre)`` where ``acts[l]`` is the input to layer ``l``
    and ``pre[l]`` its pre-activation. ``out`` has shape ``(batch,)`` for a
    single-output net, ``(batch, out_dim)`` otherwise.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check_input(model, X)
    acts, pre = [X], []
    h = X
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        pre.append(z)
        if l < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    out = h[:, 0] if h.shape[1] == 1 else h
    return out, acts, pre


def forward(model: MlpModel, x):
    """Predict for a single input vector (returns a float) or a batch (returns an array)."""
    x = np.asarray(x, dtype=float)
    out, _, _ = forward_cache(model, x)
    if x.ndim == 1:
        return float(out[0]) if out.ndim == 1 else out[0]
    return out


def backward(model: MlpModel, X, t, loss: str = "mse"):
    """Gradients of the mean batch loss with respect to every parameter.

    Returns ``(grads, loss_value)`` with ``grads`` ordered like ``model.params()``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(t, dtype=float).reshape(-1)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if t.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} inputs but {t.shape[0]} targets")
    n = X.shape[0]
    out, acts, pre = forward_cache(model, X)
    r = out - t
    if loss == "mse":
        value = float(np.mean(r * r))
        d = (2.0 / n) * r
    elif loss == "mae":
        value = float(np.mean(np.abs(r)))
        d = np.sign(r) / n
    else:
        raise ValueError(f"unknown loss {loss!r}")

    delta = d[:, None]
    grads = [None] * (2 * len(model.weights))
    for l in range(len(model.weights) - 1, -1, -1):
        grads[2 * l] = delta.T @ acts[l]
        grads[2 * l + 1] = delta.sum(axis=0)
        if l:
            delta = (delta @ model.weights[l]) * (pre[l - 1] > 0)
    return grads, value


def input_jacobian(model: MlpModel, x) -> np.ndarray:
    """d(output)/d(input) at ``x`` for a single-output net: W_L D_{L-1} ... D_1 W_1."""
    x = np.asarray(x, dtype=float).reshape(-1)
    _, _, pre = forward_cache(model, x)
    g = model.weights[-1]
    for l in range(len(model.weights) - 2, -1, -1):
        g = (g * (pre[l][0] > 0)) @ model.weights[l]
    return g[0] if g.shape[0] == 1 else g


def input_jacobian_batch(model: MlpModel, X) -> np.ndarray:
    """Row-wise input gradients for a batch of inputs, shape ``(batch, fan_in)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _, _, pre = forward_cache(model, X)
    g = np.broadcast_to(model.weights[-1][0], (X.shape[0], model.weights[-1].shape[1]))
    for l in range(len(model.weights) - 2, -1, -1):
        g = (g * (pre[l] > 0)) @ model.weights[l]
    return g


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def fresh(cls, model: MlpModel, lr: float = 1e-3, **kw) -> "AdamState":
        zeros = [np.zeros_like(p) for p in model.params()]
        return cls(lr=lr, m=zeros, v=[np.zeros_like(p) for p in model.params()], **kw)


def _adam_update(params, grads, state: AdamState, lr: float):
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def adam_step(model: MlpModel, grads, state: AdamState, lr: float | None = None):
    """One in-place Adam update with bias correction. Returns ``(model, state)``."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in model.params()]
        state.v = [np.zeros_like(p) for p in model.params()]
    _adam_update(model.params(), grads, state, state.lr if lr is None else lr)
    return model, state


def _flat_model(model: MlpModel) -> tuple[MlpModel, np.ndarray]:
    """Copy of ``model`` whose parameters are views into one flat buffer."""
    flat = np.concatenate([p.ravel() for p in model.params()])
    views, pos = [], 0
    for p in model.params():
        views.append(flat[pos:pos + p.size].reshape(p.shape))
        pos += p.size
    return MlpModel(views[0::2], views[1::2]), flat


@dataclass
class TrainOptions:
    batch_size: int = 64
    max_epochs: int = 500
    tol: float = 1e-3
    patience: int = 60
    loss: str = "mse"
    lr: float = 3e-3
    lr_decay: float = 0.5
    lr_patience: int = 20
    min_lr: float = 1e-6
    seed: int = 0


@dataclass
class TrainReport:
    epochs_run: int = 0
    train_loss: list = field(default_factory=list)
    val_nmae: list = field(default_factory=list)
    val_mae: list = field(default_factory=list)
    initial_val_nmae: float = float("nan")
    best_val_nmae: float = float("nan")
    converged: bool = False
    epochs_to_converge: int | None = None
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "train_loss": list(self.train_loss),
            "val_nmae": list(self.val_nmae),
            "val_mae": list(self.val_mae),
            "initial_val_nmae": self.initial_val_nmae,
            "best_val_nmae": self.best_val_nmae,
            "converged": self.converged,
            "epochs_to_converge": self.epochs_to_converge,
            "seconds": self.seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        return cls(**d)


def nmae(pred, target, scale) -> float:
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(target)))) / scale


def train(model: MlpModel, X_train, t_train, X_val, t_val, opts: TrainOptions | None = None,
          scale: float | None = None):
    """Minibatch Adam on one regression target with validation early stopping.

    The validation metric is nMAE = MAE / ``scale`` (default: mean |t_train|).
    Training stops when that reaches ``opts.tol``, when it has not improved by
    more than 1e-5 for ``opts.patience`` epochs, or after ``opts.max_epochs``.
    The learning rate is multiplied by ``lr_decay`` after ``lr_patience``
    epochs without improvement. The returned model holds the parameters of the
    best validation epoch; ``model`` itself is left untouched.
    """
    opts = opts or TrainOptions()
    X_train = np.asarray(X_train, dtype=float)
    t_train = np.asarray(t_train, dtype=float)
    X_val = np.asarray(X_val, dtype=float)
    t_val = np.asarray(t_val, dtype=float)
    if X_train.shape[0] == 0 or X_val.shape[0] == 0:
        raise ValueError("training and validation sets must be nonempty")
    if scale is None:
        scale = float(np.mean(np.abs(t_train)))
    if not scale > 0:
        raise ValueError("target scale must be positive")

    start = time.perf_counter()
    report = TrainReport()
    report.initial_val_nmae = nmae(forward(model, X_val), t_val, scale)
    report.best_val_nmae = report.initial_val_nmae
    best = model.copy()
    if opts.max_epochs <= 0:
        report.seconds = time.perf_counter() - start
        return best, report

    rng = np.random.default_rng(opts.seed)
    model, flat = _flat_model(model)
    adam = AdamState(lr=opts.lr, m=[np.zeros_like(flat)], v=[np.zeros_like(flat)])
    lr = opts.lr
    n = X_train.shape[0]
    bs = max(1, min(int(opts.batch_size), n))
    since_best = since_lr = 0

    for epoch in range(1, opts.max_epochs + 1):
        order = rng.permutation(n)
        Xs, ts = X_train[order], t_train[order]
        total = 0.0
        for s in range(0, n, bs):
            grads, value = backward(model, Xs[s:s + bs], ts[s:s + bs], opts.loss)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}")
            _adam_update([flat], [np.concatenate([g.ravel() for g in grads])], adam, lr)
            total += value * min(bs, n - s)
        report.train_loss.append(total / n)

        pred = forward(model, X_val)
        if not np.all(np.isfinite(pred)):
            raise TrainingDiverged(f"non-finite validation prediction at epoch {epoch}")
        mae = float(np.mean(np.abs(pred - t_val)))
        score = mae / scale
        report.val_mae.append(mae)
        report.val_nmae.append(score)
        report.epochs_run = epoch

        improved = score < report.best_val_nmae - 1e-5
        if score < report.best_val_nmae:
            report.best_val_nmae = score
            best = model.copy()
        if improved:
            since_best = since_lr = 0
        else:
            since_best += 1
            since_lr += 1

        if score <= opts.tol:
            report.converged = True
            report.epochs_to_converge = epoch
            break
        if since_best >= opts.patience:
            break
        if since_lr >= opts.lr_patience and lr > opts.min_lr:
            lr = max(lr * opts.lr_decay, opts.min_lr)
            since_lr = 0

    report.seconds = time.perf_counter() - start
    return best, report


def to_dict(model: MlpModel) -> dict:
    return {
        "layer_dims": model.layer_dims,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def from_dict(d: dict, where: str = "model") -> MlpModel:
    try:
        weights = [np.array(w, dtype=float) for w in d["weights"]]
        biases = [np.array(b, dtype=float) for b in d["biases"]]
        model = MlpModel(weights, biases)
    except KeyError as exc:
        raise ModelFormatError(f"{where}: missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"{where}: {exc}") from None
    dims = d.get("layer_dims")
    if dims is not None and list(dims) != model.layer_dims:
        raise ModelFormatError(f"{where}: layer_dims {dims} disagree with weights {model.layer_dims}")
    for i, p in enumerate(model.params()):
        if not np.all(np.isfinite(p)):
            raise ModelFormatError(f"{where}: parameter array {i} has non-finite values")
    return model


def save(model: MlpModel) -> bytes:
    # json emits repr() floats, which round-trip exactly
    return json.dumps(to_dict(model)).encode()


def loads_json(data, what: str = "model") -> dict:
    try:
        return json.loads(data)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{what}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except UnicodeDecodeError as exc:
        raise ModelFormatError(f"{what}: byte {exc.start}: not UTF-8") from None


def load(data) -> MlpModel:
    d = loads_json(data)
    if not isinstance(d, dict):
        raise ModelFormatError("model: top-level JSON value must be an object")
    return from_dict(d)
