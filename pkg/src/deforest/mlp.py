"""A one-hidden-layer perceptron trained on mean squared error.

Both layers use the logistic activation, so the output is a propensity in
(0, 1). Two full-batch trainers are provided: plain gradient descent on the
backpropagated gradient, and Levenberg-Marquardt on the per-sample residual
Jacobian. Both hold out a validation set, stop once it stops improving and
return the best-validation weights.

The flat parameter vector is ordered ``[W1 (row-major), b1, W2 (row-major), b2]``.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Union

import numpy as np
import scipy.linalg
from scipy.stats import rankdata

from .dataset import SampleSet
from .raster import format_number

log = logging.getLogger(__name__)

# |z| <= 36 keeps 1 / (1 + exp(-z)) strictly inside (0, 1) in float64
_Z_CLIP = 36.0

ALGORITHMS = ("backprop", "lm")
STOP_REASONS = ("max_epochs", "early_stop", "grad_tol", "lambda_max")

Data = Union[SampleSet, tuple]


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    """Loss became non-finite; ``last_finite_epoch`` is the last good epoch."""

    def __init__(self, last_finite_epoch: int):
        super().__init__(f"training diverged after epoch {last_finite_epoch}")
        self.last_finite_epoch = last_finite_epoch


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -_Z_CLIP, _Z_CLIP)))


@dataclass(frozen=True, eq=False)
class MlpModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation: str = "logistic"

    def __post_init__(self):
        arrs = {k: np.array(getattr(self, k), dtype=np.float64) for k in ("W1", "b1", "W2", "b2")}
        n_hidden, n_in = arrs["W1"].shape
        n_out = arrs["W2"].shape[0]
        if arrs["b1"].shape != (n_hidden,) or arrs["W2"].shape != (n_out, n_hidden) or arrs["b2"].shape != (n_out,):
            raise ValueError("inconsistent layer shapes")
        for k, a in arrs.items():
            if not np.isfinite(a).all():
                raise ValueError(f"{k} contains non-finite weights")
            a.flags.writeable = False
            object.__setattr__(self, k, a)

    @property
    def n_in(self) -> int:
        return self.W1.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def n_out(self) -> int:
        return self.W2.shape[0]

    @property
    def n_params(self) -> int:
        return self.W1.size + self.b1.size + self.W2.size + self.b2.size

    def params(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])

    def with_params(self, theta: np.ndarray) -> "MlpModel":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        return MlpModel(*_unpack(theta, self))

    def __eq__(self, other):
        if not isinstance(other, MlpModel):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("W1", "b1", "W2", "b2"))

    __hash__ = None


class _Weights(NamedTuple):
    """Unvalidated views into a flat parameter vector, for the training loops."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


def _unpack(theta: np.ndarray, like) -> _Weights:
    (h, i), o = like.W1.shape, like.W2.shape[0]
    a = h * i
    b = a + h
    c = b + o * h
    return _Weights(theta[:a].reshape(h, i), theta[a:b], theta[b:c].reshape(o, h), theta[c:])


def init_model(n_in: int, n_hidden: int = 8, seed: int = 0, n_out: int = 1) -> MlpModel:
    """Uniform Glorot initialisation, zero biases."""
    if n_in < 1 or n_hidden < 1 or n_out < 1:
        raise ValueError(f"layer sizes must be positive, got {n_in}-{n_hidden}-{n_out}")
    rng = np.random.default_rng(seed)
    r1 = math.sqrt(6.0 / (n_in + n_hidden))
    r2 = math.sqrt(6.0 / (n_hidden + n_out))
    W1 = rng.uniform(-r1, r1, size=(n_hidden, n_in))
    W2 = rng.uniform(-r2, r2, size=(n_out, n_hidden))
    return MlpModel(W1, np.zeros(n_hidden), W2, np.zeros(n_out))


def _forward(model: MlpModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    H = sigmoid(X @ model.W1.T + model.b1)
    Y = sigmoid(H @ model.W2.T + model.b2)
    return H, Y


def forward(model: MlpModel, x):
    """Network output for one input vector (scalar) or a batch of rows (1-D array)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.n_in or x.ndim not in (1, 2):
        raise ValueError(f"expected input of length {model.n_in}, got shape {x.shape}")
    _, Y = _forward(model, np.atleast_2d(x))
    if model.n_out == 1:
        Y = Y[:, 0]
    return float(Y[0]) if x.ndim == 1 and model.n_out == 1 else (Y[0] if x.ndim == 1 else Y)


def _arrays(data: Data, model: MlpModel) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, SampleSet):
        X, t = data.x, data.y
    else:
        X, t = data
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    T = np.asarray(t, dtype=np.float64).reshape(len(X), -1)
    if X.shape[1] != model.n_in or T.shape[1] != model.n_out:
        raise ValueError(
            f"batch shapes {X.shape}/{T.shape} do not match a {model.n_in}-{model.n_hidden}-{model.n_out} model"
        )
    return X, T


def _loss_grad(model: MlpModel, X: np.ndarray, T: np.ndarray) -> tuple[float, np.ndarray]:
    H, Y = _forward(model, X)
    E = Y - T
    mse = float(np.mean(E * E))
    dZ2 = (2.0 / E.size) * E * Y * (1.0 - Y)
    dZ1 = (dZ2 @ model.W2) * H * (1.0 - H)
    grad = np.concatenate([(dZ1.T @ X).ravel(), dZ1.sum(axis=0), (dZ2.T @ H).ravel(), dZ2.sum(axis=0)])
    return mse, grad


def loss_and_gradient(model: MlpModel, batch: Data) -> tuple[float, np.ndarray]:
    """Mean squared error over all outputs and its backpropagated gradient."""
    X, T = _arrays(batch, model)
    return _loss_grad(model, X, T)


def _mse(model: MlpModel, X: np.ndarray, T: np.ndarray) -> float:
    E = _forward(model, X)[1] - T
    return float(np.mean(E * E))


def residual_jacobian(model: MlpModel, batch: Data) -> tuple[np.ndarray, np.ndarray]:
    """Residuals ``y - t`` (flattened sample-major) and their Jacobian w.r.t. the parameters.

    Row ``i * n_out + k`` of the Jacobian is the gradient of output ``k`` on
    sample ``i``.
    """
    X, T = _arrays(batch, model)
    return _residual_jacobian(model, X, T)


def _residual_jacobian(model: MlpModel, X: np.ndarray, T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    H, Y = _forward(model, X)
    n, o = len(X), model.W2.shape[0]
    D2 = Y * (1.0 - Y)                                         # (n, o)
    Dz1 = D2[:, :, None] * model.W2[None] * (H * (1.0 - H))[:, None, :]  # (n, o, h)
    eye = np.eye(o)
    jW1 = (Dz1[..., None] * X[:, None, None, :]).reshape(n, o, -1)
    jW2 = (eye[None, :, :, None] * (D2[:, :, None] * H[:, None, :])[:, :, None, :]).reshape(n, o, -1)
    jb2 = eye[None] * D2[:, :, None]
    J = np.concatenate([jW1, Dz1, jW2, jb2], axis=2).reshape(n * o, -1)
    return (Y - T).ravel(), J


@dataclass
class TrainConfig:
    algorithm: str = "lm"
    max_epochs: int = 200
    learning_rate: float = 0.5
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    lambda_max: float = 1e10
    patience: int = 20
    grad_tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.lambda0 > 0 or not self.lambda_max > self.lambda0:
            raise ValueError("need 0 < lambda0 < lambda_max")
        if not self.lambda_up > 1:
            raise ValueError("lambda_up must be > 1")
        if not 0 < self.lambda_down < 1:
            raise ValueError("lambda_down must be in (0, 1)")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")


@dataclass
class TrainReport:
    algorithm: str
    epochs_run: int = 0
    train_mse_history: list = field(default_factory=list)
    val_mse_history: list = field(default_factory=list)
    stop_reason: str = "max_epochs"
    best_epoch: int = 0
    best_val_mse: float = math.inf
    lambda_history: list = field(default_factory=list)
    rejected_steps: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class _EarlyStopper:
    """Tracks the best validation loss; epoch 0 is the initial model."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_theta = None
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, val: float, theta: np.ndarray) -> bool:
        if val < self.best:
            self.best, self.best_theta, self.best_epoch, self.stale = val, theta.copy(), epoch, 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def _prepare(model, train, val, cfg, algorithm):
    if cfg.algorithm != algorithm:
        raise ValueError(f"config algorithm is {cfg.algorithm!r}, expected {algorithm!r}")
    X, T = _arrays(train, model)
    Xv, Tv = _arrays(val, model) if val is not None else (X, T)
    return X, T, Xv, Tv


def _finish(model, theta, stopper, report):
    report.best_epoch = stopper.best_epoch
    report.best_val_mse = stopper.best
    log.info(
        "%s stopped after %d epochs (%s), best val mse %.6g at epoch %d",
        report.algorithm, report.epochs_run, report.stop_reason, stopper.best, stopper.best_epoch,
    )
    return model.with_params(stopper.best_theta if stopper.best_theta is not None else theta), report


def train_backprop(
    model: MlpModel, train: Data, val: Data | None, cfg: TrainConfig
) -> tuple[MlpModel, TrainReport]:
    """Full-batch gradient descent with early stopping on ``val``.

    ``val=None`` monitors the training loss instead.
    """
    X, T, Xv, Tv = _prepare(model, train, val, cfg, "backprop")
    theta = model.params()
    report = TrainReport("backprop")
    stopper = _EarlyStopper(cfg.patience)
    stopper.update(0, _mse(model, Xv, Tv), theta)

    mse, grad = _loss_grad(_unpack(theta, model), X, T)
    for epoch in range(1, cfg.max_epochs + 1):
        if not math.isfinite(mse) or not np.isfinite(grad).all():
            raise DivergenceError(epoch - 1)
        if np.linalg.norm(grad) < cfg.grad_tol:
            report.stop_reason = "grad_tol"
            break
        with np.errstate(over="ignore", invalid="ignore"):
            theta = theta - cfg.learning_rate * grad
        if not np.isfinite(theta).all():
            raise DivergenceError(epoch - 1)
        current = _unpack(theta, model)
        # loss after the update, and the gradient for the next epoch
        mse, grad = _loss_grad(current, X, T)
        val_mse = mse if val is None else _mse(current, Xv, Tv)
        if not (math.isfinite(mse) and math.isfinite(val_mse)):
            raise DivergenceError(epoch - 1)
        report.epochs_run = epoch
        report.train_mse_history.append(mse)
        report.val_mse_history.append(val_mse)
        if stopper.update(epoch, val_mse, theta):
            report.stop_reason = "early_stop"
            break
    return _finish(model, theta, stopper, report)


def train_lm(
    model: MlpModel, train: Data, val: Data | None, cfg: TrainConfig
) -> tuple[MlpModel, TrainReport]:
    """Levenberg-Marquardt on the training sum of squares.

    Each epoch solves ``(J^T J + lambda I) step = -J^T r`` by Cholesky,
    retrying with larger damping until the sum of squares decreases. Only
    accepted steps count as epochs, so ``train_mse_history`` is strictly
    decreasing. Training also ends when damping exceeds ``lambda_max``.
    """
    X, T, Xv, Tv = _prepare(model, train, val, cfg, "lm")
    theta = model.params()
    report = TrainReport("lm")
    stopper = _EarlyStopper(cfg.patience)
    stopper.update(0, _mse(model, Xv, Tv), theta)
    lam = cfg.lambda0
    eye = np.eye(len(theta))

    current = model
    r, J = _residual_jacobian(current, X, T)
    sse = float(r @ r)
    for epoch in range(1, cfg.max_epochs + 1):
        g = J.T @ r
        if np.linalg.norm(2.0 * g / r.size) < cfg.grad_tol:
            report.stop_reason = "grad_tol"
            break
        A = J.T @ J
        accepted = False
        factorized = False
        while lam <= cfg.lambda_max:
            try:
                step = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A + lam * eye), -g)
                factorized = True
            except (np.linalg.LinAlgError, ValueError):
                lam *= cfg.lambda_up
                continue
            cand_theta = theta + step
            cand = _unpack(cand_theta, model) if np.isfinite(cand_theta).all() else None
            if cand is not None:
                cand_r, cand_J = _residual_jacobian(cand, X, T)
                cand_sse = float(cand_r @ cand_r)
                if cand_sse < sse:
                    theta, current, r, J, sse = cand_theta, cand, cand_r, cand_J, cand_sse
                    lam = max(lam * cfg.lambda_down, 1e-12)
                    accepted = True
                    break
            report.rejected_steps += 1
            lam *= cfg.lambda_up
        if not accepted:
            if not factorized:
                raise TrainingError(f"Cholesky factorization failed for every damping up to {cfg.lambda_max:g}")
            report.stop_reason = "lambda_max"
            break
        val_mse = _mse(current, Xv, Tv)
        report.epochs_run = epoch
        report.train_mse_history.append(sse / r.size)
        report.val_mse_history.append(val_mse)
        report.lambda_history.append(lam)
        if stopper.update(epoch, val_mse, theta):
            report.stop_reason = "early_stop"
            break
    return _finish(model, theta, stopper, report)


def train(model: MlpModel, train_set: Data, val: Data | None, cfg: TrainConfig):
    fn = train_lm if cfg.algorithm == "lm" else train_backprop
    return fn(model, train_set, val, cfg)


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate_binary(model: MlpModel, data: Data, threshold: float = 0.5) -> dict:
    """Confusion counts and rates; outputs equal to ``threshold`` are predicted 1.

    Precision (recall) is reported as 0.0 when there are no predicted (actual)
    positives. ``auc`` is ``None`` when only one class is present.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    X, T = _arrays(data, model)
    scores = _forward(model, X)[1][:, 0]
    truth = T[:, 0] == 1.0
    pred = scores >= threshold
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    tn = int(np.sum(~pred & ~truth))
    fn = int(np.sum(~pred & truth))
    n = len(truth)
    both = 0 < truth.sum() < n
    return {
        "n": n,
        "threshold": threshold,
        "accuracy": (tp + tn) / n,
        "precision": tp / (tp + fp) if tp + fp else 0.0,
        "recall": tp / (tp + fn) if tp + fn else 0.0,
        "tp": tp,
        "fp": fp,
        "tn": tn,
        "fn": fn,
        "auc": roc_auc(scores, truth) if both else None,
    }


def model_to_text(model: MlpModel) -> str:
    lines = [f"mlp {model.n_in} {model.n_hidden} {model.n_out} {model.activation}"]
    for name in ("W1", "b1", "W2", "b2"):
        lines.append(name)
        for row in np.atleast_2d(getattr(model, name)):
            lines.append(" ".join(format_number(v) for v in row.tolist()))
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> MlpModel:
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    head = lines[0]
    if head[0] != "mlp" or len(head) != 5:
        raise ValueError("model text must start with 'mlp <n_in> <n_hidden> <n_out> <activation>'")
    n_in, n_hidden, n_out = (int(v) for v in head[1:4])
    if head[4] != "logistic":
        raise ValueError(f"unsupported activation {head[4]!r}")
    shapes = {"W1": (n_hidden, n_in), "b1": (1, n_hidden), "W2": (n_out, n_hidden), "b2": (1, n_out)}
    arrays = {}
    i = 1
    for name, (rows, cols) in shapes.items():
        if lines[i] != [name]:
            raise ValueError(f"expected section {name!r}, got {' '.join(lines[i])!r}")
        block = np.array(lines[i + 1 : i + 1 + rows], dtype=np.float64)
        if block.shape != (rows, cols):
            raise ValueError(f"section {name} has shape {block.shape}, expected {(rows, cols)}")
        arrays[name] = block if name.startswith("W") else block[0]
        i += 1 + rows
    return MlpModel(**arrays)


def save_model(model: MlpModel, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(model_to_text(model))


def load_model(path: str | os.PathLike) -> MlpModel:
    with open(path, encoding="ascii") as fh:
        return model_from_text(fh.read())
