"""Small numpy regressors trained with Adam under explicit batch orders."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError, TrainingDivergenceError
from ..sequencing import BatchSchedule, Permutation

LINEAR = "linear"
MLP = "mlp"


@dataclass(frozen=True)
class ModelSpec:
    kind: str = MLP
    hidden_widths: tuple = (32,)

    def __post_init__(self):
        if self.kind not in (LINEAR, MLP):
            raise InputError(f"model kind must be 'linear' or 'mlp', got {self.kind!r}")
        widths = tuple(int(h) for h in self.hidden_widths)
        if self.kind == MLP and (not widths or min(widths) < 1):
            raise InputError("mlp needs at least one positive hidden width")
        object.__setattr__(self, "hidden_widths", widths if self.kind == MLP else ())

    @property
    def activation(self) -> str:
        return "relu"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 20
    batch_size: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise InputError("learning_rate, epochs and batch_size must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InputError("Adam decay rates must lie in [0, 1)")


class Regressor:
    """Fully connected ReLU network (or affine map) with scalar output.

    Weights use He-uniform initialisation; biases start at zero.
    """

    def __init__(self, spec: ModelSpec, d: int, seed):
        self.spec = spec
        rng = np.random.default_rng(seed)
        sizes = [d, *spec.hidden_widths, 1]
        self.params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)
            self.params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))
        # The output layer of an affine model starts at zero: least squares is convex.
        if spec.kind == LINEAR:
            self.params[0][:] = 0.0

    def _forward(self, X):
        acts = [X]
        h = X
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n_layers - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return acts

    def predict(self, X) -> np.ndarray:
        return self._forward(np.asarray(X, dtype=np.float64))[-1][:, 0]

    def loss_and_grads(self, X, y):
        """Mean squared error and its gradient for every parameter."""
        acts = self._forward(X)
        resid = acts[-1][:, 0] - y
        loss = float(np.mean(resid**2))
        delta = (2.0 / len(y)) * resid[:, None]
        grads = [None] * len(self.params)
        for i in range(len(self.params) // 2 - 1, -1, -1):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.params[2 * i].T) * (acts[i] > 0)
        return loss, grads


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params, grads):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def regression_metrics(y_true, y_pred) -> dict:
    err = np.asarray(y_pred, dtype=np.float64) - np.asarray(y_true, dtype=np.float64)
    return {"mae": float(np.mean(np.abs(err))), "rmse": float(np.sqrt(np.mean(err**2)))}


@dataclass
class TrainResult:
    model: Regressor
    batch_losses: np.ndarray
    id_mae: float
    id_rmse: float
    ood_mae: float
    ood_rmse: float


def train_with_schedule(spec: ModelSpec, data, cfg: TrainConfig, schedule) -> TrainResult:
    """Train a fresh model, epoch ``e`` visiting batches in ``schedule[e]`` order.

    ``data`` needs ``train``, ``val`` and ``ood`` splits with ``X``/``y``.
    ID metrics are on the validation split. Raises TrainingDivergenceError
    on a non-finite loss.
    """
    X, y = data.train.X, data.train.y
    n, d = X.shape
    if len(schedule) < cfg.epochs:
        raise InputError(f"schedule has {len(schedule)} permutations, need {cfg.epochs}")
    batches = BatchSchedule(n, cfg.batch_size)
    model = Regressor(spec, d, cfg.seed)
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    losses = np.empty(cfg.epochs * batches.step_count)
    k = 0
    for epoch in range(cfg.epochs):
        perm = schedule[epoch]
        order = perm.order if isinstance(perm, Permutation) else np.asarray(perm)
        if len(order) != n:
            raise InputError(f"schedule entry {epoch} has length {len(order)}, need {n}")
        for step in range(1, batches.step_count + 1):
            rows = order[batches.batch_slice(step)]
            loss, grads = model.loss_and_grads(X[rows], y[rows])
            if not np.isfinite(loss):
                raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}, step {step}", epoch, step)
            opt.step(model.params, grads)
            losses[k] = loss
            k += 1
    id_m = regression_metrics(data.val.y, model.predict(data.val.X))
    ood_m = regression_metrics(data.ood.y, model.predict(data.ood.X))
    return TrainResult(model, losses, id_m["mae"], id_m["rmse"], ood_m["mae"], ood_m["rmse"])
