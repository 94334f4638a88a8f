"""Single-hidden-layer perceptron regressor trained by mini-batch SGD.

``yhat = w2 . tanh(X W1 + b1) + b2`` with loss ``0.5 * mean((yhat - y)^2)``.
Inputs are expected to be normalized already; targets stay on their raw
scale.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, DataError, TrainingError
from .gbt import contiguous_folds


@dataclass
class MlpTrainingConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.01
    decay: float = 0.99
    patience: int = 10
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("invalid MLP training config")
        if not 0 < self.decay <= 1 or not 0 <= self.validation_fraction < 1:
            raise ConfigError("decay must be in (0, 1] and validation_fraction in [0, 1)")


@dataclass
class MlpModel:
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    activation: str = "tanh"
    validation_rmse: float = float("nan")
    epochs_run: int = 0

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.W1.shape[1]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DataError(f"expected {self.input_dim} features, got shape {X.shape}")
        return np.tanh(X @ self.W1 + self.b1) @ self.w2 + self.b2

    def params(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.w2, [self.b2]])

    def with_params(self, theta: np.ndarray) -> "MlpModel":
        d, h = self.W1.shape
        W1 = theta[: d * h].reshape(d, h)
        b1 = theta[d * h : d * h + h]
        w2 = theta[d * h + h : d * h + 2 * h]
        return MlpModel(W1.copy(), b1.copy(), w2.copy(), float(theta[-1]), self.activation,
                        self.validation_rmse, self.epochs_run)

    def to_dict(self) -> dict:
        return {"W1": self.W1.tolist(), "b1": self.b1.tolist(), "w2": self.w2.tolist(),
                "b2": self.b2, "activation": self.activation,
                "validation_rmse": self.validation_rmse, "epochs_run": self.epochs_run}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        return cls(np.array(d["W1"], dtype=float).reshape(-1, len(d["b1"])),
                   np.array(d["b1"], dtype=float), np.array(d["w2"], dtype=float),
                   float(d["b2"]), d.get("activation", "tanh"),
                   float(d.get("validation_rmse", float("nan"))), d.get("epochs_run", 0))


def init_mlp(input_dim: int, hidden_size: int, rng: np.random.Generator) -> MlpModel:
    """Uniform weights in +-1/sqrt(fan_in), zero biases."""
    if hidden_size < 1 or input_dim < 1:
        raise ConfigError("input_dim and hidden_size must be >= 1")
    a1, a2 = 1 / np.sqrt(input_dim), 1 / np.sqrt(hidden_size)
    return MlpModel(rng.uniform(-a1, a1, (input_dim, hidden_size)), np.zeros(hidden_size),
                    rng.uniform(-a2, a2, hidden_size), 0.0)


def _backprop(W1, b1, w2, b2, X, y):
    n = len(y)
    z = np.tanh(X @ W1 + b1)
    r = z @ w2 + b2 - y
    dz = np.outer(r, w2) * (1 - z * z) / n
    return 0.5 * (r @ r) / n, X.T @ dz, dz.sum(axis=0), z.T @ r / n, r.sum() / n


def loss_and_grad(model: MlpModel, X: np.ndarray, y: np.ndarray):
    """Loss and gradient as a flat vector in :meth:`MlpModel.params` order."""
    loss, gW1, gb1, gw2, gb2 = _backprop(model.W1, model.b1, model.w2, model.b2, X, y)
    return loss, np.concatenate([gW1.ravel(), gb1, gw2, [gb2]])


def _rmse(model, X, y) -> float:
    return float(np.sqrt(np.mean((model.predict(X) - y) ** 2)))


def mlp_fit(X, y, hidden_size: int, config: MlpTrainingConfig | None = None,
            seed: int = 0) -> MlpModel:
    """SGD with early stopping on the last ``validation_fraction`` of rows."""
    cfg = config or MlpTrainingConfig()
    X, y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
    if len(y) == 0:
        raise DataError("cannot fit on an empty training set")
    rng = np.random.default_rng(seed)
    model = init_mlp(X.shape[1], hidden_size, rng)
    n_val = int(round(cfg.validation_fraction * len(y))) if len(y) >= 10 else 0
    Xt, yt = X[: len(y) - n_val], y[: len(y) - n_val]
    Xv, yv = (X[len(y) - n_val :], y[len(y) - n_val :]) if n_val else (Xt, yt)

    W1, b1, w2, b2 = model.W1.copy(), model.b1.copy(), model.w2.copy(), model.b2
    best = (W1.copy(), b1.copy(), w2.copy(), b2)
    best_err = _rmse(model, Xv, yv)
    lr, stale, epochs_run = cfg.learning_rate, 0, 0
    # overflow shows up as non-finite weights and is reported as a TrainingError
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(yt))
            for i in range(0, len(order), cfg.batch_size):
                b = order[i : i + cfg.batch_size]
                _, gW1, gb1, gw2, gb2 = _backprop(W1, b1, w2, b2, Xt[b], yt[b])
                W1 -= lr * gW1
                b1 -= lr * gb1
                w2 -= lr * gw2
                b2 -= lr * gb2
            if not (np.all(np.isfinite(W1)) and np.all(np.isfinite(w2)) and np.isfinite(b2)):
                raise TrainingError(f"MLP training diverged at epoch {epoch}; "
                                    f"try a smaller learning rate than {cfg.learning_rate}")
            epochs_run = epoch + 1
            err = _rmse(MlpModel(W1, b1, w2, b2), Xv, yv)
            if err < best_err:
                best, best_err, stale = (W1.copy(), b1.copy(), w2.copy(), b2), err, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
            lr *= cfg.decay
    return MlpModel(*best, validation_rmse=best_err, epochs_run=epochs_run)


@dataclass
class MlpEnsemble:
    members: list
    validation_errors: list = field(default_factory=list)
    hidden_size: int = 0
    cv_scores: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        return np.mean([m.predict(X) for m in self.members], axis=0)

    def to_dict(self) -> dict:
        return {"members": [m.to_dict() for m in self.members],
                "validation_errors": list(self.validation_errors),
                "hidden_size": self.hidden_size,
                "cv_scores": {str(k): v for k, v in self.cv_scores.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpEnsemble":
        return cls([MlpModel.from_dict(m) for m in d["members"]], d["validation_errors"],
                   d["hidden_size"], {int(k): v for k, v in d.get("cv_scores", {}).items()})


def mlp_select_size(X, y, candidate_sizes, folds: int = 10,
                    config: MlpTrainingConfig | None = None, seed: int = 0):
    """Hidden size with the best mean contiguous-fold validation RMSE (ties: smaller)."""
    sizes = sorted(set(int(s) for s in candidate_sizes))
    if not sizes:
        raise ConfigError("no candidate hidden sizes")
    if len(sizes) == 1:
        return sizes[0], {}
    X, y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
    blocks = contiguous_folds(len(y), folds)
    scores = {}
    for size in sizes:
        errs = []
        for k, val in enumerate(blocks):
            train = np.concatenate([b for i, b in enumerate(blocks) if i != k])
            m = mlp_fit(X[train], y[train], size, config, seed + k)
            errs.append(_rmse(m, X[val], y[val]))
        scores[size] = float(np.mean(errs))
    best = min(sizes, key=lambda s: (scores[s], s))
    return best, scores


def mlp_ensemble(X, y, hidden_size: int, config: MlpTrainingConfig | None = None,
                 seed: int = 0, restarts: int = 10, keep: int = 5) -> MlpEnsemble:
    """Train ``restarts`` seeded networks and keep the ``keep`` best on validation."""
    if keep > restarts:
        raise ConfigError("cannot keep more members than restarts")
    seeds = np.random.SeedSequence(seed).generate_state(restarts)
    models = [mlp_fit(X, y, hidden_size, config, int(s)) for s in seeds]
    order = sorted(range(restarts), key=lambda i: (models[i].validation_rmse, i))[:keep]
    chosen = [models[i] for i in order]
    return MlpEnsemble(chosen, [m.validation_rmse for m in chosen], hidden_size)


def mlp_select_and_ensemble(X, y, candidate_sizes, folds: int = 10,
                            config: MlpTrainingConfig | None = None, seed: int = 0,
                            restarts: int = 10, keep: int = 5) -> MlpEnsemble:
    size, scores = mlp_select_size(X, y, candidate_sizes, folds, config, seed)
    ens = mlp_ensemble(X, y, size, config, seed, restarts, keep)
    ens.cv_scores = scores
    return ens


def training_config_from_dict(d: dict | None) -> MlpTrainingConfig:
    return MlpTrainingConfig(**(d or {}))


def training_config_to_dict(cfg: MlpTrainingConfig) -> dict:
    return asdict(cfg)
