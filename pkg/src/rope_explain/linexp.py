"""Robust linear / logistic explanations trained by adversarial SGD."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .shiftset import ShiftSet, sample_shifts, worst_case_shifts

FORMAT_VERSION = 1
LINKS = ("identity", "logistic")
LOSSES = ("logistic_loss", "squared")


class TrainingDivergedError(RuntimeError):
    pass


class BlackBoxQueryError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearExplanation:
    weights: np.ndarray
    bias: float
    link: str = "logistic"
    threshold: float | None = None
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)) or not math.isfinite(self.bias):
            raise ValueError("explanation parameters must be finite")
        if self.link not in LINKS:
            raise ValueError(f"unknown link {self.link!r}")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))
        if self.threshold is None:
            object.__setattr__(self, "threshold", 0.5 if self.link == "logistic" else 0.0)
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(f"x{i}" for i in range(w.shape[0])))

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    has_score = True

    def _check(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"input has {X.shape[1]} features, explanation expects {self.dim}")
        return X

    def decision(self, X) -> np.ndarray:
        return self._check(X) @ self.weights + self.bias

    def score(self, X) -> np.ndarray:
        z = self.decision(X)
        return expit(z) if self.link == "logistic" else z

    def predict_batch(self, X) -> np.ndarray:
        # ties at the threshold go to label 1
        return (self.score(X) >= self.threshold).astype(int)

    batch = predict_batch

    def predict(self, x) -> int:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("predict takes a single vector; use predict_batch for matrices")
        return int(self.predict_batch(x[None, :])[0])

    @property
    def params(self) -> np.ndarray:
        """Concatenated (weights, bias)."""
        return np.append(self.weights, self.bias)

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "type": "linear",
            "link": self.link,
            "threshold": self.threshold,
            "bias": self.bias,
            "weights": self.weights.tolist(),
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LinearExplanation":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported format_version {doc.get('format_version')!r}")
        return cls(np.asarray(doc["weights"], dtype=float), doc["bias"], doc["link"],
                   doc["threshold"], tuple(doc.get("feature_names", ())))

    def dumps(self) -> str:
        return json.dumps(self.to_json())


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    epochs: int = 30
    learning_rate: float = 0.1
    batch_size: int = 32
    l2_penalty: float = 1e-4
    loss: str = "logistic_loss"

    def __post_init__(self):
        if self.epochs < 1 and self.epochs != 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be nonnegative")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")

    @property
    def link(self) -> str:
        return "logistic" if self.loss == "logistic_loss" else "identity"

    def to_json(self) -> dict:
        return {"seed": self.seed, "epochs": self.epochs, "learning_rate": self.learning_rate,
                "batch_size": self.batch_size, "l2_penalty": self.l2_penalty, "loss": self.loss}


# --------------------------------------------------------------------------
# loss pieces; y is the 0/1 black-box label

def pointwise_loss(z: np.ndarray, y: np.ndarray, link: str) -> np.ndarray:
    if link == "logistic":
        return -(y * log_expit(z) + (1 - y) * log_expit(-z))
    t = 2.0 * y - 1.0
    return (z - t) ** 2


def loss_slope(z: np.ndarray, y: np.ndarray, link: str) -> np.ndarray:
    """d loss / d z."""
    if link == "logistic":
        return expit(z) - y
    return 2.0 * (z - (2.0 * y - 1.0))


def input_gradients(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, link: str) -> np.ndarray:
    """Per-row gradient of the loss w.r.t. the input, label held fixed."""
    z = X @ w + b
    return loss_slope(z, y, link)[:, None] * w[None, :]


def param_gradient(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, link: str,
                   l2: float = 0.0) -> tuple[np.ndarray, float]:
    """Mean-loss gradient w.r.t. (weights, bias) plus the ridge term l2/2 ||w||^2."""
    z = X @ w + b
    s = loss_slope(z, y, link)
    return X.T @ s / X.shape[0] + l2 * w, float(s.mean())


def mean_loss(w, b, X, y, link, l2: float = 0.0) -> float:
    return float(pointwise_loss(X @ w + b, y, link).mean() + 0.5 * l2 * np.dot(w, w))


def _binary_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("linear explanations need 0/1 black-box labels")
    return labels.astype(float)


def _query(B, X: np.ndarray, rows: np.ndarray) -> np.ndarray:
    try:
        return np.asarray(B.batch(X))
    except Exception as exc:
        raise BlackBoxQueryError(
            f"black-box query failed for sample indices {rows.tolist()[:10]}"
            f"{'...' if len(rows) > 10 else ''}: {exc}") from exc


def _rows(data) -> np.ndarray:
    return np.atleast_2d(np.asarray(getattr(data, "X", data), dtype=float))


def _names(data, n) -> tuple[str, ...]:
    names = getattr(data, "feature_names", None)
    return tuple(names) if names is not None else tuple(f"x{i}" for i in range(n))


def train_robust_linear(data, B, S: ShiftSet, cfg: TrainConfig) -> LinearExplanation:
    """Adversarial minibatch SGD on the linearized worst-case loss.

    Per sample: input gradient with the black-box label frozen at B(x),
    greedy worst-case shift d*, re-query B at x + d*, and a parameter step
    on the loss at (x + d*, B(x + d*)).
    """
    X = _rows(data)
    N, n = X.shape
    if N == 0:
        raise ValueError("training data is empty")
    if S.dim != n:
        raise ValueError(f"shift set dim {S.dim} does not match data dim {n}")
    link = cfg.link
    all_rows = np.arange(N)
    y = _binary_labels(_query(B, X, all_rows))
    rng = np.random.default_rng(cfg.seed)
    w = np.zeros(n)
    b = 0.0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(N)
        for start in range(0, N, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            xb, yb = X[idx], y[idx]
            if not S.is_trivial:
                delta = worst_case_shifts(input_gradients(w, b, xb, yb, link), S)
                moved = np.any(delta != 0, axis=1)
                if moved.any():
                    xb = xb + delta
                    yb = yb.copy()
                    yb[moved] = _binary_labels(_query(B, xb[moved], idx[moved]))
            gw, gb = param_gradient(w, b, xb, yb, link, cfg.l2_penalty)
            w = w - cfg.learning_rate * gw
            b = b - cfg.learning_rate * gb
        if not (np.all(np.isfinite(w)) and np.isfinite(b)):
            raise TrainingDivergedError(
                f"parameters became non-finite in epoch {epoch} "
                f"(learning_rate={cfg.learning_rate}, loss={cfg.loss})")
    return LinearExplanation(w, b, link, None, _names(data, n))


def robust_pointwise_losses(E: LinearExplanation, data, B, S: ShiftSet, mode="linearized") -> np.ndarray:
    """Per-point worst-case loss over {0} plus the probed shifts.

    ``mode`` is ``"linearized"`` (the greedy shift from the input gradient)
    or ``("sampled", k, seed)`` (k shifts from ``sample_shifts``).
    """
    X = _rows(data)
    w, b, link = E.weights, E.bias, E.link
    y = _binary_labels(B.batch(X))
    worst = pointwise_loss(X @ w + b, y, link)
    if mode == "linearized":
        shifts = [worst_case_shifts(input_gradients(w, b, X, y, link), S)]
    elif isinstance(mode, tuple) and mode[0] == "sampled":
        _, k, seed = mode
        shifts = [np.broadcast_to(d.delta, X.shape)
                  for d in sample_shifts(S, k, np.random.default_rng(seed))]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    for delta in shifts:
        Xs = X + delta
        ys = _binary_labels(B.batch(Xs))
        worst = np.maximum(worst, pointwise_loss(Xs @ w + b, ys, link))
    return worst


def robust_empirical_loss(E: LinearExplanation, data, B, S: ShiftSet, mode="linearized") -> float:
    return float(robust_pointwise_losses(E, data, B, S, mode).mean())


def plain_empirical_loss(E: LinearExplanation, data, B) -> float:
    X = _rows(data)
    y = _binary_labels(B.batch(X))
    return float(pointwise_loss(E.decision(X), y, E.link).mean())
