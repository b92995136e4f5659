"""Black boxes behind one query contract.

Every handle answers ``batch(X) -> labels`` and ``query(x) -> label`` on any
finite vector of the declared dimension; some also expose ``score(X)`` in
[0, 1]. Built-ins are immutable after training. ``ExternalBlackBox`` talks
newline-delimited JSON to a child process.
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .linexp import LinearExplanation, TrainConfig, TrainingDivergedError, train_robust_linear
from .shiftset import ShiftSet

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 30.0


class BlackBox:
    kind: str = "abstract"
    has_score: bool = False

    def __init__(self, n_features: int, labels: Sequence[int] = (0, 1)):
        self.n_features = int(n_features)
        self.labels = tuple(labels)

    def _check(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"black box expects {self.n_features} features, got {X.shape[1]}")
        return X

    def batch(self, X) -> np.ndarray:
        raise NotImplementedError

    def query(self, x) -> int:
        return int(self.batch(np.asarray(x, dtype=float)[None, :])[0])

    def score(self, X) -> np.ndarray:
        raise TypeError(f"{self.kind} black box does not expose scores")

    def __call__(self, X) -> np.ndarray:
        return self.batch(X)


class _ScoredBinary(BlackBox):
    has_score = True

    def batch(self, X) -> np.ndarray:
        return (self.score(X) >= 0.5).astype(int)


class CoordinateThresholdBlackBox(BlackBox):
    """y = 1[x_j >= threshold]."""

    kind = "threshold"

    def __init__(self, n_features: int, feature: int, threshold: float = 0.0):
        super().__init__(n_features)
        if not 0 <= feature < n_features:
            raise ValueError(f"feature {feature} out of range")
        self.feature = feature
        self.threshold = float(threshold)

    def batch(self, X) -> np.ndarray:
        return (self._check(X)[:, self.feature] >= self.threshold).astype(int)


# --------------------------------------------------------------------------
# MLP

class MLPBlackBox(_ScoredBinary):
    kind = "mlp"

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        super().__init__(weights[0].shape[0])
        self.weights = [w.copy() for w in weights]
        self.biases = [b.copy() for b in biases]
        for a in self.weights + self.biases:
            a.flags.writeable = False

    def logits(self, X) -> np.ndarray:
        h = self._check(X)
        for W, c in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W + c)
        return (h @ self.weights[-1] + self.biases[-1])[:, 0]

    def score(self, X) -> np.ndarray:
        return expit(self.logits(X))


def _mlp_forward(params, X):
    Ws, bs = params
    acts = [X]
    h = X
    for W, c in zip(Ws[:-1], bs[:-1]):
        h = np.tanh(h @ W + c)
        acts.append(h)
    return acts, (h @ Ws[-1] + bs[-1])[:, 0]


def train_mlp(data, labels, layers: Sequence[int] = (16, 16, 16, 16, 16), seed: int = 0,
              epochs: int = 50, lr: float = 0.1, batch_size: int = 32) -> MLPBlackBox:
    """Fully connected tanh network with a logistic output, plain minibatch SGD."""
    X = np.atleast_2d(np.asarray(getattr(data, "X", data), dtype=float))
    y = np.asarray(labels, dtype=float)
    rng = np.random.default_rng(seed)
    sizes = [X.shape[1], *layers, 1]
    Ws = [rng.normal(0.0, np.sqrt(1.0 / a), size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    bs = [np.zeros(b) for b in sizes[1:]]
    N = X.shape[0]
    for epoch in range(epochs):
        perm = rng.permutation(N)
        for start in range(0, N, batch_size):
            idx = perm[start:start + batch_size]
            acts, z = _mlp_forward((Ws, bs), X[idx])
            # d(mean BCE)/dz
            g = ((expit(z) - y[idx]) / len(idx))[:, None]
            for layer in range(len(Ws) - 1, -1, -1):
                a = acts[layer]
                gW = a.T @ g
                gb = g.sum(axis=0)
                if layer > 0:
                    g = (g @ Ws[layer].T) * (1.0 - a ** 2)
                Ws[layer] = Ws[layer] - lr * gW
                bs[layer] = bs[layer] - lr * gb
        if not all(np.all(np.isfinite(W)) for W in Ws):
            raise TrainingDivergedError(f"MLP weights became non-finite in epoch {epoch} (lr={lr})")
    return MLPBlackBox(Ws, bs)


# --------------------------------------------------------------------------
# gradient-boosted stumps

@dataclass(frozen=True)
class Stump:
    feature: int
    threshold: float
    left: float
    right: float


class StumpBoostBlackBox(_ScoredBinary):
    kind = "gb_stumps"

    def __init__(self, n_features: int, base: float, stumps: Sequence[Stump], shrinkage: float):
        super().__init__(n_features)
        self.base = float(base)
        self.stumps = tuple(stumps)
        self.shrinkage = shrinkage

    def logits(self, X) -> np.ndarray:
        X = self._check(X)
        F = np.full(X.shape[0], self.base)
        for s in self.stumps:
            F += self.shrinkage * np.where(X[:, s.feature] <= s.threshold, s.left, s.right)
        return F

    def score(self, X) -> np.ndarray:
        return expit(self.logits(X))


def _best_stump(X: np.ndarray, r: np.ndarray, h: np.ndarray) -> Stump | None:
    """Least-squares stump on residuals r, Newton leaf values sum(r)/sum(h)."""
    best, best_gain = None, 0.0
    total = r.sum()
    n = len(r)
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, rs, hs = X[order, j], r[order], h[order]
        cr, ch = np.cumsum(rs), np.cumsum(hs)
        # split after position i where the value changes
        cut = np.nonzero(xs[1:] > xs[:-1])[0]
        if cut.size == 0:
            continue
        nl = cut + 1.0
        sl = cr[cut]
        sr = total - sl
        gain = sl ** 2 / nl + sr ** 2 / (n - nl) - total ** 2 / n
        i = int(np.argmax(gain))
        if gain[i] > best_gain + 1e-12:
            c = cut[i]
            hl, hr = ch[c], ch[-1] - ch[c]
            best_gain = gain[i]
            best = Stump(j, 0.5 * (xs[c] + xs[c + 1]),
                         sl[i] / max(hl, 1e-12), sr[i] / max(hr, 1e-12))
    return best


def train_gb_stumps(data, labels, rounds: int = 100, seed: int = 0,
                    shrinkage: float = 0.1) -> StumpBoostBlackBox:
    """Gradient boosting with logistic loss and depth-1 regression trees.

    ``seed`` is accepted for interface uniformity; fitting is deterministic.
    """
    X = np.atleast_2d(np.asarray(getattr(data, "X", data), dtype=float))
    y = np.asarray(labels, dtype=float)
    p = np.clip(y.mean(), 1e-6, 1 - 1e-6)
    base = float(np.log(p / (1 - p)))
    F = np.full(len(y), base)
    stumps = []
    for _ in range(rounds):
        prob = expit(F)
        s = _best_stump(X, y - prob, prob * (1 - prob))
        if s is None:
            break
        stumps.append(s)
        F += shrinkage * np.where(X[:, s.feature] <= s.threshold, s.left, s.right)
    return StumpBoostBlackBox(X.shape[1], base, stumps, shrinkage)


def logistic_train_loss(bb: StumpBoostBlackBox | MLPBlackBox, X, y) -> float:
    p = np.clip(bb.score(X), 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


# --------------------------------------------------------------------------
# interpretable models as black boxes

class InterpretableBlackBox(BlackBox):
    """An explanation-family model (linear, decision set, or clustered) used as a black box."""

    def __init__(self, explanation, n_features: int | None = None):
        from .multiexp import ClusteredExplanation
        from .ruleexp import DecisionSet

        self.explanation = explanation
        if isinstance(explanation, LinearExplanation):
            kind, dim, labels = "logistic", explanation.dim, (0, 1)
        elif isinstance(explanation, DecisionSet):
            kind, dim = "decision_set", explanation.dim
            labels = tuple(sorted({r.label for r in explanation.rules} | {explanation.default_label}))
        elif isinstance(explanation, ClusteredExplanation):
            linear = all(isinstance(e.explanation, LinearExplanation) for e in explanation.entries)
            kind = "multiple_lr" if linear else "multiple_ds"
            dim, labels = explanation.representatives.shape[1], (0, 1)
        else:
            raise TypeError(f"cannot wrap {type(explanation).__name__} as a black box")
        super().__init__(n_features if n_features is not None else dim, labels)
        self.kind = kind
        self.has_score = bool(getattr(explanation, "has_score", False))

    def batch(self, X) -> np.ndarray:
        return np.asarray(self.explanation.predict_batch(self._check(X)))

    def score(self, X) -> np.ndarray:
        if not self.has_score:
            return super().score(X)
        return self.explanation.score(self._check(X))


def wrap_interpretable(E, n_features: int | None = None) -> InterpretableBlackBox:
    return InterpretableBlackBox(E, n_features)


def train_logistic(data, labels, seed: int, epochs: int = 30, lr: float = 0.1) -> InterpretableBlackBox:
    """Plain logistic regression on given labels, wrapped as a black box."""
    X = np.atleast_2d(np.asarray(getattr(data, "X", data), dtype=float))
    lookup = _LabelLookup(X, labels)
    cfg = TrainConfig(seed=seed, epochs=epochs, learning_rate=lr)
    E = train_robust_linear(data, lookup, ShiftSet(0.0, 0.0, X.shape[1]), cfg)
    return wrap_interpretable(E)


class _LabelLookup(BlackBox):
    """Answers only on the training rows; used to fit models on given labels."""

    kind = "lookup"

    def __init__(self, X, labels):
        super().__init__(X.shape[1], tuple(sorted(set(np.asarray(labels).tolist()))))
        self._table = {row.tobytes(): int(l) for row, l in zip(np.asarray(X, dtype=float), labels)}

    def batch(self, X) -> np.ndarray:
        X = self._check(X)
        try:
            return np.array([self._table[row.tobytes()] for row in X], dtype=int)
        except KeyError:
            raise KeyError("label lookup queried off the training rows") from None


# --------------------------------------------------------------------------
# external subprocess

class ProtocolError(RuntimeError):
    """Base class for external black-box protocol failures."""

    def __init__(self, message: str, offending=None):
        if offending is not None:
            shown = repr(offending)
            message = f"{message}: {shown[:200]}{'...' if len(shown) > 200 else ''}"
        super().__init__(message)
        self.offending = offending


class MalformedReplyError(ProtocolError):
    pass


class IdMismatchError(ProtocolError):
    pass


class ChildExitedError(ProtocolError):
    pass


class RequestTimeoutError(ProtocolError):
    pass


_EOF = object()


class ExternalBlackBox(BlackBox):
    kind = "external"

    def __init__(self, command: Sequence[str], timeout: float = DEFAULT_TIMEOUT):
        self.command = list(command)
        self.timeout = timeout
        self._lock = threading.Lock()
        self._next_id = 0
        self._failure: ProtocolError | None = None
        self._proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, encoding="utf-8", bufsize=1)
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        try:
            self._send({"type": "hello", "protocol": PROTOCOL_VERSION})
            msg = self._receive()
            if msg.get("type") != "ready" or not isinstance(msg.get("n_features"), int) \
                    or not isinstance(msg.get("labels"), list):
                raise MalformedReplyError("bad handshake reply", msg)
        except Exception:
            self.close()
            raise
        super().__init__(msg["n_features"], msg["labels"])

    def _pump(self):
        try:
            for line in self._proc.stdout:
                self._lines.put(line)
        except (OSError, ValueError):
            pass  # stream closed under us by close()
        self._lines.put(_EOF)

    def _send(self, msg: dict):
        try:
            self._proc.stdin.write(json.dumps(msg) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise ChildExitedError(f"child exited (code {self._proc.poll()}) while sending", msg) from exc

    def _receive(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise RequestTimeoutError(f"no reply within {self.timeout} s") from None
        if line is _EOF:
            raise ChildExitedError(f"child exited (code {self._proc.wait()})")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            raise MalformedReplyError("reply is not JSON", line.rstrip("\n")) from None
        if not isinstance(msg, dict):
            raise MalformedReplyError("reply is not a JSON object", msg)
        return msg

    def _request(self, msg: dict, reply_type: str, field: str):
        # after any protocol failure the stream may be out of step: refuse further use
        with self._lock:
            if self._failure is not None:
                raise type(self._failure)(f"handle unusable after earlier failure ({self._failure})")
            try:
                rid = self._next_id
                self._next_id += 1
                self._send({**msg, "id": rid})
                reply = self._receive()
                if reply.get("type") != reply_type or field not in reply:
                    raise MalformedReplyError(f"expected a {reply_type!r} reply", reply)
                if reply.get("id") != rid:
                    raise IdMismatchError(f"reply id {reply.get('id')!r} does not match request id {rid}", reply)
            except ProtocolError as exc:
                self._failure = exc
                raise
        return reply[field]

    def query(self, x) -> int:
        x = self._check(x)[0]
        y = self._request({"type": "predict", "x": x.tolist()}, "prediction", "y")
        if isinstance(y, bool) or not isinstance(y, int):
            raise MalformedReplyError("label is not an integer", y)
        return y

    def batch(self, X) -> np.ndarray:
        X = self._check(X)
        if X.shape[0] == 0:
            return np.zeros(0, dtype=int)
        ys = self._request({"type": "predict_batch", "xs": X.tolist()}, "predictions", "ys")
        if not isinstance(ys, list) or len(ys) != X.shape[0] \
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in ys):
            raise MalformedReplyError("predictions do not match the batch", ys)
        return np.asarray(ys, dtype=int)

    def close(self):
        proc = self._proc
        if proc.poll() is None:
            try:
                proc.stdin.write(json.dumps({"type": "bye"}) + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError, ValueError):
                pass
            try:
                proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        for stream in (proc.stdin, proc.stdout):
            try:
                stream.close()
            except (OSError, ValueError):
                pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def connect_external(command: Sequence[str], timeout: float = DEFAULT_TIMEOUT) -> ExternalBlackBox:
    return ExternalBlackBox(command, timeout)
